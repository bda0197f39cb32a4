"""Transport parameter maps and their TLV encoding.

Each entry is ``name length (uint8) | name | kind (uint8) | value`` where
kind 0 is a varint, 1 a boolean octet and 2 a length-prefixed octet string.
Entries are written in sorted name order so encodings are canonical.
"""
from typing import Dict, Tuple, Union

from ..errors import ParameterError
from .frames import decode_varint, encode_varint

ParamValue = Union[int, bool, bytes]
TransportParameters = Dict[str, ParamValue]

SMAQ = "smaq"
SUPPORTED_TRANSPORT_PARAMETERS = frozenset({
    "initial_source_connection_id",
    "original_destination_connection_id",
    "stateless_reset_token",
    "max_idle_timeout",
    "max_ack_delay",
    "max_udp_payload_size",
    SMAQ,
})

_KIND_INT, _KIND_BOOL, _KIND_BYTES = 0, 1, 2


def encode_transport_parameters(params: TransportParameters) -> bytes:
    out = bytearray()
    for name in sorted(params):
        value = params[name]
        raw = name.encode()
        if len(raw) > 255:
            raise ParameterError(f"parameter name too long: {name!r}")
        out.append(len(raw))
        out += raw
        if isinstance(value, bool):
            out.append(_KIND_BOOL)
            out.append(1 if value else 0)
        elif isinstance(value, int):
            out.append(_KIND_INT)
            out += encode_varint(value)
        elif isinstance(value, (bytes, bytearray)):
            out.append(_KIND_BYTES)
            out += encode_varint(len(value))
            out += value
        else:
            raise ParameterError(f"unsupported value for {name!r}: {value!r}")
    return bytes(out)


def decode_transport_parameters(buf: bytes, pos: int = 0, end: int = None) -> Tuple[TransportParameters, int]:
    end = len(buf) if end is None else end
    params: TransportParameters = {}
    try:
        while pos < end:
            n = buf[pos]
            name = bytes(buf[pos + 1:pos + 1 + n]).decode()
            pos += 1 + n
            kind = buf[pos]
            pos += 1
            if kind == _KIND_BOOL:
                params[name] = bool(buf[pos])
                pos += 1
            elif kind == _KIND_INT:
                params[name], pos = decode_varint(buf, pos)
            elif kind == _KIND_BYTES:
                length, pos = decode_varint(buf, pos)
                params[name] = bytes(buf[pos:pos + length])
                pos += length
            else:
                raise ParameterError(f"unknown parameter kind {kind}")
    except (IndexError, UnicodeDecodeError):
        raise ParameterError("malformed transport parameters") from None
    if pos != end:
        raise ParameterError("transport parameters overrun")
    return params, pos
