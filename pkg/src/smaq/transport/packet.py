"""Packets and the in-simulation wire format.

Wire layout (version 1 of the repo format)::

    long header  (Initial / Handshake)
        first octet   1 | 1 | type(2) | reserved(4)      type: 0 Initial, 2 Handshake
        version       uint32
        dcid          uint8 length + octets
        scid          uint8 length + octets
        pn            varint
        payload       AEAD(frames), 16-octet tag

    short header  (application)
        first octet   0 | 1 | 0 0 0 | key phase | reserved(2)
        dcid          uint8 length + octets
        pn            varint
        payload       AEAD(frames), 16-octet tag

The packet number is encoded in full as a varint. Header protection XORs a
keyed mask over the low four bits of the first octet and over the packet
number octets, leaving the two varint length bits in the clear so the
receiver can locate the sample (the first 16 ciphertext octets).
"""
from enum import IntEnum
from typing import Callable, List, Optional, Sequence, Tuple

from ..crypto.keys import PacketKeys, header_protection_mask
from ..errors import IntegrityError, ParameterError
from .frames import Frame, decode_frames, decode_varint, encode_frames, encode_varint, varint_size

WIRE_FORMAT_VERSION = 1
AEAD_TAG_LEN = 16
SAMPLE_LEN = 16
MIN_INITIAL_SIZE = 1200


class Space(IntEnum):
    INITIAL = 0
    HANDSHAKE = 1
    APPLICATION = 2


_LONG_TYPE = {Space.INITIAL: 0, Space.HANDSHAKE: 2}
_LONG_SPACE = {v: k for k, v in _LONG_TYPE.items()}


def header_size(space: Space, dcid: bytes, scid: bytes, pn: int) -> int:
    if space is Space.APPLICATION:
        return 2 + len(dcid) + (1 if pn < 0x40 else varint_size(pn))
    return 1 + 4 + 1 + len(dcid) + 1 + len(scid) + varint_size(pn)


class Packet:
    """A protected packet as carried inside a simulated datagram.

    In the object-level fast path the packet is handed over as-is and
    ``key_tag`` stands in for the AEAD: the receiver accepts it only if the
    tag matches the fingerprint of its own receive keys.
    """

    __slots__ = ("space", "version", "dcid", "scid", "pn", "frames", "key_phase", "key_tag", "size")

    def __init__(self, space: Space, version: int, dcid: bytes, scid: bytes, pn: int,
                 frames: List[Frame], key_phase: int = 0, key_tag: bytes = b"") -> None:
        self.space = space
        self.version = version
        self.dcid = dcid
        self.scid = scid
        self.pn = pn
        self.frames = frames
        self.key_phase = key_phase
        self.key_tag = key_tag
        size = header_size(space, dcid, scid, pn) + AEAD_TAG_LEN
        for f in frames:
            size += f.wire_size()
        self.size = size

    def __repr__(self) -> str:
        return f"{self.space.name.lower()}#{self.pn}{self.frames!r}"


def _protect_header(header: bytearray, pn_offset: int, pn_len: int, ciphertext: bytes,
                    hp_key: bytes) -> None:
    sample = ciphertext[:SAMPLE_LEN]
    mask = header_protection_mask(hp_key, sample)
    header[0] ^= mask[0] & 0x0F
    header[pn_offset] ^= mask[1] & 0x3F
    for i in range(1, min(pn_len, len(mask) - 1)):
        header[pn_offset + i] ^= mask[1 + i]


def encode_packet(packet: Packet, keys: PacketKeys) -> bytes:
    space = packet.space
    if space == Space.APPLICATION:
        header = bytearray([0x40 | ((packet.key_phase & 1) << 2)])
    else:
        header = bytearray([0xC0 | (_LONG_TYPE[space] << 4)])
        header += packet.version.to_bytes(4, "big")
    header.append(len(packet.dcid))
    header += packet.dcid
    if space != Space.APPLICATION:
        header.append(len(packet.scid))
        header += packet.scid
    pn_offset = len(header)
    pn_bytes = encode_varint(packet.pn)
    header += pn_bytes
    ciphertext = keys.seal(packet.pn, bytes(header), encode_frames(packet.frames))
    _protect_header(header, pn_offset, len(pn_bytes), ciphertext, keys.hp_key)
    return bytes(header) + ciphertext


def parse_header(data: bytes) -> Tuple[Space, int, bytes, bytes, int]:
    """Unprotected header fields: (space, version, dcid, scid, pn offset)."""
    if not data:
        raise ParameterError("empty packet")
    first = data[0]
    pos = 1
    version = 0
    scid = b""
    try:
        if first & 0x80:
            space = _LONG_SPACE[(first >> 4) & 0x03]
            version = int.from_bytes(data[1:5], "big")
            pos = 5
        else:
            space = Space.APPLICATION
        dcid_len = data[pos]
        dcid = bytes(data[pos + 1:pos + 1 + dcid_len])
        pos += 1 + dcid_len
        if space != Space.APPLICATION:
            scid_len = data[pos]
            scid = bytes(data[pos + 1:pos + 1 + scid_len])
            pos += 1 + scid_len
    except (IndexError, KeyError):
        raise ParameterError("malformed packet header") from None
    if pos >= len(data):
        raise ParameterError("truncated packet header")
    return space, version, dcid, scid, pos


def decode_packet(data: bytes, keys_for: Callable[[Space, int], Optional[PacketKeys]]) -> Packet:
    """Remove protection and parse. ``keys_for(space, key_phase)`` supplies receive keys."""
    space, version, dcid, scid, pn_offset = parse_header(data)
    pn_len = 1 << (data[pn_offset] >> 6)
    header = bytearray(data[:pn_offset + pn_len])
    ciphertext = bytes(data[pn_offset + pn_len:])
    if len(ciphertext) < AEAD_TAG_LEN:
        raise ParameterError("truncated packet payload")
    # key phase bit is protected; try the header-protection key first
    keys = keys_for(space, 0)
    if keys is None:
        raise IntegrityError("no keys for packet space")
    _protect_header(header, pn_offset, pn_len, ciphertext, keys.hp_key)
    key_phase = (header[0] >> 2) & 1 if space == Space.APPLICATION else 0
    if key_phase:
        keys = keys_for(space, key_phase) or keys
    pn, _ = decode_varint(bytes(header), pn_offset)
    payload = keys.open(pn, bytes(header), ciphertext)
    frames = decode_frames(payload)
    return Packet(space, version, dcid, scid, pn, frames, key_phase, keys.tag)


def frames_are_probing(frames: Sequence[Frame]) -> bool:
    return all(f.probing for f in frames)


def frames_ack_eliciting(frames: Sequence[Frame]) -> bool:
    for f in frames:
        if f.ack_eliciting:
            return True
    return False
