"""Messages exchanged over the out-of-band handover channel.

Each message is ``type (uint8) | session id (8 octets) | body``.
"""
from dataclasses import dataclass
from typing import Union

from ..errors import ParameterError
from ..transport.frames import decode_varint, encode_varint

MSG_STATE_OFFER = 0x01
MSG_SMAQ_OK = 0x02
MSG_SMAQ_ERROR = 0x03

SESSION_ID_LEN = 8

REASON_VERSION = "version-unsupported"
REASON_CIPHER = "cipher-unsupported"
REASON_TRANSPORT_PARAMETER = "transport-parameter-unsupported"
REASON_MALFORMED = "malformed-state"
REASONS = (REASON_VERSION, REASON_CIPHER, REASON_TRANSPORT_PARAMETER, REASON_MALFORMED)


@dataclass(frozen=True)
class StateOffer:
    session_id: bytes
    state: bytes  # serialized SmaqState


@dataclass(frozen=True)
class SmaqOk:
    session_id: bytes


@dataclass(frozen=True)
class SmaqError:
    session_id: bytes
    reason: str


Message = Union[StateOffer, SmaqOk, SmaqError]


def encode_message(msg: Message) -> bytes:
    if len(msg.session_id) != SESSION_ID_LEN:
        raise ParameterError("session id must be 8 octets")
    if isinstance(msg, StateOffer):
        return bytes([MSG_STATE_OFFER]) + msg.session_id + encode_varint(len(msg.state)) + msg.state
    if isinstance(msg, SmaqOk):
        return bytes([MSG_SMAQ_OK]) + msg.session_id
    if isinstance(msg, SmaqError):
        if msg.reason not in REASONS:
            raise ParameterError(f"unknown rejection reason {msg.reason!r}")
        return bytes([MSG_SMAQ_ERROR, REASONS.index(msg.reason)]) + msg.session_id
    raise ParameterError(f"not a handover message: {msg!r}")


def decode_message(data: bytes) -> Message:
    if not data:
        raise ParameterError("empty handover message")
    kind = data[0]
    if kind == MSG_STATE_OFFER:
        sid = data[1:1 + SESSION_ID_LEN]
        length, pos = decode_varint(data, 1 + SESSION_ID_LEN)
        state = data[pos:pos + length]
        if len(sid) != SESSION_ID_LEN or len(state) != length or pos + length != len(data):
            raise ParameterError("malformed state offer")
        return StateOffer(bytes(sid), bytes(state))
    if kind == MSG_SMAQ_OK and len(data) == 1 + SESSION_ID_LEN:
        return SmaqOk(bytes(data[1:]))
    if kind == MSG_SMAQ_ERROR and len(data) == 2 + SESSION_ID_LEN and data[1] < len(REASONS):
        return SmaqError(bytes(data[2:]), REASONS[data[1]])
    raise ParameterError("malformed handover message")
