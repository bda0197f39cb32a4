"""Extra Application Data Security (XADS).

XADS keys are derived from the TLS exporter and never leave the endpoints.
Each direction of each stream gets its own key lane; application bytes are
carried in TLS 1.3 style records sealed with AES-128-GCM.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from ..errors import IntegrityError, KeyScheduleError, ParameterError
from .hkdf import HASH, HASH_LEN, hkdf_expand_label

EXPORTER_LABEL = b"EXPORTER-smaq-xads-master"
KEY_UPDATE_LABEL = b"xse upd"

MAX_STREAM_ID = (1 << 62) - 1
MAX_PHASE = (1 << 64) - 1

MAX_RECORD_PAYLOAD = 1 << 14
RECORD_HEADER_LEN = 5
TAG_LEN = 16
RECORD_OVERHEAD = RECORD_HEADER_LEN + TAG_LEN + 1
CONTENT_APPLICATION_DATA = 23
LEGACY_VERSION = b"\x03\x03"
KEY_LEN = 16
IV_LEN = 12

SENDERS = ("client", "server")


@dataclass(frozen=True)
class SecretLabel:
    name: str
    sender: Optional[str] = None
    stream_id: Optional[int] = None
    phase: Optional[int] = None

    def __str__(self) -> str:
        if self.stream_id is not None:
            return f"{self.sender}_xse_{self.stream_id}_secret_{self.phase}"
        return self.name


@dataclass(frozen=True)
class Secret:
    value: bytes = field(repr=False)
    label: SecretLabel = SecretLabel("secret")

    def __post_init__(self):
        if len(self.value) != HASH_LEN:
            raise ParameterError(f"secret must be {HASH_LEN} octets, got {len(self.value)}")

    def __repr__(self) -> str:
        return f"Secret({self.label}, {self.value[:4].hex()}..)"


def _check_sender(sender: str) -> None:
    if sender not in SENDERS:
        raise ParameterError(f"unknown sender {sender!r}")


def derive_xads_master(exporter_master_secret) -> Secret:
    """TLS-Exporter(EXPORTER_LABEL, "", 32) over the exporter master secret."""
    empty_hash = HASH(b"").digest()
    per_label = hkdf_expand_label(exporter_master_secret, EXPORTER_LABEL, empty_hash, HASH_LEN)
    value = hkdf_expand_label(per_label, b"exporter", empty_hash, HASH_LEN)
    return Secret(value, SecretLabel("xads_master_secret"))


def derive_stream_secret(master: Secret, sender: str, stream_id: int) -> Secret:
    _check_sender(sender)
    if not 0 <= stream_id <= MAX_STREAM_ID:
        raise ParameterError(f"stream id {stream_id} outside 62-bit range")
    label = f"xse {sender} {stream_id}".encode()
    value = hkdf_expand_label(master, label, b"", HASH_LEN)
    return Secret(value, SecretLabel("xse", sender, stream_id, 0))


def key_update(current: Secret) -> Secret:
    phase = current.label.phase or 0
    if phase >= MAX_PHASE:
        raise KeyScheduleError("key phase counter exhausted")
    value = hkdf_expand_label(current, KEY_UPDATE_LABEL, b"", HASH_LEN)
    lbl = current.label
    return Secret(value, SecretLabel(lbl.name, lbl.sender, lbl.stream_id, phase + 1))


class XadsKeySchedule:
    """Per-connection store of XADS lanes, keyed by (sender, stream_id).

    Single writer: owned by one endpoint connection.
    """

    def __init__(self, master: Secret) -> None:
        self.master = master
        self._lanes: Dict[Tuple[str, int], Secret] = {}
        self._history: List[Secret] = []

    @classmethod
    def from_exporter(cls, exporter_master_secret) -> "XadsKeySchedule":
        return cls(derive_xads_master(exporter_master_secret))

    def secret(self, sender: str, stream_id: int) -> Secret:
        key = (sender, stream_id)
        lane = self._lanes.get(key)
        if lane is None:
            lane = derive_stream_secret(self.master, sender, stream_id)
            self._lanes[key] = lane
            self._history.append(lane)
        return lane

    def phase(self, sender: str, stream_id: int) -> int:
        return self.secret(sender, stream_id).label.phase

    def update(self, sender: str, stream_id: int) -> Secret:
        lane = key_update(self.secret(sender, stream_id))
        self._lanes[(sender, stream_id)] = lane
        self._history.append(lane)
        return lane

    def lanes(self) -> Dict[Tuple[str, int], Secret]:
        return dict(self._lanes)

    def all_secret_values(self) -> Iterator[bytes]:
        """Every secret value this schedule has ever held, master included."""
        yield self.master.value
        for s in self._history:
            yield s.value
            key, iv = traffic_key_iv(s)
            yield key
            yield iv


def traffic_key_iv(secret: Secret) -> Tuple[bytes, bytes]:
    return (
        hkdf_expand_label(secret, b"key", b"", KEY_LEN),
        hkdf_expand_label(secret, b"iv", b"", IV_LEN),
    )


@dataclass(frozen=True)
class XadsRecord:
    header: bytes
    ciphertext: bytes

    def __len__(self) -> int:
        return len(self.header) + len(self.ciphertext)

    def to_bytes(self) -> bytes:
        return self.header + self.ciphertext

    @classmethod
    def from_bytes(cls, data: bytes) -> "XadsRecord":
        if len(data) < RECORD_HEADER_LEN:
            raise ParameterError("truncated record header")
        length = int.from_bytes(data[3:5], "big")
        if len(data) != RECORD_HEADER_LEN + length:
            raise ParameterError("record length mismatch")
        return cls(bytes(data[:RECORD_HEADER_LEN]), bytes(data[RECORD_HEADER_LEN:]))


_aead_cache: Dict[bytes, Tuple[AESGCM, bytes]] = {}


def _aead(secret: Secret) -> Tuple[AESGCM, bytes]:
    entry = _aead_cache.get(secret.value)
    if entry is None:
        key, iv = traffic_key_iv(secret)
        entry = (AESGCM(key), iv)
        if len(_aead_cache) > 4096:
            _aead_cache.clear()
        _aead_cache[secret.value] = entry
    return entry


def _nonce(iv: bytes, sequence: int) -> bytes:
    if not 0 <= sequence < (1 << 64):
        raise ParameterError("record sequence number out of range")
    return (int.from_bytes(iv, "big") ^ sequence).to_bytes(IV_LEN, "big")


def protect_record(payload: bytes, secret: Secret, sequence: int) -> XadsRecord:
    if len(payload) > MAX_RECORD_PAYLOAD:
        raise ParameterError(f"payload of {len(payload)} octets needs fragmentation")
    aead, iv = _aead(secret)
    length = len(payload) + 1 + TAG_LEN
    header = bytes([CONTENT_APPLICATION_DATA]) + LEGACY_VERSION + length.to_bytes(2, "big")
    inner = bytes(payload) + bytes([CONTENT_APPLICATION_DATA])
    return XadsRecord(header, aead.encrypt(_nonce(iv, sequence), inner, header))


def unprotect_record(record: XadsRecord, secret: Secret, sequence: int) -> bytes:
    aead, iv = _aead(secret)
    try:
        inner = aead.decrypt(_nonce(iv, sequence), record.ciphertext, record.header)
    except InvalidTag:
        raise IntegrityError("XADS record failed authentication") from None
    if not inner or inner[-1] != CONTENT_APPLICATION_DATA:
        raise IntegrityError("unexpected inner content type")
    return inner[:-1]


class XadsWriter:
    """Seals application bytes for one (sender, stream) lane."""

    def __init__(self, schedule: XadsKeySchedule, sender: str, stream_id: int) -> None:
        self.schedule = schedule
        self.sender = sender
        self.stream_id = stream_id
        self.sequence = 0

    def seal(self, data: bytes) -> bytes:
        secret = self.schedule.secret(self.sender, self.stream_id)
        out = bytearray()
        view = memoryview(data)
        for start in range(0, len(data), MAX_RECORD_PAYLOAD):
            chunk = bytes(view[start:start + MAX_RECORD_PAYLOAD])
            out += protect_record(chunk, secret, self.sequence).to_bytes()
            self.sequence += 1
        return bytes(out)

    def update_key(self) -> None:
        self.schedule.update(self.sender, self.stream_id)
        self.sequence = 0


class XadsReader:
    """Reassembles and opens records arriving on one lane."""

    def __init__(self, schedule: XadsKeySchedule, sender: str, stream_id: int) -> None:
        self.schedule = schedule
        self.sender = sender
        self.stream_id = stream_id
        self.sequence = 0
        self._buf = bytearray()

    def feed(self, data: bytes) -> List[bytes]:
        self._buf += data
        out = []
        secret = self.schedule.secret(self.sender, self.stream_id)
        while len(self._buf) >= RECORD_HEADER_LEN:
            length = int.from_bytes(self._buf[3:5], "big")
            end = RECORD_HEADER_LEN + length
            if len(self._buf) < end:
                break
            record = XadsRecord(bytes(self._buf[:RECORD_HEADER_LEN]), bytes(self._buf[RECORD_HEADER_LEN:end]))
            del self._buf[:end]
            out.append(unprotect_record(record, secret, self.sequence))
            self.sequence += 1
        return out

    def update_key(self) -> None:
        self.schedule.update(self.sender, self.stream_id)
        self.sequence = 0

    @property
    def pending(self) -> int:
        return len(self._buf)
