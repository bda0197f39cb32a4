# HKDF (RFC 5869) and the TLS 1.3 labeled wrappers (RFC 8446 section 7.1).
import hashlib
import hmac
import struct

from ..errors import ParameterError

HASH = hashlib.sha256
HASH_LEN = 32
LABEL_PREFIX = b"tls13 "
MAX_LABEL_LEN = 255 - len(LABEL_PREFIX)


def hkdf_extract(salt: bytes, ikm: bytes) -> bytes:
    if not salt:
        salt = bytes(HASH_LEN)
    return hmac.new(salt, ikm, HASH).digest()


def hkdf_expand(prk: bytes, info: bytes, length: int) -> bytes:
    if length < 0 or length > 255 * HASH_LEN:
        raise ParameterError(f"HKDF-Expand length {length} out of range")
    okm = b""
    block = b""
    counter = 1
    while len(okm) < length:
        block = hmac.new(prk, block + info + bytes([counter]), HASH).digest()
        okm += block
        counter += 1
    return okm[:length]


def hkdf_label(label: bytes, context: bytes, length: int) -> bytes:
    """Encode the HkdfLabel structure."""
    if len(label) > MAX_LABEL_LEN:
        raise ParameterError(f"label of {len(label)} octets exceeds {MAX_LABEL_LEN}")
    if len(context) > 255:
        raise ParameterError("context longer than 255 octets")
    if length < 0 or length > 0xFFFF:
        raise ParameterError(f"length {length} does not fit uint16")
    full = LABEL_PREFIX + label
    return struct.pack("!HB", length, len(full)) + full + bytes([len(context)]) + context


def hkdf_expand_label(secret, label: bytes, context: bytes, length: int) -> bytes:
    """HKDF-Expand-Label. ``secret`` may be raw bytes or a :class:`Secret`."""
    raw = getattr(secret, "value", secret)
    if length > 255 * HASH_LEN:
        raise ParameterError(f"length {length} exceeds 255 * {HASH_LEN}")
    return hkdf_expand(raw, hkdf_label(label, context, length), length)


def derive_secret(secret, label: bytes, transcript: bytes) -> bytes:
    return hkdf_expand_label(secret, label, HASH(transcript).digest(), HASH_LEN)
