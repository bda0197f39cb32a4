"""Transport key schedule for the modeled QUIC/TLS 1.3 handshake.

The handshake itself is a stub (random values stand in for the key
exchange), but every secret below is derived with the real TLS 1.3
HKDF structure so handover and packet protection operate on real keys.
"""
import hashlib
import hmac
from dataclasses import dataclass
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from ..errors import IntegrityError
from .hkdf import HASH_LEN, derive_secret, hkdf_expand_label, hkdf_extract
from .xads import Secret, SecretLabel

QUIC_VERSION_1 = 0x00000001
CIPHER_AES128GCM_SHA256 = 0x1301

INITIAL_SALT_V1 = bytes.fromhex("38762cf7f55934b34d179ae6a4c80cadccbb7f0a")
PACKET_KEY_LEN = 16
PACKET_IV_LEN = 12
HP_KEY_LEN = 16
HP_MASK_LEN = 5


@dataclass(frozen=True)
class ConnectionSecrets:
    client_handshake: Secret
    server_handshake: Secret
    client_application: Secret
    server_application: Secret
    exporter_master: Secret
    client_hp: bytes
    server_hp: bytes


def _sec(value: bytes, name: str, sender: Optional[str] = None, phase: Optional[int] = None) -> Secret:
    return Secret(value, SecretLabel(name, sender, None, phase))


def initial_secrets(dcid: bytes):
    """(client, server) Initial secrets per RFC 9001 section 5.2."""
    initial = hkdf_extract(INITIAL_SALT_V1, dcid)
    return (
        _sec(hkdf_expand_label(initial, b"client in", b"", HASH_LEN), "client_initial_secret", "client"),
        _sec(hkdf_expand_label(initial, b"server in", b"", HASH_LEN), "server_initial_secret", "server"),
    )


def derive_connection_secrets(shared_secret: bytes, client_hello: bytes, server_hello: bytes) -> ConnectionSecrets:
    early = hkdf_extract(b"", bytes(HASH_LEN))
    hs = hkdf_extract(derive_secret(early, b"derived", b""), shared_secret)
    hello_transcript = client_hello + server_hello
    c_hs = derive_secret(hs, b"c hs traffic", hello_transcript)
    s_hs = derive_secret(hs, b"s hs traffic", hello_transcript)
    master = hkdf_extract(derive_secret(hs, b"derived", b""), bytes(HASH_LEN))
    # server Finished is modeled as a fixed suffix of the transcript
    full_transcript = hello_transcript + b"server finished"
    c_ap = derive_secret(master, b"c ap traffic", full_transcript)
    s_ap = derive_secret(master, b"s ap traffic", full_transcript)
    exp = derive_secret(master, b"exp master", full_transcript)
    return ConnectionSecrets(
        client_handshake=_sec(c_hs, "client_handshake_traffic_secret", "client"),
        server_handshake=_sec(s_hs, "server_handshake_traffic_secret", "server"),
        client_application=_sec(c_ap, "client_application_traffic_secret", "client", 0),
        server_application=_sec(s_ap, "server_application_traffic_secret", "server", 0),
        exporter_master=_sec(exp, "exporter_master_secret"),
        client_hp=hkdf_expand_label(c_ap, b"quic hp", b"", HP_KEY_LEN),
        server_hp=hkdf_expand_label(s_ap, b"quic hp", b"", HP_KEY_LEN),
    )


def next_traffic_secret(secret: Secret) -> Secret:
    """QUIC key update (RFC 9001 section 6.1)."""
    lbl = secret.label
    phase = (lbl.phase or 0) + 1
    return Secret(hkdf_expand_label(secret, b"quic ku", b"", HASH_LEN),
                  SecretLabel(lbl.name, lbl.sender, None, phase))


class PacketKeys:
    """AEAD key material for one direction of one packet number space."""

    __slots__ = ("secret", "hp_key", "aead", "iv", "tag")

    def __init__(self, secret: Secret, hp_key: Optional[bytes] = None) -> None:
        self.secret = secret
        key = hkdf_expand_label(secret, b"quic key", b"", PACKET_KEY_LEN)
        self.iv = hkdf_expand_label(secret, b"quic iv", b"", PACKET_IV_LEN)
        self.hp_key = hp_key if hp_key is not None else hkdf_expand_label(secret, b"quic hp", b"", HP_KEY_LEN)
        self.aead = AESGCM(key)
        # Fingerprint used by the object-level fast path instead of full AEAD.
        self.tag = hashlib.sha256(key + self.iv).digest()[:8]

    def nonce(self, pn: int) -> bytes:
        return (int.from_bytes(self.iv, "big") ^ pn).to_bytes(PACKET_IV_LEN, "big")

    def seal(self, pn: int, header: bytes, payload: bytes) -> bytes:
        return self.aead.encrypt(self.nonce(pn), payload, header)

    def open(self, pn: int, header: bytes, ciphertext: bytes) -> bytes:
        try:
            return self.aead.decrypt(self.nonce(pn), ciphertext, header)
        except InvalidTag:
            raise IntegrityError("packet failed authentication") from None


def header_protection_mask(hp_key: bytes, sample: bytes) -> bytes:
    # Keyed XOR stand-in for QUIC header protection.
    return hmac.new(hp_key, sample, hashlib.sha256).digest()[:HP_MASK_LEN]
