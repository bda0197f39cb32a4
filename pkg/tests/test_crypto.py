import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import RFC5869_CASES, load_vectors, oracle_expand, oracle_expand_label, oracle_vectors

from smaq.crypto.hkdf import hkdf_expand, hkdf_expand_label, hkdf_extract
from smaq.crypto.xads import (
    MAX_RECORD_PAYLOAD,
    RECORD_OVERHEAD,
    Secret,
    SecretLabel,
    XadsKeySchedule,
    XadsReader,
    XadsRecord,
    XadsWriter,
    derive_stream_secret,
    derive_xads_master,
    key_update,
    protect_record,
    traffic_key_iv,
    unprotect_record,
)
from smaq.errors import IntegrityError, KeyScheduleError, ParameterError

GOLDEN = load_vectors()


def secret_of(hexstr, **label):
    return Secret(bytes.fromhex(hexstr), SecretLabel("test", **label))


@pytest.mark.parametrize("case", RFC5869_CASES, ids=["A.1", "A.2", "A.3"])
def test_hkdf_rfc5869(case):
    prk = hkdf_extract(bytes.fromhex(case["salt"]), bytes.fromhex(case["ikm"]))
    assert prk.hex() == case["prk"]
    okm = hkdf_expand(prk, bytes.fromhex(case["info"]), case["length"])
    assert okm.hex() == case["okm"]
    assert oracle_expand(prk, bytes.fromhex(case["info"]), case["length"]) == okm


def test_golden_file_matches_oracle():
    # The checked-in file must be reproducible from the oracle.
    for step, fields in oracle_vectors():
        assert GOLDEN[step] == fields


@given(st.binary(min_size=32, max_size=32), st.binary(max_size=40), st.binary(max_size=64),
       st.integers(1, 200))
@settings(max_examples=200)
def test_expand_label_agrees_with_oracle(secret, label, context, length):
    assert hkdf_expand_label(secret, label, context, length) == oracle_expand_label(secret, label, context, length)


def test_expand_label_deterministic_and_label_sensitive():
    parent = bytes(range(32))
    a = hkdf_expand_label(parent, b"client_xse_0", b"", 32)
    assert a == hkdf_expand_label(parent, b"client_xse_0", b"", 32)
    b = hkdf_expand_label(parent, b"server_xse_0", b"", 32)
    assert a != b
    assert a.hex() == oracle_expand_label(parent, b"client_xse_0", b"", 32).hex()


def test_expand_label_bounds():
    with pytest.raises(ParameterError):
        hkdf_expand_label(bytes(32), b"x" * 250, b"", 32)
    hkdf_expand_label(bytes(32), b"x" * 249, b"", 32)
    with pytest.raises(ParameterError):
        hkdf_expand_label(bytes(32), b"k", b"", 255 * 32 + 1)


def test_xads_master_golden():
    v = GOLDEN["xads_master"]
    master = derive_xads_master(bytes.fromhex(v["exporter"]))
    assert master.value.hex() == v["out"]
    assert str(master.label) == "xads_master_secret"
    # both endpoints model the same derivation
    assert derive_xads_master(bytes(32)) == master
    assert derive_xads_master(b"\x01" * 32) != master


@pytest.mark.parametrize("sender,sid", [("client", 0), ("server", 0), ("client", 4), ("server", 4)])
def test_stream_secret_golden(sender, sid):
    v = GOLDEN[f"stream_{sender}_{sid}"]
    master = secret_of(v["master"])
    s = derive_stream_secret(master, sender, sid)
    assert s.value.hex() == v["out"]
    assert str(s.label) == f"{sender}_xse_{sid}_secret_0"


def test_stream_secrets_independent():
    master = derive_xads_master(bytes(32))
    c0 = derive_stream_secret(master, "client", 0)
    assert c0 != derive_stream_secret(master, "server", 0)
    assert c0 != derive_stream_secret(master, "client", 4)
    assert c0.value != derive_stream_secret(master, "client", 4).value


def test_stream_id_bounds():
    master = derive_xads_master(bytes(32))
    derive_stream_secret(master, "client", (1 << 62) - 1)
    with pytest.raises(ParameterError):
        derive_stream_secret(master, "client", 1 << 62)
    with pytest.raises(ParameterError):
        derive_stream_secret(master, "middlebox", 0)


def test_key_update_chain_golden():
    v1 = GOLDEN["key_update_client_0_phase_1"]
    v2 = GOLDEN["key_update_client_0_phase_2"]
    p0 = secret_of(v1["in"], sender="client", stream_id=0, phase=0)
    p1 = key_update(p0)
    p2 = key_update(p1)
    assert p1.value.hex() == v1["out"]
    assert p2.value.hex() == v2["out"]
    assert (p1.label.phase, p2.label.phase) == (1, 2)
    assert p1 != p0 and p2 != p1


def test_key_update_phase_overflow():
    top = Secret(bytes(32), SecretLabel("xse", "client", 0, (1 << 64) - 1))
    with pytest.raises(KeyScheduleError):
        key_update(top)


def test_schedule_lane_independence():
    sched = XadsKeySchedule.from_exporter(bytes(32))
    before = {k: sched.secret(*k) for k in [("client", 0), ("server", 0), ("client", 4)]}
    sched.update("client", 0)
    sched.update("client", 0)
    assert sched.phase("client", 0) == 2
    assert sched.secret("server", 0) == before[("server", 0)]
    assert sched.secret("client", 4) == before[("client", 4)]


def test_record_keys_golden():
    v = GOLDEN["record_keys_client_0"]
    key, iv = traffic_key_iv(secret_of(v["secret"]))
    assert (key.hex(), iv.hex()) == (v["key"], v["iv"])


def lane():
    return derive_stream_secret(derive_xads_master(bytes(32)), "client", 0)


def test_record_overhead_extremes():
    s = lane()
    full = protect_record(b"\xaa" * MAX_RECORD_PAYLOAD, s, 0)
    assert len(full) == 16406
    assert abs(22 / 16406 * 100 - 0.134) < 0.001
    assert len(protect_record(b"", s, 0)) == 22 == RECORD_OVERHEAD
    with pytest.raises(ParameterError):
        protect_record(b"x" * (MAX_RECORD_PAYLOAD + 1), s, 0)


def test_record_tamper_detected():
    s = lane()
    rec = protect_record(b"attack at dawn", s, 7)
    flipped = bytearray(rec.ciphertext)
    flipped[3] ^= 0x01
    with pytest.raises(IntegrityError):
        unprotect_record(XadsRecord(rec.header, bytes(flipped)), s, 7)
    with pytest.raises(IntegrityError):
        unprotect_record(rec, s, 8)
    assert unprotect_record(XadsRecord.from_bytes(rec.to_bytes()), s, 7) == b"attack at dawn"


@given(st.binary(max_size=MAX_RECORD_PAYLOAD), st.integers(0, 2**64 - 1))
@settings(max_examples=1000, deadline=None)
def test_record_roundtrip_property(payload, seq):
    s = lane()
    rec = protect_record(payload, s, seq)
    assert len(rec) - len(payload) == RECORD_OVERHEAD
    assert unprotect_record(rec, s, seq) == payload


def test_writer_reader_fragmentation():
    sched = XadsKeySchedule.from_exporter(b"\x07" * 32)
    w = XadsWriter(sched, "server", 4)
    r = XadsReader(sched, "server", 4)
    data = bytes(range(256)) * 200  # 51200 octets -> 4 records
    wire = w.seal(data)
    assert len(wire) == len(data) + 4 * RECORD_OVERHEAD
    out = []
    for i in range(0, len(wire), 1000):
        out.extend(r.feed(wire[i:i + 1000]))
    assert b"".join(out) == data
    assert r.pending == 0
