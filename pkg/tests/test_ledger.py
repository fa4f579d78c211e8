import hashlib
import os
import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contractwatch import ledger as lg
from contractwatch.ledger import Ledger, Redacted, verify_bytes

SUBJECTS = ["alice", "carol", "dave", "erin"]


def secret(subject, i):
    return f"SECRET-{subject}-{i:04d}-plate".encode()


def entry_spans(image: bytes):
    """Independent parse of the file layout: (start, end) of each entry, header first."""
    (hlen,) = struct.unpack(">I", image[8:12])
    spans = [(0, 12 + hlen)]
    pos = 12 + hlen
    while pos < len(image):
        (n,) = struct.unpack(">I", image[pos:pos + 4])
        spans.append((pos, pos + 4 + n))
        pos += 4 + n
    return spans


def build(n, path=None, erase_at=(), seed=0):
    led = Ledger(path)
    rng = random.Random(seed)
    erased = []
    for s in SUBJECTS:
        led.register_subject(s)
    for i in range(n):
        if i in erase_at:
            s = SUBJECTS[len(erased)]
            led.erase_subject(s, i)
            erased.append(s)
            continue
        live = [s for s in SUBJECTS if s not in erased]
        s = rng.choice(live)
        if i % 3 == 0:
            led.append(lg.EVENT, {"i": i, "type": "POREQ"}, personal={"carReg": secret(s, i)},
                       subject=s, timestamp=i)
        else:
            led.append(lg.VERDICT, {"i": i, "compliant": i % 2 == 0, "rule": None}, timestamp=i)
    return led, erased


def test_oracle_hash_links():
    led, _ = build(20)
    image = led.image()
    prev = bytes(32)
    for (start, end), e in zip(entry_spans(image)[1:], led.entries()):
        rec = image[start + 4:end]
        assert rec[:32] == prev == e.prev_hash
        assert rec[32:64] == hashlib.sha256(prev + rec[64:]).digest() == e.entry_hash
        prev = rec[32:64]
    assert led.entries()[0].prev_hash == bytes(32)
    assert [e.seq for e in led.entries()] == list(range(1, 21))


def test_empty_ledger_ok():
    rep = Ledger().verify_chain()
    assert rep.ok and rep.length == 0


def test_thousand_entries_ok_and_targeted_corruption(tmp_path):
    path = str(tmp_path / "audit.log")
    led, erased = build(1000, path, erase_at=(100, 400, 700))
    assert len(led) == 1000 and erased == SUBJECTS[:3]
    assert led.verify_chain().ok
    image = led.image()
    spans = entry_spans(image)
    start, end = spans[500]
    rng = random.Random(5)
    for pos in [start, start + 3, start + 4, start + 40, start + 70, end - 1] + \
            [rng.randrange(start, end) for _ in range(20)]:
        bad = bytearray(image)
        bad[pos] ^= 0x01
        rep = verify_bytes(bytes(bad))
        assert not rep.ok and rep.first_bad_seq == 500, pos


def test_every_single_byte_flip_detected():
    led, _ = build(15, erase_at=(7,))
    image = led.image()
    spans = entry_spans(image)
    owner = {}
    for seq, (s, e) in enumerate(spans):
        for p in range(s, e):
            owner[p] = seq
    for pos in range(len(image)):
        bad = bytearray(image)
        bad[pos] ^= 0x80
        rep = verify_bytes(bytes(bad))
        assert not rep.ok and rep.first_bad_seq == owner[pos], pos


def test_truncation_detected():
    image = build(10)[0].image()
    rep = verify_bytes(image[:-1])
    assert not rep.ok and rep.first_bad_seq == 10


def test_personal_fields_never_plaintext_on_disk(tmp_path):
    path = str(tmp_path / "audit.log")
    led = Ledger(path)
    led.append(lg.EVENT, {"type": "POREQ"}, personal={"carReg": b"AB12 CDE"}, subject="alice")
    led.close()
    for p in (path, path + ".keys"):
        assert b"AB12 CDE" not in open(p, "rb").read()
    assert Ledger(path).read_entry(1).personal == {"carReg": b"AB12 CDE"}


def test_plain_entry():
    led = Ledger()
    led.append(lg.CREATION, {"instance": "x"})
    d = led.read_entry(1)
    assert d.body == {"instance": "x"} and d.personal == {} and d.subject is None


def test_erase_then_read_redacted_and_chain_ok():
    led = Ledger()
    led.append(lg.EVENT, {"t": 1}, personal={"carReg": b"AB12"}, subject="alice")
    assert led.read_entry(1).personal["carReg"] == b"AB12"
    before = led.image()
    receipt = led.erase_subject("alice", 99)
    assert receipt == lg.ErasureReceipt("alice", 99, 2)
    assert led.read_entry(1).personal == {"carReg": Redacted("alice")}
    assert led.read_entry(2).kind == lg.ERASURE
    assert led.verify_chain().ok
    assert led.image().startswith(before)  # erasure appends, never rewrites


def test_erase_errors():
    led = Ledger()
    with pytest.raises(lg.UnknownSubject):
        led.erase_subject("nobody", 0)
    led.register_subject("alice")
    led.erase_subject("alice", 0)
    with pytest.raises(lg.AlreadyErased):
        led.erase_subject("alice", 1)
    with pytest.raises(lg.SubjectKeyDestroyed):
        led.append(lg.EVENT, {}, personal={"x": b"y"}, subject="alice")


def test_read_out_of_range():
    led = Ledger()
    led.append(lg.CREATION, {})
    for seq in (0, 2, -1):
        with pytest.raises(lg.OutOfRange):
            led.read_entry(seq)


def test_key_destroyed_is_zeroed(tmp_path):
    path = str(tmp_path / "audit.log")
    led = Ledger(path)
    key = led.register_subject("alice")
    led.erase_subject("alice", 3)
    assert bytes(key.key) == bytes(32) and key.status == lg.DESTROYED and key.destroyed_at == 3
    reopened = Ledger(path)
    assert reopened.subject_status("alice") == lg.DESTROYED
    assert bytes(reopened._keys["alice"].key) == bytes(32)


def test_tampered_ciphertext_is_authentication_failure(tmp_path):
    path = str(tmp_path / "audit.log")
    led = Ledger(path)
    led.append(lg.EVENT, {}, personal={"carReg": b"AB12"}, subject="alice")
    led.close()
    data = bytearray(open(path, "rb").read())
    start, end = entry_spans(bytes(data))[1]
    ct_pos = bytes(data).rindex(b"ct") + 2 + 1 + 4  # name, tag byte, length prefix
    assert start < ct_pos < end
    data[ct_pos] ^= 1
    open(path, "wb").write(bytes(data))
    reopened = Ledger(path)
    assert not reopened.verify_chain().ok
    with pytest.raises(lg.AuthenticationFailure):
        reopened.read_entry(1)


def test_reopen_continues_chain(tmp_path):
    path = str(tmp_path / "audit.log")
    led, _ = build(30, path)
    led.close()
    again = Ledger(path)
    assert len(again) == 30
    again.append(lg.VERDICT, {"after": True})
    assert again.verify_chain().ok and again.verify_chain().length == 31


def test_open_bad_path_is_storage_failure(tmp_path):
    with pytest.raises(lg.StorageFailure):
        Ledger(str(tmp_path / "missing-dir" / "audit.log"))


def _all_readable_bytes(led: Ledger) -> bytes:
    out = [led.image()]
    for d in led.read_all():
        out.append(repr(d).encode())
        for v in d.personal.values():
            if isinstance(v, bytes):
                out.append(v)
    if led.keys_path and os.path.exists(led.keys_path):
        out.append(open(led.keys_path, "rb").read())
    return b"\n".join(out)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["append", "erase"]), st.sampled_from(SUBJECTS),
                          st.text("0123456789abcdef", min_size=12, max_size=24)), max_size=30))
def test_crypto_erasure_property(ops):
    led = Ledger()
    stored: dict[str, list[bytes]] = {}
    for kind, subject, tag in ops:
        value = f"PII<{tag}>".encode()  # marker bytes that cannot occur by chance
        status = led.subject_status(subject)
        if kind == "append":
            if status == lg.DESTROYED:
                with pytest.raises(lg.SubjectKeyDestroyed):
                    led.append(lg.EVENT, {}, personal={"f": value}, subject=subject)
                continue
            led.append(lg.EVENT, {}, personal={"f": value}, subject=subject)
            stored.setdefault(subject, []).append(value)
        elif status == lg.ACTIVE:
            led.erase_subject(subject, 0)
        assert led.verify_chain().ok
    dump = _all_readable_bytes(led)
    for subject, values in stored.items():
        if led.subject_status(subject) == lg.DESTROYED:
            others = {v for s, vs in stored.items() if s != subject
                      and led.subject_status(s) == lg.ACTIVE for v in vs}
            for v in values:
                if v not in others:
                    assert v not in dump
