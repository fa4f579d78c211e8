"""Hash-chained, append-only audit log with per-subject crypto-erasure.

Personal fields never reach the log in clear: each one is sealed with
AES-256-GCM under a key belonging to its data subject, and erasing a
subject destroys that key. The chain itself is untouched by erasure, so
``verify_chain`` keeps passing while the ciphertexts become unreadable.

File layout (all integers big-endian)::

    ledger file:  b"CWLEDGER" u32:len header-fields
                  then per entry: u32:len prev-hash[32] entry-hash[32] body-fields
    key file:     b"CWKEYS01" then per subject: u32:len key-record-fields

where ``entry-hash = sha256(prev-hash || body-fields)`` and a field list is
``u32:count`` followed by ``lp(name) tag lp(value)`` triples (``lp`` is a
u32 length prefix). Tags: ``i`` int64, ``s`` utf-8, ``b`` bytes, ``n`` null,
``t``/``f`` bool, ``l`` list, ``m`` nested field list.
"""

from __future__ import annotations

import hashlib
import os
import struct
import threading
from dataclasses import dataclass, field
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

MAGIC = b"CWLEDGER"
KEYS_MAGIC = b"CWKEYS01"
FORMAT_VERSION = 1
HASH_ALG = "sha256"
GENESIS = bytes(32)

EVENT, VERDICT, VIOLATION, CREATION, TERMINATION, ERASURE = (
    "event", "verdict", "violation", "creation", "termination", "erasure")
KINDS = (EVENT, VERDICT, VIOLATION, CREATION, TERMINATION, ERASURE)

ACTIVE, DESTROYED = "active", "destroyed"


class LedgerError(Exception):
    pass


class SubjectKeyDestroyed(LedgerError):
    pass


class UnknownSubject(LedgerError):
    pass


class AlreadyErased(LedgerError):
    pass


class OutOfRange(LedgerError, IndexError):
    pass


class AuthenticationFailure(LedgerError):
    pass


class StorageFailure(LedgerError):
    pass


class LedgerCorrupt(LedgerError):
    pass


# canonical encoding

def _lp(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


def _encode_value(v) -> tuple[bytes, bytes]:
    if v is None:
        return b"n", b""
    if v is True:
        return b"t", b""
    if v is False:
        return b"f", b""
    if isinstance(v, int):
        return b"i", struct.pack(">q", v)
    if isinstance(v, str):
        return b"s", v.encode("utf-8")
    if isinstance(v, (bytes, bytearray)):
        return b"b", bytes(v)
    if isinstance(v, dict):
        return b"m", encode_fields(v)
    if isinstance(v, (list, tuple)):
        parts = [struct.pack(">I", len(v))]
        for item in v:
            tag, raw = _encode_value(item)
            parts.append(tag + _lp(raw))
        return b"l", b"".join(parts)
    raise TypeError(f"cannot encode {type(v).__name__}")


def encode_fields(fields: dict) -> bytes:
    parts = [struct.pack(">I", len(fields))]
    for name, value in fields.items():
        tag, raw = _encode_value(value)
        parts.append(_lp(name.encode("utf-8")) + tag + _lp(raw))
    return b"".join(parts)


_U32 = struct.Struct(">I")


class _Reader:
    def __init__(self, data: bytes, pos: int = 0, end: Optional[int] = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise ValueError("truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        if self.pos + 4 > self.end:
            raise ValueError("truncated")
        (n,) = _U32.unpack_from(self.data, self.pos)
        self.pos += 4
        return n

    def lp(self) -> bytes:
        return self.take(self.u32())


def _decode_value(tag: bytes, raw: bytes):
    if tag == b"n":
        return None
    if tag == b"t":
        return True
    if tag == b"f":
        return False
    if tag == b"i":
        if len(raw) != 8:
            raise ValueError("bad int")
        return struct.unpack(">q", raw)[0]
    if tag == b"s":
        return raw.decode("utf-8")
    if tag == b"b":
        return raw
    if tag == b"m":
        return decode_fields(raw)
    if tag == b"l":
        r = _Reader(raw)
        items = []
        for _ in range(r.u32()):
            t = r.take(1)
            items.append(_decode_value(t, r.lp()))
        if r.pos != r.end:
            raise ValueError("trailing bytes in list")
        return items
    raise ValueError(f"bad tag {tag!r}")


def decode_fields(data: bytes) -> dict:
    r = _Reader(data)
    out = {}
    for _ in range(r.u32()):
        name = r.lp().decode("utf-8")
        tag = r.take(1)
        out[name] = _decode_value(tag, r.lp())
    if r.pos != r.end:
        raise ValueError("trailing bytes in field list")
    return out


# value types

@dataclass(frozen=True)
class AuditEntry:
    seq: int
    prev_hash: bytes
    entry_hash: bytes
    timestamp: int
    kind: str
    body: bytes  # canonical encoding, personal fields already sealed


@dataclass
class SubjectKey:
    subject_id: str
    key: bytearray
    status: str = ACTIVE
    destroyed_at: Optional[int] = None

    def destroy(self, now: int) -> None:
        for i in range(len(self.key)):
            self.key[i] = 0
        self.status = DESTROYED
        self.destroyed_at = now


class Redacted:
    """Stands in for a personal field whose subject key was destroyed."""

    def __init__(self, subject: str):
        self.subject = subject

    def __repr__(self):
        return f"<erased:{self.subject}>"

    def __eq__(self, other):
        return isinstance(other, Redacted) and other.subject == self.subject

    def __hash__(self):
        return hash(("redacted", self.subject))


@dataclass(frozen=True)
class DecodedEntry:
    seq: int
    kind: str
    timestamp: int
    body: dict
    personal: dict = field(default_factory=dict)
    subject: Optional[str] = None


@dataclass(frozen=True)
class ChainReport:
    ok: bool
    first_bad_seq: Optional[int] = None
    length: int = 0


@dataclass(frozen=True)
class ErasureReceipt:
    subject_id: str
    destroyed_at: int
    erasure_entry_seq: int


def _digest(prev: bytes, body: bytes) -> bytes:
    return hashlib.sha256(prev + body).digest()


def _header_bytes() -> bytes:
    return MAGIC + _lp(encode_fields({"format_version": FORMAT_VERSION, "hash_alg": HASH_ALG}))


def _aad(seq: int, label: str, subject: str) -> bytes:
    return f"{seq}|{label}|{subject}".encode("utf-8")


def verify_bytes(data: bytes) -> ChainReport:
    """Check a serialized ledger image link by link.

    ``first_bad_seq`` is 0 when the header itself is damaged, otherwise the
    sequence number of the first entry that fails to parse or to chain.
    """
    r = _Reader(data)
    try:
        if r.take(len(MAGIC)) != MAGIC:
            raise ValueError("bad magic")
        header = decode_fields(r.lp())
        if header.get("hash_alg") != HASH_ALG or header.get("format_version") != FORMAT_VERSION:
            raise ValueError("unsupported header")
    except (ValueError, UnicodeDecodeError):
        return ChainReport(False, 0, 0)
    prev = GENESIS
    seq = 0
    while r.pos < r.end:
        seq += 1
        try:
            rec = r.lp()
            if len(rec) < 64:
                raise ValueError("short record")
            stored_prev, stored_hash, body = rec[:32], rec[32:64], rec[64:]
            if stored_prev != prev or _digest(prev, body) != stored_hash:
                raise ValueError("broken link")
            # the hash covers the body; the writer always puts seq first
            br = _Reader(body)
            if br.u32() == 0 or br.lp() != b"seq" or br.take(1) != b"i" or \
                    _decode_value(b"i", br.lp()) != seq:
                raise ValueError("out of sequence")
        except (ValueError, UnicodeDecodeError):
            return ChainReport(False, seq, seq - 1)
        prev = stored_hash
    return ChainReport(True, None, seq)


class Ledger:
    """Single-writer audit ledger, kept in memory and optionally mirrored to disk.

    With ``path`` set, every append is written and flushed before it returns
    and the key store lives next to it in ``<path>.keys``.
    """

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.keys_path = f"{path}.keys" if path else None
        self._lock = threading.RLock()
        self._records: list[bytes] = []
        self._entries: list[AuditEntry] = []
        self._keys: dict[str, SubjectKey] = {}
        self._last_hash = GENESIS
        self._fh = None
        if path:
            self._open_files()

    @classmethod
    def open(cls, path: str) -> "Ledger":
        return cls(path)

    def _open_files(self):
        try:
            if os.path.exists(self.path) and os.path.getsize(self.path) > 0:
                with open(self.path, "rb") as fh:
                    self._load(fh.read())
                self._fh = open(self.path, "ab")
            else:
                self._fh = open(self.path, "wb")
                self._fh.write(_header_bytes())
                self._fh.flush()
            if os.path.exists(self.keys_path):
                with open(self.keys_path, "rb") as fh:
                    self._load_keys(fh.read())
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc

    def _load(self, data: bytes):
        r = _Reader(data)
        try:
            if r.take(len(MAGIC)) != MAGIC:
                raise ValueError("bad magic")
            r.lp()
            while r.pos < r.end:
                rec = r.lp()
                prev, h, body = rec[:32], rec[32:64], rec[64:]
                fields = decode_fields(body)
                self._records.append(rec)
                self._entries.append(AuditEntry(fields["seq"], prev, h, fields["timestamp"],
                                                fields["kind"], body))
                self._last_hash = h
        except (ValueError, KeyError, UnicodeDecodeError) as exc:
            raise LedgerCorrupt(f"{self.path}: cannot parse ledger ({exc})") from exc

    def _load_keys(self, data: bytes):
        r = _Reader(data)
        try:
            if r.take(len(KEYS_MAGIC)) != KEYS_MAGIC:
                raise ValueError("bad key store magic")
            while r.pos < r.end:
                f = decode_fields(r.lp())
                self._keys[f["subject"]] = SubjectKey(f["subject"], bytearray(f["key"]),
                                                      f["status"], f["destroyed_at"])
        except (ValueError, KeyError) as exc:
            raise LedgerCorrupt(f"{self.keys_path}: cannot parse key store ({exc})") from exc

    def _save_keys(self):
        if not self.keys_path:
            return
        parts = [KEYS_MAGIC]
        for k in self._keys.values():
            parts.append(_lp(encode_fields({"subject": k.subject_id, "status": k.status,
                                            "destroyed_at": k.destroyed_at, "key": bytes(k.key)})))
        tmp = self.keys_path + ".tmp"
        try:
            with open(tmp, "wb") as fh:
                fh.write(b"".join(parts))
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.keys_path)
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc

    def __len__(self):
        return len(self._entries)

    def close(self):
        with self._lock:
            if self._fh is not None:
                self._fh.flush()
                os.fsync(self._fh.fileno())
                self._fh.close()
                self._fh = None

    # subjects

    def register_subject(self, subject: str) -> SubjectKey:
        """Create a key for ``subject`` unless one exists (active or destroyed)."""
        with self._lock:
            if subject not in self._keys:
                self._keys[subject] = SubjectKey(subject, bytearray(AESGCM.generate_key(256)))
                self._save_keys()
            return self._keys[subject]

    def subject_status(self, subject: str) -> Optional[str]:
        k = self._keys.get(subject)
        return k.status if k else None

    def subjects(self) -> list[str]:
        return list(self._keys)

    # writing

    def append(self, kind: str, body: dict, personal: Optional[dict] = None,
               subject: Optional[str] = None, timestamp: int = 0) -> AuditEntry:
        if kind not in KINDS:
            raise ValueError(f"unknown entry kind {kind!r}")
        personal = personal or {}
        with self._lock:
            seq = len(self._entries) + 1
            sealed = {}
            if personal:
                if not subject:
                    raise ValueError("personal fields need a subject")
                key = self.register_subject(subject)
                if key.status != ACTIVE:
                    raise SubjectKeyDestroyed(f"subject {subject!r} has been erased")
                aead = AESGCM(bytes(key.key))
                for label, value in personal.items():
                    if isinstance(value, str):
                        value = value.encode("utf-8")
                    nonce = os.urandom(12)
                    ct = aead.encrypt(nonce, bytes(value), _aad(seq, label, subject))
                    sealed[label] = {"subject": subject, "nonce": nonce, "ct": ct}
            canonical = encode_fields({
                "seq": seq, "timestamp": timestamp, "kind": kind,
                "body": dict(body), "personal": sealed,
            })
            h = _digest(self._last_hash, canonical)
            rec = self._last_hash + h + canonical
            if self._fh is not None:
                try:
                    self._fh.write(_lp(rec))
                    self._fh.flush()
                except OSError as exc:
                    raise StorageFailure(str(exc)) from exc
            entry = AuditEntry(seq, self._last_hash, h, timestamp, kind, canonical)
            self._records.append(rec)
            self._entries.append(entry)
            self._last_hash = h
            return entry

    def erase_subject(self, subject: str, now: int) -> ErasureReceipt:
        with self._lock:
            key = self._keys.get(subject)
            if key is None:
                raise UnknownSubject(subject)
            if key.status == DESTROYED:
                raise AlreadyErased(subject)
            key.destroy(now)
            self._save_keys()
            entry = self.append(ERASURE, {"subject": subject, "destroyed_at": now}, timestamp=now)
            return ErasureReceipt(subject, now, entry.seq)

    # reading

    def image(self) -> bytes:
        """The exact bytes this ledger persists (or would persist)."""
        if self.path:
            with self._lock:
                if self._fh is not None:
                    self._fh.flush()
                with open(self.path, "rb") as fh:
                    return fh.read()
        return _header_bytes() + b"".join(_lp(r) for r in self._records)

    def verify_chain(self) -> ChainReport:
        return verify_bytes(self.image())

    def entries(self) -> list[AuditEntry]:
        return list(self._entries)

    def read_entry(self, seq: int) -> DecodedEntry:
        if not 1 <= seq <= len(self._entries):
            raise OutOfRange(f"seq {seq} outside 1..{len(self._entries)}")
        entry = self._entries[seq - 1]
        fields = decode_fields(entry.body)
        personal, subject = {}, None
        for label, sealed in fields["personal"].items():
            subject = sealed["subject"]
            key = self._keys.get(subject)
            if key is None or key.status != ACTIVE:
                personal[label] = Redacted(subject)
                continue
            try:
                personal[label] = AESGCM(bytes(key.key)).decrypt(
                    sealed["nonce"], sealed["ct"], _aad(seq, label, subject))
            except InvalidTag as exc:
                raise AuthenticationFailure(f"entry {seq} field {label!r}") from exc
        return DecodedEntry(seq, fields["kind"], fields["timestamp"], fields["body"], personal, subject)

    def read_all(self) -> list[DecodedEntry]:
        return [self.read_entry(i) for i in range(1, len(self._entries) + 1)]
