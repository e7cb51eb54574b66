"""Canonical byte encoding of gossip and alert messages.

Layout (all integers big-endian, fixed width)::

    message      = tag(1) body
    tag          = 0x01 P1 gossip | 0x02 P2 gossip | 0x03 warning | 0x04 inconsistency
    sth          = tree_size(8) timestamp(8) root(32) log_id(32) sig_len(2) sig
    p1 body      = sth
    p2 body      = sth_a sth_b path_count(2) digest*        (requires a < b)
    warning body = reason(1) first_observed(8) reporter_len(2) reporter
                   sth_count(1) sth* proof_kind(1) [proof] has_sct(1) [sct]
    proof        = size_1(8) size_2(8) path_count(2) digest*
                   (proof_kind 1: old/new size of a consistency proof,
                    proof_kind 2: leaf index/tree size of an inclusion proof)
    sct          = log_id(32) cert_digest(32) timestamp(8) sig_len(2) sig
    incons. body = sth_count(1) sth*                        (requires >= 2)

Decoding is strict: unknown tags, truncation and trailing bytes are rejected
with :class:`MalformedMessage`.
"""
from __future__ import annotations

import base64
import binascii
import struct

from ctgossip.log_service import SignedCertificateTimestamp, SignedTreeHead
from ctgossip.merkle import ConsistencyProof, InclusionProof
from ctgossip.messages import (
    InconsistencyMessage,
    Message,
    P1Message,
    P2Message,
    Reason,
    WarningMessage,
)

TAG_P1 = 0x01
TAG_P2 = 0x02
TAG_WARNING = 0x03
TAG_INCONSISTENCY = 0x04

HEADER_NAME = "X-CT-Gossip"
HEADER_BUDGET = 4096

STH_FIXED = 8 + 8 + 32 + 32 + 2
SCT_FIXED = 32 + 32 + 8 + 2


class MalformedMessage(ValueError):
    pass


def _sth(sth: SignedTreeHead) -> bytes:
    if len(sth.root_hash) != 32 or len(sth.log_id) != 32:
        raise ValueError("STH root and log id must be 32 bytes")
    return (
        struct.pack(">QQ", sth.tree_size, sth.timestamp)
        + sth.root_hash
        + sth.log_id
        + struct.pack(">H", len(sth.signature))
        + sth.signature
    )


def _path(path: tuple[bytes, ...]) -> bytes:
    return struct.pack(">H", len(path)) + b"".join(path)


def _sct(sct: SignedCertificateTimestamp) -> bytes:
    return (
        sct.log_id
        + sct.cert_digest
        + struct.pack(">QH", sct.timestamp, len(sct.signature))
        + sct.signature
    )


def encode_message(m: Message) -> bytes:
    if isinstance(m, P1Message):
        return bytes([TAG_P1]) + _sth(m.sth)
    if isinstance(m, P2Message):
        return bytes([TAG_P2]) + _sth(m.sth_a) + _sth(m.sth_b) + _path(m.proof.path)
    if isinstance(m, WarningMessage):
        reporter = m.reporter_id.encode()
        out = [
            bytes([TAG_WARNING, int(m.reason)]),
            struct.pack(">QH", m.first_observed, len(reporter)),
            reporter,
            bytes([len(m.sths)]),
        ]
        out.extend(_sth(s) for s in m.sths)
        if isinstance(m.proof, ConsistencyProof):
            out.append(b"\x01" + struct.pack(">QQ", m.proof.old_size, m.proof.new_size))
            out.append(_path(m.proof.path))
        elif isinstance(m.proof, InclusionProof):
            out.append(b"\x02" + struct.pack(">QQ", m.proof.leaf_index, m.proof.tree_size))
            out.append(_path(m.proof.path))
        else:
            out.append(b"\x00")
        out.append(b"\x01" + _sct(m.sct) if m.sct is not None else b"\x00")
        return b"".join(out)
    if isinstance(m, InconsistencyMessage):
        return bytes([TAG_INCONSISTENCY, len(m.sths)]) + b"".join(_sth(s) for s in m.sths)
    raise TypeError(f"cannot encode {type(m).__name__}")


def encoded_length(m: Message) -> int:
    """Size of ``encode_message(m)`` computed from the layout alone."""
    if isinstance(m, P1Message):
        return 1 + STH_FIXED + len(m.sth.signature)
    if isinstance(m, P2Message):
        return (
            1
            + 2 * STH_FIXED
            + len(m.sth_a.signature)
            + len(m.sth_b.signature)
            + 2
            + 32 * len(m.proof.path)
        )
    return len(encode_message(m))


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise MalformedMessage("truncated message")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def sth(self) -> SignedTreeHead:
        size, ts = struct.unpack(">QQ", self.take(16))
        root = self.take(32)
        log_id = self.take(32)
        sig = self.take(self.u16())
        return SignedTreeHead(size, ts, root, log_id, sig)

    def path(self) -> tuple[bytes, ...]:
        count = self.u16()
        raw = self.take(32 * count)
        return tuple(raw[i:i + 32] for i in range(0, len(raw), 32))

    def sct(self) -> SignedCertificateTimestamp:
        log_id = self.take(32)
        digest = self.take(32)
        ts = self.u64()
        sig = self.take(self.u16())
        return SignedCertificateTimestamp(log_id, digest, ts, sig)


def decode_message(data: bytes) -> Message:
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise MalformedMessage("expected bytes")
    r = _Reader(bytes(data))
    tag = r.u8()
    if tag == TAG_P1:
        m: Message = P1Message(r.sth())
    elif tag == TAG_P2:
        a, b = r.sth(), r.sth()
        if a.tree_size >= b.tree_size:
            raise MalformedMessage("P2 message needs tree sizes a < b")
        m = P2Message(a, b, ConsistencyProof(a.tree_size, b.tree_size, r.path()))
    elif tag == TAG_WARNING:
        try:
            reason = Reason(r.u8())
        except ValueError:
            raise MalformedMessage("unknown warning reason") from None
        first_observed = r.u64()
        try:
            reporter = r.take(r.u16()).decode()
        except UnicodeDecodeError:
            raise MalformedMessage("reporter id is not UTF-8") from None
        sths = tuple(r.sth() for _ in range(r.u8()))
        kind = r.u8()
        proof: ConsistencyProof | InclusionProof | None = None
        if kind == 1:
            old, new = r.u64(), r.u64()
            proof = ConsistencyProof(old, new, r.path())
        elif kind == 2:
            index, size = r.u64(), r.u64()
            proof = InclusionProof(index, size, r.path())
        elif kind != 0:
            raise MalformedMessage("unknown proof kind")
        flag = r.u8()
        if flag not in (0, 1):
            raise MalformedMessage("bad SCT flag")
        sct = r.sct() if flag else None
        m = WarningMessage(reason, first_observed, reporter, sths, proof, sct)
    elif tag == TAG_INCONSISTENCY:
        count = r.u8()
        if count < 2:
            raise MalformedMessage("inconsistency needs at least two STHs")
        m = InconsistencyMessage(tuple(r.sth() for _ in range(count)))
    else:
        raise MalformedMessage(f"unknown tag {tag:#04x}")
    if r.pos != len(r.data):
        raise MalformedMessage("trailing bytes")
    return m


def to_header(m: Message, budget: int = HEADER_BUDGET) -> str:
    value = base64.b64encode(encode_message(m)).decode("ascii")
    if len(value) > budget:
        raise ValueError(f"gossip header of {len(value)} bytes exceeds budget {budget}")
    return value


def from_header(value: str) -> Message:
    try:
        raw = base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError):
        raise MalformedMessage("header value is not base64") from None
    return decode_message(raw)


def encode_sth(sth: SignedTreeHead) -> bytes:
    return _sth(sth)


def decode_sth(data: bytes) -> SignedTreeHead:
    r = _Reader(bytes(data))
    sth = r.sth()
    if r.pos != len(r.data):
        raise MalformedMessage("trailing bytes")
    return sth


def encode_sct(sct: SignedCertificateTimestamp) -> bytes:
    return _sct(sct)


def decode_sct(data: bytes) -> SignedCertificateTimestamp:
    r = _Reader(bytes(data))
    sct = r.sct()
    if r.pos != len(r.data):
        raise MalformedMessage("trailing bytes")
    return sct
