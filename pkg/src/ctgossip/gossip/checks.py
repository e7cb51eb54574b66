"""STH consistency checks and gossip-message validation shared by both protocols."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from ctgossip.log_service import SignedTreeHead, verify_sth
from ctgossip.merkle import verify_consistency
from ctgossip.messages import P1Message, P2Message
from ctgossip.wire import MalformedMessage, decode_message


@dataclass(frozen=True)
class InconsistencyEvidence:
    """STH pairs that violate one of the two consistency criteria."""

    pairs: tuple[tuple[SignedTreeHead, SignedTreeHead], ...]

    @property
    def sths(self) -> tuple[SignedTreeHead, ...]:
        seen: dict[SignedTreeHead, None] = {}
        for a, b in self.pairs:
            seen.setdefault(a)
            seen.setdefault(b)
        return tuple(seen)


def violates(x: SignedTreeHead, y: SignedTreeHead) -> bool:
    if x.tree_size == y.tree_size:
        return x.root_hash != y.root_hash
    if x.timestamp > y.timestamp:
        return x.tree_size < y.tree_size
    if y.timestamp > x.timestamp:
        return y.tree_size < x.tree_size
    return False


def check_sths(sths: Iterable[SignedTreeHead | None]) -> InconsistencyEvidence | None:
    """Return evidence if any two heads disagree, ``None`` if all agree.

    Two heads of the same size must share a root, and a head with a later
    timestamp must not have a smaller tree.  Empty slots are skipped; the
    caller is responsible for having verified every signature.
    """
    present = list(dict.fromkeys(s for s in sths if s is not None))
    pairs = [
        (x, y)
        for i, x in enumerate(present)
        for y in present[i + 1:]
        if violates(x, y)
    ]
    return InconsistencyEvidence(tuple(pairs)) if pairs else None


def coerce(raw: object):
    """Turn a received value into a message object, or ``None`` if unusable."""
    if raw is None:
        return None
    if isinstance(raw, (bytes, bytearray, memoryview)):
        if not raw:
            return None
        try:
            return decode_message(raw)
        except MalformedMessage:
            return None
    return raw


def p2_signatures_ok(m: P2Message, public_key: bytes) -> bool:
    return (
        m.sth_a.tree_size < m.sth_b.tree_size
        and verify_sth(m.sth_a, public_key)
        and verify_sth(m.sth_b, public_key)
    )


def p2_proof_ok(m: P2Message, algorithm: str = "sha256") -> bool:
    a, b = m.sth_a, m.sth_b
    return verify_consistency(a.tree_size, a.root_hash, b.tree_size, b.root_hash, m.proof, algorithm)


def valid_message(protocol: int, m: object, public_key: bytes, algorithm: str = "sha256") -> bool:
    """True iff ``m`` is a non-empty, well-formed, verified message of ``protocol``."""
    m = coerce(m)
    if protocol == 1:
        return isinstance(m, P1Message) and verify_sth(m.sth, public_key)
    if protocol == 2:
        return isinstance(m, P2Message) and p2_signatures_ok(m, public_key) and p2_proof_ok(m, algorithm)
    raise ValueError(f"unknown protocol {protocol!r}")
