"""Message types exchanged between clients, servers and the monitor."""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import Union

from ctgossip.log_service import SignedCertificateTimestamp, SignedTreeHead
from ctgossip.merkle import ConsistencyProof, InclusionProof


@dataclass(frozen=True)
class P1Message:
    """STH-only gossip: a single tree head."""

    sth: SignedTreeHead


@dataclass(frozen=True)
class P2Message:
    """Two tree heads ``a < b`` plus the consistency proof linking them."""

    sth_a: SignedTreeHead
    sth_b: SignedTreeHead
    proof: ConsistencyProof

    @property
    def sths(self) -> tuple[SignedTreeHead, SignedTreeHead]:
        return (self.sth_a, self.sth_b)


class Reason(enum.IntEnum):
    LOG_UNRESPONSIVE = 1
    STALE_STH = 2
    INVALID_SIGNATURE = 3
    INVALID_PROOF = 4
    SCT_NOT_INCLUDED = 5


@dataclass(frozen=True)
class WarningMessage:
    """A claim about log misbehavior that every recipient must re-check."""

    reason: Reason
    first_observed: int
    reporter_id: str
    sths: tuple[SignedTreeHead, ...] = ()
    proof: ConsistencyProof | InclusionProof | None = None
    sct: SignedCertificateTimestamp | None = None

    def evidence_digest(self) -> bytes:
        """Identity of the observation, independent of who saw it and when."""
        h = hashlib.sha256(bytes([int(self.reason)]))
        for sth in self.sths:
            h.update(sth.signing_input() + sth.signature)
        if isinstance(self.proof, ConsistencyProof):
            h.update(b"C%d,%d:" % (self.proof.old_size, self.proof.new_size))
            h.update(b"".join(self.proof.path))
        elif isinstance(self.proof, InclusionProof):
            h.update(b"I%d,%d:" % (self.proof.leaf_index, self.proof.tree_size))
            h.update(b"".join(self.proof.path))
        if self.sct is not None:
            h.update(self.sct.signing_input() + self.sct.signature)
        return h.digest()


@dataclass(frozen=True)
class InconsistencyMessage:
    """Two or more validly signed STHs that contradict each other."""

    sths: tuple[SignedTreeHead, ...]

    def evidence_digest(self) -> bytes:
        h = hashlib.sha256(b"inconsistency")
        for sth in sorted(self.sths, key=lambda s: (s.tree_size, s.timestamp, s.root_hash)):
            h.update(sth.signing_input() + sth.signature)
        return h.digest()


AlertMessage = Union[WarningMessage, InconsistencyMessage]
GossipMessage = Union[P1Message, P2Message]
Message = Union[P1Message, P2Message, WarningMessage, InconsistencyMessage]


def is_alert(m: object) -> bool:
    return isinstance(m, (WarningMessage, InconsistencyMessage))
