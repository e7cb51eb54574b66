"""Requester-bound access to a log, with retries and a record of every query.

Gossip state machines talk to the log only through :class:`LogClient`, so the
same code runs against an in-process :class:`~ctgossip.log_service.LogService`
in the simulator and against the HTTP log in the network demo.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

from ctgossip.log_service import (
    LogTimeout,
    SignedCertificateTimestamp,
    SignedTreeHead,
)
from ctgossip.merkle import ConsistencyProof, InclusionProof

# Why a query was issued: "gossip" queries are caused by received gossip
# messages and count as protocol overhead; "audit" queries belong to the
# standard SCT-audit flow; "verify" queries re-check received alerts.
GOSSIP = "gossip"
AUDIT = "audit"
VERIFY = "verify"


class LogBackend(Protocol):
    def get_sth(self, requester: str | None) -> SignedTreeHead: ...

    def get_consistency_proof(self, requester: str | None, a: int, b: int) -> ConsistencyProof: ...

    def get_audit_proof(
        self, requester: str | None, sct: SignedCertificateTimestamp, size: int
    ) -> InclusionProof: ...


@dataclass(frozen=True)
class Query:
    op: str
    args: tuple
    purpose: str

    @property
    def call(self) -> tuple:
        return (self.op, *self.args)


@dataclass
class LogClient:
    backend: LogBackend
    requester: str
    public_key: bytes
    mmd: int
    clock: Callable[[], int]
    retry_limit: int = 3
    algorithm: str = "sha256"
    queries: list[Query] = field(default_factory=list)

    def now(self) -> int:
        return self.clock()

    def drain(self) -> list[Query]:
        out, self.queries = self.queries, []
        return out

    def _call(self, op: str, args: tuple, purpose: str, fn):
        # Each attempt is a separate log connection; timeouts are retried up to
        # retry_limit attempts before being surfaced.
        for attempt in range(max(1, self.retry_limit)):
            self.queries.append(Query(op, args, purpose))
            try:
                return fn()
            except LogTimeout:
                if attempt + 1 >= max(1, self.retry_limit):
                    raise

    def get_sth(self, purpose: str = AUDIT) -> SignedTreeHead:
        return self._call("get_sth", (), purpose, lambda: self.backend.get_sth(self.requester))

    def get_consistency_proof(self, a: int, b: int, purpose: str = GOSSIP) -> ConsistencyProof:
        lo, hi = min(a, b), max(a, b)
        return self._call(
            "get_consistency_proof",
            (lo, hi),
            purpose,
            lambda: self.backend.get_consistency_proof(self.requester, lo, hi),
        )

    def get_audit_proof(
        self, sct: SignedCertificateTimestamp, size: int, purpose: str = AUDIT
    ) -> InclusionProof:
        return self._call(
            "get_audit_proof",
            (size,),
            purpose,
            lambda: self.backend.get_audit_proof(self.requester, sct, size),
        )
