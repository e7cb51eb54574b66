"""Warning and inconsistency alerts, their verification, and the monitor.

An inconsistency message is self-verifying: it carries two or more validly
signed STHs that contradict each other, so any recipient can check it without
contacting the log.  A warning only describes a problem (unresponsive log,
stale head, bad signature, bad proof, missing certificate) and every
recipient must confirm it against the log before acting on it, unless it
confirmed the same observation recently.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ctgossip.gossip.checks import InconsistencyEvidence, check_sths
from ctgossip.gossip.logclient import VERIFY, LogClient
from ctgossip.log_service import (
    LogError,
    LogTimeout,
    NotFound,
    SignedCertificateTimestamp,
    SignedTreeHead,
    verify_sct,
    verify_sth,
)
from ctgossip.merkle import ConsistencyProof, InclusionProof, verify_consistency, verify_inclusion
from ctgossip.messages import AlertMessage, InconsistencyMessage, Reason, WarningMessage

__all__ = [
    "Action",
    "ConfirmationCache",
    "InconsistencyMessage",
    "LogStatus",
    "Monitor",
    "MonitorState",
    "Reason",
    "WarningMessage",
    "handle_alert",
    "raise_inconsistency",
    "raise_warning",
    "verify_inconsistency",
    "verify_warning",
]

SCT_REASONS = (Reason.SCT_NOT_INCLUDED, Reason.INVALID_PROOF, Reason.INVALID_SIGNATURE)


def raise_warning(
    reason: Reason,
    now: int,
    reporter_id: str,
    *,
    sths: tuple[SignedTreeHead, ...] = (),
    proof: ConsistencyProof | InclusionProof | None = None,
    sct: SignedCertificateTimestamp | None = None,
    consent: bool = False,
) -> WarningMessage:
    """Build a warning, enforcing the evidence each reason has to carry.

    An SCT reveals which site the reporter visited, so it is only attached
    when the user consented; otherwise the caller hands the full warning to
    the originating server alone.
    """
    reason = Reason(reason)
    sths = tuple(sths)
    if reason is Reason.STALE_STH and len(sths) != 1:
        raise ValueError("stale_sth warning must carry the stale STH")
    if reason is Reason.INVALID_PROOF:
        if isinstance(proof, ConsistencyProof) and len(sths) != 2:
            raise ValueError("invalid consistency proof warning needs both STHs")
        if isinstance(proof, InclusionProof) and len(sths) != 1:
            raise ValueError("invalid audit proof warning needs the STH")
        if proof is None:
            raise ValueError("invalid_proof warning must carry the proof")
    if reason is Reason.INVALID_SIGNATURE and not sths and sct is None:
        raise ValueError("invalid_signature warning needs the offending STH or SCT")
    if reason is Reason.SCT_NOT_INCLUDED and sct is None:
        raise ValueError("sct_not_included warning needs the SCT")
    if sct is not None and not consent:
        sct = None
    return WarningMessage(reason, now, reporter_id, sths, proof, sct)


def verify_inconsistency(msg: InconsistencyMessage, public_key: bytes) -> bool:
    sths = msg.sths
    if len(sths) < 2 or not all(verify_sth(s, public_key) for s in sths):
        return False
    return check_sths(sths) is not None


def raise_inconsistency(evidence: InconsistencyEvidence, public_key: bytes) -> InconsistencyMessage:
    msg = InconsistencyMessage(evidence.sths)
    if not verify_inconsistency(msg, public_key):
        raise ValueError("evidence does not attribute an inconsistency to the log")
    return msg


def _fresh_sth(log: LogClient) -> SignedTreeHead | None:
    try:
        return log.get_sth(VERIFY)
    except LogError:
        return None


def _sct_due(sct: SignedCertificateTimestamp, sth: SignedTreeHead, mmd: int) -> bool:
    return sth.timestamp >= sct.timestamp + mmd


def verify_warning(
    w: WarningMessage, log: LogClient, own_sct: SignedCertificateTimestamp | None = None
) -> bool:
    """Re-check the claim in ``w`` against the log; True iff the problem exists."""
    pk = log.public_key
    reason = w.reason
    if reason is Reason.LOG_UNRESPONSIVE:
        try:
            log.get_sth(VERIFY)
        except LogTimeout:
            return True
        except LogError:
            return False
        return False

    if reason is Reason.STALE_STH:
        sth = _fresh_sth(log)
        return sth is not None and verify_sth(sth, pk) and sth.timestamp < log.now() - log.mmd

    if reason is Reason.INVALID_SIGNATURE:
        # A bad signature in the evidence alone proves nothing: anyone can
        # produce one.  Only a fresh head from the log can confirm it.
        sth = _fresh_sth(log)
        return sth is not None and not verify_sth(sth, pk)

    sct = w.sct or own_sct
    if reason is Reason.INVALID_PROOF:
        if isinstance(w.proof, ConsistencyProof) and len(w.sths) == 2:
            x, y = sorted(w.sths, key=lambda s: s.tree_size)
            if x.tree_size == y.tree_size or not (verify_sth(x, pk) and verify_sth(y, pk)):
                return False
            try:
                proof = log.get_consistency_proof(x.tree_size, y.tree_size, VERIFY)
            except LogError:
                # The log signed both heads yet cannot link them.
                return True
            return not verify_consistency(
                x.tree_size, x.root_hash, y.tree_size, y.root_hash, proof, log.algorithm
            )
        if isinstance(w.proof, InclusionProof) and len(w.sths) == 1 and sct is not None:
            sth = w.sths[0]
            if not (verify_sth(sth, pk) and verify_sct(sct, pk)):
                return False
            try:
                proof = log.get_audit_proof(sct, sth.tree_size, VERIFY)
            except LogTimeout:
                return True
            except NotFound:
                return _sct_due(sct, sth, log.mmd)
            except LogError:
                return False
            return not verify_inclusion(
                sct.cert_digest, proof, sth.root_hash, sth.tree_size, log.algorithm
            )
        return False

    if reason is Reason.SCT_NOT_INCLUDED:
        if sct is None or not verify_sct(sct, pk):
            return False
        sth = _fresh_sth(log)
        if sth is None or not verify_sth(sth, pk) or not _sct_due(sct, sth, log.mmd):
            return False
        try:
            proof = log.get_audit_proof(sct, sth.tree_size, VERIFY)
        except (NotFound, LogTimeout):
            return True
        except LogError:
            return False
        return not verify_inclusion(sct.cert_digest, proof, sth.root_hash, sth.tree_size, log.algorithm)
    return False


class ConfirmationCache:
    """Observations confirmed recently, keyed by evidence digest."""

    def __init__(self, ttl: int):
        self.ttl = ttl
        self._seen: dict[bytes, int] = {}

    def __len__(self) -> int:
        return len(self._seen)

    def hit(self, digest: bytes, now: int) -> bool:
        t = self._seen.get(digest)
        return t is not None and now - t <= self.ttl

    def add(self, digest: bytes, now: int) -> None:
        self._seen[digest] = now


class Action(enum.Enum):
    VERIFY_THEN_PROPAGATE = "verify_then_propagate"
    PROPAGATE = "propagate"
    DROP = "drop"


def handle_alert(
    received: AlertMessage,
    log: LogClient,
    cache: ConfirmationCache,
    own_sct: SignedCertificateTimestamp | None = None,
) -> Action:
    """Decide what a node does with an alert it received from a peer."""
    if isinstance(received, InconsistencyMessage):
        ok = verify_inconsistency(received, log.public_key)
        return Action.PROPAGATE if ok else Action.DROP
    if not isinstance(received, WarningMessage):
        return Action.DROP
    now = log.now()
    digest = received.evidence_digest()
    if cache.hit(digest, now):
        return Action.PROPAGATE
    if verify_warning(received, log, own_sct):
        cache.add(digest, now)
        return Action.VERIFY_THEN_PROPAGATE
    return Action.DROP


class LogStatus(enum.Enum):
    TRUSTED = "trusted"
    SUSPECT = "suspect"
    UNTRUSTED = "untrusted"


@dataclass
class MonitorState:
    log_status: LogStatus = LogStatus.TRUSTED
    received_reports: list[AlertMessage] = field(default_factory=list)
    confirmation_cache: dict[bytes, int] = field(default_factory=dict)


class Monitor:
    """Receives reports and adjudicates whether the log can be trusted.

    Inconsistency reports are checked offline; warnings are re-verified
    against the log (once per evidence digest within the cache TTL).
    ``untrusted`` is absorbing.
    """

    def __init__(self, log: LogClient, ttl: int | None = None):
        self.log = log
        self.state = MonitorState()
        self._cache = ConfirmationCache(log.mmd if ttl is None else ttl)
        self.state.confirmation_cache = self._cache._seen
        self._seen_reports: set[bytes] = set()

    @property
    def status(self) -> LogStatus:
        return self.state.log_status

    def receive(self, report: AlertMessage) -> MonitorState:
        state = self.state
        if state.log_status is LogStatus.UNTRUSTED:
            return state
        digest = report.evidence_digest()
        if isinstance(report, InconsistencyMessage):
            if verify_inconsistency(report, self.log.public_key):
                self._record(report, digest)
                state.log_status = LogStatus.UNTRUSTED
            return state
        if not isinstance(report, WarningMessage):
            return state
        now = self.log.now()
        if self._cache.hit(digest, now):
            return state
        if verify_warning(report, self.log):
            self._cache.add(digest, now)
            self._record(report, digest)
            if state.log_status is LogStatus.TRUSTED:
                state.log_status = LogStatus.SUSPECT
        return state

    def _record(self, report: AlertMessage, digest: bytes) -> None:
        if digest not in self._seen_reports:
            self._seen_reports.add(digest)
            self.state.received_reports.append(report)
