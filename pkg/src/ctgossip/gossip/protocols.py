"""Client and server state machines for both gossip protocols.

Protocol 1 gossips a single STH; every exchange of STHs with different tree
sizes costs both sides a consistency-proof query.  Protocol 2 gossips
``(s_a, s_b, p_ab)`` triplets and lets servers keep a map of such messages
keyed by tree size, so clients can usually be chained forward without any
log query.

Every node follows the same exchange order: the client selects ``m1``, the
server selects ``m2`` from ``m1``, then the client runs ``update(sct, m2)``
and the server runs ``update(m1)``.  A failed check halts the update and
puts the node in alert mode, where ``get_message`` returns the alert instead
of gossip until the problem is re-checked and gone (warnings) or forever
(inconsistencies).
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ctgossip.anomaly import (
    Action,
    ConfirmationCache,
    handle_alert,
    raise_inconsistency,
    raise_warning,
    verify_warning,
)
from ctgossip.gossip.checks import check_sths, coerce, p2_proof_ok, p2_signatures_ok
from ctgossip.gossip.logclient import AUDIT, GOSSIP, LogClient, Query
from ctgossip.log_service import (
    LogError,
    LogTimeout,
    NotFound,
    SignedCertificateTimestamp,
    SignedTreeHead,
    verify_sct,
    verify_sth,
)
from ctgossip.merkle import ConsistencyProof, verify_consistency, verify_inclusion
from ctgossip.messages import (
    AlertMessage,
    InconsistencyMessage,
    P1Message,
    P2Message,
    Reason,
    WarningMessage,
    is_alert,
)

DEFAULT_STORAGE_LIMIT = 10_000


@dataclass
class UpdateResult:
    queries: list[Query] = field(default_factory=list)
    # Alert raised or confirmed during this update; the caller reports it.
    alert: AlertMessage | None = None
    # SCT-bearing warning for the originating server only (no user consent).
    origin_report: WarningMessage | None = None
    dropped: bool = False

    def calls(self) -> list[tuple]:
        return [q.call for q in self.queries]

    def count(self, op: str, purpose: str | None = None) -> int:
        return sum(1 for q in self.queries if q.op == op and (purpose is None or q.purpose == purpose))


class _Halt(Exception):
    def __init__(self, alert: AlertMessage, private: WarningMessage | None = None):
        super().__init__(alert)
        self.alert = alert
        self.private = private


class GossipNode:
    protocol = 0
    role = ""

    def __init__(
        self,
        node_id: str,
        public_key: bytes,
        mmd: int,
        *,
        consent: bool = False,
        algorithm: str = "sha256",
    ):
        self.node_id = node_id
        self.public_key = public_key
        self.mmd = mmd
        self.consent = consent
        self.algorithm = algorithm
        self.alert: AlertMessage | None = None
        self.cache = ConfirmationCache(mmd)
        self._alert_checked = 0
        # Full (SCT-bearing) version of our own warning, used for re-checks.
        self._alert_private: WarningMessage | None = None

    @property
    def in_alert_mode(self) -> bool:
        return self.alert is not None

    # -- alert plumbing ----------------------------------------------------

    def _enter_alert(self, alert: AlertMessage, now: int, private: WarningMessage | None = None) -> bool:
        if isinstance(self.alert, InconsistencyMessage):
            return False
        if isinstance(self.alert, WarningMessage) and isinstance(alert, WarningMessage):
            # Keep the first warning; we are already gossiping one.
            return False
        self.alert = alert
        self._alert_private = private
        self._alert_checked = now
        if isinstance(alert, WarningMessage):
            self.cache.add(alert.evidence_digest(), now)
        return True

    def _own_sct(self) -> SignedCertificateTimestamp | None:
        return None

    def _alert_gate(self, log: LogClient) -> bool:
        """True while normal protocol flow is suspended."""
        if self.alert is None:
            return False
        if isinstance(self.alert, InconsistencyMessage):
            return True
        now = log.now()
        if now - self._alert_checked < self.mmd:
            return True
        self._alert_checked = now
        claim = self._alert_private or self.alert
        sct = claim.sct or self._own_sct()
        if verify_warning(claim, log, sct):
            return True
        self.alert = None
        self._alert_private = None
        return False

    def _receive_alert(self, alert: AlertMessage, log: LogClient, result: UpdateResult) -> None:
        action = handle_alert(alert, log, self.cache, self._own_sct())
        if action is not Action.DROP and self._enter_alert(alert, log.now()):
            result.alert = alert

    def _run(self, log: LogClient, body) -> UpdateResult:
        result = UpdateResult()
        try:
            body(result)
        except _Halt as halt:
            alert, private = halt.alert, halt.private
            if private is not None and not self.consent and private.sct is not None and alert.sct is None:
                # The SCT may only go back to the server it came from.
                result.origin_report = private
            elif self._enter_alert(alert, log.now(), private):
                result.alert = alert
        result.queries = log.drain()
        return result

    # -- checks that halt the normal flow ------------------------------------

    def _check(self, sths) -> None:
        evidence = check_sths(sths)
        if evidence is not None:
            raise _Halt(raise_inconsistency(evidence, self.public_key))

    def _warn(self, reason: Reason, log: LogClient, **evidence) -> None:
        now = log.now()
        public = raise_warning(reason, now, self.node_id, consent=self.consent, **evidence)
        private = None
        if evidence.get("sct") is not None:
            private = raise_warning(reason, now, self.node_id, consent=True, **evidence)
        raise _Halt(public, private)

    def _fetch_sth(self, log: LogClient, purpose: str = AUDIT) -> SignedTreeHead:
        try:
            sth = log.get_sth(purpose)
        except LogTimeout:
            self._warn(Reason.LOG_UNRESPONSIVE, log)
        except LogError:
            self._warn(Reason.LOG_UNRESPONSIVE, log)
        if not verify_sth(sth, self.public_key):
            self._warn(Reason.INVALID_SIGNATURE, log, sths=(sth,))
        if sth.timestamp < log.now() - self.mmd:
            self._warn(Reason.STALE_STH, log, sths=(sth,))
        return sth

    def _consistency(
        self, log: LogClient, x: SignedTreeHead, y: SignedTreeHead, purpose: str
    ) -> ConsistencyProof:
        """Fetch and verify the proof linking two heads of different sizes."""
        lo, hi = (x, y) if x.tree_size < y.tree_size else (y, x)
        try:
            proof = log.get_consistency_proof(lo.tree_size, hi.tree_size, purpose)
        except LogTimeout:
            self._warn(Reason.LOG_UNRESPONSIVE, log)
        except LogError:
            self._warn(
                Reason.INVALID_PROOF,
                log,
                sths=(lo, hi),
                proof=ConsistencyProof(lo.tree_size, hi.tree_size, ()),
            )
        if not verify_consistency(
            lo.tree_size, lo.root_hash, hi.tree_size, hi.root_hash, proof, self.algorithm
        ):
            self._warn(Reason.INVALID_PROOF, log, sths=(lo, hi), proof=proof)
        return proof

    def _audit(self, log: LogClient, sct: SignedCertificateTimestamp, sth: SignedTreeHead) -> bool:
        """Audit ``sct`` against ``sth``; False if the merge is not due yet."""
        try:
            proof = log.get_audit_proof(sct, sth.tree_size)
        except LogTimeout:
            self._warn(Reason.LOG_UNRESPONSIVE, log)
        except NotFound:
            if sth.timestamp < sct.timestamp + self.mmd:
                return False
            self._warn(Reason.SCT_NOT_INCLUDED, log, sct=sct)
        except LogError:
            self._warn(Reason.LOG_UNRESPONSIVE, log)
        if not verify_inclusion(sct.cert_digest, proof, sth.root_hash, sth.tree_size, self.algorithm):
            self._warn(Reason.INVALID_PROOF, log, sths=(sth,), proof=proof, sct=sct)
        return True


class _ClientBase(GossipNode):
    role = "client"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.audited: set[bytes] = set()

    def update(self, sct: SignedCertificateTimestamp | None, m2: object, log: LogClient) -> UpdateResult:
        return self._run(log, lambda result: self._update(sct, m2, log, result))

    def _update(self, sct, m2, log: LogClient, result: UpdateResult) -> None:
        m2 = coerce(m2)
        if is_alert(m2):
            self._receive_alert(m2, log, result)
            m2 = None
        if self._alert_gate(log):
            return
        self._exchange(m2, log, result)
        if sct is not None and sct.digest not in self.audited:
            if not verify_sct(sct, self.public_key):
                self._warn(Reason.INVALID_SIGNATURE, log, sct=sct)
            if self._audit_flow(sct, log):
                self.audited.add(sct.digest)

    def _exchange(self, m2, log: LogClient, result: UpdateResult) -> None:
        raise NotImplementedError

    def _audit_flow(self, sct: SignedCertificateTimestamp, log: LogClient) -> bool:
        raise NotImplementedError


class P1Client(_ClientBase):
    """STH-only client: stores ``s_a`` and the set ``l`` of audited SCTs."""

    protocol = 1

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.sth: SignedTreeHead | None = None

    @property
    def held_sth(self) -> SignedTreeHead | None:
        return self.sth

    def get_message(self):
        if self.alert is not None:
            return self.alert
        return P1Message(self.sth) if self.sth is not None else None

    def _exchange(self, m2, log: LogClient, result: UpdateResult) -> None:
        if not (isinstance(m2, P1Message) and verify_sth(m2.sth, self.public_key)):
            return
        s_b = m2.sth
        self._check((self.sth, s_b))
        if self.sth is None:
            self.sth = s_b
        elif s_b.tree_size != self.sth.tree_size:
            self._consistency(log, self.sth, s_b, GOSSIP)
            if self.sth.tree_size < s_b.tree_size:
                self.sth = s_b

    def _audit_flow(self, sct: SignedCertificateTimestamp, log: LogClient) -> bool:
        s_c = self._fetch_sth(log)
        self._check((self.sth, s_c))
        included = self._audit(log, sct, s_c)
        a = self.sth
        if a is None:
            self.sth = s_c
        elif a.tree_size < s_c.tree_size:
            self._consistency(log, a, s_c, AUDIT)
            self.sth = s_c
        elif a.tree_size > s_c.tree_size:
            # Never trade a larger head for a smaller one; just link them.
            self._consistency(log, s_c, a, AUDIT)
        return included


class NoGossipClient(P1Client):
    """CT-enabled client that does not gossip (the two baseline cases).

    With ``save_scts`` it audits each SCT once; without, it repeats the full
    fetch on every connection to a CT-enabled server.
    """

    protocol = 0

    def __init__(self, *args, save_scts: bool = True, **kwargs):
        super().__init__(*args, **kwargs)
        self.save_scts = save_scts

    def get_message(self):
        return None

    def _update(self, sct, m2, log: LogClient, result: UpdateResult) -> None:
        if self._alert_gate(log):
            return
        if sct is None or (self.save_scts and sct.digest in self.audited):
            return
        if not verify_sct(sct, self.public_key):
            self._warn(Reason.INVALID_SIGNATURE, log, sct=sct)
        if self._audit_flow(sct, log):
            self.audited.add(sct.digest)


class P2Client(_ClientBase):
    """Triplet client: stores ``s_a``, ``s_b``, ``p_ab`` and audited SCTs."""

    protocol = 2

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.sth_a: SignedTreeHead | None = None
        self.sth_b: SignedTreeHead | None = None
        self.proof: ConsistencyProof | None = None

    @property
    def held_sth(self) -> SignedTreeHead | None:
        return self.sth_b

    def get_message(self):
        if self.alert is not None:
            return self.alert
        if self.sth_a is None or self.sth_b is None or self.proof is None:
            return None
        return P2Message(self.sth_a, self.sth_b, self.proof)

    def _adopt(self, m: P2Message) -> None:
        self.sth_a, self.sth_b, self.proof = m.sth_a, m.sth_b, m.proof

    def _exchange(self, m2, log: LogClient, result: UpdateResult) -> None:
        if not (isinstance(m2, P2Message) and p2_signatures_ok(m2, self.public_key)):
            return
        s_c, s_d = m2.sth_a, m2.sth_b
        # Signed heads are checked even when the attached proof is bad.
        self._check((self.sth_a, self.sth_b, s_c, s_d))
        if not p2_proof_ok(m2, self.algorithm):
            result.dropped = True
            return
        s_b = self.sth_b
        if s_b is None:
            self._adopt(m2)
            return
        b, c, d = s_b.tree_size, s_c.tree_size, s_d.tree_size
        if b != c and b != d:
            self._consistency(log, s_b, s_d, GOSSIP)
        if b < d:
            self._adopt(m2)

    def _audit_flow(self, sct: SignedCertificateTimestamp, log: LogClient) -> bool:
        s_e = self._fetch_sth(log)
        self._check((self.sth_b, s_e))
        included = self._audit(log, sct, s_e)
        s_b = self.sth_b
        if s_b is None:
            self.sth_b = s_e
        elif s_b.tree_size < s_e.tree_size:
            proof = self._consistency(log, s_b, s_e, AUDIT)
            self.sth_a, self.sth_b, self.proof = s_b, s_e, proof
        elif s_b.tree_size > s_e.tree_size:
            self._consistency(log, s_e, s_b, AUDIT)
        return included


class _ServerBase(GossipNode):
    role = "server"

    def __init__(self, *args, sct: SignedCertificateTimestamp | None = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.sct = sct

    def _own_sct(self) -> SignedCertificateTimestamp | None:
        return self.sct

    def update(self, m1: object, log: LogClient) -> UpdateResult:
        return self._run(log, lambda result: self._update(m1, log, result))

    def _update(self, m1, log: LogClient, result: UpdateResult) -> None:
        m1 = coerce(m1)
        if is_alert(m1):
            self._receive_alert(m1, log, result)
            return
        if self._alert_gate(log):
            return
        self._handle(m1, log, result)

    def _handle(self, m1, log: LogClient, result: UpdateResult) -> None:
        raise NotImplementedError

    def receive_origin_report(self, report: WarningMessage, log: LogClient) -> UpdateResult:
        """A client hands back a warning about this server's own SCT."""

        def body(result: UpdateResult) -> None:
            if self.sct is None or report.sct != self.sct:
                result.dropped = True
                return
            if verify_warning(report, log, self.sct):
                own = raise_warning(
                    report.reason,
                    log.now(),
                    self.node_id,
                    sths=report.sths,
                    proof=report.proof,
                    sct=self.sct,
                    consent=True,
                )
                if self._enter_alert(own, log.now()):
                    result.alert = own
            else:
                result.dropped = True

        return self._run(log, body)


class P1Server(_ServerBase):
    protocol = 1

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.sth: SignedTreeHead | None = None

    @property
    def held_sth(self) -> SignedTreeHead | None:
        return self.sth

    def get_message(self, m1: object = None):
        if self.alert is not None:
            return self.alert
        m1 = coerce(m1)
        if not (isinstance(m1, P1Message) and verify_sth(m1.sth, self.public_key)):
            return None
        return P1Message(self.sth) if self.sth is not None else None

    def _handle(self, m1, log: LogClient, result: UpdateResult) -> None:
        if not (isinstance(m1, P1Message) and verify_sth(m1.sth, self.public_key)):
            result.dropped = True
            return
        s_a = m1.sth
        if self.sth is not None:
            self._check((s_a, self.sth))
            if s_a.tree_size != self.sth.tree_size:
                self._consistency(log, s_a, self.sth, GOSSIP)
        if self.sth is None or self.sth.tree_size < s_a.tree_size:
            self.sth = s_a


class P2Server(_ServerBase):
    """Triplet server: largest head ``s_n``, message map ``g``, default ``m0``."""

    protocol = 2

    def __init__(self, *args, storage_limit: int = DEFAULT_STORAGE_LIMIT, **kwargs):
        super().__init__(*args, **kwargs)
        if storage_limit < 1:
            raise ValueError("storage limit must be positive")
        self.storage_limit = storage_limit
        self.sth_n: SignedTreeHead | None = None
        self.messages: dict[int, P2Message] = {}
        self.default: P2Message | None = None

    @property
    def held_sth(self) -> SignedTreeHead | None:
        return self.sth_n

    def keys(self) -> list[int]:
        return sorted(self.messages)

    def get_message(self, m1: object = None):
        if self.alert is not None:
            return self.alert
        m1 = coerce(m1)
        if not (
            isinstance(m1, P2Message)
            and p2_signatures_ok(m1, self.public_key)
            and p2_proof_ok(m1, self.algorithm)
        ) or not self.messages:
            return None
        return self.messages.get(m1.sth_b.tree_size, self.default)

    def _stored_sths(self, *keys: int) -> list[SignedTreeHead]:
        out: list[SignedTreeHead] = []
        for k in keys:
            m = self.messages.get(k)
            if m is not None:
                out.extend(m.sths)
        return out

    def _handle(self, m1, log: LogClient, result: UpdateResult) -> None:
        if not (isinstance(m1, P2Message) and p2_signatures_ok(m1, self.public_key)):
            result.dropped = True
            return
        s_a, s_b = m1.sth_a, m1.sth_b
        a, b = s_a.tree_size, s_b.tree_size
        stored = self._stored_sths(a, b)
        if not p2_proof_ok(m1, self.algorithm):
            self._check((s_a, s_b, self.sth_n, *stored))
            result.dropped = True
            return
        s_n = self.sth_n
        if s_n is not None:
            self._check((s_a, s_b, s_n, *stored))
            n = s_n.tree_size
            if a != n and n != b and (a not in self.messages or b not in self.messages):
                proof = self._consistency(log, s_b, s_n, GOSSIP)
                if b < n:
                    self.messages[b] = P2Message(s_b, s_n, proof)
                else:
                    # The bridge runs from n up to b; key it by its first head.
                    self.messages[n] = P2Message(s_n, s_b, proof)
        if s_n is None or s_n.tree_size < b:
            self.sth_n = s_b
            self.default = m1
            self.messages[a] = m1
        elif s_n.tree_size == b:
            self.messages[a] = m1
        while len(self.messages) > self.storage_limit:
            del self.messages[min(self.messages)]


class NoGossipServer(_ServerBase):
    """CT-enabled server without gossip; it only handles reports about its SCT."""

    protocol = 0

    def get_message(self, m1: object = None):
        return self.alert

    def _handle(self, m1, log: LogClient, result: UpdateResult) -> None:
        result.dropped = m1 is not None
