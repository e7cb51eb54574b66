"""Certificate log server with switchable (mis)behavior.

The log accepts certificate submissions, answers each with a signed
certificate timestamp (SCT), merges the queued certificates once per maximum
merge delay (MMD) and publishes a signed tree head (STH) at every MMD
boundary.  Time is virtual: callers move the clock with :meth:`set_time` and
:meth:`advance_mmd`.

A :class:`LogBehaviorPolicy` selects honest operation or one of the attacks
the gossip protocols are meant to expose: a split world (two internally
consistent trees shown to different requesters), withheld SCTs, an
unresponsive log, bad signatures and bad proofs.
"""
from __future__ import annotations

import functools
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from ctgossip.merkle import ChronTree, ConsistencyProof, Digest, InclusionProof, leaf_hash

MMD_MS = 2 * 60 * 60 * 1000
STH_TAG = b"ct-gossip/sth/v1"
SCT_TAG = b"ct-gossip/sct/v1"

PUBLIC = "public"
VICTIM = "victim"


class LogError(Exception):
    """A log query did not produce a usable answer."""


class LogTimeout(LogError):
    pass


class NotFound(LogError):
    pass


@dataclass(frozen=True)
class SignedTreeHead:
    tree_size: int
    timestamp: int
    root_hash: Digest
    log_id: bytes
    signature: bytes

    def signing_input(self) -> bytes:
        return sth_signing_input(self.tree_size, self.timestamp, self.root_hash)


@dataclass(frozen=True)
class SignedCertificateTimestamp:
    log_id: bytes
    cert_digest: Digest
    timestamp: int
    signature: bytes

    def signing_input(self) -> bytes:
        return sct_signing_input(self.log_id, self.cert_digest, self.timestamp)

    @functools.cached_property
    def digest(self) -> bytes:
        return hashlib.sha256(self.signing_input() + self.signature).digest()


def sth_signing_input(tree_size: int, timestamp: int, root_hash: bytes) -> bytes:
    return STH_TAG + struct.pack(">QQ", tree_size, timestamp) + root_hash


def sct_signing_input(log_id: bytes, cert_digest: bytes, timestamp: int) -> bytes:
    return SCT_TAG + log_id + cert_digest + struct.pack(">Q", timestamp)


def log_id_for(public_key: bytes) -> bytes:
    return hashlib.sha256(public_key).digest()


class LogKey:
    """Ed25519 signing key of a log; deterministic when built from a seed."""

    def __init__(self, private_key: Ed25519PrivateKey):
        self._private = private_key
        self.public_key: bytes = private_key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        self.log_id = log_id_for(self.public_key)

    @classmethod
    def from_seed(cls, seed: bytes | str | int) -> LogKey:
        if isinstance(seed, int):
            seed = seed.to_bytes(8, "big", signed=True)
        elif isinstance(seed, str):
            seed = seed.encode()
        material = hashlib.sha256(b"ct-gossip/log-key/" + seed).digest()
        return cls(Ed25519PrivateKey.from_private_bytes(material))

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)

    def sign_sth(self, tree_size: int, timestamp: int, root_hash: bytes) -> SignedTreeHead:
        sig = self.sign(sth_signing_input(tree_size, timestamp, root_hash))
        return SignedTreeHead(tree_size, timestamp, root_hash, self.log_id, sig)

    def sign_sct(self, cert_digest: bytes, timestamp: int) -> SignedCertificateTimestamp:
        sig = self.sign(sct_signing_input(self.log_id, cert_digest, timestamp))
        return SignedCertificateTimestamp(self.log_id, cert_digest, timestamp, sig)


@functools.lru_cache(maxsize=1 << 16)
def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    # Memoized: the same few STHs are re-verified on every exchange.
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def verify_sth(sth: SignedTreeHead, public_key: bytes) -> bool:
    if not isinstance(sth, SignedTreeHead) or sth.tree_size < 1:
        return False
    if sth.log_id != log_id_for(public_key) or len(sth.root_hash) != 32:
        return False
    return verify_signature(public_key, sth.signing_input(), sth.signature)


def verify_sct(sct: SignedCertificateTimestamp, public_key: bytes) -> bool:
    if not isinstance(sct, SignedCertificateTimestamp) or sct.log_id != log_id_for(public_key):
        return False
    return verify_signature(public_key, sct.signing_input(), sct.signature)


def _flip_bit(data: bytes) -> bytes:
    if not data:
        return b"\x01"
    return bytes([data[0] ^ 0x01]) + data[1:]


@dataclass(frozen=True)
class LogBehaviorPolicy:
    """Which behavior the log exhibits; exactly one mode at a time."""

    mode: str = "honest"
    victims: frozenset[str] = frozenset()
    attackers: frozenset[str] = frozenset({"attacker"})
    withheld: frozenset[bytes] = frozenset()
    after_time: int = 0
    until_time: int | None = None

    MODES = ("honest", "split_world", "withhold_sct", "unresponsive", "bad_signature", "bad_proof")

    def __post_init__(self) -> None:
        if self.mode not in self.MODES:
            raise ValueError(f"unknown log mode {self.mode!r}")
        if self.mode == "split_world" and not self.victims:
            raise ValueError("split_world needs a non-empty victim set")

    @classmethod
    def honest(cls) -> LogBehaviorPolicy:
        return cls()

    @classmethod
    def split_world(cls, victims: Iterable[str], attackers: Iterable[str] = ("attacker",)):
        return cls("split_world", victims=frozenset(victims), attackers=frozenset(attackers))

    @classmethod
    def withhold_sct(cls, certs: Iterable[bytes]) -> LogBehaviorPolicy:
        # Certificates may be given as payloads or as leaf digests.
        digests = frozenset(c if len(c) == 32 else leaf_hash(c) for c in certs)
        return cls("withhold_sct", withheld=digests)

    @classmethod
    def unresponsive(cls, after_time: int, until_time: int | None = None) -> LogBehaviorPolicy:
        return cls("unresponsive", after_time=after_time, until_time=until_time)

    @classmethod
    def bad_signature(cls) -> LogBehaviorPolicy:
        return cls("bad_signature")

    @classmethod
    def bad_proof(cls) -> LogBehaviorPolicy:
        return cls("bad_proof")


@dataclass
class _Branch:
    tree: ChronTree
    sths: list[SignedTreeHead] = field(default_factory=list)
    index: dict[bytes, int] = field(default_factory=dict)

    def fork(self) -> _Branch:
        return _Branch(self.tree.copy(), list(self.sths), dict(self.index))

    def append(self, digest: bytes, cert: bytes) -> None:
        if digest not in self.index:
            self.index[digest] = self.tree.append(cert)


@dataclass
class LogClock:
    mmd: int = MMD_MS
    current_time: int = 0


class LogService:
    """A single CT log.

    ``history`` certificates are bulk-loaded before the first STH, which is
    signed at ``start_time``; afterwards exactly one STH per branch is signed
    at every MMD boundary.
    """

    def __init__(
        self,
        key: LogKey,
        mmd: int = MMD_MS,
        start_time: int = 0,
        history: Iterable[bytes] = (),
        policy: LogBehaviorPolicy | None = None,
        algorithm: str = "sha256",
    ):
        self.key = key
        self.clock = LogClock(mmd, start_time)
        self.algorithm = algorithm
        self.policy = policy or LogBehaviorPolicy.honest()
        self._branches: dict[str, _Branch] = {PUBLIC: _Branch(ChronTree(algorithm=algorithm))}
        self._pending: list[tuple[bytes, bytes, str | None]] = []
        self._boundary = start_time
        public = self._branches[PUBLIC]
        for cert in history:
            public.append(leaf_hash(cert, algorithm), cert)
        if public.tree.size:
            public.sths.append(self._sign(public, start_time))

    # -- clock -------------------------------------------------------------

    @property
    def now(self) -> int:
        return self.clock.current_time

    @property
    def mmd(self) -> int:
        return self.clock.mmd

    @property
    def public_key(self) -> bytes:
        return self.key.public_key

    @property
    def log_id(self) -> bytes:
        return self.key.log_id

    def set_time(self, t: int) -> None:
        if t < self.clock.current_time:
            raise ValueError("virtual time cannot go backwards")
        self.clock.current_time = t

    @property
    def next_boundary(self) -> int:
        return self._boundary + self.clock.mmd

    # -- policy ------------------------------------------------------------

    def configure(self, policy: LogBehaviorPolicy) -> None:
        if policy.mode == "split_world" and VICTIM not in self._branches:
            self._branches[VICTIM] = self._branches[PUBLIC].fork()
        self.policy = policy

    def branch_for(self, requester: str | None) -> str:
        p = self.policy
        if p.mode == "split_world" and requester in p.victims:
            return VICTIM
        return PUBLIC

    def _down(self) -> bool:
        p = self.policy
        if p.mode != "unresponsive":
            return False
        t = self.clock.current_time
        return t > p.after_time and (p.until_time is None or t < p.until_time)

    def _gate(self) -> None:
        if self._down():
            raise LogTimeout("log did not answer")

    # -- writes ------------------------------------------------------------

    def submit(self, cert: bytes, submitter: str | None = None) -> SignedCertificateTimestamp:
        self._gate()
        digest = leaf_hash(cert, self.algorithm)
        sct = self.key.sign_sct(digest, self.clock.current_time)
        self._pending.append((digest, cert, submitter))
        if self.policy.mode == "bad_signature":
            sct = SignedCertificateTimestamp(
                sct.log_id, sct.cert_digest, sct.timestamp, _flip_bit(sct.signature)
            )
        return sct

    def _sign(self, branch: _Branch, timestamp: int) -> SignedTreeHead:
        return self.key.sign_sth(branch.tree.size, timestamp, branch.tree.root())

    def advance_mmd(self) -> SignedTreeHead | None:
        """Move to the next MMD boundary, merge the queue and sign new heads.

        Returns the public branch's new STH, or ``None`` when the log is down
        (nothing is merged or published while it is unresponsive).
        """
        self._boundary += self.clock.mmd
        self.clock.current_time = max(self.clock.current_time, self._boundary)
        if self._down():
            return None
        p = self.policy
        split = VICTIM in self._branches
        for digest, cert, submitter in self._pending:
            if p.mode == "withhold_sct" and digest in p.withheld:
                continue
            attacker = p.mode == "split_world" and submitter in p.attackers
            if split:
                self._branches[VICTIM].append(digest, cert)
            if not attacker:
                self._branches[PUBLIC].append(digest, cert)
        self._pending.clear()
        for branch in self._branches.values():
            if branch.tree.size:
                branch.sths.append(self._sign(branch, self._boundary))
        public = self._branches[PUBLIC]
        return public.sths[-1] if public.sths else None

    # -- reads -------------------------------------------------------------

    def sth_history(self, branch: str = PUBLIC) -> list[SignedTreeHead]:
        return list(self._branches[branch].sths)

    def tree(self, branch: str = PUBLIC) -> ChronTree:
        return self._branches[branch].tree

    def get_sth(self, requester: str | None = None) -> SignedTreeHead:
        self._gate()
        branch = self._branches[self.branch_for(requester)]
        if not branch.sths:
            raise NotFound("log has not published a tree head yet")
        sth = branch.sths[-1]
        if self.policy.mode == "bad_signature":
            sth = SignedTreeHead(
                sth.tree_size, sth.timestamp, sth.root_hash, sth.log_id, _flip_bit(sth.signature)
            )
        return sth

    def _published_size(self, branch: _Branch) -> int:
        return branch.sths[-1].tree_size if branch.sths else 0

    def get_consistency_proof(self, requester: str | None, a: int, b: int) -> ConsistencyProof:
        self._gate()
        lo, hi = min(a, b), max(a, b)
        branch = self._branches[self.branch_for(requester)]
        if lo < 1 or hi > self._published_size(branch):
            raise NotFound(f"no consistency proof between sizes {lo} and {hi}")
        proof = branch.tree.consistency_proof(lo, hi)
        if self.policy.mode == "bad_proof":
            path = list(proof.path) or [b"\x00" * 32]
            path[0] = _flip_bit(path[0])
            proof = ConsistencyProof(lo, hi, tuple(path))
        return proof

    def get_audit_proof(
        self, requester: str | None, sct: SignedCertificateTimestamp, size: int
    ) -> InclusionProof:
        self._gate()
        branch = self._branches[self.branch_for(requester)]
        if size < 1 or size > self._published_size(branch):
            raise NotFound(f"tree size {size} not published")
        index = branch.index.get(sct.cert_digest)
        if index is None or index >= size:
            raise NotFound("certificate not present at that tree size")
        proof = branch.tree.inclusion_proof(index, size)
        if self.policy.mode == "bad_proof":
            path = list(proof.path) or [b"\x00" * 32]
            path[0] = _flip_bit(path[0])
            proof = InclusionProof(index, size, tuple(path))
        return proof
