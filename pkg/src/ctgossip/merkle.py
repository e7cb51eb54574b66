"""Append-only Merkle tree over chronologically ordered leaves.

Hashing follows the RFC 6962 conventions: leaves are ``H(0x00 || data)``,
interior nodes are ``H(0x01 || left || right)`` and a tree of ``n`` leaves is
split at the largest power of two strictly less than ``n``.  Proof node lists
are ordered from the leaf (or the oldest subtree) towards the root.

The tree stores leaf hashes and caches every complete power-of-two subtree it
has computed; those subtrees never change once full, so any root or proof over
a prefix stays valid after later appends.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Sequence

Digest = bytes

DIGEST_SIZE = 32
LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

HASHES: dict[str, Callable[..., "hashlib._Hash"]] = {
    "sha256": hashlib.sha256,
    "sha3_256": hashlib.sha3_256,
    "blake2s": hashlib.blake2s,
}


def _hasher(algorithm: str):
    try:
        return HASHES[algorithm]
    except KeyError:
        raise ValueError(f"unsupported hash algorithm {algorithm!r}") from None


def leaf_hash(data: bytes, algorithm: str = "sha256") -> Digest:
    return _hasher(algorithm)(LEAF_PREFIX + data).digest()


def node_hash(left: Digest, right: Digest, algorithm: str = "sha256") -> Digest:
    if len(left) != DIGEST_SIZE or len(right) != DIGEST_SIZE:
        raise ValueError("node_hash expects two 32-byte digests")
    return _hasher(algorithm)(NODE_PREFIX + left + right).digest()


def split_point(n: int) -> int:
    """Largest power of two strictly less than ``n`` (``n >= 2``)."""
    return 1 << ((n - 1).bit_length() - 1)


@dataclass(frozen=True)
class InclusionProof:
    leaf_index: int
    tree_size: int
    path: tuple[Digest, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "path", tuple(self.path))


@dataclass(frozen=True)
class ConsistencyProof:
    old_size: int
    new_size: int
    path: tuple[Digest, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "path", tuple(self.path))


class ChronTree:
    """Append-only Merkle tree.

    ``root``, ``inclusion_proof`` and ``consistency_proof`` are pure functions
    of the leaf prefix they cover.  Appends need exclusive access; reads may be
    shared.
    """

    def __init__(self, leaves: Sequence[bytes] = (), algorithm: str = "sha256"):
        self.algorithm = algorithm
        self._h = _hasher(algorithm)
        self._leaf_hashes: list[Digest] = []
        self._cache: dict[tuple[int, int], Digest] = {}
        for leaf in leaves:
            self.append(leaf)

    def __len__(self) -> int:
        return len(self._leaf_hashes)

    @property
    def size(self) -> int:
        return len(self._leaf_hashes)

    def append(self, leaf: bytes) -> int:
        index = len(self._leaf_hashes)
        self._leaf_hashes.append(self._h(LEAF_PREFIX + leaf).digest())
        return index

    def leaf_digest(self, index: int) -> Digest:
        return self._leaf_hashes[index]

    def copy(self) -> ChronTree:
        other = ChronTree(algorithm=self.algorithm)
        other._leaf_hashes = list(self._leaf_hashes)
        other._cache = dict(self._cache)
        return other

    def _node(self, left: Digest, right: Digest) -> Digest:
        return self._h(NODE_PREFIX + left + right).digest()

    def _subtree(self, start: int, n: int) -> Digest:
        if n == 1:
            return self._leaf_hashes[start]
        full = n & (n - 1) == 0
        if full:
            cached = self._cache.get((start, n))
            if cached is not None:
                return cached
        k = split_point(n)
        digest = self._node(self._subtree(start, k), self._subtree(start + k, n - k))
        if full:
            self._cache[(start, n)] = digest
        return digest

    def _check_size(self, size: int) -> None:
        if not 1 <= size <= len(self._leaf_hashes):
            raise IndexError(f"tree size {size} outside 1..{len(self._leaf_hashes)}")

    def root(self, size: int | None = None) -> Digest:
        if size is None:
            size = len(self._leaf_hashes)
        self._check_size(size)
        return self._subtree(0, size)

    def inclusion_proof(self, leaf_index: int, size: int | None = None) -> InclusionProof:
        if size is None:
            size = len(self._leaf_hashes)
        self._check_size(size)
        if not 0 <= leaf_index < size:
            raise IndexError(f"leaf index {leaf_index} outside tree of size {size}")
        path: list[Digest] = []
        start, n, m = 0, size, leaf_index
        # Walk root-to-leaf collecting siblings, then reverse into leaf-to-root order.
        while n > 1:
            k = split_point(n)
            if m < k:
                path.append(self._subtree(start + k, n - k))
                n = k
            else:
                path.append(self._subtree(start, k))
                start, m, n = start + k, m - k, n - k
        path.reverse()
        return InclusionProof(leaf_index, size, tuple(path))

    def consistency_proof(self, old_size: int, new_size: int | None = None) -> ConsistencyProof:
        if new_size is None:
            new_size = len(self._leaf_hashes)
        self._check_size(new_size)
        if not 1 <= old_size <= new_size:
            raise IndexError(f"old size {old_size} outside 1..{new_size}")
        path: list[Digest] = []
        start, n, m, complete = 0, new_size, old_size, True
        while m != n:
            k = split_point(n)
            if m <= k:
                path.append(self._subtree(start + k, n - k))
                n = k
            else:
                path.append(self._subtree(start, k))
                start, m, n = start + k, m - k, n - k
                complete = False
        if not complete:
            path.append(self._subtree(start, n))
        path.reverse()
        return ConsistencyProof(old_size, new_size, tuple(path))


def root_of(leaves: Sequence[bytes], algorithm: str = "sha256") -> Digest:
    """Root over a full leaf list, without caching (small inputs)."""
    return ChronTree(leaves, algorithm).root()


def verify_inclusion(
    leaf_digest: Digest,
    proof: InclusionProof,
    root: Digest,
    tree_size: int | None = None,
    algorithm: str = "sha256",
) -> bool:
    """Check ``proof`` places ``leaf_digest`` under ``root``.

    When ``tree_size`` is given (normally the size from the STH carrying
    ``root``) the proof must be for exactly that size.
    """
    try:
        index, size, path = int(proof.leaf_index), int(proof.tree_size), proof.path
    except (AttributeError, TypeError, ValueError):
        return False
    if tree_size is not None and size != tree_size:
        return False
    if not 0 <= index < size or len(leaf_digest) != DIGEST_SIZE or len(root) != DIGEST_SIZE:
        return False
    if any(len(p) != DIGEST_SIZE for p in path):
        return False
    h = _hasher(algorithm)
    fn, sn, r = index, size - 1, leaf_digest
    for p in path:
        if sn == 0:
            return False
        if fn & 1 or fn == sn:
            r = h(NODE_PREFIX + p + r).digest()
            while not fn & 1 and fn != 0:
                fn >>= 1
                sn >>= 1
        else:
            r = h(NODE_PREFIX + r + p).digest()
        fn >>= 1
        sn >>= 1
    return sn == 0 and r == root


def verify_consistency(
    old_size: int,
    old_root: Digest,
    new_size: int,
    new_root: Digest,
    proof: ConsistencyProof,
    algorithm: str = "sha256",
) -> bool:
    """Check ``proof`` shows the tree with ``new_root`` extends ``old_root``."""
    try:
        path = proof.path
        if int(proof.old_size) != old_size or int(proof.new_size) != new_size:
            return False
    except (AttributeError, TypeError, ValueError):
        return False
    if not 1 <= old_size <= new_size:
        return False
    if len(old_root) != DIGEST_SIZE or len(new_root) != DIGEST_SIZE:
        return False
    if any(len(p) != DIGEST_SIZE for p in path):
        return False
    if old_size == new_size:
        return not path and old_root == new_root
    if not path:
        return False
    h = _hasher(algorithm)
    nodes = list(path)
    if old_size & (old_size - 1) == 0:
        nodes.insert(0, old_root)
    fn, sn = old_size - 1, new_size - 1
    while fn & 1:
        fn >>= 1
        sn >>= 1
    fr = sr = nodes[0]
    for c in nodes[1:]:
        if sn == 0:
            return False
        if fn & 1 or fn == sn:
            fr = h(NODE_PREFIX + c + fr).digest()
            sr = h(NODE_PREFIX + c + sr).digest()
            while not fn & 1 and fn != 0:
                fn >>= 1
                sn >>= 1
        else:
            sr = h(NODE_PREFIX + sr + c).digest()
        fn >>= 1
        sn >>= 1
    return sn == 0 and fr == old_root and sr == new_root
