import itertools
import os
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from conftest import SIX_LEAVES
from ctgossip.merkle import (
    ChronTree,
    ConsistencyProof,
    InclusionProof,
    leaf_hash,
    node_hash,
    verify_consistency,
    verify_inclusion,
)
import hashlib

digests = st.binary(min_size=32, max_size=32)


def random_leaves(n, seed):
    rng = random.Random(seed)
    return [rng.randbytes(rng.randrange(0, 40)) for _ in range(n)]


def flip(data: bytes, bit: int) -> bytes:
    b = bytearray(data)
    b[bit // 8] ^= 1 << (bit % 8)
    return bytes(b)


class TestHashing:
    def test_leaf_hash_definition(self):
        assert leaf_hash(b"C1") == hashlib.sha256(b"\x00C1").digest()

    def test_leaf_hash_empty(self):
        assert leaf_hash(b"") == hashlib.sha256(b"\x00").digest()

    def test_no_collisions_over_random_corpus(self):
        rng = random.Random(7)
        payloads = {rng.randbytes(rng.randrange(1, 64)) for _ in range(10_000)}
        assert len({leaf_hash(p) for p in payloads}) == len(payloads)

    def test_node_hash_six_leaf(self, six):
        assert six.h12 == hashlib.sha256(b"\x01" + six.h1 + six.h2).digest()

    @given(digests, digests)
    def test_node_hash_order_matters(self, a, b):
        if a != b:
            assert node_hash(a, b) != node_hash(b, a)

    def test_domain_separation(self):
        x = b"payload"
        assert node_hash(leaf_hash(x), leaf_hash(x)) != leaf_hash(x + x)

    def test_node_hash_rejects_short_input(self):
        with pytest.raises(ValueError):
            node_hash(b"short", b"\x00" * 32)

    def test_alternative_hash(self):
        t = ChronTree([b"a", b"b"], algorithm="sha3_256")
        assert t.root() == node_hash(
            leaf_hash(b"a", "sha3_256"), leaf_hash(b"b", "sha3_256"), "sha3_256"
        )
        with pytest.raises(ValueError):
            ChronTree(algorithm="md5")


class TestTree:
    def test_append_to_empty(self):
        t = ChronTree()
        assert t.append(b"C1") == 0
        assert t.root(1) == leaf_hash(b"C1")

    def test_six_leaf_roots(self, six):
        t = ChronTree(SIX_LEAVES[:4])
        assert t.root(4) == six.h1234
        t.append(SIX_LEAVES[4])
        t.append(SIX_LEAVES[5])
        assert t.root(6) == six.h123456 == node_hash(six.h1234, six.h56)
        assert t.root(1) == six.h1

    def test_root_range_errors(self):
        t = ChronTree(SIX_LEAVES)
        with pytest.raises(IndexError):
            t.root(0)
        with pytest.raises(IndexError):
            t.root(7)
        with pytest.raises(IndexError):
            ChronTree().root()

    def test_prefix_roots_stable_under_appends(self):
        leaves = random_leaves(74, 1)
        t = ChronTree(leaves[:64])
        before = [t.root(k) for k in range(1, 65)]
        for leaf in leaves[64:]:
            t.append(leaf)
        assert [t.root(k) for k in range(1, 65)] == before
        assert before == [oracle.mth(leaves[:k]) for k in range(1, 65)]

    def test_copy_is_independent(self):
        t = ChronTree(SIX_LEAVES[:4])
        u = t.copy()
        u.append(b"x")
        assert t.size == 4 and u.size == 5
        assert u.root(4) == t.root(4)


class TestInclusion:
    def test_six_leaf_proof(self, six):
        t = ChronTree(SIX_LEAVES)
        p = t.inclusion_proof(3, 6)
        assert p.path == (six.h3, six.h12, six.h56)
        assert verify_inclusion(six.h4, p, six.h123456)

    def test_swapped_order_fails(self, six):
        p = InclusionProof(3, 6, (six.h12, six.h3, six.h56))
        assert not verify_inclusion(six.h4, p, six.h123456)

    def test_single_leaf(self):
        t = ChronTree([b"C1"])
        p = t.inclusion_proof(0, 1)
        assert p.path == ()
        assert verify_inclusion(leaf_hash(b"C1"), p, t.root(1))

    def test_range_errors(self):
        t = ChronTree(SIX_LEAVES)
        for idx, size in [(6, 6), (0, 7), (-1, 3), (0, 0)]:
            with pytest.raises(IndexError):
                t.inclusion_proof(idx, size)

    def test_malformed_is_false(self, six):
        assert not verify_inclusion(six.h4, InclusionProof(3, 6, (b"short",)), six.h123456)
        assert not verify_inclusion(six.h4, object(), six.h123456)
        assert not verify_inclusion(six.h4, InclusionProof(9, 6, ()), six.h123456)

    def test_exhaustive_against_oracle(self):
        leaves = random_leaves(64, 2)
        t = ChronTree(leaves)
        for n in range(1, 65):
            root = oracle.mth(leaves[:n])
            for m in range(n):
                p = t.inclusion_proof(m, n)
                assert list(p.path) == oracle.path(m, leaves[:n])
                assert verify_inclusion(leaf_hash(leaves[m]), p, root, n)

    def test_every_bit_flip_rejected(self):
        leaves = random_leaves(16, 3)
        t = ChronTree(leaves)
        for n in range(1, 17):
            root = t.root(n)
            for m in range(n):
                p = t.inclusion_proof(m, n)
                for i, d in enumerate(p.path):
                    for bit in range(256):
                        path = p.path[:i] + (flip(d, bit),) + p.path[i + 1:]
                        assert not verify_inclusion(leaf_hash(leaves[m]), InclusionProof(m, n, path), root, n)
                for bit in range(7):
                    bad = InclusionProof(m ^ (1 << bit), n, p.path)
                    assert not verify_inclusion(leaf_hash(leaves[m]), bad, root, n)
                    bad = InclusionProof(m, n ^ (1 << bit), p.path)
                    assert not verify_inclusion(leaf_hash(leaves[m]), bad, root, n)


def cover_count(a, b):
    """Number of tree nodes that exactly cover leaves [a, b) under the RFC split."""

    def count(lo, hi):
        if lo >= a:
            return 1
        k = 1
        while k * 2 < hi - lo:
            k *= 2
        if a >= lo + k:
            return count(lo + k, hi)
        return count(lo, lo + k) + count(lo + k, hi)

    return count(0, b)


class TestConsistency:
    def test_six_leaf_proof(self, six):
        t = ChronTree(SIX_LEAVES)
        p = t.consistency_proof(4, 6)
        assert p.path == (six.h56,)
        assert verify_consistency(4, six.h1234, 6, six.h123456, p)

    def test_equal_sizes(self):
        t = ChronTree(SIX_LEAVES)
        for k in range(1, 7):
            p = t.consistency_proof(k, k)
            assert p.path == ()
            r = t.root(k)
            assert verify_consistency(k, r, k, r, p)
            assert not verify_consistency(k, r, k, t.root(k % 6 + 1), p)

    def test_range_errors(self):
        t = ChronTree(SIX_LEAVES)
        for a, b in [(0, 3), (4, 3), (1, 7)]:
            with pytest.raises(IndexError):
                t.consistency_proof(a, b)

    def test_size_fields_must_match(self, six):
        p = ConsistencyProof(4, 6, (six.h56,))
        assert not verify_consistency(4, six.h1234, 5, six.h123456, p)
        assert not verify_consistency(3, six.h1234, 6, six.h123456, p)

    def test_exhaustive_against_oracle(self):
        leaves = random_leaves(64, 4)
        t = ChronTree(leaves)
        roots = [None] + [oracle.mth(leaves[:k]) for k in range(1, 65)]
        for a, b in itertools.combinations_with_replacement(range(1, 65), 2):
            p = t.consistency_proof(a, b)
            assert list(p.path) == oracle.proof(a, leaves[:b])
            assert verify_consistency(a, roots[a], b, roots[b], p)

    def test_power_of_two_minimality(self):
        t = ChronTree(random_leaves(64, 5))
        for a in (1, 2, 4, 8, 16, 32):
            for b in range(a + 1, 65):
                assert len(t.consistency_proof(a, b).path) == cover_count(a, b)

    def test_every_bit_flip_rejected(self):
        t = ChronTree(random_leaves(16, 6))
        for a, b in itertools.combinations(range(1, 17), 2):
            p = t.consistency_proof(a, b)
            ra, rb = t.root(a), t.root(b)
            for i, d in enumerate(p.path):
                for bit in range(256):
                    path = p.path[:i] + (flip(d, bit),) + p.path[i + 1:]
                    assert not verify_consistency(a, ra, b, rb, ConsistencyProof(a, b, path))

    def test_forked_tree_has_no_proof(self, six):
        honest = ChronTree(SIX_LEAVES[:4])
        old_root = honest.root(4)
        forked_leaves = SIX_LEAVES[:2] + [b"C3-forged"] + SIX_LEAVES[3:]
        forked = ChronTree(forked_leaves)
        for n in range(5, 7):
            assert not verify_consistency(4, old_root, n, forked.root(n), forked.consistency_proof(4, n))
        # Exhaustive search over every node hash of both trees, paths up to length 3.
        candidates = set()
        for tree in (honest, forked, ChronTree(SIX_LEAVES)):
            for start in range(tree.size):
                for size in range(1, tree.size - start + 1):
                    candidates.add(ChronTree(
                        [SIX_LEAVES[i] if tree is not forked else forked_leaves[i]
                         for i in range(start, start + size)]
                    ).root())
        candidates = sorted(candidates)
        new_root = forked.root(6)
        for length in range(0, 4):
            for path in itertools.product(candidates, repeat=length):
                assert not verify_consistency(4, old_root, 6, new_root, ConsistencyProof(4, 6, path))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.binary(max_size=16), min_size=1, max_size=40), st.data())
def test_random_trees_match_oracle(leaves, data):
    t = ChronTree(leaves)
    n = len(leaves)
    b = data.draw(st.integers(1, n))
    a = data.draw(st.integers(1, b))
    m = data.draw(st.integers(0, b - 1))
    assert t.root(b) == oracle.mth(leaves[:b])
    assert verify_inclusion(leaf_hash(leaves[m]), t.inclusion_proof(m, b), oracle.mth(leaves[:b]), b)
    assert verify_consistency(a, oracle.mth(leaves[:a]), b, oracle.mth(leaves[:b]), t.consistency_proof(a, b))


def test_random_bytes_never_crash():
    rng = random.Random(8)
    for _ in range(500):
        path = tuple(os.urandom(32) for _ in range(rng.randrange(0, 8)))
        size = rng.randrange(1, 100)
        assert verify_inclusion(os.urandom(32), InclusionProof(rng.randrange(0, size), size, path), os.urandom(32)) is False
        a = rng.randrange(1, size + 1)
        assert verify_consistency(a, os.urandom(32), size, os.urandom(32), ConsistencyProof(a, size, path)) is False
