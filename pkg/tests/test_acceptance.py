"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py`` and read the "acceptance criteria"
section of the terminal summary for one PASS/FAIL line per criterion.
"""
from __future__ import annotations

import os
import random
import statistics
import subprocess
import sys
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

import oracle
from ctgossip.anomaly import LogStatus, Monitor
from ctgossip.cli import main as cli_main
from ctgossip.cli import resolve_scenario, shipped_scenarios
from ctgossip.gossip import LogClient, P1Client, P1Server, P2Client, P2Server
from ctgossip.log_service import LogKey, LogService, SignedCertificateTimestamp, SignedTreeHead
from ctgossip.merkle import (
    ChronTree,
    ConsistencyProof,
    InclusionProof,
    leaf_hash,
    node_hash,
    verify_consistency,
    verify_inclusion,
)
from ctgossip.messages import InconsistencyMessage, P1Message, P2Message, Reason, WarningMessage
from ctgossip.sim import AttackSpec, Scenario, desk_scale_scenario, run
from ctgossip.sim.metrics import latest_fraction
from ctgossip.sim.scenario import DAY_MS
from ctgossip.sim.traffic import nb_mean, nb_variance, sample_connection_count
from ctgossip.wire import MalformedMessage, decode_message, encode_message

TESTS = Path(__file__).parent


def criterion(n, title):
    return pytest.mark.criterion(n, title)


@lru_cache(maxsize=None)
def desk_run(protocol: str, seed: int = 1):
    return run(desk_scale_scenario(seed=seed, protocol=protocol))


# -- 1 -----------------------------------------------------------------------------


@criterion(1, "golden vectors over C1..C6")
def test_c1_golden_vectors(record_property):
    t0 = time.perf_counter()
    leaves = [f"C{i}".encode() for i in range(1, 7)]
    h = [leaf_hash(x) for x in leaves]
    h12, h34, h56 = node_hash(h[0], h[1]), node_hash(h[2], h[3]), node_hash(h[4], h[5])
    h1234 = node_hash(h12, h34)
    h123456 = node_hash(h1234, h56)
    tree = ChronTree(leaves)
    inc = tree.inclusion_proof(3, 6)
    cons = tree.consistency_proof(4, 6)
    assert list(inc.path) == [h[2], h12, h56]
    assert list(cons.path) == [h56]
    assert tree.root(4) == h1234 and tree.root(6) == h123456
    assert verify_inclusion(h[3], inc, h123456, 6)
    assert verify_consistency(4, h1234, 6, h123456, cons)
    elapsed = time.perf_counter() - t0
    record_property("seconds", f"{elapsed:.3f}")
    assert elapsed < 1


# -- 2 -----------------------------------------------------------------------------


@criterion(2, "oracle equivalence for sizes 1..64 plus 10^4 bit mutations")
def test_c2_oracle_equivalence(record_property):
    t0 = time.perf_counter()
    leaves = [b"leaf-%d" % i for i in range(64)]
    tree = ChronTree(leaves)
    roots = {n: oracle.mth(leaves[:n]) for n in range(1, 65)}
    cases = []
    for n in range(1, 65):
        assert tree.root(n) == roots[n]
        for m in range(n):
            p = tree.inclusion_proof(m, n)
            assert list(p.path) == oracle.path(m, leaves[:n])
            assert verify_inclusion(leaf_hash(leaves[m]), p, roots[n], n)
            cases.append(("inc", m, n, p))
        for a in range(1, n + 1):
            p = tree.consistency_proof(a, n)
            if a < n:
                assert list(p.path) == oracle.proof(a, leaves[:n])
            assert verify_consistency(a, roots[a], n, roots[n], p)
            cases.append(("cons", a, n, p))
    rng = random.Random(2)
    with_path = [c for c in cases if c[3].path]
    rejected = 0
    for _ in range(10_000):
        kind, x, n, p = rng.choice(with_path)
        i = rng.randrange(len(p.path))
        node = bytearray(p.path[i])
        node[rng.randrange(32)] ^= 1 << rng.randrange(8)
        path = p.path[:i] + (bytes(node),) + p.path[i + 1:]
        if kind == "inc":
            ok = verify_inclusion(leaf_hash(leaves[x]), InclusionProof(x, n, path), roots[n], n)
        else:
            ok = verify_consistency(x, roots[x], n, roots[n], ConsistencyProof(x, n, path))
        rejected += not ok
    elapsed = time.perf_counter() - t0
    record_property("proofs", len(cases))
    record_property("mutations_rejected", f"{rejected}/10000")
    record_property("seconds", f"{elapsed:.1f}")
    assert rejected == 10_000
    assert elapsed < 30


# -- 3 -----------------------------------------------------------------------------


@criterion(3, "state-machine conformance traces for both protocols")
def test_c3_state_machine_conformance(record_property):
    target = str(TESTS / "test_protocols.py")
    collected = subprocess.run([sys.executable, "-m", "pytest", "--collect-only", "-q", target],
                               capture_output=True, text=True, cwd=TESTS.parent).stdout.splitlines()
    ids = [x for x in collected if "::" in x]
    p1 = [x for x in ids if "::TestP1" in x]
    p2 = [x for x in ids if "::TestP2" in x]
    for needle in ("bridg", "default", "evict"):
        assert any(needle in x.lower() for x in p2), needle
    result = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", target],
                            capture_output=True, text=True, cwd=TESTS.parent)
    record_property("p1_traces", len(p1))
    record_property("p2_traces", len(p2))
    record_property("result", result.stdout.strip().splitlines()[-1])
    assert len(p1) >= 20 and len(p2) >= 20
    assert result.returncode == 0, result.stdout[-2000:]


# -- 4 -----------------------------------------------------------------------------


MMD4 = 100_000


def _junk(rng: random.Random, log: LogService, key: LogKey, scts) -> object:
    """Something an adversarial peer might send in place of a gossip message."""
    history = log.sth_history()
    sth = rng.choice(history)
    kind = rng.randrange(8)
    if kind == 0:
        return os.urandom(rng.randrange(0, 300))
    if kind == 1:
        # Real message bytes with a flipped bit.
        raw = bytearray(encode_message(P1Message(sth)))
        raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
        return bytes(raw)
    if kind == 2:
        # Well-formed head with a bogus signature.
        return P1Message(SignedTreeHead(sth.tree_size + rng.randrange(3), sth.timestamp, os.urandom(32),
                                        sth.log_id, os.urandom(64)))
    if kind == 3 and len(history) > 1:
        a, b = sorted(rng.sample(range(len(history)), 2))
        sa, sb = history[a], history[b]
        if sa.tree_size < sb.tree_size:
            path = log.tree().consistency_proof(sa.tree_size, sb.tree_size).path
            if rng.random() < 0.5 and path:
                path = (os.urandom(32),) + path[1:]
            return P2Message(sa, sb, ConsistencyProof(sa.tree_size, sb.tree_size, path))
    reason = rng.choice(list(Reason))
    evidence = {
        Reason.LOG_UNRESPONSIVE: {},
        Reason.STALE_STH: {"sths": (sth,)},
        Reason.INVALID_SIGNATURE: {"sths": (sth,)},
        Reason.INVALID_PROOF: {"sths": (history[0], sth), "proof": ConsistencyProof(history[0].tree_size,
                                                                                   sth.tree_size, ())},
        Reason.SCT_NOT_INCLUDED: {"sct": rng.choice(scts)},
    }[reason]
    if kind == 4:
        return InconsistencyMessage((sth, SignedTreeHead(sth.tree_size, sth.timestamp, os.urandom(32),
                                                         sth.log_id, os.urandom(64))))
    return WarningMessage(reason, log.now, "mallory", **evidence)


@criterion(4, "honest-run silence over 10^4 randomized exchanges")
def test_c4_honest_silence(record_property):
    t0 = time.perf_counter()
    rng = random.Random(4)
    key = LogKey.from_seed("acceptance-4")
    log = LogService(key, mmd=MMD4, history=[b"init-%d" % i for i in range(8)])

    def lc(who):
        return LogClient(log, who, key.public_key, MMD4, lambda: log.now)

    servers = {1: [], 2: []}
    scts = []
    for i in range(6):
        proto = 1 + i % 2
        sct = log.submit(b"server-%d" % i)
        scts.append(sct)
        cls = P1Server if proto == 1 else P2Server
        servers[proto].append((cls(f"s{i}", key.public_key, MMD4, sct=sct, storage_limit=3)
                               if proto == 2 else cls(f"s{i}", key.public_key, MMD4, sct=sct), lc(f"s{i}")))
    log.advance_mmd()
    clients = {1: [], 2: []}
    for i in range(40):
        proto = 1 + i % 2
        cls = P1Client if proto == 1 else P2Client
        clients[proto].append((cls(f"c{i}", key.public_key, MMD4), lc(f"c{i}")))
    monitor = Monitor(lc("monitor"))
    alerts = []
    t = log.now
    renewals = 0
    for step in range(10_000):
        t += rng.randrange(0, MMD4 // 40)
        while t >= log.next_boundary:
            for j in range(rng.randrange(0, 4)):
                log.submit(b"bg-%d-%d" % (step, j))
            if rng.random() < 0.3:
                proto = rng.choice((1, 2))
                node = rng.choice(servers[proto])[0]
                node.sct = log.submit(b"renew-%d" % renewals)
                scts.append(node.sct)
                renewals += 1
            log.advance_mmd()
        log.set_time(max(t, log.now))
        t = log.now
        proto = rng.choice((1, 2))
        (client, clog), (server, slog) = rng.choice(clients[proto]), rng.choice(servers[proto])
        roll = rng.random()
        m1 = client.get_message()
        if roll < 0.15:
            m1 = _junk(rng, log, key, scts)
        m2 = server.get_message(m1)
        if 0.15 <= roll < 0.30:
            m2 = _junk(rng, log, key, scts)
        results = [server.update(m1, slog), client.update(server.sct, m2, clog)]
        if results[1].origin_report is not None:
            results.append(server.receive_origin_report(results[1].origin_report, slog))
        for r in results:
            if r.alert is not None:
                alerts.append(r.alert)
                monitor.receive(r.alert)
    elapsed = time.perf_counter() - t0
    inconsistencies = [a for a in alerts if isinstance(a, InconsistencyMessage)]
    record_property("log_size", log.tree().size)
    record_property("alerts", len(alerts))
    record_property("monitor", monitor.status.value)
    record_property("seconds", f"{elapsed:.1f}")
    assert inconsistencies == []
    assert monitor.status is LogStatus.TRUSTED and monitor.state.received_reports == []
    assert elapsed < 60


# -- 5 -----------------------------------------------------------------------------


def _attack_scenario(seed: int, protocol: str) -> Scenario:
    attack = AttackSpec("split_world_targeted", 2 * DAY_MS, victim_count=5, target_server="s000")
    return desk_scale_scenario(seed=seed, protocol=protocol, attack=attack).replace(stop_on_detection=True)


@criterion(5, "split-world detection in >= 99 of 100 seeded runs per protocol")
def test_c5_split_world_detection(record_property):
    for protocol in ("1", "2"):
        latencies = []
        for seed in range(1, 101):
            det = run(_attack_scenario(seed, protocol)).summary["detection"]
            if det["confirmed_at_monitor"] is not None:
                latencies.append(det["latency_mmd"])
        record_property(f"p{protocol}_detected", f"{len(latencies)}/100")
        record_property(f"p{protocol}_median_latency_mmd", statistics.median(latencies) if latencies else None)
        assert len(latencies) >= 99, protocol


# -- 6 / 7 / 8 -------------------------------------------------------------------------


@criterion(6, "Protocol 2 overhead <= Protocol 1 overhead / 10")
def test_c6_overhead_ordering(record_property):
    timings = {}
    for p in ("1", "2"):
        t0 = time.perf_counter()
        desk_run(p)
        timings[p] = time.perf_counter() - t0
    o1, o2 = desk_run("1").summary["overhead"], desk_run("2").summary["overhead"]
    record_property("p1_overhead", f"{o1:.5f}")
    record_property("p2_overhead", f"{o2:.5f}")
    record_property("ratio", f"{o1 / o2:.1f}" if o2 else "inf")
    record_property("seconds", "/".join(f"{timings[p]:.1f}" for p in ("1", "2")))
    assert o2 <= o1 / 10
    assert max(timings.values()) < 300


@criterion(7, "Protocol 1 client and server consistency queries are equal")
def test_c7_p1_symmetry(record_property):
    t = desk_run("1").summary["totals"]
    record_property("client", t["gossip_cp_client"])
    record_property("server", t["gossip_cp_server"])
    assert t["gossip_cp_client"] == t["gossip_cp_server"] > 0


@criterion(8, "latest-STH fraction within the non-gossip baselines in >= 95% of MMDs")
def test_c8_bounding_baselines(record_property):
    lo = [latest_fraction(r) for r in desk_run("none_save_scts").rows]
    hi = [latest_fraction(r) for r in desk_run("none_no_save").rows]
    for p in ("1", "2"):
        frac = [latest_fraction(r) for r in desk_run(p).rows]
        inside = sum(a <= x <= b for a, x, b in zip(lo, frac, hi))
        record_property(f"p{p}_inside", f"{inside}/{len(frac)}")
        assert inside >= 0.95 * len(frac)


# -- 9 -----------------------------------------------------------------------------


@criterion(9, "negative binomial sample moments match closed forms")
def test_c9_negative_binomial(record_property):
    worst_mean = worst_var = 0.0
    for i, (r, p) in enumerate([(2, 0.25), (0.6, 0.2), (5, 0.5), (1.5, 0.75), (10, 0.1)]):
        x = sample_connection_count((r, p), np.random.default_rng(900 + i), size=100_000)
        err_mean = abs(x.mean() - nb_mean(r, p)) / nb_mean(r, p)
        err_var = abs(x.var() - nb_variance(r, p)) / nb_variance(r, p)
        worst_mean, worst_var = max(worst_mean, err_mean), max(worst_var, err_var)
    record_property("max_mean_err", f"{worst_mean:.4f}")
    record_property("max_var_err", f"{worst_var:.4f}")
    assert worst_mean <= 0.02 and worst_var <= 0.05


# -- 10 ----------------------------------------------------------------------------


@criterion(10, "simulate twice with the same seed gives byte-identical outputs")
def test_c10_determinism(tmp_path, record_property):
    for d in ("a", "b"):
        assert cli_main(["simulate", "--scenario", "desk_scale_split_world", "--seed", "3",
                         "--out", str(tmp_path / d)]) == 0
    for name in ("metrics.csv", "summary.json", "events.jsonl"):
        a, b = (tmp_path / "a" / name).read_bytes(), (tmp_path / "b" / name).read_bytes()
        record_property(name, f"{len(a)} bytes")
        assert a == b


# -- 11 ----------------------------------------------------------------------------


def _random_sth(rng: random.Random) -> SignedTreeHead:
    return SignedTreeHead(rng.randrange(1, 2**40), rng.randrange(2**48), rng.randbytes(32), rng.randbytes(32),
                          rng.randbytes(rng.choice((0, 64, 72))))


def _random_message(rng: random.Random):
    kind = rng.randrange(4)
    if kind == 0:
        return P1Message(_random_sth(rng))
    if kind == 1:
        a, b = _random_sth(rng), _random_sth(rng)
        if a.tree_size >= b.tree_size:
            b = SignedTreeHead(a.tree_size + 1 + rng.randrange(100), b.timestamp, b.root_hash, b.log_id, b.signature)
        path = tuple(rng.randbytes(32) for _ in range(rng.randrange(25)))
        return P2Message(a, b, ConsistencyProof(a.tree_size, b.tree_size, path))
    if kind == 2:
        proof = rng.choice([
            None,
            ConsistencyProof(rng.randrange(2**30), rng.randrange(2**30), tuple(rng.randbytes(32) for _ in range(3))),
            InclusionProof(rng.randrange(2**30), rng.randrange(2**30), tuple(rng.randbytes(32) for _ in range(2))),
        ])
        sct = None
        if rng.random() < 0.5:
            sct = SignedCertificateTimestamp(rng.randbytes(32), rng.randbytes(32), rng.randrange(2**48),
                                             rng.randbytes(64))
        return WarningMessage(rng.choice(list(Reason)), rng.randrange(2**48), f"node-{rng.randrange(999)}",
                              tuple(_random_sth(rng) for _ in range(rng.randrange(3))), proof, sct)
    return InconsistencyMessage(tuple(_random_sth(rng) for _ in range(rng.randrange(2, 5))))


@criterion(11, "wire round-trip, 10^6-input fuzz, shipped P2 messages under 4 KB")
def test_c11_wire(record_property):
    rng = random.Random(11)
    corpus = [_random_message(rng) for _ in range(4000)]
    encoded = [encode_message(m) for m in corpus]
    for m, raw in zip(corpus, encoded):
        assert decode_message(raw) == m
    assert {type(m) for m in corpus} == {P1Message, P2Message, WarningMessage, InconsistencyMessage}
    decoded_ok = 0
    for i in range(1_000_000):
        if i % 2:
            data = rng.randbytes(rng.randrange(0, 200))
        else:
            raw = bytearray(encoded[i % len(encoded)])
            op = rng.randrange(3)
            if op == 0:
                raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
            elif op == 1:
                del raw[rng.randrange(len(raw)):]
            else:
                raw.insert(rng.randrange(len(raw) + 1), rng.randrange(256))
            data = bytes(raw)
        try:
            m = decode_message(data)
        except MalformedMessage:
            continue
        assert encode_message(m) == data
        decoded_ok += 1
    sizes = {}
    for name in shipped_scenarios():
        sc = Scenario.load(resolve_scenario(name))
        if sc.protocol != "2":
            sc = sc.replace(protocol="2")
        sizes[name] = run(sc).summary["max_p2_bytes"] if name != "desk_scale" else desk_run("2").summary["max_p2_bytes"]
    record_property("fuzz_decoded_valid", decoded_ok)
    record_property("max_p2_bytes", max(sizes.values()))
    assert all(0 < s < 4096 for s in sizes.values()), sizes


# -- 12 ----------------------------------------------------------------------------


@criterion(12, "HTTP demo reproduces direct-call end states, including alerts")
def test_c12_network_demo(record_property):
    from test_transport import DirectWorld, HttpWorld, script, snapshot

    for protocol in (1, 2):
        direct, http = DirectWorld(protocol), HttpWorld(protocol)
        try:
            assert script(direct) == script(http)
            for cid in direct.clients:
                assert snapshot(direct.clients[cid][0]) == snapshot(http.clients[cid][0])
            for sid in direct.servers:
                assert snapshot(direct.servers[sid][0]) == snapshot(http.servers[sid][0])
            assert direct.monitor.status == http.monitor.status
            alerted = sum(c[0].alert is not None for c in http.clients.values())
            assert alerted > 0 and http.monitor.status is not LogStatus.TRUSTED
            record_property(f"p{protocol}_alerted_clients", alerted)
            record_property(f"p{protocol}_monitor", http.monitor.status.value)
        finally:
            http.close()
