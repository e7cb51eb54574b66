"""Deterministic, hour-stepped simulation of gossiping clients and servers.

Only the ``f`` fraction of clients that run the protocol is simulated; the
other clients never touch gossip state.  Random streams are split per
purpose (traffic, log growth, certificates, attack) from the scenario seed,
so runs of different protocols on the same scenario and seed see exactly the
same connections and the same log.
"""
from __future__ import annotations

import bisect
import heapq
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ctgossip.anomaly import LogStatus, Monitor
from ctgossip.gossip import (
    AUDIT,
    GOSSIP,
    VERIFY,
    LogClient,
    NoGossipClient,
    NoGossipServer,
    P1Client,
    P1Server,
    P2Client,
    P2Server,
    UpdateResult,
)
from ctgossip.log_service import LogBehaviorPolicy, LogKey, LogService, LogTimeout
from ctgossip.merkle import leaf_hash
from ctgossip.messages import InconsistencyMessage, P2Message
from ctgossip.sim.metrics import (
    AGE_BUCKETS,
    compute_detection_latency,
    new_counters,
    overhead,
    summarize,
    write_outputs,
)
from ctgossip.sim.scenario import DAY_MS, HOUR_MS, Scenario, ScenarioError
from ctgossip.sim.traffic import DomainSampler
from ctgossip.wire import encoded_length

log = logging.getLogger(__name__)

_QUERY_KEYS = {
    ("get_sth", AUDIT): "get_sth_queries",
    ("get_audit_proof", AUDIT): "audit_proof_queries",
    ("get_consistency_proof", AUDIT): "audit_cp_queries",
}


@dataclass
class SimulationResult:
    rows: list[dict[str, Any]]
    events: list[dict[str, Any]]
    summary: dict[str, Any]
    t0: int = 0

    def write(self, out_dir: str | Path) -> None:
        write_outputs(out_dir, self.rows, self.summary, self.events)


@dataclass
class _Client:
    node: Any
    log: LogClient
    country: str


@dataclass
class _Server:
    id: str
    https: bool
    ct: bool
    node: Any = None
    log: LogClient | None = None
    cert: bytes = b""
    sct: Any = None


@dataclass
class _Detection:
    attack_start: int | None = None
    first_warning: int | None = None
    first_inconsistency: int | None = None
    confirmed_at_monitor: int | None = None
    victims: list[str] = field(default_factory=list)


class Simulation:
    def __init__(self, scenario: Scenario):
        sc = scenario.validate()
        self.sc = sc
        traffic_ss, log_ss, cert_ss, attack_ss = np.random.SeedSequence(sc.seed).spawn(4)
        self.traffic = np.random.default_rng(traffic_ss)
        self.log_rng = np.random.default_rng(log_ss)
        self.attack_rng = np.random.default_rng(attack_ss)
        cert_rng = np.random.default_rng(cert_ss)

        self.validity = sc.cert_validity_days * DAY_MS
        # Absolute virtual time of the run start; whole days, so hour 0 is midnight UTC.
        self.t0 = self.validity
        self.end = self.t0 + sc.duration
        self.key = LogKey.from_seed(f"ct-gossip-sim/{sc.seed}")
        self.events: list[dict[str, Any]] = []
        self.rows: list[dict[str, Any]] = []
        self.detection = _Detection()
        self._sched: list[tuple[int, int, str, str]] = []
        self._seq = 0

        self.servers: list[_Server] = []
        history = [b"bg/init/%d" % i for i in range(sc.history_size)]
        issued_certs = []
        for s in sc.servers:
            srv = _Server(s.id, s.is_https, s.ct)
            self.servers.append(srv)
            if not s.ct:
                continue
            if s.issued_at is not None:
                issued = self.t0 + s.issued_at
            else:
                issued = self.t0 - int(cert_rng.integers(1, self.validity + 1))
            srv.cert = f"{s.id}/{issued}".encode()
            srv.sct = self.key.sign_sct(leaf_hash(srv.cert), issued)
            issued_certs.append((issued, srv.cert))
            if issued + self.validity < self.end:
                self._schedule(issued + self.validity, "renewal", s.id)
        history += [c for _, c in sorted(issued_certs)]
        self.log = LogService(self.key, mmd=sc.mmd, start_time=self.t0, history=history)
        self.pub_sizes = [self.log.get_sth().tree_size]
        self.server_index = {s.id: i for i, s in enumerate(self.servers)}

        self.monitor = Monitor(self._log_client("monitor"))
        self._build_nodes()
        self._build_traffic()
        if sc.attack is not None:
            self._schedule(self.t0 + sc.attack.start_time, "attack", sc.attack.kind)
        self.intercept_target: str | None = None
        self.fake_sct = None
        self.victims: frozenset[str] = frozenset()
        self.stopped = False
        self._alerts = 0

    # -- setup -------------------------------------------------------------------

    def _log_client(self, requester: str) -> LogClient:
        return LogClient(
            backend=self.log,
            requester=requester,
            public_key=self.key.public_key,
            mmd=self.sc.mmd,
            clock=self._now,
            retry_limit=self.sc.retry_limit,
        )

    def _now(self) -> int:
        return self.log.now

    def _schedule(self, t: int, kind: str, arg: str) -> None:
        self._seq += 1
        heapq.heappush(self._sched, (t, self._seq, kind, arg))

    def _build_nodes(self) -> None:
        sc = self.sc
        pk, mmd = self.key.public_key, sc.mmd
        self.clients: list[_Client] = []
        self.country_slices: list[tuple[int, int]] = []
        for c in sc.countries:
            n = int(round(sc.gossip_factor * c.client_count))
            start = len(self.clients)
            for i in range(n):
                cid = f"{c.id}-{i:05d}"
                if sc.protocol == "1":
                    node = P1Client(cid, pk, mmd, consent=sc.consent)
                elif sc.protocol == "2":
                    node = P2Client(cid, pk, mmd, consent=sc.consent)
                else:
                    node = NoGossipClient(cid, pk, mmd, consent=sc.consent,
                                          save_scts=sc.protocol == "none_save_scts")
                self.clients.append(_Client(node, self._log_client(cid), c.id))
            self.country_slices.append((start, len(self.clients)))
        self.gossip_servers: list[_Server] = []
        for s, model in zip(self.servers, sc.servers):
            if not s.ct:
                continue
            if model.gossiping and sc.protocol == "1":
                s.node = P1Server(s.id, pk, mmd, sct=s.sct)
            elif model.gossiping and sc.protocol == "2":
                s.node = P2Server(s.id, pk, mmd, sct=s.sct, storage_limit=sc.storage_limit)
            else:
                s.node = NoGossipServer(s.id, pk, mmd, sct=s.sct)
            if s.node.protocol:
                self.gossip_servers.append(s)
            s.log = self._log_client(s.id)

    def _build_traffic(self) -> None:
        self.samplers = []
        for c in self.sc.countries:
            sampler = DomainSampler(c.domain_popularity, c.outside_top_fraction)
            to_global = np.array([self.server_index[sid] for sid, _ in c.domain_popularity] or [0])
            r = np.array([rp[0] for rp in c.hourly_nb_params])
            p = np.array([rp[1] for rp in c.hourly_nb_params])
            self.samplers.append((sampler, to_global, r, p, c.timezone_offset))

    # -- bookkeeping -------------------------------------------------------------

    def _event(self, t: int, etype: str, **data) -> None:
        self.events.append({"t": t - self.t0, "type": etype, **data})

    def _record(self, result: UpdateResult, node, role: str, counters: dict[str, int]) -> dict[str, int]:
        cp = {"gossip": 0, "audit": 0}
        for q in result.queries:
            key = _QUERY_KEYS.get((q.op, q.purpose))
            if key is not None:
                counters[key] += 1
            elif q.purpose == VERIFY:
                counters["verify_queries"] += 1
            elif q.op == "get_consistency_proof" and q.purpose == GOSSIP:
                counters["gossip_cp_" + role] += 1
            if q.op == "get_consistency_proof" and q.purpose in (GOSSIP, AUDIT):
                cp["gossip" if q.purpose == GOSSIP else "audit"] += 1
        if result.alert is not None:
            self._alert(result.alert, node, role, counters)
        return cp

    def _alert(self, alert, node, role: str, counters: dict[str, int]) -> None:
        t = self.log.now
        det = self.detection
        if isinstance(alert, InconsistencyMessage):
            kind, reason = "inconsistency", None
            if det.first_inconsistency is None:
                det.first_inconsistency = t
        else:
            kind, reason = "warning", alert.reason.name.lower()
            if det.first_warning is None:
                det.first_warning = t
        self._alerts += 1
        self._event(t, "alert", node=node.node_id, role=role, kind=kind, reason=reason)
        before = self.monitor.status
        self.monitor.receive(alert)
        counters["verify_queries"] += len(self.monitor.log.drain())
        after = self.monitor.status
        if after is not before:
            self._event(t, "monitor", status=after.value)
            if det.confirmed_at_monitor is None:
                det.confirmed_at_monitor = t
                if self.sc.stop_on_detection:
                    self.stopped = True

    # -- scheduled events ----------------------------------------------------------

    def _run_scheduled(self, until: int, counters) -> None:
        while self._sched and self._sched[0][0] <= until and not self.stopped:
            t, _, kind, arg = heapq.heappop(self._sched)
            self.log.set_time(max(t, self.log.now))
            if kind == "renewal":
                self._renew(arg, t)
            elif kind == "attack":
                self._start_attack(t)

    def _renew(self, sid: str, t: int, cert: bytes | None = None) -> None:
        s = self.servers[self.server_index[sid]]
        cert = cert or f"{sid}/{t}".encode()
        try:
            sct = self.log.submit(cert, submitter=sid)
        except LogTimeout:
            self._schedule(t + HOUR_MS, "renewal", sid)
            return
        s.cert, s.sct = cert, sct
        s.node.sct = sct
        self._event(t, "renewal", server=sid)

    def _start_attack(self, t: int) -> None:
        a = self.sc.attack
        det = self.detection
        det.attack_start = t
        ids = [c.node.node_id for c in self.clients]
        if a.kind in ("split_world_targeted", "split_world_partition"):
            if a.kind == "split_world_targeted":
                victims = set(a.victims)
                unknown = victims - set(ids)
                if unknown:
                    raise ScenarioError(f"victims are not gossiping clients: {sorted(unknown)}")
                if a.victim_count:
                    pool = sorted(set(ids) - victims)
                    k = min(a.victim_count, len(pool))
                    victims |= {pool[i] for i in self.attack_rng.choice(len(pool), size=k, replace=False)}
                self.intercept_target = a.target_server
            else:
                victims = {c.node.node_id for c in self.clients if c.country in a.countries}
            self.victims = frozenset(victims)
            det.victims = sorted(victims)
            self.log.configure(LogBehaviorPolicy.split_world(self.victims or {"-"}))
            target = a.target_server or "partition"
            self.fake_sct = self.log.submit(f"forged/{target}/{t}".encode(), submitter="attacker")
        elif a.kind == "sct_withhold":
            cert = f"{a.target_server}/withheld/{t}".encode()
            self.log.configure(LogBehaviorPolicy.withhold_sct([cert]))
            self._renew(a.target_server, t, cert)
        elif a.kind == "unresponsive":
            until = None if a.until_time is None else self.t0 + a.until_time
            self.log.configure(LogBehaviorPolicy.unresponsive(after_time=t, until_time=until))
        self._event(t, "attack_start", attack=a.kind, victims=det.victims)

    # -- traffic -----------------------------------------------------------------

    def _hour_connections(self, hour: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rng = self.traffic
        cl, dest, times = [], [], []
        for (lo, hi), (sampler, to_global, r, p, tz) in zip(self.country_slices, self.samplers):
            n = hi - lo
            local = (hour + tz) % 24
            counts = rng.negative_binomial(r[local], p[local], size=n)
            total = int(counts.sum())
            idx = sampler.sample(rng, total)
            cl.append(np.repeat(np.arange(lo, hi), counts))
            dest.append(np.where(idx < 0, -1, to_global[np.maximum(idx, 0)]))
            times.append(rng.integers(0, HOUR_MS, size=total))
        if not cl:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty
        cl_a, dest_a, times_a = np.concatenate(cl), np.concatenate(dest), np.concatenate(times)
        order = np.argsort(times_a, kind="stable")
        return cl_a[order], dest_a[order], times_a[order]

    def _connect(self, client: _Client, srv: _Server, counters, mmd_state) -> None:
        node = client.node
        intercepted = srv.id == self.intercept_target and node.node_id in self.victims
        if intercepted:
            rc = node.update(self.fake_sct, None, client.log)
            cp = self._record(rc, node, "client", counters)
            scp = 0
        else:
            server = srv.node
            gossip = server.protocol != 0 and node.protocol != 0
            m2 = m1 = None
            if gossip:
                m1 = node.get_message()
                m2 = server.get_message(m1)
                for m in (m1, m2):
                    if isinstance(m, P2Message):
                        size = encoded_length(m)
                        if size > mmd_state["max_p2_bytes"]:
                            mmd_state["max_p2_bytes"] = size
            rc = node.update(srv.sct, m2, client.log)
            cp = self._record(rc, node, "client", counters)
            scp = 0
            if gossip:
                rs = server.update(m1, srv.log)
                scp = self._record(rs, server, "server", counters)["gossip"]
            if rc.origin_report is not None:
                rr = server.receive_origin_report(rc.origin_report, srv.log)
                self._record(rr, server, "server", counters)
                self._event(self.log.now, "origin_report", client=node.node_id, server=srv.id,
                            accepted=not rr.dropped)
        if cp["gossip"] or cp["audit"] or scp:
            self._event(self.log.now, "queries", client=node.node_id, server=srv.id,
                        gossip_cp_client=cp["gossip"], gossip_cp_server=scp, audit_cp=cp["audit"])

    # -- MMD cadence ---------------------------------------------------------------

    def _submit_background(self, index: int) -> None:
        k = int(self.log_rng.poisson(self.sc.background_rate))
        for j in range(k):
            try:
                self.log.submit(b"bg/%d/%d" % (index, j))
            except LogTimeout:
                pass

    def _close_mmd(self, index: int, counters, mmd_state) -> None:
        hist = [0] * (AGE_BUCKETS + 2)
        latest = len(self.pub_sizes) - 1
        for c in self.clients:
            held = c.node.held_sth
            if held is None:
                hist[-1] += 1
                continue
            pos = bisect.bisect_right(self.pub_sizes, held.tree_size) - 1
            age = latest - max(pos, 0)
            hist[min(age, AGE_BUCKETS)] += 1
        row: dict[str, Any] = {
            "mmd": index,
            "time": index * self.sc.mmd,
            "log_size": self.pub_sizes[-1],
            "clients": len(self.clients),
        }
        for k in range(AGE_BUCKETS):
            row[f"age_{k}"] = hist[k]
        row["age_older"], row["age_none"] = hist[AGE_BUCKETS], hist[-1]
        row.update(counters)
        row["map_entries"] = sum(len(s.node.messages) for s in self.gossip_servers
                                 if isinstance(s.node, P2Server))
        row["max_p2_bytes"] = mmd_state["max_p2_bytes"]
        row["alerts"] = self._alerts - mmd_state["alerts_before"]
        row["monitor_status"] = self.monitor.status.value
        row["overhead"] = overhead(row)
        self.rows.append(row)

    def _advance(self, index: int) -> None:
        sth = self.log.advance_mmd()
        if sth is not None and sth.timestamp == self.log.now:
            self.pub_sizes.append(sth.tree_size)
            self._event(self.log.now, "log_sth", size=sth.tree_size, mmd=index)

    # -- main loop -----------------------------------------------------------------

    def run(self) -> SimulationResult:
        sc = self.sc
        mmd_hours = sc.mmd // HOUR_MS
        hours = math.ceil(sc.duration / HOUR_MS)
        index = 0
        counters = new_counters()
        mmd_state = {"max_p2_bytes": 0, "alerts_before": 0}
        self._submit_background(0)
        for h in range(hours):
            t_hour = self.t0 + h * HOUR_MS
            if h and h % mmd_hours == 0:
                self._run_scheduled(t_hour - 1, counters)
                self._close_mmd(index, counters, mmd_state)
                if self.stopped:
                    break
                index += 1
                counters = new_counters()
                mmd_state = {"max_p2_bytes": 0, "alerts_before": self._alerts}
                self.log.set_time(t_hour)
                self._advance(index)
                self._submit_background(index)
            cl, dest, times = self._hour_connections(h)
            servers, clients = self.servers, self.clients
            for ci, si, dt in zip(cl.tolist(), dest.tolist(), times.tolist()):
                if si < 0:
                    continue
                srv = servers[si]
                if srv.https:
                    counters["https_connections"] += 1
                if not srv.ct:
                    continue
                t = t_hour + dt
                if self._sched and self._sched[0][0] <= t:
                    self._run_scheduled(t, counters)
                if self.stopped:
                    break
                counters["ct_connections"] += 1
                self.log.set_time(max(t, self.log.now))
                self._connect(clients[ci], srv, counters, mmd_state)
                if self.stopped:
                    break
            self._run_scheduled(t_hour + HOUR_MS - 1, counters)
            if self.stopped:
                break
        if not self.rows or self.rows[-1]["mmd"] != index:
            self._close_mmd(index, counters, mmd_state)
        return self._result()

    def _result(self) -> SimulationResult:
        sc = self.sc
        det = self.detection
        rel = lambda t: None if t is None else t - self.t0  # noqa: E731
        detection = {
            "attack_start": rel(det.attack_start),
            "first_warning": rel(det.first_warning),
            "first_inconsistency": rel(det.first_inconsistency),
            "confirmed_at_monitor": rel(det.confirmed_at_monitor),
            "latency_mmd": compute_detection_latency(self.events, sc.mmd),
            "monitor_status": self.monitor.status.value,
            "victims": len(det.victims),
        }
        meta = {
            "scenario": sc.name,
            "seed": sc.seed,
            "protocol": sc.protocol,
            "gossip_factor": sc.gossip_factor,
            "gossiping_clients": len(self.clients),
            "gossiping_servers": len(self.gossip_servers),
            "log_size": self.pub_sizes[-1],
        }
        return SimulationResult(self.rows, self.events, summarize(self.rows, meta, detection), self.t0)


def run(scenario: Scenario) -> SimulationResult:
    return Simulation(scenario).run()


def detected(result: SimulationResult) -> bool:
    return result.summary["detection"]["confirmed_at_monitor"] is not None


__all__ = ["Simulation", "SimulationResult", "run", "detected", "LogStatus"]
