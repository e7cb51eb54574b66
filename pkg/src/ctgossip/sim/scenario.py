"""Scenario description for the traffic simulator, with JSON loading.

A scenario fixes everything a run depends on: populations per country,
hourly negative binomial parameters, domain popularity, which servers are
CT-enabled and gossiping, the protocol, the gossip factor ``f`` and an
optional attack.  Loading validates every field and raises
:class:`ScenarioError` on the first problem.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from ctgossip.log_service import MMD_MS

HOUR_MS = 3_600_000
DAY_MS = 24 * HOUR_MS

PROTOCOLS = ("1", "2", "none_save_scts", "none_no_save")
ATTACKS = ("split_world_targeted", "split_world_partition", "sct_withhold", "unresponsive")


class ScenarioError(ValueError):
    pass


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ScenarioError(msg)


@dataclass(frozen=True)
class CountryModel:
    id: str
    client_count: int
    timezone_offset: int
    hourly_nb_params: tuple[tuple[float, float], ...]
    domain_popularity: tuple[tuple[str, float], ...]
    outside_top_fraction: float = 0.0

    def validate(self) -> None:
        _require(self.client_count >= 0, f"{self.id}: client_count must be >= 0")
        _require(len(self.hourly_nb_params) == 24, f"{self.id}: need 24 hourly (r, p) pairs")
        for r, p in self.hourly_nb_params:
            _require(r > 0 and 0 < p < 1, f"{self.id}: invalid negative binomial pair ({r}, {p})")
        views = [v for _, v in self.domain_popularity]
        _require(all(v >= 0 for v in views), f"{self.id}: negative views_per_million")
        _require(sum(views) <= 1_000_000 + 1e-6, f"{self.id}: views_per_million sum exceeds 10^6")
        _require(0 <= self.outside_top_fraction <= 1, f"{self.id}: outside_top_fraction not in [0, 1]")
        _require(sum(views) > 0 or self.outside_top_fraction == 1,
                 f"{self.id}: empty popularity distribution")


@dataclass(frozen=True)
class ServerModel:
    id: str
    ct: bool = True
    gossiping: bool = False
    https: bool | None = None
    # Issuance of the current certificate relative to the run start (ms,
    # usually negative).  None draws it uniformly in the validity window.
    issued_at: int | None = None

    @property
    def is_https(self) -> bool:
        return self.ct if self.https is None else self.https


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    start_time: int
    victims: tuple[str, ...] = ()
    victim_count: int = 0
    countries: tuple[str, ...] = ()
    target_server: str | None = None
    until_time: int | None = None

    def validate(self, scenario: Scenario) -> None:
        _require(self.kind in ATTACKS, f"unknown attack kind {self.kind!r}")
        _require(self.start_time >= 0, "attack start_time must be >= 0")
        servers = {s.id: s for s in scenario.servers}
        if self.kind == "split_world_targeted":
            _require(bool(self.victims) or self.victim_count > 0, "targeted attack needs victims")
            _require(self.target_server in servers, "targeted attack needs a known target_server")
            _require(servers[self.target_server].ct, "attack target must be CT-enabled")
        elif self.kind == "split_world_partition":
            known = {c.id for c in scenario.countries}
            _require(bool(self.countries), "partition attack needs countries")
            _require(set(self.countries) <= known, "partition attack names an unknown country")
        elif self.kind == "sct_withhold":
            _require(self.target_server in servers, "sct_withhold needs a known target_server")
            _require(servers[self.target_server].ct, "sct_withhold target must be CT-enabled")


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    duration_days: float
    countries: tuple[CountryModel, ...]
    servers: tuple[ServerModel, ...]
    gossip_factor: float
    protocol: str
    mmd: int = MMD_MS
    storage_limit: int = 10_000
    attack: AttackSpec | None = None
    retry_limit: int = 3
    consent: bool = False
    history_size: int = 1000
    background_rate: float = 5.0
    cert_validity_days: int = 730
    stop_on_detection: bool = False
    # Extra fields callers may attach (ignored by the engine).
    notes: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def duration(self) -> int:
        return int(round(self.duration_days * DAY_MS))

    def validate(self) -> Scenario:
        _require(0 <= self.gossip_factor <= 1, "gossip_factor must lie in [0, 1]")
        _require(self.protocol in PROTOCOLS, f"protocol must be one of {PROTOCOLS}")
        _require(self.mmd > 0 and self.mmd % HOUR_MS == 0, "mmd must be a positive whole number of hours")
        _require(self.duration >= self.mmd, "duration must cover at least one MMD")
        _require(self.storage_limit >= 1, "storage_limit must be >= 1")
        _require(self.retry_limit >= 1, "retry_limit must be >= 1")
        _require(self.history_size >= 1, "history_size must be >= 1")
        _require(self.background_rate >= 0, "background_rate must be >= 0")
        _require(self.cert_validity_days >= 1, "cert_validity_days must be >= 1")
        _require(0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer")
        ids = [s.id for s in self.servers]
        _require(len(set(ids)) == len(ids), "duplicate server id")
        cids = [c.id for c in self.countries]
        _require(len(set(cids)) == len(cids), "duplicate country id")
        known = set(ids)
        for c in self.countries:
            c.validate()
            unknown = {sid for sid, _ in c.domain_popularity} - known
            _require(not unknown, f"{c.id}: unknown servers {sorted(unknown)}")
        for s in self.servers:
            _require(not (s.gossiping and not s.ct), f"{s.id}: gossiping servers must be CT-enabled")
        if self.attack is not None:
            self.attack.validate(self)
        return self

    def replace(self, **changes) -> Scenario:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return Scenario(**data).validate()

    # -- JSON ------------------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        if not d["notes"]:
            del d["notes"]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Scenario:
        try:
            d = dict(d)
            known = {f.name for f in fields(cls)}
            extra = set(d) - known
            _require(not extra, f"unknown scenario fields {sorted(extra)}")
            d["countries"] = tuple(
                CountryModel(
                    id=str(c["id"]),
                    client_count=int(c["client_count"]),
                    timezone_offset=int(c.get("timezone_offset", 0)),
                    hourly_nb_params=tuple((float(r), float(p)) for r, p in c["hourly_nb_params"]),
                    domain_popularity=tuple((str(s), float(v)) for s, v in c["domain_popularity"]),
                    outside_top_fraction=float(c.get("outside_top_fraction", 0.0)),
                )
                for c in d["countries"]
            )
            d["servers"] = tuple(ServerModel(**s) for s in d["servers"])
            if d.get("attack") is not None:
                a = dict(d["attack"])
                for key in ("victims", "countries"):
                    a[key] = tuple(a.get(key, ()))
                d["attack"] = AttackSpec(**a)
            for key in ("gossip_factor", "duration_days", "background_rate"):
                if key in d:
                    _require(isinstance(d[key], (int, float)) and math.isfinite(d[key]),
                             f"{key} must be a finite number")
            d["protocol"] = str(d["protocol"])
            return cls(**d).validate()
        except ScenarioError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
        _require(isinstance(data, dict), "scenario file must hold a JSON object")
        return cls.from_dict(data)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


# -- desk-scale generator ------------------------------------------------------


def _diurnal_params(peak_mean: float, trough_mean: float, r: float) -> tuple[tuple[float, float], ...]:
    """24 over-dispersed (r, p) pairs following a day/night cycle in local time."""
    out = []
    for hour in range(24):
        # Lowest around 04:00, highest around 16:00.
        w = 0.5 - 0.5 * math.cos(2 * math.pi * (hour - 4) / 24)
        mean = trough_mean + (peak_mean - trough_mean) * w
        out.append((r, round(r / (r + mean), 6)))
    return tuple(out)


def desk_scale_scenario(
    *,
    seed: int = 1,
    protocol: str = "2",
    duration_days: float = 30,
    gossip_factor: float = 0.1,
    clients: int = 2000,
    servers: int = 100,
    ct_servers: int = 30,
    gossiping_servers: int = 8,
    attack: AttackSpec | None = None,
) -> Scenario:
    """Two synthetic countries sharing a Zipf-like popularity over ``servers`` domains.

    Every domain serves HTTPS.  The most popular ``ct_servers`` domains are
    CT-enabled and the top ``gossiping_servers`` of those also gossip.  Country B ranks a few
    domains differently and lives eight hours ahead.
    """
    ids = [f"s{i:03d}" for i in range(servers)]
    base = [1.0 / (rank + 1) ** 0.9 for rank in range(servers)]
    scale = 600_000 / sum(base)
    pop_a = [(sid, round(w * scale, 3)) for sid, w in zip(ids, base)]
    # Country B: swap ranks within consecutive pairs beyond the top three.
    order = list(range(servers))
    for i in range(3, servers - 1, 2):
        order[i], order[i + 1] = order[i + 1], order[i]
    pop_b = [(ids[order[i]], round(base[i] * scale, 3)) for i in range(servers)]
    half = clients // 2
    countries = (
        CountryModel("A", half, 0, _diurnal_params(3.0, 0.3, 0.6), tuple(pop_a), 0.4),
        CountryModel("B", clients - half, 8, _diurnal_params(2.5, 0.2, 0.5), tuple(pop_b), 0.45),
    )
    server_models = tuple(
        ServerModel(sid, ct=i < ct_servers, gossiping=i < gossiping_servers, https=True)
        for i, sid in enumerate(ids)
    )
    return Scenario(
        name="desk_scale",
        seed=seed,
        duration_days=duration_days,
        countries=countries,
        servers=server_models,
        gossip_factor=gossip_factor,
        protocol=protocol,
        attack=attack,
    ).validate()
