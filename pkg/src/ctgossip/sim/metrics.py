"""Per-MMD metric rows, run summaries and output files."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Iterable

AGE_BUCKETS = 12
AGE_COLUMNS = [f"age_{k}" for k in range(AGE_BUCKETS)] + ["age_older", "age_none"]
COUNTER_COLUMNS = [
    "https_connections",
    "ct_connections",
    "get_sth_queries",
    "audit_proof_queries",
    "gossip_cp_client",
    "gossip_cp_server",
    "audit_cp_queries",
    "verify_queries",
]
COLUMNS = (
    ["mmd", "time", "log_size", "clients"]
    + AGE_COLUMNS
    + COUNTER_COLUMNS
    + ["map_entries", "max_p2_bytes", "alerts", "monitor_status", "overhead"]
)


def new_counters() -> dict[str, int]:
    return dict.fromkeys(COUNTER_COLUMNS, 0)


def overhead(row: dict[str, Any]) -> float:
    """Gossip-caused consistency queries per HTTPS connection."""
    https = row["https_connections"]
    return (row["gossip_cp_client"] + row["gossip_cp_server"]) / https if https else 0.0


def latest_fraction(row: dict[str, Any]) -> float:
    return row["age_0"] / row["clients"] if row["clients"] else 0.0


def metrics_csv(rows: Iterable[dict[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in rows:
        w.writerow([f"{row[c]:.10f}" if isinstance(row[c], float) else row[c] for c in COLUMNS])
    return buf.getvalue()


def compute_detection_latency(events: Iterable[dict[str, Any]], mmd: int, t0: int = 0) -> int | None:
    """MMD periods between the attack start and the monitor's first verdict."""
    start = detect = None
    for e in events:
        if e["type"] == "attack_start" and start is None:
            start = e["t"]
        elif e["type"] == "monitor" and detect is None:
            detect = e["t"]
    if start is None or detect is None:
        return None
    return (detect - t0) // mmd - (start - t0) // mmd


def summarize(rows: list[dict[str, Any]], meta: dict[str, Any], detection: dict[str, Any]) -> dict[str, Any]:
    totals = {c: sum(r[c] for r in rows) for c in COUNTER_COLUMNS}
    gossip = totals["gossip_cp_client"] + totals["gossip_cp_server"]
    n = len(rows)
    hist_mean = {
        c: (sum(r[c] / r["clients"] for r in rows if r["clients"]) / n if n else 0.0) for c in AGE_COLUMNS
    }
    return {
        **meta,
        "mmds": n,
        "totals": totals,
        "overhead": gossip / totals["https_connections"] if totals["https_connections"] else 0.0,
        "mean_overhead_per_mmd": sum(overhead(r) for r in rows) / n if n else 0.0,
        "client_query_share": totals["gossip_cp_client"] / gossip if gossip else None,
        "histogram_mean": hist_mean,
        "latest_fraction_mean": hist_mean.get("age_0", 0.0),
        "max_map_entries": max((r["map_entries"] for r in rows), default=0),
        "max_p2_bytes": max((r["max_p2_bytes"] for r in rows), default=0),
        "detection": detection,
    }


def write_outputs(out_dir: str | Path, rows, summary, events) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(rows))
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    with open(out / "events.jsonl", "w") as fh:
        for e in events:
            fh.write(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n")
