"""Command line entry point: ``ct-gossip {simulate,serve,probe,vectors}``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _setup_logging() -> None:
    name = os.environ.get("CT_GOSSIP_LOG_LEVEL", "warn").lower()
    if name not in LEVELS:
        raise ConfigError(f"CT_GOSSIP_LOG_LEVEL must be one of {sorted(LEVELS)}")
    logging.basicConfig(level=LEVELS[name], format="%(levelname)s %(name)s: %(message)s")


def _load_json(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def shipped_scenarios() -> list[str]:
    root = resources.files("ctgossip") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_scenario(name: str) -> Path | str:
    """A file path, or the name of a scenario shipped with the package."""
    if Path(name).exists():
        return Path(name)
    if name in shipped_scenarios():
        return resources.files("ctgossip") / "scenarios" / f"{name}.json"
    raise ConfigError(f"no scenario file or shipped scenario named {name!r}")


# -- subcommands --------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from ctgossip.sim import Scenario, ScenarioError, run

    try:
        sc = Scenario.load(resolve_scenario(args.scenario))
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.protocol is not None:
            changes["protocol"] = args.protocol
        if args.gossip_factor is not None:
            changes["gossip_factor"] = args.gossip_factor
        if args.days is not None:
            changes["duration_days"] = args.days
        if changes:
            sc = sc.replace(**changes)
    except ScenarioError as exc:
        raise ConfigError(str(exc)) from exc
    result = run(sc)
    result.write(args.out)
    s = result.summary
    print(json.dumps({
        "out": str(args.out),
        "mmds": s["mmds"],
        "overhead": s["overhead"],
        "latest_fraction_mean": s["latest_fraction_mean"],
        "detection_latency_mmd": s["detection"]["latency_mmd"],
    }, sort_keys=True))
    return EXIT_OK


def _build_app(role: str, cfg: dict):
    from ctgossip import transport
    from ctgossip.anomaly import Monitor
    from ctgossip.gossip import NoGossipServer, P1Server, P2Server
    from ctgossip.log_service import MMD_MS, LogKey, LogService

    if role == "log":
        history = cfg.get("history")
        if history is None:
            history = [f"C{i}" for i in range(1, int(cfg.get("history_size", 6)) + 1)]
        service = LogService(
            LogKey.from_seed(str(cfg.get("seed", "ct-gossip-demo"))),
            mmd=int(cfg.get("mmd", MMD_MS)),
            start_time=int(cfg.get("start_time", 0)),
            history=[h.encode() for h in history],
        )
        return transport.LogApp(service)
    if "log_url" not in cfg:
        raise ConfigError(f"role {role} needs log_url in its config")
    retry = int(cfg.get("retry_limit", 3))
    if role == "monitor":
        return transport.MonitorApp(Monitor(transport.http_log_client(cfg["log_url"], cfg.get("id", "monitor"), retry)))
    sid = cfg.get("id", "server")
    lc = transport.http_log_client(cfg["log_url"], sid, retry)
    protocol = int(cfg.get("protocol", 2))
    cls = {0: NoGossipServer, 1: P1Server, 2: P2Server}.get(protocol)
    if cls is None:
        raise ConfigError("protocol must be 0, 1 or 2")
    sct = transport.HttpLogBackend(cfg["log_url"]).submit(cfg.get("cert", f"{sid}/cert").encode(), submitter=sid)
    kwargs = {"storage_limit": int(cfg["storage_limit"])} if protocol == 2 and "storage_limit" in cfg else {}
    node = cls(sid, lc.public_key, lc.mmd, sct=sct, consent=bool(cfg.get("consent", False)), **kwargs)
    return transport.GossipServerApp(node, lc, log_url=cfg["log_url"], monitor_url=cfg.get("monitor_url"))


def cmd_serve(args) -> int:
    from ctgossip import transport
    from ctgossip.log_service import LogError

    cfg = _load_json(args.config)
    try:
        app = _build_app(args.role, cfg)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad {args.role} config: {exc}") from exc
    except LogError as exc:
        raise RuntimeError(f"log unreachable: {exc}") from exc
    httpd = transport.make_server(app, args.host, args.port)
    host, port = httpd.server_address[:2]
    print(json.dumps({"role": args.role, "url": f"http://{host}:{port}"}), flush=True)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return EXIT_OK


def cmd_probe(args) -> int:
    import urllib.request

    from ctgossip import transport
    from ctgossip.gossip import P1Client, P2Client

    log_url = args.log_url
    if log_url is None:
        info_url = transport._base(args.url) + transport.INFO_PATH
        try:
            with urllib.request.urlopen(info_url, timeout=args.timeout) as resp:
                log_url = json.loads(resp.read())["log_url"]
        except (OSError, ValueError, KeyError) as exc:
            raise RuntimeError(f"cannot discover the log url from {info_url}: {exc}") from exc
    lc = transport.http_log_client(log_url, args.id, timeout=args.timeout)
    cls = P1Client if args.protocol == "1" else P2Client
    node = cls(args.id, lc.public_key, lc.mmd, consent=args.consent)
    for i in range(args.count):
        out = transport.client_exchange(args.url, node, lc, monitor_url=args.monitor_url, timeout=args.timeout)
        if out is None:
            raise RuntimeError(f"exchange {i} with {args.url} failed")
        held = node.held_sth
        print(json.dumps({
            "exchange": i,
            "received": type(out.m2).__name__ if out.m2 is not None else None,
            "held_size": held.tree_size if held else None,
            "queries": [list(q.call) + [q.purpose] for q in out.result.queries],
            "alert": type(node.alert).__name__ if node.alert is not None else None,
            "monitor_status": out.monitor_status,
        }), flush=True)
    return EXIT_OK


def cmd_vectors(args) -> int:
    from ctgossip.merkle import ChronTree, leaf_hash, node_hash

    leaves = [f"C{i}".encode() for i in range(1, 7)]
    tree = ChronTree(leaves)
    h = [leaf_hash(x) for x in leaves]
    h12, h34, h56 = node_hash(h[0], h[1]), node_hash(h[2], h[3]), node_hash(h[4], h[5])
    named = {"h3": h[2], "h12": h12, "h56": h56, "h1234": node_hash(h12, h34)}
    names = {v: k for k, v in named.items()}
    inc = tree.inclusion_proof(3, 6)
    cons = tree.consistency_proof(4, 6)
    out = {
        "leaves": [x.decode() for x in leaves],
        "leaf_hashes": [x.hex() for x in h],
        "root_4": tree.root(4).hex(),
        "root_6": tree.root(6).hex(),
        "inclusion_proof": {"index": 3, "tree_size": 6, "path": [x.hex() for x in inc.path],
                            "names": [names.get(x, "?") for x in inc.path]},
        "consistency_proof": {"first": 4, "second": 6, "path": [x.hex() for x in cons.path],
                              "names": [names.get(x, "?") for x in cons.path]},
    }
    print(json.dumps(out, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ct-gossip", description="Gossip protocols for certificate log consistency.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a traffic simulation")
    s.add_argument("--scenario", required=True, help="scenario JSON file or shipped scenario name")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--protocol", choices=["1", "2", "none_save_scts", "none_no_save"])
    s.add_argument("--gossip-factor", type=float)
    s.add_argument("--days", type=float)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("serve", help="run a demo log, gossiping web server or monitor")
    s.add_argument("--role", required=True, choices=["log", "gossip-server", "monitor"])
    s.add_argument("--port", type=int, default=0)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--config")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("probe", help="gossip with a demo server over HTTP headers")
    s.add_argument("--url", required=True)
    s.add_argument("--protocol", required=True, choices=["1", "2"])
    s.add_argument("--log-url")
    s.add_argument("--monitor-url")
    s.add_argument("--id", default="probe")
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--consent", action="store_true")
    s.add_argument("--timeout", type=float, default=5.0)
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("vectors", help="print the six-leaf golden test vectors")
    s.set_defaults(func=cmd_vectors)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        _setup_logging()
        return args.func(args)
    except ConfigError as exc:
        print(f"ct-gossip: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        logging.getLogger(__name__).debug("runtime failure", exc_info=True)
        print(f"ct-gossip: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
