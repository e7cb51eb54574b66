"""HTTP transport for the network demo.

Three small stdlib servers share one process model (a ``ThreadingHTTPServer``
with one lock per served object):

* a log exposing CT-style read endpoints plus demo controls,
* a web server that gossips through the ``X-CT-Gossip`` header,
* a monitor accepting alert reports.

The log identifies requesters by the ``X-CT-Requester`` header, which stands
in for the network identity a split-world attacker would key on.
"""
from __future__ import annotations

import base64
import json
import logging
import threading
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable

from ctgossip.anomaly import Monitor
from ctgossip.gossip import LogClient
from ctgossip.log_service import (
    LogBehaviorPolicy,
    LogError,
    LogService,
    LogTimeout,
    NotFound,
    SignedCertificateTimestamp,
    SignedTreeHead,
)
from ctgossip.merkle import ConsistencyProof, InclusionProof
from ctgossip.wire import (
    HEADER_NAME,
    MalformedMessage,
    decode_message,
    decode_sct,
    decode_sth,
    encode_message,
    encode_sct,
    encode_sth,
    from_header,
    to_header,
)

logger = logging.getLogger(__name__)

SCT_HEADER = "X-CT-SCT"
REQUESTER_HEADER = "X-CT-Requester"
ORIGIN_REPORT_PATH = "/ct-gossip/v1/origin-report"
INFO_PATH = "/ct-gossip/v1/info"
REPORT_PATH = "/monitor/v1/report"
STATUS_PATH = "/monitor/v1/status"


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(value: str) -> bytes:
    return base64.b64decode(value, validate=True)


class _HttpError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


class _Handler(BaseHTTPRequestHandler):
    """Dispatches to ``server.app.handle(method, path, query, headers, body)``."""

    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # route access logs through logging
        logger.debug("%s " + fmt, self.address_string(), *args)

    def _dispatch(self, method: str) -> None:
        parsed = urllib.parse.urlsplit(self.path)
        query = dict(urllib.parse.parse_qsl(parsed.query))
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        try:
            status, headers, payload, after = self.server.app.handle(
                method, parsed.path, query, self.headers, body
            )
        except _HttpError as exc:
            status, headers, payload, after = exc.status, {}, {"error": str(exc)}, None
        except Exception as exc:  # keep the demo server alive
            logger.exception("request failed")
            status, headers, payload, after = 500, {}, {"error": str(exc)}, None
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        for k, v in headers.items():
            self.send_header(k, v)
        self.send_header("Content-Type", "application/json" if not isinstance(payload, bytes) else "text/plain")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)
        self.wfile.flush()
        if after is not None:
            after()

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")


@dataclass
class DemoServer:
    """A running HTTP server on a background thread."""

    httpd: ThreadingHTTPServer
    thread: threading.Thread

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def app(self):
        return self.httpd.app

    def close(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self.thread.join()

    def __enter__(self) -> DemoServer:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def make_server(app, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    httpd = ThreadingHTTPServer((host, port), _Handler)
    httpd.daemon_threads = True
    httpd.app = app
    return httpd


def start(app, host: str = "127.0.0.1", port: int = 0) -> DemoServer:
    httpd = make_server(app, host, port)
    t = threading.Thread(target=httpd.serve_forever, daemon=True)
    t.start()
    return DemoServer(httpd, t)


# -- log -------------------------------------------------------------------------


def policy_from_json(d: dict[str, Any]) -> LogBehaviorPolicy:
    mode = d.get("mode", "honest")
    if mode == "honest":
        return LogBehaviorPolicy.honest()
    if mode == "split_world":
        return LogBehaviorPolicy.split_world(d["victims"], d.get("attackers", ("attacker",)))
    if mode == "withhold_sct":
        return LogBehaviorPolicy.withhold_sct([_unb64(c) for c in d["certs"]])
    if mode == "unresponsive":
        return LogBehaviorPolicy.unresponsive(int(d.get("after_time", 0)), d.get("until_time"))
    if mode == "bad_signature":
        return LogBehaviorPolicy.bad_signature()
    if mode == "bad_proof":
        return LogBehaviorPolicy.bad_proof()
    raise ValueError(f"unknown log mode {mode!r}")


class LogApp:
    def __init__(self, service: LogService):
        self.service = service
        self.lock = threading.Lock()

    def handle(self, method, path, query, headers, body):
        requester = headers.get(REQUESTER_HEADER)
        svc = self.service
        with self.lock:
            try:
                return 200, {}, self._route(svc, method, path, query, requester, body), None
            except LogTimeout as exc:
                raise _HttpError(503, str(exc)) from None
            except NotFound as exc:
                raise _HttpError(404, str(exc)) from None
            except (KeyError, ValueError, TypeError) as exc:
                raise _HttpError(400, f"bad request: {exc}") from None

    def _route(self, svc: LogService, method, path, query, requester, body):
        if method == "GET" and path == "/ct/v1/get-sth":
            return {"sth": _b64(encode_sth(svc.get_sth(requester)))}
        if method == "GET" and path == "/ct/v1/get-sth-consistency":
            p = svc.get_consistency_proof(requester, int(query["first"]), int(query["second"]))
            return {"first": p.old_size, "second": p.new_size, "consistency": [_b64(h) for h in p.path]}
        if method == "GET" and path == "/ct/v1/get-proof-by-hash":
            sct = SignedCertificateTimestamp(svc.log_id, _unb64(query["hash"]), 0, b"")
            p = svc.get_audit_proof(requester, sct, int(query["tree_size"]))
            return {"leaf_index": p.leaf_index, "tree_size": p.tree_size, "audit_path": [_b64(h) for h in p.path]}
        if method == "POST" and path == "/ct/v1/add-chain":
            chain = json.loads(body)["chain"]
            return {"sct": _b64(encode_sct(svc.submit(_unb64(chain[0]), submitter=requester)))}
        if method == "GET" and path == "/demo/v1/info":
            return {"public_key": _b64(svc.public_key), "mmd": svc.mmd, "now": svc.now}
        if method == "POST" and path == "/demo/v1/advance":
            sth = svc.advance_mmd()
            return {"sth": _b64(encode_sth(sth)) if sth else None, "now": svc.now}
        if method == "POST" and path == "/demo/v1/time":
            svc.set_time(int(json.loads(body)["t"]))
            return {"now": svc.now}
        if method == "POST" and path == "/demo/v1/configure":
            svc.configure(policy_from_json(json.loads(body)))
            return {"mode": svc.policy.mode}
        raise _HttpError(404, f"no route {method} {path}")


class HttpLogBackend:
    """Log backend that talks to :class:`LogApp` over HTTP.

    Connection failures and 503 answers surface as :class:`LogTimeout`, so
    a :class:`LogClient` retries them exactly as it retries an in-process
    unresponsive log.
    """

    def __init__(self, url: str, timeout: float = 5.0):
        self.url = url.rstrip("/")
        self.timeout = timeout

    def _request(self, path: str, requester: str | None = None, query=None, body=None) -> dict:
        url = self.url + path
        if query:
            url += "?" + urllib.parse.urlencode(query)
        headers = {REQUESTER_HEADER: requester} if requester else {}
        data = None
        if body is not None:
            data = json.dumps(body).encode()
            headers["Content-Type"] = "application/json"
        req = urllib.request.Request(url, data=data, headers=headers, method="POST" if data is not None else "GET")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            detail = exc.read().decode(errors="replace")
            if exc.code == 503:
                raise LogTimeout(detail) from None
            if exc.code == 404:
                raise NotFound(detail) from None
            raise LogError(f"log answered {exc.code}: {detail}") from None
        except (urllib.error.URLError, OSError) as exc:
            raise LogTimeout(str(exc)) from None

    # LogBackend protocol

    def get_sth(self, requester: str | None) -> SignedTreeHead:
        return decode_sth(_unb64(self._request("/ct/v1/get-sth", requester)["sth"]))

    def get_consistency_proof(self, requester: str | None, a: int, b: int) -> ConsistencyProof:
        d = self._request("/ct/v1/get-sth-consistency", requester, {"first": a, "second": b})
        return ConsistencyProof(d["first"], d["second"], tuple(_unb64(h) for h in d["consistency"]))

    def get_audit_proof(self, requester: str | None, sct: SignedCertificateTimestamp, size: int) -> InclusionProof:
        d = self._request("/ct/v1/get-proof-by-hash", requester, {"hash": _b64(sct.cert_digest), "tree_size": size})
        return InclusionProof(d["leaf_index"], d["tree_size"], tuple(_unb64(h) for h in d["audit_path"]))

    # writes and demo controls

    def submit(self, cert: bytes, submitter: str | None = None) -> SignedCertificateTimestamp:
        return decode_sct(_unb64(self._request("/ct/v1/add-chain", submitter, body={"chain": [_b64(cert)]})["sct"]))

    def info(self) -> dict:
        return self._request("/demo/v1/info")

    def public_key(self) -> bytes:
        return _unb64(self.info()["public_key"])

    def now(self) -> int:
        return int(self.info()["now"])

    def advance(self) -> SignedTreeHead | None:
        sth = self._request("/demo/v1/advance", body={})["sth"]
        return decode_sth(_unb64(sth)) if sth else None

    def set_time(self, t: int) -> None:
        self._request("/demo/v1/time", body={"t": t})

    def configure(self, policy: dict[str, Any]) -> None:
        self._request("/demo/v1/configure", body=policy)


def http_log_client(log_url: str, requester: str, retry_limit: int = 3, timeout: float = 5.0) -> LogClient:
    backend = HttpLogBackend(log_url, timeout)
    info = backend.info()
    return LogClient(
        backend=backend,
        requester=requester,
        public_key=_unb64(info["public_key"]),
        mmd=int(info["mmd"]),
        clock=backend.now,
        retry_limit=retry_limit,
    )


# -- monitor -------------------------------------------------------------------------


class MonitorApp:
    def __init__(self, monitor: Monitor):
        self.monitor = monitor
        self.lock = threading.Lock()

    def handle(self, method, path, query, headers, body):
        with self.lock:
            if method == "POST" and path == REPORT_PATH:
                try:
                    report = decode_message(body)
                except MalformedMessage as exc:
                    raise _HttpError(400, str(exc)) from None
                self.monitor.receive(report)
                self.monitor.log.drain()
            elif not (method == "GET" and path == STATUS_PATH):
                raise _HttpError(404, f"no route {method} {path}")
            return 200, {}, {"status": self.monitor.status.value,
                             "reports": len(self.monitor.state.received_reports)}, None


def post_report(monitor_url: str, alert, timeout: float = 5.0) -> str | None:
    """Send an alert to a monitor; returns its status, or None if unreachable."""
    req = urllib.request.Request(monitor_url.rstrip("/") + REPORT_PATH, data=encode_message(alert),
                                 headers={"Content-Type": "application/octet-stream"}, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read())["status"]
    except (urllib.error.URLError, OSError) as exc:
        logger.warning("monitor unreachable: %s", exc)
        return None


# -- gossiping web server ------------------------------------------------------------


def _read_gossip_header(headers) -> object:
    value = headers.get(HEADER_NAME)
    if value is None:
        return None
    try:
        return from_header(value)
    except MalformedMessage:
        return None


class GossipServerApp:
    """Serves a page and piggybacks gossip on request and response headers.

    The response message is chosen before the server state is updated; the
    update itself runs after the page is written, still under the node lock.
    """

    def __init__(self, node, log: LogClient, *, log_url: str = "", monitor_url: str | None = None,
                 page: bytes = b"hello\n"):
        self.node = node
        self.log = log
        self.log_url = log_url
        self.monitor_url = monitor_url
        self.page = page
        self.lock = threading.RLock()
        self.updates = 0

    def handle(self, method, path, query, headers, body):
        node = self.node
        if path == INFO_PATH:
            return 200, {}, {"id": node.node_id, "protocol": node.protocol, "log_url": self.log_url}, None
        if method == "POST" and path == ORIGIN_REPORT_PATH:
            report = _read_gossip_header(headers)
            with self.lock:
                result = node.receive_origin_report(report, self.log)
                self._forward(result)
            return 200, {}, {"accepted": not result.dropped}, None
        if method != "GET":
            raise _HttpError(404, f"no route {method} {path}")
        m1 = _read_gossip_header(headers)
        self.lock.acquire()
        try:
            out = {}
            m2 = node.get_message(m1) if node.protocol else None
            if m2 is not None:
                out[HEADER_NAME] = to_header(m2)
            if node.sct is not None:
                out[SCT_HEADER] = _b64(encode_sct(node.sct))
        except BaseException:
            self.lock.release()
            raise

        def after() -> None:
            try:
                if node.protocol:
                    self._forward(node.update(m1, self.log))
                self.updates += 1
            finally:
                self.lock.release()

        return 200, out, self.page, after

    def _forward(self, result) -> None:
        if result.alert is not None and self.monitor_url:
            post_report(self.monitor_url, result.alert)

    def idle(self) -> None:
        """Block until any in-flight update has finished."""
        with self.lock:
            pass


@dataclass
class ExchangeOutcome:
    result: Any
    m2: object
    sct: SignedCertificateTimestamp | None
    origin_report_accepted: bool | None = None
    monitor_status: str | None = None


def _base(url: str) -> str:
    p = urllib.parse.urlsplit(url)
    return f"{p.scheme}://{p.netloc}"


def client_exchange(url: str, node, log: LogClient, *, monitor_url: str | None = None,
                    timeout: float = 5.0, on_response: Callable[[], None] | None = None) -> ExchangeOutcome | None:
    """One page fetch with gossip in the headers, then the client update.

    Returns ``None`` (and leaves ``node`` untouched) when the server cannot
    be reached.  A missing or malformed reply header counts as no message.
    """
    m1 = node.get_message()
    headers = {HEADER_NAME: to_header(m1)} if m1 is not None else {}
    req = urllib.request.Request(url, headers=headers)
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            resp.read()
            reply = resp.headers
    except (urllib.error.URLError, OSError) as exc:
        logger.info("exchange with %s failed: %s", url, getattr(exc, "reason", exc))
        return None
    if on_response is not None:
        on_response()
    m2 = _read_gossip_header(reply)
    sct = None
    if reply.get(SCT_HEADER):
        try:
            sct = decode_sct(_unb64(reply[SCT_HEADER]))
        except (MalformedMessage, ValueError):
            sct = None
    result = node.update(sct, m2, log)
    out = ExchangeOutcome(result, m2, sct)
    if result.origin_report is not None:
        req = urllib.request.Request(_base(url) + ORIGIN_REPORT_PATH,
                                     headers={HEADER_NAME: to_header(result.origin_report)},
                                     data=b"", method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                out.origin_report_accepted = json.loads(resp.read())["accepted"]
        except (urllib.error.URLError, OSError):
            out.origin_report_accepted = None
    if result.alert is not None and monitor_url:
        out.monitor_status = post_report(monitor_url, result.alert, timeout)
    return out
