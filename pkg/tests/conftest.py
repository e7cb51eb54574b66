import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ctgossip.gossip import LogClient  # noqa: E402
from ctgossip.log_service import MMD_MS, LogKey, LogService  # noqa: E402
from ctgossip.merkle import leaf_hash, node_hash  # noqa: E402

SIX_LEAVES = [f"C{i}".encode() for i in range(1, 7)]


class SixLeaves:
    """Named node hashes of the two example trees over C1..C6."""

    def __init__(self):
        h = [leaf_hash(c) for c in SIX_LEAVES]
        self.h1, self.h2, self.h3, self.h4, self.h5, self.h6 = h
        self.h12 = node_hash(self.h1, self.h2)
        self.h34 = node_hash(self.h3, self.h4)
        self.h56 = node_hash(self.h5, self.h6)
        self.h1234 = node_hash(self.h12, self.h34)
        self.h123456 = node_hash(self.h1234, self.h56)


@pytest.fixture
def six():
    return SixLeaves()


@pytest.fixture(scope="session")
def key():
    return LogKey.from_seed("tests")


def make_log(key, history=(), mmd=MMD_MS):
    return LogService(key, mmd=mmd, history=history)


def client_for(log, requester, retry_limit=3):
    return LogClient(
        backend=log,
        requester=requester,
        public_key=log.public_key,
        mmd=log.mmd,
        clock=lambda: log.now,
        retry_limit=retry_limit,
    )


@pytest.fixture
def log(key):
    return make_log(key)


class World:
    """An honest log with heads s4 (t=0), s6 (t=MMD) and s8 (t=2 MMD)."""

    def __init__(self, key, mmd=MMD_MS):
        self.key = key
        self.mmd = mmd
        self.leaves = [f"C{i}".encode() for i in range(1, 11)]
        self.log = LogService(key, mmd=mmd, history=self.leaves[:4])
        self.sth = {4: self.log.get_sth()}
        for size in (6, 8):
            self._grow(size)

    def _grow(self, size):
        for leaf in self.leaves[self.log.tree().size:size]:
            self.log.submit(leaf)
        self.sth[size] = self.log.advance_mmd()

    def extend(self):
        """Publish s10 at t = 3 MMD."""
        self._grow(10)
        return self.sth[10]

    def s(self, size):
        return self.sth[size]

    def p(self, a, b):
        return self.log.tree().consistency_proof(a, b)

    def p2(self, a, b):
        from ctgossip.messages import P2Message

        return P2Message(self.sth[a], self.sth[b], self.p(a, b))

    def forged(self, size, timestamp):
        """A validly signed head for a tree the honest log never had."""
        return self.key.sign_sth(size, timestamp, bytes([size]) * 32)

    def sct(self, i):
        """SCT for leaf C_i (1-based), issued at time 0."""
        return self.key.sign_sct(leaf_hash(self.leaves[i - 1]), 0)

    def client(self, requester="alice", retry_limit=3):
        return client_for(self.log, requester, retry_limit)


@pytest.fixture
def world(key):
    return World(key)


class FixedHead:
    """Log view whose get-sth answer is pinned to an older head."""

    def __init__(self, log, sth):
        self.log, self.sth = log, sth

    def get_sth(self, requester):
        return self.sth

    def get_consistency_proof(self, requester, a, b):
        return self.log.get_consistency_proof(requester, a, b)

    def get_audit_proof(self, requester, sct, size):
        return self.log.get_audit_proof(requester, sct, size)


# -- acceptance reporting ------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    n, title = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _CRITERIA[n] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[n]
        line = f"criterion {n:2d}: {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
