"""Gossip protocol core: STH checks, message validation, state machines."""
from ctgossip.gossip.checks import InconsistencyEvidence, check_sths, valid_message
from ctgossip.gossip.logclient import AUDIT, GOSSIP, VERIFY, LogClient, Query

# The state machines depend on ctgossip.anomaly, which itself imports the
# checks above; load them on first access to keep the import graph acyclic.
_LAZY = {
    "DEFAULT_STORAGE_LIMIT",
    "NoGossipClient",
    "NoGossipServer",
    "P1Client",
    "P1Server",
    "P2Client",
    "P2Server",
    "UpdateResult",
}


def __getattr__(name: str):
    if name in _LAZY:
        from ctgossip.gossip import protocols

        return getattr(protocols, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = [
    "AUDIT",
    "DEFAULT_STORAGE_LIMIT",
    "GOSSIP",
    "VERIFY",
    "InconsistencyEvidence",
    "LogClient",
    "NoGossipClient",
    "NoGossipServer",
    "P1Client",
    "P1Server",
    "P2Client",
    "P2Server",
    "Query",
    "UpdateResult",
    "check_sths",
    "valid_message",
]
