"""Gossip protocols for checking the consistency of a certificate log."""

__version__ = "0.1.0"
