"""Connection-count and destination sampling for the traffic model."""
from __future__ import annotations

from typing import Sequence

import numpy as np

OUTSIDE = None


def check_nb_params(r: float, p: float) -> None:
    if not (r > 0 and 0 < p < 1):
        raise ValueError(f"negative binomial needs r > 0 and 0 < p < 1, got ({r}, {p})")


def nb_mean(r: float, p: float) -> float:
    return r * (1 - p) / p


def nb_variance(r: float, p: float) -> float:
    return r * (1 - p) / p**2


def sample_connection_count(params: tuple[float, float], rng: np.random.Generator, size=None):
    """Draw connection counts with mean r(1-p)/p and variance r(1-p)/p^2."""
    r, p = params
    check_nb_params(r, p)
    return rng.negative_binomial(r, p, size=size)


class DomainSampler:
    """Categorical draw over servers, weighted by views per million.

    With probability ``outside_fraction`` a draw lands outside the modelled
    domain set; vectorized draws encode that as index -1.
    """

    def __init__(self, popularity: Sequence[tuple[str, float]], outside_fraction: float = 0.0):
        self.ids = [sid for sid, _ in popularity]
        weights = np.array([v for _, v in popularity], dtype=float)
        total = weights.sum()
        self.outside_fraction = float(outside_fraction)
        if total <= 0:
            self.outside_fraction = 1.0
            self._cum = np.ones(1)
        else:
            self._cum = np.cumsum(weights / total)
            self._cum[-1] = 1.0

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u_out = rng.random(n)
        u_pick = rng.random(n)
        idx = np.searchsorted(self._cum, u_pick, side="right")
        idx = np.minimum(idx, len(self._cum) - 1)
        return np.where(u_out < self.outside_fraction, -1, idx)


def pick_domain(
    popularity: Sequence[tuple[str, float]], outside_fraction: float, rng: np.random.Generator
) -> str | None:
    """One destination; ``None`` means the connection leaves the modelled set."""
    i = int(DomainSampler(popularity, outside_fraction).sample(rng, 1)[0])
    return OUTSIDE if i < 0 else popularity[i][0]
