"""Monte-Carlo check of the posterior concentration event.

Two weight matrices drawn independently from the same posterior play the
roles of the sampled model ``f^k`` and the true model ``f*``. At a query
feature ``h`` the event is

    ||f^k(h) - f*(h)||_2 <= 2 sqrt(2 d_s sigma^2(h) log(2 d_s / delta))

with ``sigma^2(h)`` the epistemic predictive variance. A union bound over
the output dimensions shows it holds with probability at least ``1 - 2 delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..bayes import GaussianLinearPosterior, predictive_variance, sample_weights_batch

BATCH = 20_000


def concentration_radius(variance, d_s: int, delta: float):
    return 2.0 * np.sqrt(2.0 * d_s * np.asarray(variance) * math.log(2.0 * d_s / delta))


@dataclass(frozen=True)
class CoverageResult:
    coverage: np.ndarray  # one entry per query
    delta: float
    n_trials: int

    @property
    def standard_error(self) -> np.ndarray:
        p = np.clip(self.coverage, 0.0, 1.0)
        return np.sqrt(p * (1.0 - p) / self.n_trials)

    @property
    def threshold(self) -> np.ndarray:
        return 1.0 - 2.0 * self.delta - 3.0 * self.standard_error

    @property
    def holds(self) -> bool:
        return bool(np.all(self.coverage >= self.threshold))


def concentration_check(
    posterior: GaussianLinearPosterior,
    query_features,
    delta: float,
    n_trials: int,
    rng: np.random.Generator,
) -> CoverageResult:
    """Empirical frequency of the concentration event at each query point."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    queries = np.atleast_2d(np.asarray(query_features, dtype=float))
    radius = concentration_radius(predictive_variance(posterior, queries), posterior.d_out, delta)
    hits = np.zeros(len(queries))
    done = 0
    while done < n_trials:
        m = min(BATCH, n_trials - done)
        w_k = sample_weights_batch(posterior, m, rng)
        w_star = sample_weights_batch(posterior, m, rng)
        # (m, n_queries, d_out)
        gap = np.einsum("qi,mij->mqj", queries, w_k - w_star)
        hits += np.sum(np.linalg.norm(gap, axis=2) <= radius[None, :], axis=0)
        done += m
    return CoverageResult(hits / n_trials, delta, n_trials)
