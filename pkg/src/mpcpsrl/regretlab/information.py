"""Sum of per-episode maximal posterior variances versus its log bound.

Each episode offers a batch of feature points; the point of largest
predictive variance (the ``kmax`` point) is the only one absorbed into the
posterior. With ``s^2 = sigma^-2 sigma'^2`` and ``sigma'^2 <= C1``,

    s^2 <= C2 log(1 + s^2),   C2 = sigma^-2 C1 / log(1 + sigma^-2 C1),

so the running sum of ``s^2`` is bounded by ``C2`` times the log-determinant
growth of the precision (the information gain).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..bayes import GaussianLinearPrior, prior_posterior, predictive_variance, sequential_update

STREAMS = ("ball", "orthonormal")


def unit_ball(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples from the closed unit ball in ``d`` dimensions."""
    x = rng.standard_normal((n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * rng.uniform(size=(n, 1)) ** (1.0 / d)


def variance_cap(prior: GaussianLinearPrior) -> float:
    """``C1``: the largest prior variance over unit-norm features."""
    return float(np.linalg.eigvalsh(prior.prior_covariance)[-1])


def log_bound_constant(c1: float, noise_variance: float) -> float:
    x = c1 / noise_variance
    return x / math.log1p(x)


@dataclass(frozen=True)
class VarianceSumResult:
    d: int
    variances: np.ndarray  # sigma'^2 at each episode's kmax point
    noise_variance: float
    c1: float
    c2: float
    kmax: np.ndarray

    @property
    def scaled(self) -> np.ndarray:
        return self.variances / self.noise_variance

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.variances)

    @property
    def bound_curve(self) -> np.ndarray:
        """Running bound on ``sum sigma'^2``: ``sigma^2 C2 sum log(1 + s^2)``."""
        return self.noise_variance * self.c2 * np.cumsum(np.log1p(self.scaled))

    @property
    def pointwise_violations(self) -> int:
        s2 = self.scaled
        return int(np.sum(s2 > self.c2 * np.log1p(s2) * (1 + 1e-12) + 1e-12))

    @property
    def curve_violations(self) -> int:
        return int(np.sum(self.cumulative > self.bound_curve * (1 + 1e-12) + 1e-12))

    def ratio(self, n: int) -> float:
        """``sum_{k<=n} sigma'^2 / (d log n)``."""
        if n < 2:
            raise ValueError("ratio needs n >= 2")
        return float(self.cumulative[n - 1] / (self.d * math.log(n)))


def variance_sum_experiment(
    d: int,
    n: int,
    rng: np.random.Generator,
    points_per_episode: int = 10,
    noise_variance: float = 0.01,
    prior_scale: float = 1.0,
    stream: str = "ball",
) -> VarianceSumResult:
    """Run ``n`` episodes of kmax-only Bayesian updates.

    ``stream="ball"`` offers ``points_per_episode`` uniform unit-ball points
    per episode. ``stream="orthonormal"`` offers the single point ``e_{k mod d}``
    in episode ``k``, which gives closed-form variances.
    """
    if stream not in STREAMS:
        raise ValueError(f"stream must be one of {STREAMS}")
    if d < 1 or n < 1:
        raise ValueError("d and n must be >= 1")
    prior = GaussianLinearPrior.isotropic(d, prior_scale, noise_variance)
    post = prior_posterior(prior, 1)
    eye = np.eye(d)
    variances = np.empty(n)
    kmax = np.empty(n, dtype=int)
    for k in range(n):
        points = eye[[k % d]] if stream == "orthonormal" else unit_ball(points_per_episode, d, rng)
        var = predictive_variance(post, points)
        j = int(np.argmax(var))
        variances[k], kmax[k] = var[j], j
        # targets do not affect the covariance
        post = sequential_update(post, points[j : j + 1], np.zeros((1, 1)))
    c1 = variance_cap(prior)
    return VarianceSumResult(d, variances, noise_variance, c1, log_bound_constant(c1, noise_variance), kmax)


def orthonormal_closed_form(d: int, n: int, noise_variance: float = 1.0, prior_scale: float = 1.0) -> np.ndarray:
    """Variances for the cycling basis stream: ``1 / (1/p + m / sigma^2)`` after ``m`` repeats."""
    repeats = np.arange(n) // d
    return 1.0 / (1.0 / prior_scale + repeats / noise_variance)
