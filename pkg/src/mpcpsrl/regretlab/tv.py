"""Distances between shifted copies of a symmetric noise distribution.

Two conventions appear here. ``l1`` is the integral of ``|p1 - p2|``
(range [0, 2]); ``tv`` is half of that (range [0, 1]). The Lipschitz
bound ``||P1 - P2|| <= C ||mu1 - mu2||`` is stated for the L1 form.

Gaussian noise with shared isotropic covariance is rotation invariant, so
its L1 distance equals the 1-D L1 distance of the marginals along
``mu1 - mu2``. For Laplace and uniform product noise that reduction only
holds when ``mu1 - mu2`` lies on a coordinate axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

FAMILIES = ("gaussian", "laplace", "uniform")
QUAD_STEP = 1e-4  # in units of the noise std
# std units beyond the outer mean; tail mass past the span is below 1e-16
QUAD_SPAN = {"gaussian": 12.0, "laplace": 28.0, "uniform": 2.0}
QUAD_TOL = 1e-7


@dataclass(frozen=True)
class SymmetricNoiseSpec:
    """I.i.d. per-dimension noise with standard deviation ``scale``."""

    family: str
    scale: float
    dim: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        s = self.scale
        if self.family == "gaussian":
            return np.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2 * math.pi))
        if self.family == "laplace":
            b = s / math.sqrt(2)
            return np.exp(-np.abs(x) / b) / (2 * b)
        half = s * math.sqrt(3)
        return np.where(np.abs(x) <= half, 1.0 / (2 * half), 0.0)

    @property
    def mode_density(self) -> float:
        return float(self.pdf(0.0))

    @property
    def kinks(self) -> tuple[float, ...]:
        """Points (relative to the mean) where the density is not smooth."""
        if self.family == "laplace":
            return (0.0,)
        if self.family == "uniform":
            half = self.scale * math.sqrt(3)
            return (-half, half)
        return ()

    @property
    def lipschitz_constant(self) -> float:
        """``C = 2 p_max`` for unimodal families (L1 convention).

        For Gaussian noise this is ``sqrt(2 / (pi sigma^2))``.
        """
        return 2.0 * self.mode_density


def tv_gaussian_shared_cov(mu1, mu2, sigma: float) -> float:
    """Exact total variation between ``N(mu1, s^2 I)`` and ``N(mu2, s^2 I)``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    dist = float(np.linalg.norm(np.atleast_1d(mu1) - np.atleast_1d(mu2)))
    return float(erf(dist / (2 * math.sqrt(2) * sigma)))


def l1_gaussian_shared_cov(mu1, mu2, sigma: float) -> float:
    """``int |p1 - p2|`` for the same pair (twice the total variation)."""
    return 2.0 * tv_gaussian_shared_cov(mu1, mu2, sigma)


def _segment_midpoint(f, a: float, b: float, h: float) -> float:
    if b <= a:
        return 0.0
    n = max(1, int(math.ceil((b - a) / h)))
    width = (b - a) / n
    x = a + width * (np.arange(n) + 0.5)
    return float(width * f(x).sum())


def l1_numeric_1d(noise: SymmetricNoiseSpec, m1: float, m2: float, step: float = QUAD_STEP) -> float:
    """Composite midpoint rule for ``int |p(x - m1) - p(x - m2)| dx``.

    Breakpoints are placed at the midpoint (where the integrand has a kink)
    and at every non-smooth point of either density, so each segment is
    smooth and the rule converges at second order (and is exact on the
    piecewise-constant uniform integrand).
    """
    s = noise.scale
    span = QUAD_SPAN[noise.family] * s
    lo, hi = min(m1, m2) - span, max(m1, m2) + span
    points = {lo, hi, 0.5 * (m1 + m2)}
    for m in (m1, m2):
        points.update(m + k for k in noise.kinks)
    edges = sorted(p for p in points if lo <= p <= hi)

    def integrand(x):
        return np.abs(noise.pdf(x - m1) - noise.pdf(x - m2))

    return sum(_segment_midpoint(integrand, a, b, step * s) for a, b in zip(edges[:-1], edges[1:]))


def tv_numeric(mu1, mu2, sigma: float, step: float = QUAD_STEP) -> float:
    """Total variation of two shared-covariance Gaussians by 1-D quadrature."""
    dist = float(np.linalg.norm(np.atleast_1d(mu1) - np.atleast_1d(mu2)))
    return 0.5 * l1_numeric_1d(SymmetricNoiseSpec("gaussian", sigma), 0.0, dist, step)


def _axis_reducible(noise: SymmetricNoiseSpec, delta: np.ndarray) -> bool:
    return noise.family == "gaussian" or np.count_nonzero(delta) <= 1


@dataclass(frozen=True)
class BoundCheck:
    numeric_l1: float
    bound: float
    holds: bool
    quad_error: float
    flagged: bool

    @property
    def numeric_tv(self) -> float:
        return 0.5 * self.numeric_l1


def lemma1_bound_check(noise: SymmetricNoiseSpec, mu1, mu2) -> BoundCheck:
    """Compare the numeric L1 distance with ``C * ||mu1 - mu2||_2``.

    The distance is computed on the 1-D marginal along ``mu1 - mu2``; the
    quadrature error is estimated by halving the step. A result is flagged
    when that estimate exceeds 1e-7.

    Raises:
        ValueError: non-Gaussian noise with a shift that is not axis-aligned,
            where the 1-D reduction does not apply (see ``l1_uniform_product``).
    """
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    delta = mu2 - mu1
    if not _axis_reducible(noise, delta):
        raise ValueError(f"{noise.family} noise needs an axis-aligned shift for the 1-D reduction")
    dist = float(np.linalg.norm(delta))
    bound = noise.lipschitz_constant * dist
    if dist == 0.0:
        return BoundCheck(0.0, 0.0, True, 0.0, False)
    coarse = l1_numeric_1d(noise, 0.0, dist, 2 * QUAD_STEP)
    fine = l1_numeric_1d(noise, 0.0, dist, QUAD_STEP)
    err = abs(fine - coarse) / 3.0
    return BoundCheck(fine, bound, fine <= bound + 1e-9, err, err > QUAD_TOL)


def l1_uniform_product(noise: SymmetricNoiseSpec, mu1, mu2) -> float:
    """Exact L1 distance between two shifted uniform product densities.

    Both densities are the constant ``1/V`` on boxes of volume ``V``; the
    L1 distance is ``2 (1 - overlap / V)``.
    """
    if noise.family != "uniform":
        raise ValueError("only defined for uniform noise")
    width = 2 * noise.scale * math.sqrt(3)
    delta = np.abs(np.atleast_1d(mu1) - np.atleast_1d(mu2))
    overlap = np.prod(np.clip(1.0 - delta / width, 0.0, None))
    return float(2.0 * (1.0 - overlap))


def random_case(family: str, rng: np.random.Generator, max_dim: int = 5):
    """Random (noise, mu1, mu2) with the shift axis-aligned for non-Gaussian families."""
    dim = int(rng.integers(1, max_dim + 1))
    noise = SymmetricNoiseSpec(family, float(rng.uniform(0.1, 3.0)), dim)
    mu1 = rng.normal(0.0, 2.0, dim)
    size = float(rng.uniform(0.0, 8.0)) * noise.scale
    if family == "gaussian":
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
    else:
        direction = np.zeros(dim)
        direction[rng.integers(dim)] = rng.choice([-1.0, 1.0])
    return noise, mu1, mu1 + size * direction


def lemma1_suite(n_cases: int, rng: np.random.Generator, families=FAMILIES) -> dict:
    """Run ``n_cases`` random bound checks per family and count violations."""
    summary = {}
    rows = []
    for family in families:
        violations = flagged = 0
        worst_ratio = 0.0
        for _ in range(n_cases):
            noise, mu1, mu2 = random_case(family, rng)
            check = lemma1_bound_check(noise, mu1, mu2)
            violations += not check.holds
            flagged += check.flagged
            if check.bound > 0:
                worst_ratio = max(worst_ratio, check.numeric_l1 / check.bound)
            rows.append((family, noise.dim, noise.scale, float(np.linalg.norm(mu2 - mu1)), check.numeric_l1, check.bound))
        summary[family] = {
            "cases": n_cases,
            "violations": violations,
            "flagged": flagged,
            "max_ratio": worst_ratio,
        }
    return {"families": summary, "violations": sum(v["violations"] for v in summary.values()), "rows": rows}


def tv_agreement_suite(n_cases: int, rng: np.random.Generator, max_dim: int = 5) -> dict:
    """Closed-form Gaussian TV against quadrature on random cases."""
    worst = 0.0
    for _ in range(n_cases):
        dim = int(rng.integers(1, max_dim + 1))
        sigma = float(rng.uniform(0.1, 3.0))
        mu1, mu2 = rng.normal(0.0, 2.0, dim), rng.normal(0.0, 2.0, dim)
        worst = max(worst, abs(tv_gaussian_shared_cov(mu1, mu2, sigma) - tv_numeric(mu1, mu2, sigma)))
    return {"cases": n_cases, "max_abs_error": worst}
