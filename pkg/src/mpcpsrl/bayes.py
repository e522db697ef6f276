"""Exact Bayesian linear regression with a shared weight covariance.

A linear-kernel Gaussian process over features ``phi`` is the same model as
``y = W^T phi + eps`` with a zero-mean Gaussian prior on every column of
``W``.  Because the posterior covariance only depends on the inputs, all
output columns share one precision matrix ``A`` and differ only in their
means.  The posterior is stored in information form (``A`` and
``b = sigma^-2 Phi^T Y``) so that absorbing data is additive.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

COND_LIMIT = 1e12
SYM_TOL = 1e-10


class InvalidPosteriorError(ValueError):
    """Raised when a precision matrix cannot be factorized."""


class IllConditionedWarning(RuntimeWarning):
    """Emitted when the posterior precision has condition number above 1e12."""


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def _cholesky(matrix: np.ndarray) -> np.ndarray:
    try:
        return cho_factor(matrix, lower=True)[0]
    except LinAlgError as exc:
        raise InvalidPosteriorError(f"precision is not positive definite: {exc}") from exc


@dataclass(frozen=True)
class GaussianLinearPrior:
    """Zero-mean Gaussian prior on regression weights plus the noise level."""

    prior_covariance: np.ndarray
    noise_variance: float

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.prior_covariance, dtype=float))
        if cov.shape[0] != cov.shape[1]:
            raise ValueError(f"prior covariance must be square, got {cov.shape}")
        if not np.all(np.isfinite(cov)):
            raise ValueError("prior covariance contains non-finite entries")
        if np.max(np.abs(cov - cov.T), initial=0.0) > SYM_TOL:
            raise ValueError("prior covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("prior covariance is not positive definite")
        if not (np.isfinite(self.noise_variance) and self.noise_variance > 0):
            raise ValueError(f"noise variance must be positive, got {self.noise_variance}")
        object.__setattr__(self, "prior_covariance", _frozen(cov))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @classmethod
    def isotropic(cls, dim: int, scale: float = 1.0, noise_variance: float = 1.0):
        return cls(scale * np.eye(dim), noise_variance)

    @property
    def dim(self) -> int:
        return self.prior_covariance.shape[0]

    @cached_property
    def prior_precision(self) -> np.ndarray:
        factor = _cholesky(self.prior_covariance)
        prec = cho_solve((factor, True), np.eye(self.dim))
        return _frozen(0.5 * (prec + prec.T))


@dataclass(frozen=True)
class GaussianLinearPosterior:
    """Posterior ``N(A^-1 b, A^-1)`` over each column of the weight matrix.

    Attributes:
        prior: the prior the posterior was built from.
        precision: ``A = sigma^-2 Phi^T Phi + Sigma_p^-1``, shape (d_phi, d_phi).
        information: ``b = sigma^-2 Phi^T Y``, shape (d_phi, d_out).
        n_points: number of absorbed observations.
    """

    prior: GaussianLinearPrior
    precision: np.ndarray
    information: np.ndarray
    n_points: int = 0
    ill_conditioned: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "precision", _frozen(self.precision))
        object.__setattr__(self, "information", _frozen(self.information))

    @property
    def dim(self) -> int:
        return self.precision.shape[0]

    @property
    def d_out(self) -> int:
        return self.information.shape[1]

    @property
    def noise_variance(self) -> float:
        return self.prior.noise_variance

    @cached_property
    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor ``L`` with ``A = L L^T``."""
        return _cholesky(self.precision)

    @cached_property
    def mean(self) -> np.ndarray:
        return _frozen(cho_solve((self.cholesky, True), self.information))

    @cached_property
    def covariance(self) -> np.ndarray:
        cov = cho_solve((self.cholesky, True), np.eye(self.dim))
        return _frozen(0.5 * (cov + cov.T))


def _build(prior, precision, information, n_points) -> GaussianLinearPosterior:
    precision = 0.5 * (precision + precision.T)
    eig = np.linalg.eigvalsh(precision)
    ill = bool(eig[0] <= 0 or eig[-1] / eig[0] > COND_LIMIT)
    if ill:
        warnings.warn(
            f"posterior precision condition number {eig[-1] / max(eig[0], 1e-300):.3g} exceeds {COND_LIMIT:g}",
            IllConditionedWarning,
            stacklevel=3,
        )
    return GaussianLinearPosterior(prior, precision, information, n_points, ill)


def prior_posterior(prior: GaussianLinearPrior, d_out: int = 1) -> GaussianLinearPosterior:
    """The posterior after observing nothing."""
    return GaussianLinearPosterior(prior, prior.prior_precision, np.zeros((prior.dim, d_out)), 0)


def posterior_from_data(prior: GaussianLinearPrior, features, targets) -> GaussianLinearPosterior:
    """Condition the prior on ``targets ~ N(features @ W, sigma^2 I)``.

    Args:
        prior: weight prior and observation noise.
        features: (N, d_phi) design matrix, one feature row per observation.
        targets: (N,) or (N, d_out) targets.

    Returns:
        The exact Gaussian posterior. With ``N == 0`` this is the prior.
    """
    phi = _as_matrix(features, "features")
    y = _as_matrix(targets, "targets")
    if phi.shape[0] != y.shape[0]:
        raise ValueError(f"row mismatch: {phi.shape[0]} features vs {y.shape[0]} targets")
    if phi.shape[1] != prior.dim:
        raise ValueError(f"feature dim {phi.shape[1]} != prior dim {prior.dim}")
    if phi.shape[0] == 0:
        return prior_posterior(prior, y.shape[1])
    beta = 1.0 / prior.noise_variance
    precision = beta * phi.T @ phi + prior.prior_precision
    information = beta * phi.T @ y
    return _build(prior, precision, information, phi.shape[0])


def sequential_update(post: GaussianLinearPosterior, features, targets) -> GaussianLinearPosterior:
    """Absorb more rows into an existing posterior (same result as a batch fit)."""
    phi = _as_matrix(features, "features")
    y = _as_matrix(targets, "targets")
    if phi.shape[0] != y.shape[0]:
        raise ValueError(f"row mismatch: {phi.shape[0]} features vs {y.shape[0]} targets")
    if phi.shape[0] == 0:
        return post
    if phi.shape[1] != post.dim or y.shape[1] != post.d_out:
        raise ValueError("update dimensions do not match the posterior")
    beta = 1.0 / post.noise_variance
    precision = post.precision + beta * phi.T @ phi
    information = post.information + beta * phi.T @ y
    return _build(post.prior, precision, information, post.n_points + phi.shape[0])


@dataclass(frozen=True)
class WeightSample:
    weights: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)):
            raise InvalidPosteriorError("sampled weights are not finite")


def sample_weights(post: GaussianLinearPosterior, rng: np.random.Generator) -> WeightSample:
    """Draw one weight matrix; every column is ``N(mean[:, j], A^-1)``."""
    return WeightSample(sample_weights_batch(post, 1, rng)[0])


def sample_weights_batch(post: GaussianLinearPosterior, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` independent weight matrices, shape (n, d_phi, d_out)."""
    z = rng.standard_normal((post.dim, n * post.d_out))
    # A^-1 = L^-T L^-1, so L^-T z has covariance A^-1.
    noise = solve_triangular(post.cholesky, z, lower=True, trans="T")
    noise = noise.reshape(post.dim, n, post.d_out).transpose(1, 0, 2)
    return post.mean[None] + noise


def predictive_variance(post: GaussianLinearPosterior, feature) -> float | np.ndarray:
    """Epistemic variance ``phi^T A^-1 phi`` (noise variance excluded).

    Accepts a single feature vector or a (n, d_phi) batch.
    """
    phi = np.asarray(feature, dtype=float)
    if phi.shape[-1] != post.dim:
        raise ValueError(f"feature dim {phi.shape[-1]} != posterior dim {post.dim}")
    flat = phi.reshape(-1, post.dim)
    half = solve_triangular(post.cholesky, flat.T, lower=True)
    var = np.maximum(np.sum(half * half, axis=0), 0.0)
    if phi.ndim == 1:
        return float(var[0])
    return var.reshape(phi.shape[:-1])


def predict_mean(post: GaussianLinearPosterior, features) -> np.ndarray:
    return np.asarray(features, dtype=float) @ post.mean
