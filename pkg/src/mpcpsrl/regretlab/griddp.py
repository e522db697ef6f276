"""Finite-horizon dynamic programming on a state-action grid.

Works for any environment with a vectorized ``oracle_mean_dynamics``, a
state dimension of at most 2 and a scalar action. Expectations over the
Gaussian transition noise use 16-node Gauss-Hermite quadrature (a tensor
product in 2-D). Next states that fall outside the grid box are clamped to
it and counted.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

logger = logging.getLogger(__name__)

GH_NODES = 16


@dataclass(frozen=True)
class GridSpec:
    state_low: tuple[float, ...]
    state_high: tuple[float, ...]
    n_states: int = 101
    n_actions: int = 41

    def __post_init__(self):
        if len(self.state_low) != len(self.state_high) or not 1 <= len(self.state_low) <= 2:
            raise ValueError("grid supports 1 or 2 state dimensions")
        if any(lo >= hi for lo, hi in zip(self.state_low, self.state_high)):
            raise ValueError("state_low must be below state_high")
        if self.n_states < 2 or self.n_actions < 1:
            raise ValueError("need n_states >= 2 and n_actions >= 1")

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, self.n_states) for lo, hi in zip(self.state_low, self.state_high)]

    def refined(self) -> "GridSpec":
        return GridSpec(self.state_low, self.state_high, 2 * self.n_states - 1, 2 * self.n_actions - 1)


def reachable_box(transition, horizon: int, sigma_f: float, action_bound: float, init_state=None, n_std: float = 4.0):
    """Symmetric box containing every state a linear MDP reaches in ``horizon`` steps
    with noise below ``n_std`` standard deviations."""
    w = np.asarray(transition, dtype=float)
    d_s = w.shape[0]
    a_blk, b_blk = np.abs(w[:, :d_s]), np.abs(w[:, d_s:])
    drive = b_blk.sum(axis=1) * action_bound + n_std * sigma_f
    reach = np.abs(np.zeros(d_s) if init_state is None else np.asarray(init_state, dtype=float))
    radius = reach.copy()
    for _ in range(horizon):
        reach = a_blk @ reach + drive
        radius = np.maximum(radius, reach)
    radius = np.maximum(radius, 1e-3)
    return tuple(-radius), tuple(radius)


def _gauss_hermite(d_s: int, sigma: float):
    """Offsets (m, d_s) and weights (m,) for E[g(mu + sigma z)], z ~ N(0, I)."""
    if sigma == 0.0:
        return np.zeros((1, d_s)), np.ones(1)
    x, w = np.polynomial.hermite.hermgauss(GH_NODES)
    x, w = np.sqrt(2.0) * sigma * x, w / np.sqrt(np.pi)
    offsets = np.array(list(itertools.product(x, repeat=d_s)))
    weights = np.prod(np.array(list(itertools.product(w, repeat=d_s))), axis=1)
    return offsets, weights


class _Interp:
    def __init__(self, axes, values):
        self.axes = axes
        self.low = np.array([a[0] for a in axes])
        self.high = np.array([a[-1] for a in axes])
        self._f = None if len(axes) == 1 else RegularGridInterpolator(tuple(axes), values)
        self.values = values

    def clamp(self, points):
        inside = np.all((points >= self.low) & (points <= self.high), axis=-1)
        return np.clip(points, self.low, self.high), int(np.size(inside) - np.count_nonzero(inside))

    def __call__(self, points):
        if self._f is None:
            return np.interp(points[..., 0], self.axes[0], self.values)
        return self._f(points)


@dataclass
class GridPolicy:
    """Greedy action per (step, grid state); off-grid states use the nearest node."""

    axes: list[np.ndarray]
    actions: np.ndarray  # (H, n_states[, n_states]) action values
    escapes: int = 0
    lookups: int = 0

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def _nearest(self, states):
        idx = []
        for i, axis in enumerate(self.axes):
            step = axis[1] - axis[0]
            idx.append(np.clip(np.rint((states[..., i] - axis[0]) / step), 0, len(axis) - 1).astype(int))
        return tuple(idx)

    def act(self, t: int, states) -> np.ndarray:
        """Actions (n, 1) for states (n, d_s) at step ``t`` (0-based)."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        low = np.array([a[0] for a in self.axes])
        high = np.array([a[-1] for a in self.axes])
        outside = np.any((states < low) | (states > high), axis=1)
        self.escapes += int(outside.sum())
        self.lookups += len(states)
        return self.actions[(t,) + self._nearest(states)][:, None]

    def same_as(self, other: "GridPolicy") -> bool:
        return (
            len(self.axes) == len(other.axes)
            and all(np.array_equal(a, b) for a, b in zip(self.axes, other.axes))
            and np.array_equal(self.actions, other.actions)
        )

    @property
    def escape_rate(self) -> float:
        return self.escapes / self.lookups if self.lookups else 0.0


@dataclass
class GridSolution:
    policy: GridPolicy
    values: np.ndarray  # (H + 1, grid...) with values[H] == 0
    initial_value: float  # V*_1 at the initial state
    dp_clamps: int
    dp_evaluations: int

    @property
    def dp_clamp_rate(self) -> float:
        return self.dp_clamps / self.dp_evaluations if self.dp_evaluations else 0.0


def grid_dp_oracle(env, grid: GridSpec, init_state=None) -> GridSolution:
    """Backward induction for ``V_t(s) = max_a r(s, a) + E V_{t+1}(f(s, a) + eps)``.

    Args:
        env: object with ``spec`` (``d_s``, ``d_a == 1``, ``horizon``,
            ``sigma_f``, action box) and vectorized ``oracle_mean_dynamics``.
        grid: state box and resolutions.
        init_state: state at which ``initial_value`` is read; defaults to
            ``env.reset`` for point-mass starts, otherwise zeros.
    """
    spec = env.spec
    if spec.d_a != 1 or spec.d_s != len(grid.state_low):
        raise ValueError("grid DP needs d_a == 1 and a grid matching d_s")
    axes = grid.axes()
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)  # (n[, n], d_s)
    shape = mesh.shape[:-1]
    states = mesh.reshape(-1, spec.d_s)
    acts = np.linspace(spec.action_low[0], spec.action_high[0], grid.n_actions)
    s_b = np.repeat(states, len(acts), axis=0)
    a_b = np.tile(acts, len(states))[:, None]
    mean_next, reward = env.oracle_mean_dynamics(s_b, a_b)
    reward = np.asarray(reward, dtype=float).reshape(len(states), len(acts))
    offsets, weights = _gauss_hermite(spec.d_s, spec.sigma_f)
    nodes = mean_next[:, None, :] + offsets[None]  # (S*A, m, d_s)

    values = np.zeros((spec.horizon + 1,) + shape)
    actions = np.zeros((spec.horizon,) + shape)
    clamps = 0
    interp = _Interp(axes, values[spec.horizon])
    nodes, clamps = interp.clamp(nodes)
    evaluations = nodes.shape[0] * nodes.shape[1] * spec.horizon
    clamps *= spec.horizon
    for t in range(spec.horizon - 1, -1, -1):
        interp = _Interp(axes, values[t + 1])
        future = interp(nodes) @ weights
        q = reward + future.reshape(len(states), len(acts))
        best = np.argmax(q, axis=1)
        values[t] = q[np.arange(len(states)), best].reshape(shape)
        actions[t] = acts[best].reshape(shape)
    if init_state is None:
        init_state = env.init_state if hasattr(env, "init_state") else np.zeros(spec.d_s)
    start, _ = _Interp(axes, values[0]).clamp(np.asarray(init_state, dtype=float)[None])
    v0 = float(_Interp(axes, values[0])(start)[0])
    if clamps:
        logger.debug("grid DP clamped %d of %d next-state nodes", clamps, evaluations)
    return GridSolution(GridPolicy(axes, actions), values, v0, clamps, evaluations)


def evaluate_policy(env, policy: GridPolicy, noise, init_state=None) -> np.ndarray:
    """Per-rollout returns of ``policy`` in ``env``'s true dynamics.

    ``noise`` is (n_rollouts, H, d_s) standard normal; passing the same array
    to two policies gives common random numbers. Rewards use the mean head,
    which leaves the expectation unchanged.
    """
    spec = env.spec
    n = noise.shape[0]
    if init_state is None:
        init_state = env.reset(np.random.default_rng(0))
    states = np.broadcast_to(np.asarray(init_state, dtype=float), (n, spec.d_s)).copy()
    totals = np.zeros(n)
    for t in range(spec.horizon):
        a = policy.act(t, states)
        mean_next, reward = env.oracle_mean_dynamics(states, a)
        totals += reward
        states = mean_next + spec.sigma_f * noise[:, t, :]
    return totals
