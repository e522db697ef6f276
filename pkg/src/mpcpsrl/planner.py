"""Cross-entropy-method MPC over a sampled reward/transition model.

Candidate action sequences are scored by the mean return of particles that
propagate through the sampled transition model with injected Gaussian
transition noise. Reward noise is zero-mean, so the mean reward head is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs import wrap_angle
from .featnet import Mlp

# Default planner settings per task; max_iter is 5 everywhere.
PLANNER_DEFAULTS = {
    "cartpole": dict(popsize=500, n_elites=50, horizon=30),
    "pendulum": dict(popsize=100, n_elites=5, horizon=20),
    "pusher": dict(popsize=500, n_elites=50, horizon=25),
    "reacher": dict(popsize=400, n_elites=40, horizon=25),
}


@dataclass(frozen=True)
class CemConfig:
    popsize: int = 500
    n_elites: int = 50
    horizon: int = 30
    max_iter: int = 5
    n_particles: int = 20
    init_std: float | None = None  # None: a quarter of the action range
    alpha: float = 0.1

    def __post_init__(self):
        if not 1 <= self.n_elites <= self.popsize:
            raise ValueError("need 1 <= n_elites <= popsize")
        if self.horizon < 1 or self.max_iter < 1 or self.n_particles < 1:
            raise ValueError("horizon, max_iter and n_particles must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    @classmethod
    def for_env(cls, name: str, **overrides) -> "CemConfig":
        return cls(**{**PLANNER_DEFAULTS.get(name, {}), **overrides})


@dataclass(frozen=True)
class SampledModel:
    """One posterior draw ``M^k``: linear heads on top of fixed feature nets.

    Transition weights predict state differences, so the mean next state is
    ``s + W_f^T phi_f(s, a)``.
    """

    transition_weights: np.ndarray
    reward_weights: np.ndarray
    transition_net: Mlp
    reward_net: Mlp
    transition_noise_var: float
    reward_noise_var: float
    angle_dims: tuple[int, ...] = ()

    def __post_init__(self):
        if not (np.all(np.isfinite(self.transition_weights)) and np.all(np.isfinite(self.reward_weights))):
            raise ValueError("sampled weights must be finite")
        if self.transition_weights.shape[0] != self.transition_net.spec.feature_dim:
            raise ValueError("transition weights do not match the transition feature net")
        if self.reward_weights.shape[0] != self.reward_net.spec.feature_dim:
            raise ValueError("reward weights do not match the reward feature net")

    @property
    def transition_noise_std(self) -> float:
        return float(np.sqrt(self.transition_noise_var))

    def next_state_mean(self, states, actions):
        sa = np.concatenate([states, actions], axis=-1)
        nxt = states + self.transition_net.features(sa) @ self.transition_weights
        if self.angle_dims:
            idx = list(self.angle_dims)
            nxt[..., idx] = wrap_angle(nxt[..., idx])
        return nxt

    def reward_mean(self, states, actions):
        sa = np.concatenate([states, actions], axis=-1)
        return (self.reward_net.features(sa) @ self.reward_weights)[..., 0]


class OracleModel:
    """Planner model backed by an environment's true mean dynamics."""

    def __init__(self, env, transition_noise_std: float | None = None):
        self.env = env
        self.transition_noise_std = env.spec.sigma_f if transition_noise_std is None else transition_noise_std

    def next_state_mean(self, states, actions):
        return self.env.oracle_mean_dynamics(states, actions)[0]

    def reward_mean(self, states, actions):
        return self.env.oracle_mean_dynamics(states, actions)[1]


@dataclass
class PlanResult:
    action: np.ndarray
    elite_mean_return: float
    best_return_trace: list[float] = field(default_factory=list)
    mean_sequence: np.ndarray | None = None
    failed: bool = False


def _rollout_returns(state, sequences, model, noise, r_floor):
    """Mean particle return for each of ``P`` sequences, with a non-finite flag.

    ``sequences`` is (P, tau, d_a); ``noise`` is (n_particles, tau, d_s) and is
    shared by all candidates (common random numbers).
    """
    n_seq, tau, _ = sequences.shape
    n_part = noise.shape[0]
    states = np.broadcast_to(np.asarray(state, dtype=float), (n_seq, n_part, noise.shape[2])).copy()
    totals = np.zeros((n_seq, n_part))
    std = model.transition_noise_std
    with np.errstate(all="ignore"):
        for t in range(tau):
            actions = np.broadcast_to(sequences[:, None, t, :], (n_seq, n_part, sequences.shape[2]))
            totals += model.reward_mean(states, actions)
            if t + 1 < tau:
                states = model.next_state_mean(states, actions) + std * noise[None, :, t, :]
    bad = ~np.isfinite(totals)
    totals[bad] = r_floor
    return totals.mean(axis=1), bad.any(axis=1)


def evaluate_sequence(state, actions, model, n_particles: int, rng: np.random.Generator,
                      action_low=None, action_high=None, r_floor: float = -1e9) -> float:
    """Expected return of one action sequence estimated with noisy particles."""
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    if action_low is not None:
        actions = np.clip(actions, action_low, action_high)
    d_s = np.asarray(state).shape[-1]
    noise = rng.standard_normal((n_particles, actions.shape[0], d_s))
    returns, _ = _rollout_returns(state, actions[None], model, noise, r_floor)
    return float(returns[0])


def plan(
    state,
    model,
    config: CemConfig,
    rng: np.random.Generator,
    action_low,
    action_high,
    init_mean=None,
    r_floor: float = -1e9,
) -> PlanResult:
    """Run ``max_iter`` CEM rounds and return the first action of the final mean.

    Args:
        state: current state.
        model: object with ``next_state_mean``, ``reward_mean`` and
            ``transition_noise_std``.
        config: CEM parameters.
        rng: random source for candidates and particle noise.
        action_low, action_high: action box.
        init_mean: (horizon, d_a) warm-start mean; zeros (clipped) if None.
        r_floor: return assigned to particles whose rollout is non-finite.
    """
    low = np.asarray(action_low, dtype=float)
    high = np.asarray(action_high, dtype=float)
    d_a = low.shape[0]
    d_s = np.asarray(state).shape[-1]
    tau = config.horizon
    mean = np.zeros((tau, d_a)) if init_mean is None else np.array(init_mean, dtype=float)
    mean = np.clip(mean, low, high)
    std0 = (high - low) / 4.0 if config.init_std is None else np.full(d_a, config.init_std)
    std = np.broadcast_to(std0, (tau, d_a)).copy()

    best = -np.inf
    trace, elite_return, any_finite = [], -np.inf, False
    for _ in range(config.max_iter):
        candidates = mean + std * rng.standard_normal((config.popsize, tau, d_a))
        candidates = np.clip(candidates, low, high)
        noise = rng.standard_normal((config.n_particles, tau, d_s))
        returns, bad = _rollout_returns(state, candidates, model, noise, r_floor)
        any_finite |= bool((~bad).any())
        elite_idx = np.argsort(-returns, kind="stable")[: config.n_elites]
        elites = candidates[elite_idx]
        elite_return = float(returns[elite_idx].mean())
        best = max(best, float(returns[elite_idx[0]]))
        trace.append(best)
        mean = config.alpha * mean + (1 - config.alpha) * elites.mean(axis=0)
        std = config.alpha * std + (1 - config.alpha) * elites.std(axis=0)

    if not any_finite:
        return PlanResult(np.zeros(d_a), elite_return, trace, np.zeros((tau, d_a)), failed=True)
    mean = np.clip(mean, low, high)
    return PlanResult(mean[0].copy(), elite_return, trace, mean)


class MpcController:
    """Receding-horizon controller that warm-starts from the shifted last plan."""

    def __init__(self, config: CemConfig, action_low, action_high, r_floor: float = -1e9):
        self.config = config
        self.low = np.asarray(action_low, dtype=float)
        self.high = np.asarray(action_high, dtype=float)
        self.r_floor = r_floor
        self._prev = None

    def reset(self) -> None:
        self._prev = None

    def act(self, state, model, rng) -> PlanResult:
        init = None
        if self._prev is not None:
            init = np.concatenate([self._prev[1:], np.zeros((1, self.low.shape[0]))])
        result = plan(state, model, self.config, rng, self.low, self.high, init, self.r_floor)
        self._prev = result.mean_sequence
        return result
