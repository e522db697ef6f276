"""Episodic continuous-control tasks with additive Gaussian noise.

Every environment exposes its noiseless dynamics through
``oracle_mean_dynamics`` so that verification code can compute true values.
All dynamics functions are vectorized over leading batch dimensions.

Physical constants (documented here since the tasks are not standardized):

* ``StochasticCartpole``: gravity 9.8, cart mass 1.0, pole mass 0.1, pole
  half-length 0.5, force in [-10, 10] N, time step 0.1 s, semi-implicit
  Euler. State ``(x, x_dot, theta, theta_dot)`` with ``theta = 0`` upright
  and theta wrapped to [-pi, pi).
  Reward ``0.5 * (1 + cos theta) * exp(-x^2 / 18)``, in [0, 1].
* ``PendulumSwingUp``: gravity 10, mass 1, length 1, torque in [-2, 2],
  time step 0.05 s, speed limit 8 rad/s. State ``(cos, sin, theta_dot)``;
  reward ``-(theta^2 + 0.1 theta_dot^2 + 0.001 u^2)`` with theta wrapped
  to [-pi, pi). Episodes start hanging down.
* ``SyntheticLinearMdp``: ``s' = W_f [s; a]``, reward ``clip(w_r . [s; a])``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

STOCHASTIC_NOISE_STD = 0.1  # variance 0.01


def wrap_angle(theta):
    return (theta + np.pi) % (2 * np.pi) - np.pi


class EnvironmentAbort(RuntimeError):
    """The simulator produced a non-finite state."""


@dataclass(frozen=True)
class MdpSpec:
    name: str
    d_s: int
    d_a: int
    horizon: int
    sigma_r: float
    sigma_f: float
    r_max: float
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    angle_dims: tuple[int, ...] = ()

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.sigma_r < 0 or self.sigma_f < 0:
            raise ValueError("noise levels must be non-negative")
        low, high = np.asarray(self.action_low), np.asarray(self.action_high)
        if low.shape != (self.d_a,) or high.shape != (self.d_a,) or np.any(low >= high):
            raise ValueError("action box must satisfy low < high in every dimension")

    def state_difference(self, new, old) -> np.ndarray:
        """``new - old`` with angular coordinates wrapped to [-pi, pi)."""
        diff = np.asarray(new, dtype=float) - np.asarray(old, dtype=float)
        if self.angle_dims:
            idx = list(self.angle_dims)
            diff[..., idx] = wrap_angle(diff[..., idx])
        return diff

    def normalize_state(self, state) -> np.ndarray:
        state = np.array(state, dtype=float)
        if self.angle_dims:
            idx = list(self.angle_dims)
            state[..., idx] = wrap_angle(state[..., idx])
        return state

    @property
    def low(self) -> np.ndarray:
        return np.asarray(self.action_low, dtype=float)

    @property
    def high(self) -> np.ndarray:
        return np.asarray(self.action_high, dtype=float)


class Env:
    spec: MdpSpec

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def oracle_mean_dynamics(self, state, action) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def clamp_action(self, action) -> np.ndarray:
        return np.clip(action, self.spec.low, self.spec.high)

    def step(self, state, action, rng: np.random.Generator) -> tuple[np.ndarray, float]:
        action = np.asarray(action, dtype=float)
        clamped = self.clamp_action(action)
        if np.any(clamped != action):
            logger.warning("action %s outside the box; clamped to %s", action, clamped)
        mean_next, mean_reward = self.oracle_mean_dynamics(state, clamped)
        next_state = self.spec.normalize_state(mean_next + self.spec.sigma_f * rng.standard_normal(self.spec.d_s))
        reward = float(mean_reward) + self.spec.sigma_r * rng.standard_normal()
        if not (np.all(np.isfinite(next_state)) and np.isfinite(reward)):
            raise EnvironmentAbort(f"non-finite transition from state {state} with action {clamped}")
        return next_state, reward


class StochasticCartpole(Env):
    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    half_length = 0.5
    force_mag = 10.0
    dt = 0.1

    def __init__(self, horizon: int = 200, noise_std: float = STOCHASTIC_NOISE_STD):
        self.spec = MdpSpec("cartpole", 4, 1, horizon, noise_std, noise_std, 1.0, (-10.0,), (10.0,), (2,))

    def reset(self, rng):
        return rng.uniform(-0.05, 0.05, size=4)

    def oracle_mean_dynamics(self, state, action):
        state = np.asarray(state, dtype=float)
        force = np.asarray(action, dtype=float)[..., 0]
        x, x_dot, theta, theta_dot = np.moveaxis(state, -1, 0)
        total = self.masscart + self.masspole
        polemass_length = self.masspole * self.half_length
        cos, sin = np.cos(theta), np.sin(theta)
        temp = (force + polemass_length * theta_dot**2 * sin) / total
        theta_acc = (self.gravity * sin - cos * temp) / (
            self.half_length * (4.0 / 3.0 - self.masspole * cos**2 / total)
        )
        x_acc = temp - polemass_length * theta_acc * cos / total
        x_dot2 = x_dot + self.dt * x_acc
        theta_dot2 = theta_dot + self.dt * theta_acc
        theta2 = wrap_angle(theta + self.dt * theta_dot2)
        nxt = np.stack([x + self.dt * x_dot2, x_dot2, theta2, theta_dot2], axis=-1)
        return nxt, self.reward(state)

    @staticmethod
    def reward(state):
        state = np.asarray(state, dtype=float)
        return 0.5 * (1.0 + np.cos(state[..., 2])) * np.exp(-state[..., 0] ** 2 / 18.0)


class PendulumSwingUp(Env):
    gravity = 10.0
    mass = 1.0
    length = 1.0
    max_torque = 2.0
    max_speed = 8.0
    dt = 0.05

    def __init__(self, horizon: int = 200, noise_std: float = STOCHASTIC_NOISE_STD):
        r_max = np.pi**2 + 0.1 * self.max_speed**2 + 0.001 * self.max_torque**2
        self.spec = MdpSpec("pendulum", 3, 1, horizon, noise_std, noise_std, float(r_max), (-2.0,), (2.0,))

    def reset(self, rng):
        theta = np.pi + rng.uniform(-0.1, 0.1)
        return np.array([np.cos(theta), np.sin(theta), rng.uniform(-0.1, 0.1)])

    def oracle_mean_dynamics(self, state, action):
        state = np.asarray(state, dtype=float)
        u = np.asarray(action, dtype=float)[..., 0]
        theta = np.arctan2(state[..., 1], state[..., 0])
        theta_dot = np.clip(state[..., 2], -self.max_speed, self.max_speed)
        acc = 3 * self.gravity / (2 * self.length) * np.sin(theta) + 3.0 / (self.mass * self.length**2) * u
        theta_dot2 = np.clip(theta_dot + acc * self.dt, -self.max_speed, self.max_speed)
        theta2 = theta + theta_dot2 * self.dt
        nxt = np.stack([np.cos(theta2), np.sin(theta2), theta_dot2], axis=-1)
        reward = -(wrap_angle(theta) ** 2 + 0.1 * theta_dot**2 + 0.001 * u**2)
        return nxt, reward


class SyntheticLinearMdp(Env):
    """Linear-Gaussian MDP ``s' = W_f [s; a] + eps``.

    Args:
        transition: (d_s, d_s + d_a) matrix ``W_f``.
        reward_weights: (d_s + d_a,) vector ``w_r``.
        init_state: point-mass initial distribution.
    """

    def __init__(
        self,
        transition,
        reward_weights,
        horizon: int = 10,
        sigma_f: float = STOCHASTIC_NOISE_STD,
        sigma_r: float = STOCHASTIC_NOISE_STD,
        r_max: float = 100.0,
        action_bound: float = 1.0,
        init_state=None,
    ):
        self.transition = np.asarray(transition, dtype=float)
        self.reward_weights = np.asarray(reward_weights, dtype=float).reshape(-1)
        d_s = self.transition.shape[0]
        d_a = self.transition.shape[1] - d_s
        if d_a < 1 or self.reward_weights.shape != (d_s + d_a,):
            raise ValueError("transition must be (d_s, d_s + d_a) and reward weights (d_s + d_a,)")
        self.init_state = np.zeros(d_s) if init_state is None else np.asarray(init_state, dtype=float)
        self.spec = MdpSpec(
            "linear", d_s, d_a, horizon, sigma_r, sigma_f, r_max, (-action_bound,) * d_a, (action_bound,) * d_a
        )

    @property
    def state_block_radius(self) -> float:
        d_s = self.spec.d_s
        return float(np.max(np.abs(np.linalg.eigvals(self.transition[:, :d_s]))))

    @classmethod
    def random(
        cls,
        d_s: int,
        d_a: int,
        rng: np.random.Generator,
        transition_scale: float = 0.5,
        reward_scale: float = 1.0,
        max_radius: float = 0.95,
        **kwargs,
    ) -> "SyntheticLinearMdp":
        """Draw weights from zero-mean Gaussian priors, rejecting unstable draws."""
        while True:
            w_f = transition_scale * rng.standard_normal((d_s, d_s + d_a))
            if np.max(np.abs(np.linalg.eigvals(w_f[:, :d_s]))) <= max_radius:
                break
        w_r = reward_scale * rng.standard_normal(d_s + d_a)
        return cls(w_f, w_r, **kwargs)

    def reset(self, rng):
        return self.init_state.copy()

    def oracle_mean_dynamics(self, state, action):
        sa = np.concatenate([np.asarray(state, dtype=float), np.asarray(action, dtype=float)], axis=-1)
        nxt = sa @ self.transition.T
        reward = np.clip(sa @ self.reward_weights, -self.spec.r_max, self.spec.r_max)
        return nxt, reward


ENVIRONMENTS = {
    "cartpole": StochasticCartpole,
    "pendulum": PendulumSwingUp,
}


def make_env(name: str, **kwargs) -> Env:
    if name == "linear":
        rng = np.random.default_rng(kwargs.pop("seed", 0))
        d_s, d_a = kwargs.pop("d_s", 2), kwargs.pop("d_a", 2)
        return SyntheticLinearMdp.random(d_s, d_a, rng, **kwargs)
    try:
        return ENVIRONMENTS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from cartpole, pendulum, linear") from None
