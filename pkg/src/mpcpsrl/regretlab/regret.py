"""Empirical Bayesian regret of exact linear PSRL on synthetic linear MDPs.

For each true MDP drawn from the prior, every episode samples one MDP from
the exact weight posterior, solves it with grid DP and runs the resulting
policy once in the true MDP. The per-episode regret

    Delta_k = V_{mu*}(rho) - V_{mu_k}(rho)

is estimated by Monte-Carlo rollouts of both policies in the true MDP
with common random numbers. A second estimate, the grid-DP value of the
true MDP minus the rollout value of ``mu_k``, is kept for reference.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..bayes import GaussianLinearPrior, prior_posterior, sample_weights, sequential_update
from ..envs import SyntheticLinearMdp
from .griddp import GridSpec, evaluate_policy, grid_dp_oracle, reachable_box

logger = logging.getLogger(__name__)

MAX_ESCAPE_RATE = 0.01


@dataclass(frozen=True)
class LinearMdpPrior:
    """Zero-mean Gaussian prior over ``(W_f, w_r)`` of a linear MDP.

    True MDPs are drawn from this prior restricted to state blocks with
    spectral radius at most ``max_radius``.
    """

    d_s: int = 1
    d_a: int = 1
    transition_scale: float = 0.5  # std of each W_f entry
    reward_scale: float = 1.0
    sigma_f: float = 0.1
    sigma_r: float = 0.1
    max_radius: float = 0.95
    r_max: float = 100.0
    action_bound: float = 1.0

    @property
    def d(self) -> int:
        return self.d_s + self.d_a

    def sample(self, rng: np.random.Generator, horizon: int) -> SyntheticLinearMdp:
        return SyntheticLinearMdp.random(
            self.d_s,
            self.d_a,
            rng,
            transition_scale=self.transition_scale,
            reward_scale=self.reward_scale,
            max_radius=self.max_radius,
            horizon=horizon,
            sigma_f=self.sigma_f,
            sigma_r=self.sigma_r,
            r_max=self.r_max,
            action_bound=self.action_bound,
        )

    def transition_prior(self) -> GaussianLinearPrior:
        return GaussianLinearPrior.isotropic(self.d, self.transition_scale**2, self.sigma_f**2)

    def reward_prior(self) -> GaussianLinearPrior:
        return GaussianLinearPrior.isotropic(self.d, self.reward_scale**2, self.sigma_r**2)

    def build(self, transition, reward_weights, horizon: int) -> SyntheticLinearMdp:
        return SyntheticLinearMdp(
            transition, reward_weights, horizon, self.sigma_f, self.sigma_r, self.r_max, self.action_bound
        )


@dataclass(frozen=True)
class RegretRecord:
    episode_index: int
    regret: float  # mean over true MDPs of Delta_k
    stderr: float
    cumulative: float
    cumulative_stderr: float
    T: int


@dataclass
class MdpRun:
    """Per-episode regret estimates for one true MDP."""

    delta: np.ndarray
    delta_se: np.ndarray
    delta_oracle: np.ndarray
    escape_rate: float
    dp_clamp_rate: float


@dataclass
class RegretTable:
    horizon: int
    d: int
    runs: list[MdpRun]
    known_mdp: bool = False
    records: list[RegretRecord] = field(default_factory=list)

    def __post_init__(self):
        if not self.records:
            self.records = aggregate(self.horizon, [r.delta for r in self.runs])

    @property
    def n_mdps(self) -> int:
        return len(self.runs)

    @property
    def escape_rate(self) -> float:
        return max((r.escape_rate for r in self.runs), default=0.0)

    @property
    def valid(self) -> bool:
        return self.escape_rate <= MAX_ESCAPE_RATE

    def cumulative_at(self, T: int) -> float:
        k = T // self.horizon
        if not 1 <= k <= len(self.records):
            raise ValueError(f"T={T} is outside the recorded range")
        return self.records[k - 1].cumulative

    def growth_ratio(self, T: int, factor: int = 4) -> float:
        return self.cumulative_at(factor * T) / self.cumulative_at(T)

    def oracle_gap(self) -> tuple[float, float]:
        """Mean and standard error of the grid-value-minus-rollout estimate."""
        per_mdp = np.array([r.delta_oracle.mean() for r in self.runs])
        se = per_mdp.std(ddof=1) / math.sqrt(len(per_mdp)) if len(per_mdp) > 1 else float(
            self.runs[0].delta_oracle.std(ddof=1) / math.sqrt(len(self.runs[0].delta_oracle))
        )
        return float(per_mdp.mean()), float(se)


def aggregate(horizon: int, deltas: list[np.ndarray]) -> list[RegretRecord]:
    """Average per-episode regret over MDPs; cumulative is the prefix sum."""
    mat = np.vstack(deltas)
    n = mat.shape[0]
    mean = mat.mean(axis=0)
    cum_each = np.cumsum(mat, axis=1)
    cum = np.cumsum(mean)
    if n > 1:
        se = mat.std(axis=0, ddof=1) / math.sqrt(n)
        cum_se = cum_each.std(axis=0, ddof=1) / math.sqrt(n)
    else:
        se = cum_se = np.zeros_like(mean)
    return [
        RegretRecord(k + 1, float(mean[k]), float(se[k]), float(cum[k]), float(cum_se[k]), (k + 1) * horizon)
        for k in range(mat.shape[1])
    ]


def _grid_for(mdp: SyntheticLinearMdp, truth: SyntheticLinearMdp, n_states: int, n_actions: int) -> GridSpec:
    spec = mdp.spec
    boxes = [
        reachable_box(m.transition, spec.horizon, spec.sigma_f, m.spec.high[0], m.init_state)
        for m in (mdp, truth)
    ]
    high = tuple(max(a, b) for a, b in zip(boxes[0][1], boxes[1][1]))
    return GridSpec(tuple(-h for h in high), high, n_states, n_actions)


def run_single_mdp(
    prior: LinearMdpPrior,
    horizon: int,
    n_episodes: int,
    seed,
    n_rollouts: int = 5000,
    known_mdp: bool = False,
    n_states: int = 101,
    n_actions: int = 41,
) -> MdpRun:
    """Exact linear PSRL against one true MDP drawn from ``prior``."""
    rng = np.random.default_rng(seed)
    truth = prior.sample(rng, horizon)
    optimal = grid_dp_oracle(truth, _grid_for(truth, truth, n_states, n_actions))
    post_f = prior_posterior(prior.transition_prior(), prior.d_s)
    post_r = prior_posterior(prior.reward_prior(), 1)
    delta = np.zeros(n_episodes)
    delta_se = np.zeros(n_episodes)
    delta_oracle = np.zeros(n_episodes)
    escapes = lookups = 0
    clamp_rates = [optimal.dp_clamp_rate]
    for k in range(n_episodes):
        if known_mdp:
            sampled, solution = truth, optimal
        else:
            w_f = sample_weights(post_f, rng).weights
            w_r = sample_weights(post_r, rng).weights
            sampled = prior.build(w_f.T, w_r[:, 0], horizon)
            solution = grid_dp_oracle(sampled, _grid_for(sampled, truth, n_states, n_actions))
            clamp_rates.append(solution.dp_clamp_rate)
        policy = solution.policy

        # one real episode
        state = truth.reset(rng)
        inputs, next_states, rewards = [], [], []
        for t in range(horizon):
            action = policy.act(t, state[None])[0]
            nxt, reward = truth.step(state, action, rng)
            inputs.append(np.concatenate([state, action]))
            next_states.append(nxt)
            rewards.append(reward)
            state = nxt
        post_f = sequential_update(post_f, np.array(inputs), np.array(next_states))
        post_r = sequential_update(post_r, np.array(inputs), np.array(rewards)[:, None])

        noise = rng.standard_normal((n_rollouts, horizon, prior.d_s))
        before = (policy.escapes, policy.lookups)
        mine = evaluate_policy(truth, policy, noise)
        escapes += policy.escapes - before[0]
        lookups += policy.lookups - before[1]
        delta_oracle[k] = optimal.initial_value - mine.mean()
        if not policy.same_as(optimal.policy):
            gap = evaluate_policy(truth, optimal.policy, noise) - mine
            delta[k] = gap.mean()
            delta_se[k] = gap.std(ddof=1) / math.sqrt(n_rollouts)
        # identical policies under common random numbers give exactly zero
    rate = escapes / lookups if lookups else 0.0
    if rate > MAX_ESCAPE_RATE:
        logger.warning("grid escape rate %.4f exceeds %.2f", rate, MAX_ESCAPE_RATE)
    return MdpRun(delta, delta_se, delta_oracle, rate, float(max(clamp_rates)))


def _run_star(args):
    return run_single_mdp(*args)


def bayes_regret_experiment(
    prior: LinearMdpPrior,
    H_list,
    T_max: int,
    n_mdps: int,
    rng: np.random.Generator | int,
    n_rollouts: int = 5000,
    known_mdp: bool = False,
    workers: int = 1,
    n_states: int = 101,
    n_actions: int = 41,
) -> dict[int, RegretTable]:
    """Cumulative Bayesian regret curves, one table per horizon.

    Seeds for the true MDPs are spawned from ``rng`` (a generator or an int)
    in a fixed order, so results do not depend on ``workers``.
    """
    root = np.random.SeedSequence(rng if isinstance(rng, int) else int(rng.integers(2**63)))
    tables = {}
    for H, ss in zip(H_list, root.spawn(len(H_list))):
        n_episodes = T_max // H
        if n_episodes < 1:
            raise ValueError(f"T_max={T_max} is shorter than one episode of H={H}")
        jobs = [
            (prior, H, n_episodes, child, n_rollouts, known_mdp, n_states, n_actions) for child in ss.spawn(n_mdps)
        ]
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                runs = list(pool.map(_run_star, jobs))
        else:
            runs = [_run_star(j) for j in jobs]
        tables[H] = RegretTable(H, prior.d, runs, known_mdp)
    return tables
