"""The MPC-PSRL episode loop.

Each episode draws one reward model and one transition model from the
current posteriors and keeps them fixed for all ``H`` steps while an MPC
controller acts. Between episodes the feature nets are retrained on all
data, every cached feature row is recomputed, and both posteriors are
rebuilt from scratch on the refreshed features.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .bayes import GaussianLinearPrior, GaussianLinearPosterior, posterior_from_data, predictive_variance, sample_weights
from .dataset import Dataset, Transition
from .envs import Env, EnvironmentAbort
from .featnet import Mlp, MlpSpec, TrainingDivergedError, refresh_features, train
from .planner import CemConfig, MpcController, SampledModel

logger = logging.getLogger(__name__)

MIN_NOISE_VAR = 1e-6


@dataclass(frozen=True)
class AgentConfig:
    """Agent hyperparameters.

    ``hidden_layers=None`` switches both heads to identity features (the
    linear-kernel setting); otherwise both heads use an MLP with these hidden
    widths followed by a penultimate layer of ``penultimate_width`` units.
    """

    cem: CemConfig = field(default_factory=CemConfig)
    episodes: int = 30
    retrain_every: int = 1
    seed: int = 0
    hidden_layers: tuple[int, ...] | None = (200, 200)
    penultimate_width: int | None = None
    activation: str = "swish"
    learning_rate: float = 1e-3
    batch_size: int = 32
    train_epochs: int = 5
    max_train_steps: int = 2000
    prior_scale: float = 1.0
    transition_noise_var: float | None = None
    reward_noise_var: float | None = None

    def __post_init__(self):
        if self.episodes < 1 or self.retrain_every < 1:
            raise ValueError("episodes and retrain_every must be >= 1")
        if self.hidden_layers is not None:
            object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))

    def net_spec(self, env: Env, output_dim: int) -> MlpSpec:
        d_in = env.spec.d_s + env.spec.d_a
        width = self.penultimate_width or MlpSpec.default_width(env.spec.d_s, env.spec.d_a)
        return MlpSpec(
            d_in,
            output_dim,
            self.hidden_layers,
            width,
            self.activation,
            self.learning_rate,
            self.batch_size,
            self.train_epochs,
            self.max_train_steps,
        )

    def noise_vars(self, env: Env) -> tuple[float, float]:
        f = env.spec.sigma_f**2 if self.transition_noise_var is None else self.transition_noise_var
        r = env.spec.sigma_r**2 if self.reward_noise_var is None else self.reward_noise_var
        return max(f, MIN_NOISE_VAR), max(r, MIN_NOISE_VAR)


@dataclass
class EpisodeRecord:
    episode_index: int
    total_reward: float
    steps: int
    wall_time: float
    mean_pred_variance: float
    kmax: int
    kmax_variance: float
    truncated: bool = False


@dataclass
class Heads:
    """Feature nets and posteriors for the transition and reward models."""

    transition_net: Mlp
    reward_net: Mlp
    transition_post: GaussianLinearPosterior
    reward_post: GaussianLinearPosterior


def _variance_diagnostics(post, net, inputs):
    if len(inputs) == 0:
        return 0.0, 0, 0.0
    var = predictive_variance(post, net.features(np.asarray(inputs)))
    k = int(np.argmax(var))
    return float(np.mean(var)), k + 1, float(var[k])


def run_episode(
    env: Env,
    heads: Heads,
    config: AgentConfig,
    rng: np.random.Generator,
    plan_rng: np.random.Generator | None = None,
    env_rng: np.random.Generator | None = None,
    episode_index: int = 1,
) -> tuple[EpisodeRecord, list[Transition]]:
    """Sample one model pair, then act with MPC for a whole episode.

    ``rng`` is used for the single posterior draw per head; planning and
    environment noise use ``plan_rng`` and ``env_rng`` (default: ``rng``).
    """
    plan_rng = rng if plan_rng is None else plan_rng
    env_rng = rng if env_rng is None else env_rng
    start = time.perf_counter()
    var_f, var_r = config.noise_vars(env)
    model = SampledModel(
        sample_weights(heads.transition_post, rng).weights,
        sample_weights(heads.reward_post, rng).weights,
        heads.transition_net,
        heads.reward_net,
        var_f,
        var_r,
        env.spec.angle_dims,
    )
    spec = env.spec
    controller = MpcController(config.cem, spec.low, spec.high, r_floor=-spec.horizon * spec.r_max)
    transitions, total, truncated = [], 0.0, False
    state = env.reset(env_rng)
    for step in range(1, spec.horizon + 1):
        action = controller.act(state, model, plan_rng).action
        try:
            next_state, reward = env.step(state, action, env_rng)
        except EnvironmentAbort as exc:
            logger.error("episode %d aborted at step %d: %s", episode_index, step, exc)
            truncated = True
            break
        transitions.append(Transition(state, action, reward, next_state, episode_index, step))
        total += reward
        state = next_state
    inputs = [np.concatenate([t.state, t.action]) for t in transitions]
    mean_var, kmax, kmax_var = _variance_diagnostics(heads.transition_post, heads.transition_net, inputs)
    record = EpisodeRecord(
        episode_index, total, len(transitions), time.perf_counter() - start, mean_var, kmax, kmax_var, truncated
    )
    return record, transitions


def random_episode(env: Env, heads: Heads, rng: np.random.Generator, episode_index: int = 0):
    """Uniformly random in-box actions (the data-seeding episode)."""
    start = time.perf_counter()
    spec = env.spec
    transitions, total, truncated = [], 0.0, False
    state = env.reset(rng)
    for step in range(1, spec.horizon + 1):
        action = rng.uniform(spec.low, spec.high)
        try:
            next_state, reward = env.step(state, action, rng)
        except EnvironmentAbort as exc:
            logger.error("random episode aborted at step %d: %s", step, exc)
            truncated = True
            break
        transitions.append(Transition(state, action, reward, next_state, episode_index, step))
        total += reward
        state = next_state
    inputs = [np.concatenate([t.state, t.action]) for t in transitions]
    mean_var, kmax, kmax_var = _variance_diagnostics(heads.transition_post, heads.transition_net, inputs)
    record = EpisodeRecord(
        episode_index, total, len(transitions), time.perf_counter() - start, mean_var, kmax, kmax_var, truncated
    )
    return record, transitions


class PsrlAgent:
    """Resumable training state for one trial.

    The whole object (dataset, nets, posteriors and every random stream)
    pickles cleanly, which is what checkpoints store.
    """

    def __init__(self, env: Env, config: AgentConfig):
        self.env = env
        self.config = config
        seeds = np.random.SeedSequence(config.seed).spawn(5)
        init_rng, self.sample_rng, self.plan_rng, self.env_rng, self.train_rng = (
            np.random.default_rng(s) for s in seeds
        )
        d_s, d_a = env.spec.d_s, env.spec.d_a
        if config.hidden_layers is None:
            f_net = Mlp.identity(d_s + d_a, d_s)
            r_net = Mlp.identity(d_s + d_a, 1)
        else:
            f_net = Mlp.init(config.net_spec(env, d_s), init_rng)
            r_net = Mlp.init(config.net_spec(env, 1), init_rng)
        var_f, var_r = config.noise_vars(env)
        self.transition_prior = GaussianLinearPrior.isotropic(f_net.spec.feature_dim, config.prior_scale, var_f)
        self.reward_prior = GaussianLinearPrior.isotropic(r_net.spec.feature_dim, config.prior_scale, var_r)
        self.dataset = Dataset()
        self.heads = Heads(
            f_net,
            r_net,
            posterior_from_data(self.transition_prior, np.zeros((0, f_net.spec.feature_dim)), np.zeros((0, d_s))),
            posterior_from_data(self.reward_prior, np.zeros((0, r_net.spec.feature_dim)), np.zeros((0, 1))),
        )
        self.records: list[EpisodeRecord] = []

    @property
    def episode(self) -> int:
        return len(self.records)

    @property
    def done(self) -> bool:
        return self.episode >= self.config.episodes

    def step_episode(self) -> EpisodeRecord:
        k = self.episode
        if k == 0:
            record, transitions = random_episode(self.env, self.heads, self.env_rng, 0)
        else:
            record, transitions = run_episode(
                self.env, self.heads, self.config, self.sample_rng, self.plan_rng, self.env_rng, k
            )
        self.dataset = self.dataset.extend(transitions)
        retrain = k % self.config.retrain_every == 0
        self.update_models(retrain)
        self.records.append(record)
        return record

    def update_models(self, retrain: bool = True) -> None:
        """Retrain nets, refresh every cached feature, rebuild both posteriors."""
        data = self.dataset
        f_net, r_net = self.heads.transition_net, self.heads.reward_net
        if retrain and len(data):
            x = data.inputs()
            try:
                f_net = train(f_net, x, data.transition_targets(self.env.spec), self.train_rng)
                r_net = train(r_net, x, data.reward_targets(), self.train_rng)
            except TrainingDivergedError as exc:
                logger.warning("feature retraining failed (%s); keeping previous nets", exc)
                f_net, r_net = self.heads.transition_net, self.heads.reward_net
        data = refresh_features(f_net, data, "transition")
        data = refresh_features(r_net, data, "reward")
        self.dataset = data
        d_s = self.env.spec.d_s
        self.heads = Heads(
            f_net,
            r_net,
            posterior_from_data(
                self.transition_prior,
                data.cache("transition"),
                data.transition_targets(self.env.spec) if len(data) else np.zeros((0, d_s)),
            ),
            posterior_from_data(
                self.reward_prior,
                data.cache("reward"),
                data.reward_targets() if len(data) else np.zeros((0, 1)),
            ),
        )

    def run(self, callback=None) -> list[EpisodeRecord]:
        while not self.done:
            record = self.step_episode()
            if callback is not None:
                callback(self, record)
        return self.records


def run_training(env: Env, config: AgentConfig, callback=None) -> list[EpisodeRecord]:
    """Episode 0 acts randomly; every later episode follows MPC-PSRL."""
    return PsrlAgent(env, config).run(callback)
