"""Small numpy MLPs whose last hidden layer doubles as a feature map.

The reward and transition networks are fit by least squares with Adam.
After fitting, the activations of the last hidden ("penultimate") layer are
used as regression features for the Bayesian linear heads.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _swish(x):
    return x * _sigmoid(x)


def _swish_grad(x):
    s = _sigmoid(x)
    return s + x * s * (1.0 - s)


ACTIVATIONS = {
    "swish": (_swish, _swish_grad),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(float)),
    "linear": (lambda x: x, np.ones_like),
}


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; ``last_finite`` holds the last good network."""

    def __init__(self, message: str, last_finite: "Mlp"):
        super().__init__(message)
        self.last_finite = last_finite


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_layers: tuple[int, ...] = (200, 200)
    penultimate_width: int = 8
    activation: str = "swish"
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 5
    max_steps: int = 2000
    bias_feature: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        widths = (self.input_dim, *self.hidden_layers, self.penultimate_width, self.output_dim)
        if min(widths) < 1:
            raise ValueError(f"all layer widths must be >= 1, got {widths}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.max_steps < 0:
            raise ValueError("batch_size >= 1, epochs >= 0 and max_steps >= 0 required")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_layers, self.penultimate_width, self.output_dim)

    @property
    def feature_dim(self) -> int:
        return self.penultimate_width + int(self.bias_feature)

    @classmethod
    def default_width(cls, d_s: int, d_a: int) -> int:
        return max(8, d_s + d_a)


@dataclass
class Mlp:
    """Feed-forward network ``x -> hidden... -> penultimate -> linear head``.

    Inputs are standardized with stored statistics and targets are scaled
    the same way during fitting; ``predict`` returns raw target units.
    """

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_mean: np.ndarray
    input_std: np.ndarray
    output_mean: np.ndarray
    output_std: np.ndarray
    trainable: bool = True
    adam_state: dict = field(default_factory=dict, repr=False)

    @classmethod
    def init(cls, spec: MlpSpec, rng: np.random.Generator) -> "Mlp":
        sizes = spec.layer_sizes
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(
            spec,
            weights,
            biases,
            np.zeros(spec.input_dim),
            np.ones(spec.input_dim),
            np.zeros(spec.output_dim),
            np.ones(spec.output_dim),
        )

    @classmethod
    def identity(cls, input_dim: int, output_dim: int, bias_feature: bool = False) -> "Mlp":
        """Untrainable net whose features are the raw inputs."""
        spec = MlpSpec(input_dim, output_dim, (), input_dim, "linear", bias_feature=bias_feature)
        return cls(
            spec,
            [np.eye(input_dim), np.zeros((input_dim, output_dim))],
            [np.zeros(input_dim), np.zeros(output_dim)],
            np.zeros(input_dim),
            np.ones(input_dim),
            np.zeros(output_dim),
            np.ones(output_dim),
            trainable=False,
        )

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)

    @property
    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def _act(self):
        return ACTIVATIONS[self.spec.activation]

    def _forward(self, x: np.ndarray):
        act, _ = self._act()
        lead = x.shape[:-1]
        if len(lead) != 1:
            out, pre, post = self._forward(x.reshape(-1, x.shape[-1]))
            return out.reshape(lead + out.shape[-1:]), pre, [p.reshape(lead + p.shape[-1:]) for p in post]
        h = (x - self.input_mean) / self.input_std
        pre, post = [], [h]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w + b
            h = act(z)
            pre.append(z)
            post.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out, pre, post

    def embed(self, x) -> np.ndarray:
        """Penultimate-layer activations for one input or a batch of inputs."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.spec.input_dim:
            raise ValueError(f"input dim {x.shape[-1]} != {self.spec.input_dim}")
        _, _, post = self._forward(x)
        return post[-1]

    def features(self, x) -> np.ndarray:
        """Regression design: embedding plus an optional constant column."""
        phi = self.embed(x)
        if self.spec.bias_feature:
            phi = np.concatenate([phi, np.ones(phi.shape[:-1] + (1,))], axis=-1)
        return phi

    def predict(self, x) -> np.ndarray:
        out, _, _ = self._forward(np.asarray(x, dtype=float))
        return out * self.output_std + self.output_mean

    def lipschitz_bound(self) -> float:
        """Product of layer operator norms up to the penultimate layer."""
        slope = {"swish": 1.0998, "tanh": 1.0, "relu": 1.0, "linear": 1.0}[self.spec.activation]
        bound = 1.0 / float(np.min(self.input_std))
        for w in self.weights[:-1]:
            bound *= np.linalg.norm(w, 2) * slope
        return bound

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """Mean of ``0.5 * ||head(x) - y_scaled||^2`` and its parameter gradients."""
        _, dact = self._act()
        out, pre, post = self._forward(x)
        target = (y - self.output_mean) / self.output_std
        resid = out - target
        n = x.shape[0]
        loss = 0.5 * float(np.sum(resid * resid)) / n
        delta = resid / n
        grads_w, grads_b = [None] * len(self.weights), [None] * len(self.biases)
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = post[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * dact(pre[layer - 1])
        return loss, [g for pair in zip(grads_w, grads_b) for g in pair]

    def mse(self, x, y) -> float:
        resid = self.predict(x) - np.asarray(y, dtype=float)
        return float(np.mean(resid * resid))


def _set_normalization(net: Mlp, x: np.ndarray, y: np.ndarray) -> None:
    net.input_mean = x.mean(axis=0)
    net.input_std = np.maximum(x.std(axis=0), 1e-6)
    net.output_mean = y.mean(axis=0)
    net.output_std = np.maximum(y.std(axis=0), 1e-6)


def train(
    net: Mlp,
    inputs,
    targets,
    rng: np.random.Generator,
    epochs: int | None = None,
    return_history: bool = False,
):
    """Fit ``net`` with minibatch Adam, warm-starting from its current weights.

    Returns a new network (the argument is not modified). Training stops after
    ``epochs`` passes or ``spec.max_steps`` gradient steps, whichever is first.
    With ``return_history`` the per-epoch training MSE is returned as well.

    Raises:
        TrainingDivergedError: the loss became non-finite.
    """
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    spec = net.spec
    net = net.copy()
    history: list[float] = []
    if x.shape[0] == 0 or not net.trainable:
        return (net, history) if return_history else net
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and targets must have the same number of rows")
    _set_normalization(net, x, y)

    state = net.adam_state
    if not state:
        state.update(t=0, m=[np.zeros_like(p) for p in net.parameters], v=[np.zeros_like(p) for p in net.parameters])
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    n = x.shape[0]
    batch = min(spec.batch_size, n)
    steps = 0
    n_epochs = spec.epochs if epochs is None else epochs
    for _ in range(n_epochs):
        last_good = net.copy()
        order = rng.permutation(n)
        for start in range(0, n - batch + 1, batch):
            idx = order[start : start + batch]
            loss, grads = net.loss_and_grads(x[idx], y[idx])
            if not np.isfinite(loss):
                logger.error("non-finite loss after %d steps", steps)
                raise TrainingDivergedError("training loss became non-finite", last_good)
            state["t"] += 1
            t = state["t"]
            for p, g, m, v in zip(net.parameters, grads, state["m"], state["v"]):
                m *= beta1
                m += (1 - beta1) * g
                v *= beta2
                v += (1 - beta2) * g * g
                p -= spec.learning_rate * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
            steps += 1
            if steps >= spec.max_steps:
                break
        history.append(net.mse(x, y))
        if not np.isfinite(history[-1]):
            raise TrainingDivergedError("training loss became non-finite", last_good)
        if steps >= spec.max_steps:
            break
    return (net, history) if return_history else net


def embed(net: Mlp, state_action) -> np.ndarray:
    return net.embed(state_action)


def gradient_check(net: Mlp, inputs, targets, step: float = 1e-5) -> float:
    """Worst relative error between backprop and central finite differences."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(x.shape[0], -1)
    probe = net.copy()
    _, analytic = probe.loss_and_grads(x, y)
    worst = 0.0
    for param, grad in zip(probe.parameters, analytic):
        flat = param.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up, _ = probe.loss_and_grads(x, y)
            flat[i] = orig - step
            down, _ = probe.loss_and_grads(x, y)
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            a = grad.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst


def refresh_features(net: Mlp, dataset, head: str):
    """Recompute the ``head`` feature cache of every row with ``net``.

    Any posterior built on the old cache is stale afterwards and must be
    rebuilt from scratch on the refreshed features.
    """
    if len(dataset) == 0:
        return dataset.with_cache(head, np.zeros((0, net.spec.feature_dim)))
    return dataset.with_cache(head, net.features(dataset.inputs()))
