"""Append-only transition log with cached feature matrices."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    episode_index: int
    step_index: int

    def __post_init__(self):
        if self.step_index < 1:
            raise ValueError("step_index counts from 1")
        for name in ("state", "action", "next_state"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} is not finite")
        if not np.isfinite(self.reward):
            raise ValueError("reward is not finite")


@dataclass(frozen=True)
class Dataset:
    """Transitions plus per-head feature caches aligned with the rows.

    A cache is either ``None`` (not computed) or has exactly one row per
    transition. ``extend`` drops stale caches; ``refresh_features`` in
    :mod:`mpcpsrl.featnet` recomputes them.
    """

    transitions: tuple[Transition, ...] = ()
    caches: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.transitions)

    def extend(self, new: list[Transition]) -> "Dataset":
        return Dataset(self.transitions + tuple(new), {})

    def with_cache(self, head: str, features: np.ndarray) -> "Dataset":
        features = np.asarray(features, dtype=float)
        if features.shape[0] != len(self):
            raise ValueError("feature cache must be row-aligned with transitions")
        return replace(self, caches={**self.caches, head: features})

    def cache(self, head: str) -> np.ndarray | None:
        return self.caches.get(head)

    @property
    def states(self) -> np.ndarray:
        return np.array([t.state for t in self.transitions], dtype=float)

    @property
    def actions(self) -> np.ndarray:
        return np.array([t.action for t in self.transitions], dtype=float)

    @property
    def next_states(self) -> np.ndarray:
        return np.array([t.next_state for t in self.transitions], dtype=float)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.transitions], dtype=float)

    def inputs(self) -> np.ndarray:
        if not self.transitions:
            return np.zeros((0, 0))
        return np.concatenate([self.states, self.actions], axis=1)

    def transition_targets(self, spec=None) -> np.ndarray:
        """State differences ``s' - s`` (angle-wrapped when ``spec`` is given)."""
        if not self.transitions:
            return np.zeros((0, 0))
        if spec is not None:
            return spec.state_difference(self.next_states, self.states)
        return self.next_states - self.states

    def reward_targets(self) -> np.ndarray:
        return self.rewards[:, None]
