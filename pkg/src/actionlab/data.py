"""Shared data containers passed between training, persistence, analysis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .policy import FlatParams


@dataclass
class Trajectory:
    """Ordered transitions from one rollout.

    `observations` holds the exact network inputs (post observation
    normalization when that is enabled), `actions` the raw unclipped
    policy samples, and `commands` whatever was applied to the simulation
    (torques, or commanded angles under ideal position control). Fixed
    horizon means `dones` marks truncation boundaries only; every segment
    bootstraps from the value of its final next-state.
    """

    observations: np.ndarray
    actions: np.ndarray
    commands: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    segment_starts: list[int]
    bootstrap_values: list[float]
    episode_returns: list[float] = field(default_factory=list)
    episode_discounted: list[float] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.rewards)


@dataclass
class Batch:
    """Aligned arrays the PPO loss consumes."""

    observations: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    old_values: np.ndarray

    @property
    def n(self) -> int:
        return len(self.old_log_probs)

    def select(self, idx: np.ndarray) -> "Batch":
        return Batch(
            self.observations[idx],
            self.actions[idx],
            self.old_log_probs[idx],
            self.advantages[idx],
            self.returns[idx],
            self.old_values[idx],
        )

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "observations": self.observations,
            "actions": self.actions,
            "old_log_probs": self.old_log_probs,
            "advantages": self.advantages,
            "returns": self.returns,
            "old_values": self.old_values,
        }


@dataclass
class RunningStats:
    """Streaming mean/variance (Welford with batched merges).

    Used for optional observation normalization; with count == 0 the
    transform is the identity.
    """

    count: float
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def create(cls, dim: int) -> "RunningStats":
        return cls(0.0, np.zeros(dim), np.zeros(dim))

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(batch)
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        if self.count == 0.0:
            self.count, self.mean, self.m2 = float(n), b_mean, b_m2
            return
        delta = b_mean - self.mean
        total = self.count + n
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + b_m2 + delta**2 * (self.count * n / total)
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        if self.count == 0.0:
            return np.asarray(x, dtype=np.float64)
        var = self.m2 / self.count
        return (np.asarray(x, dtype=np.float64) - self.mean) / np.sqrt(var + 1e-8)

    def to_jsonable(self) -> dict:
        return {"count": self.count, "mean": self.mean.tolist(), "m2": self.m2.tolist()}

    @classmethod
    def from_jsonable(cls, raw: dict) -> "RunningStats":
        return cls(float(raw["count"]), np.array(raw["mean"]), np.array(raw["m2"]))


@dataclass
class Checkpoint:
    """Complete resumable training snapshot.

    Includes everything a bit-exact resume or a post-hoc analysis needs:
    parameters, optimizer moments, live RNG states, the configs that
    built the run, the frozen final rollout buffer (the data the loss
    surface is evaluated on), and the loss values measured on it at save
    time.
    """

    checkpoint_id: str
    run_seed: int
    env_name: str
    env_overrides: dict
    actuation: dict
    ppo: dict
    params: FlatParams
    adam_m: np.ndarray
    adam_v: np.ndarray
    adam_t: int
    rng_states: dict[str, dict]
    obs_norm: dict | None
    env_step: int
    gradient_step: int
    iteration: int
    frozen: Batch
    stored_losses: dict[str, float]

    def require_same_layout(self, other: "Checkpoint") -> None:
        if self.params.layout != other.params.layout:
            raise ConfigError("checkpoints have different parameter layouts")
