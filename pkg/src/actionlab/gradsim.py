"""Gradient-estimate-quality analysis across training checkpoints.

For a checkpoint, the "true" gradient of each loss term is approximated
with a large fresh on-policy sample, and many small training-size batches
produce gradient estimates exactly the way the trainer builds them
(fresh collection, segment-wise GAE, per-batch advantage normalization,
ratio identically 1 at the checkpoint parameters, i.e. first-epoch
semantics). The quality metric is the average cosine similarity between
the estimates and the oracle, per term; an all-pairs-among-estimates
variant is available for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import rng
from .data import Batch, Checkpoint, RunningStats
from .errors import ConfigError
from .policy import FlatParams
from .ppo import (
    PpoConfig,
    RunSetup,
    TermGrads,
    batched_loss_and_grads,
    collect_rollout,
    process_rollout,
)

TERMS = ("total", "policy", "value")


@dataclass(frozen=True)
class GradSimConfig:
    """Sampling effort for the oracle and the training-size estimates."""

    oracle_samples: int = 10_000_000
    estimate_batch_size: int = 64
    n_estimates: int = 200
    loss_terms: tuple[str, ...] = TERMS
    pairwise_mode: bool = False

    def __post_init__(self):
        if self.oracle_samples < self.estimate_batch_size:
            raise ConfigError("oracle_samples must be at least the estimate batch size")
        if self.n_estimates < 2:
            raise ConfigError("n_estimates must be >= 2")
        unknown = set(self.loss_terms) - set(TERMS)
        if unknown:
            raise ConfigError(f"unknown loss terms {sorted(unknown)}; valid: {TERMS}")
        object.__setattr__(self, "loss_terms", tuple(self.loss_terms))


@dataclass
class GradQualityRecord:
    checkpoint_id: str
    env_step: int
    term: str
    batch_size: int
    mean_cos: float
    std_cos: float
    n: int
    oracle_norm: float

    def row(self) -> list:
        return [
            self.checkpoint_id, self.env_step, self.term, self.batch_size,
            self.mean_cos, self.std_cos, self.n, self.oracle_norm,
        ]


RECORD_COLUMNS = ["checkpoint", "env_step", "term", "batch_size", "mean_cos", "std_cos", "n", "oracle_norm"]


def cosine_similarity(g1: FlatParams, g2: FlatParams) -> float:
    """<g1,g2> / (|g1| |g2|); 0.0 when either norm is below 1e-12."""
    if not g1.same_layout(g2):
        raise ConfigError("gradients have different parameter layouts")
    n1 = float(np.linalg.norm(g1.data))
    n2 = float(np.linalg.norm(g2.data))
    if n1 < 1e-12 or n2 < 1e-12:
        return 0.0
    return float(g1.data @ g2.data) / (n1 * n2)


@dataclass
class _CheckpointContext:
    setup: RunSetup
    cfg: PpoConfig
    params: FlatParams
    obs_norm: RunningStats | None


def _context(ckpt: Checkpoint) -> _CheckpointContext:
    return _CheckpointContext(
        setup=RunSetup.from_checkpoint(ckpt),
        cfg=PpoConfig.from_dict(ckpt.ppo),
        params=ckpt.params,
        obs_norm=RunningStats.from_jsonable(ckpt.obs_norm) if ckpt.obs_norm is not None else None,
    )


def _fresh_batch(ctx: _CheckpointContext, n_transitions: int, seed_keys: tuple) -> Batch:
    """Collect a batch with the checkpoint policy, trainer-identically."""
    traj = collect_rollout(
        ctx.setup,
        ctx.params,
        n_transitions,
        rng.stream(*seed_keys, "episodes"),
        rng.stream(*seed_keys, "actions"),
        ctx.obs_norm,
    )
    return process_rollout(traj, ctx.cfg.gamma, ctx.cfg.gae_lambda, ctx.cfg.advantage_std_floor)


def _grads_on_batch(ctx: _CheckpointContext, batch: Batch) -> TermGrads:
    _, grads = batched_loss_and_grads(
        ctx.setup.model, ctx.params, batch,
        ctx.cfg.clip_eps, ctx.cfg.value_coef, ctx.cfg.entropy_coef,
    )
    return grads


def oracle_gradient(ckpt: Checkpoint, term: str, oracle_samples: int, seed: int) -> FlatParams:
    """Large-sample gradient of one loss term at the checkpoint parameters."""
    grads = oracle_gradients(ckpt, oracle_samples, seed)
    return getattr(grads, term)


def oracle_gradients(ckpt: Checkpoint, oracle_samples: int, seed: int) -> TermGrads:
    """All term gradients from one shared oracle collection.

    The oracle derives its stream exactly like estimate index 0 of its
    own batch-size class, so an estimate with batch_size == oracle_samples
    and the same seed reproduces the oracle bit-for-bit.
    """
    ctx = _context(ckpt)
    batch = _fresh_batch(ctx, oracle_samples, _estimate_keys(ckpt, oracle_samples, seed, 0))
    return _grads_on_batch(ctx, batch)


def _estimate_keys(ckpt: Checkpoint, batch_size: int, seed: int, index: int) -> tuple:
    return ("gradsim-est", seed, ckpt.env_step, batch_size, index)


def estimate_gradients(
    ckpt: Checkpoint,
    term: str,
    batch_size: int,
    n_estimates: int,
    seed: int,
    workers: int = 1,
) -> list[FlatParams]:
    """Independent training-size gradient estimates of one term."""
    bundles = estimate_gradient_bundles(ckpt, batch_size, n_estimates, seed, workers)
    return [getattr(b, term) for b in bundles]


def estimate_gradient_bundles(
    ckpt: Checkpoint,
    batch_size: int,
    n_estimates: int,
    seed: int,
    workers: int = 1,
) -> list[TermGrads]:
    ctx = _context(ckpt)

    def task(i: int) -> TermGrads:
        batch = _fresh_batch(ctx, batch_size, _estimate_keys(ckpt, batch_size, seed, i))
        return _grads_on_batch(ctx, batch)

    return rng.run_indexed(n_estimates, task, workers)


def analyze_checkpoint(
    ckpt: Checkpoint,
    cfg: GradSimConfig,
    seed: int,
    workers: int = 1,
) -> list[GradQualityRecord]:
    """Per-term cosine statistics for one checkpoint."""
    estimates = estimate_gradient_bundles(ckpt, cfg.estimate_batch_size, cfg.n_estimates, seed, workers)
    oracle = None if cfg.pairwise_mode else oracle_gradients(ckpt, cfg.oracle_samples, seed)

    records = []
    for term in cfg.loss_terms:
        term_estimates = [getattr(b, term) for b in estimates]
        if cfg.pairwise_mode:
            cosines = [
                cosine_similarity(term_estimates[i], term_estimates[j])
                for i in range(len(term_estimates))
                for j in range(i + 1, len(term_estimates))
            ]
            oracle_norm = math.nan
        else:
            ref = getattr(oracle, term)
            cosines = [cosine_similarity(g, ref) for g in term_estimates]
            oracle_norm = float(np.linalg.norm(ref.data))
        arr = np.asarray(cosines)
        records.append(
            GradQualityRecord(
                checkpoint_id=ckpt.checkpoint_id,
                env_step=ckpt.env_step,
                term=term,
                batch_size=cfg.estimate_batch_size,
                mean_cos=float(arr.mean()),
                std_cos=float(arr.std()),
                n=len(arr),
                oracle_norm=oracle_norm,
            )
        )
    return records


def analyze_run(
    checkpoints: Iterable[Checkpoint],
    cfg: GradSimConfig,
    seed: int = 0,
    workers: int = 1,
) -> list[GradQualityRecord]:
    """Cosine statistics for every checkpoint in a series, by env_step."""
    ordered = sorted(checkpoints, key=lambda c: c.env_step)
    if not ordered:
        raise ConfigError("checkpoint series is empty")
    records: list[GradQualityRecord] = []
    for ckpt in ordered:
        records.extend(analyze_checkpoint(ckpt, cfg, seed, workers))
    return records
