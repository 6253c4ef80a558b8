"""2-D optimization-surface evaluation around a checkpoint.

The surface is sampled on an odd-resolution grid spanned by two random
directions in parameter space, so the center cell is the checkpoint
itself. Each cell evaluates two objectives for the perturbed parameters:

* mean discounted return, estimated from fresh on-policy rollouts of the
  perturbed policy (its own data distribution);
* the PPO loss terms, evaluated on the frozen rollout buffer stored in
  the checkpoint - the loss is only defined relative to a data
  distribution and old-policy log-probs, and freezing both makes the
  surface well-defined, reproducible, and exactly equal to the stored
  training loss at the center.

Per-cell random streams derive from (direction_seed, row, col), so the
grid never depends on evaluation order or worker count.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import rng
from .data import Checkpoint
from .errors import ConfigError
from .policy import FlatParams
from .ppo import LossTerms, PpoConfig, RunSetup, ppo_loss, rollout_returns
from .data import RunningStats
from .report import read_csv, write_csv

NORMALIZATIONS = ("filter_wise", "unit_norm")


@dataclass(frozen=True)
class LandscapeConfig:
    """Grid geometry and per-cell sampling effort.

    The grid covers [-span, span] in both directions; resolution must be
    odd so the center cell sits exactly at the checkpoint.
    """

    resolution: int = 31
    span: float = 1.0
    samples_per_cell: int = 200_000
    direction_seed: int = 0
    normalization: str = "filter_wise"

    def __post_init__(self):
        if self.resolution < 1 or self.resolution % 2 == 0:
            raise ConfigError(f"resolution must be odd and >= 1, got {self.resolution}")
        if self.samples_per_cell < 1:
            raise ConfigError("samples_per_cell must be >= 1")
        if not (self.span > 0.0 and math.isfinite(self.span)):
            raise ConfigError(f"span must be positive, got {self.span}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(
                f"unknown normalization '{self.normalization}'; valid: {NORMALIZATIONS}"
            )

    def offsets(self) -> np.ndarray:
        if self.resolution == 1:
            return np.zeros(1)
        return np.linspace(-self.span, self.span, self.resolution)


def make_directions(
    params: FlatParams, seed: int, normalization: str
) -> tuple[FlatParams, FlatParams]:
    """Two random Gaussian directions, orthogonalized and normalized.

    filter_wise rescales every parameter block of each direction to the
    norm of the corresponding block of `params` (zero-norm blocks fall
    back to unit norm). d2 is then orthogonalized against d1 globally and
    rescaled back to its pre-orthogonalization length, so d1's block
    norms are exact and global orthogonality holds; d2's block norms pick
    up only the O(1/sqrt(n)) orthogonalization correction. unit_norm
    orthogonalizes and normalizes the whole vectors instead.
    """
    if len(params) == 0:
        raise ConfigError("cannot make directions for empty parameters")
    if normalization not in NORMALIZATIONS:
        raise ConfigError(f"unknown normalization '{normalization}'")
    gen = rng.stream("landscape-directions", seed)
    raw1 = gen.standard_normal(len(params))
    raw2 = gen.standard_normal(len(params))

    if normalization == "unit_norm":
        d1 = raw1 / np.linalg.norm(raw1)
        raw2 = raw2 - (raw2 @ d1) * d1
        d2 = raw2 / np.linalg.norm(raw2)
        return FlatParams(d1, params.layout), FlatParams(d2, params.layout)

    d1 = FlatParams(raw1, params.layout)
    d2 = FlatParams(raw2, params.layout)
    for block in params.layout:
        target = float(np.linalg.norm(params.view(block.name)))
        if target == 0.0:
            target = 1.0
        for d in (d1, d2):
            b = d.view(block.name)
            b *= target / max(np.linalg.norm(b), 1e-300)
    norm_before = float(np.linalg.norm(d2.data))
    d2.data -= (d2.data @ d1.data) / (d1.data @ d1.data) * d1.data
    d2.data *= norm_before / max(float(np.linalg.norm(d2.data)), 1e-300)
    return d1, d2


class CellResult(NamedTuple):
    reward: float
    reward_se: float
    policy_loss: float
    value_loss: float
    total_loss: float
    n_samples: int
    valid: bool


@dataclass
class LandscapeGrid:
    """Per-cell objective values plus the directions that define the slice."""

    config: LandscapeConfig
    checkpoint_id: str
    d1: FlatParams
    d2: FlatParams
    reward: np.ndarray
    reward_se: np.ndarray
    policy_loss: np.ndarray
    value_loss: np.ndarray
    total_loss: np.ndarray
    n_samples: np.ndarray
    valid: np.ndarray

    @property
    def resolution(self) -> int:
        return self.config.resolution

    @property
    def center(self) -> tuple[int, int]:
        mid = self.config.resolution // 2
        return (mid, mid)

    def summary(self) -> dict[str, float]:
        """Surface statistics used for direction-seed reproducibility."""
        vals = self.reward[self.valid]
        mid = self.config.resolution // 2
        center = float(self.reward[mid, mid])
        near = np.abs(vals - center) <= 0.05 * abs(center)
        return {
            "min": float(vals.min()),
            "max": float(vals.max()),
            "near_center_fraction": float(near.mean()),
        }


RewardObjective = Callable[[FlatParams, tuple, int], tuple[float, float, int]]
LossObjective = Callable[[FlatParams], LossTerms]


def default_objectives(ckpt: Checkpoint) -> tuple[RewardObjective, LossObjective]:
    """Rollout-based reward and frozen-buffer loss objectives for a checkpoint."""
    if ckpt.frozen.n == 0:
        raise ConfigError("checkpoint has no frozen rollout buffer; cannot evaluate the loss surface")
    setup = RunSetup.from_checkpoint(ckpt)
    cfg = PpoConfig.from_dict(ckpt.ppo)
    obs_norm = RunningStats.from_jsonable(ckpt.obs_norm) if ckpt.obs_norm is not None else None
    horizon = setup.horizon

    def reward_objective(params: FlatParams, seed_keys: tuple, samples: int):
        n_episodes = max(1, math.ceil(samples / horizon))
        _, disc = rollout_returns(setup, params, obs_norm, n_episodes, seed_keys, deterministic=False)
        se = float(disc.std(ddof=1) / math.sqrt(n_episodes)) if n_episodes > 1 else 0.0
        return float(disc.mean()), se, n_episodes * horizon

    def loss_objective(params: FlatParams) -> LossTerms:
        return ppo_loss(setup.model, params, ckpt.frozen, cfg.clip_eps, cfg.value_coef, cfg.entropy_coef)

    return reward_objective, loss_objective


def evaluate_cell(
    params: FlatParams,
    d1: FlatParams,
    d2: FlatParams,
    alpha: float,
    beta: float,
    samples: int,
    stream_keys: tuple,
    reward_objective: RewardObjective,
    loss_objective: LossObjective,
) -> CellResult:
    """Evaluate both objectives at theta + alpha d1 + beta d2."""
    if not (params.same_layout(d1) and params.same_layout(d2)):
        raise ConfigError("direction layout does not match parameter layout")
    shifted = FlatParams(params.data + alpha * d1.data + beta * d2.data, params.layout)
    reward, se, n_used = reward_objective(shifted, stream_keys, samples)
    terms = loss_objective(shifted)
    values = (reward, terms.policy, terms.value, terms.total)
    valid = all(math.isfinite(v) for v in values)
    return CellResult(reward, se, terms.policy, terms.value, terms.total, n_used, valid)


def compute_grid(
    ckpt: Checkpoint,
    cfg: LandscapeConfig,
    workers: int = 1,
    reward_objective: RewardObjective | None = None,
    loss_objective: LossObjective | None = None,
) -> LandscapeGrid:
    """Evaluate all resolution^2 cells; independent of evaluation order."""
    if reward_objective is None or loss_objective is None:
        default_r, default_l = default_objectives(ckpt)
        reward_objective = reward_objective or default_r
        loss_objective = loss_objective or default_l

    d1, d2 = make_directions(ckpt.params, cfg.direction_seed, cfg.normalization)
    offsets = cfg.offsets()
    res = cfg.resolution

    def cell_task(k: int) -> CellResult:
        i, j = divmod(k, res)
        return evaluate_cell(
            ckpt.params,
            d1,
            d2,
            float(offsets[j]),
            float(offsets[i]),
            cfg.samples_per_cell,
            ("landscape-cell", cfg.direction_seed, i, j),
            reward_objective,
            loss_objective,
        )

    results = rng.run_indexed(res * res, cell_task, workers)

    def collect(attr: str, dtype=float) -> np.ndarray:
        return np.array([getattr(r, attr) for r in results], dtype=dtype).reshape(res, res)

    return LandscapeGrid(
        config=cfg,
        checkpoint_id=ckpt.checkpoint_id,
        d1=d1,
        d2=d2,
        reward=collect("reward"),
        reward_se=collect("reward_se"),
        policy_loss=collect("policy_loss"),
        value_loss=collect("value_loss"),
        total_loss=collect("total_loss"),
        n_samples=collect("n_samples", int),
        valid=collect("valid", bool),
    )


GRID_COLUMNS = [
    "row", "col", "alpha", "beta", "reward",
    "policy_loss", "value_loss", "total_loss", "n_samples", "valid",
]


def save_grid(grid: LandscapeGrid, out_dir: Path) -> tuple[Path, Path]:
    """Persist grid.csv plus a meta.json sidecar with directions and config."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    offsets = grid.config.offsets()
    rows = []
    for i in range(grid.resolution):
        for j in range(grid.resolution):
            rows.append(
                [
                    i, j, float(offsets[j]), float(offsets[i]),
                    float(grid.reward[i, j]), float(grid.policy_loss[i, j]),
                    float(grid.value_loss[i, j]), float(grid.total_loss[i, j]),
                    int(grid.n_samples[i, j]), bool(grid.valid[i, j]),
                ]
            )
    csv_path = write_csv(out_dir / "grid.csv", GRID_COLUMNS, rows)
    meta = {
        "checkpoint_id": grid.checkpoint_id,
        "config": asdict(grid.config),
        "d1": grid.d1.data.tolist(),
        "d2": grid.d2.data.tolist(),
        "reward_se": grid.reward_se.ravel().tolist(),
    }
    meta_path = out_dir / "meta.json"
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=1), encoding="utf-8")
    return csv_path, meta_path


def load_grid_values(csv_path: Path) -> dict[str, np.ndarray]:
    """Reload the per-cell arrays of a saved grid (column name -> 2-D array)."""
    header, rows = read_csv(csv_path)
    r = np.array([int(row[header.index("row")]) for row in rows])
    res = int(r.max()) + 1
    out: dict[str, np.ndarray] = {}
    for name in GRID_COLUMNS[2:]:
        idx = header.index(name)
        vals = np.array([float(row[idx]) for row in rows])
        out[name] = vals.reshape(res, res)
    return out
