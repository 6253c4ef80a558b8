"""Experiment configuration: one JSON file drives every command.

The file is validated strictly (unknown keys anywhere are rejected) and
resolved against defaults; the resolved form is snapshotted into every
run directory so an output is always paired with the exact configuration
that produced it. `desk_scale` swaps the full-scale sampling defaults
(200k landscape samples per cell, 1e7-sample oracle, 1M env steps) for
desk-size ones (4k, 2e5, 150k); explicit user values always win.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actuation import (
    ActionBounds,
    ActuationMode,
    ControlKind,
    ControllerGains,
    default_bounds,
)
from .envs import make_env
from .errors import ConfigError
from .gradsim import GradSimConfig
from .landscape import LandscapeConfig
from .ppo import PpoConfig, RunSetup

OUTPUT_ROOT_ENV = "ACTIONLAB_OUTPUT_ROOT"

DESK_DEFAULTS = {
    "ppo": {"total_env_steps": 150_000},
    "landscape": {"samples_per_cell": 4_000},
    "gradsim": {"oracle_samples": 200_000},
}
APPENDIX_C_DESK_BATCH = 10_000
APPENDIX_C_PAPER_BATCH = 100_000


def _reject_unknown(raw: dict, allowed: set[str], where: str) -> None:
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}; allowed: {sorted(allowed)}")


def _dataclass_from_dict(cls, raw: dict, where: str):
    known = set(cls.__dataclass_fields__)
    _reject_unknown(raw, known, where)
    return cls(**raw)


@dataclass(frozen=True)
class ActuationSpec:
    """One actuation configuration; gains/bounds broadcast per joint later."""

    kind: str
    label: str
    gains: dict = field(default_factory=dict)
    bounds: dict | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ActuationSpec":
        _reject_unknown(raw, {"kind", "label", "gains", "bounds"}, "actuation entry")
        kind = raw.get("kind")
        if kind not in [k.value for k in ControlKind]:
            raise ConfigError(
                f"unknown actuation kind '{kind}'; valid: {[k.value for k in ControlKind]}"
            )
        gains = raw.get("gains") or {}
        _reject_unknown(gains, {"kd_vc", "kp_pc", "kd_pc"}, "actuation gains")
        bounds = raw.get("bounds")
        if bounds is not None:
            _reject_unknown(bounds, {"low", "high"}, "actuation bounds")
        return cls(kind=kind, label=raw.get("label", kind), gains=gains, bounds=bounds)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "label": self.label, "gains": dict(self.gains), "bounds": self.bounds}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    environment: str
    env_overrides: dict
    actuation: tuple[ActuationSpec, ...]
    ppo: PpoConfig
    landscape: LandscapeConfig
    gradsim: GradSimConfig
    seeds: tuple[int, ...]
    output_root: str
    desk_scale: bool
    workers: int

    def resolved_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "environment": self.environment,
            "env_overrides": dict(self.env_overrides),
            "actuation": [spec.to_dict() for spec in self.actuation],
            "ppo": self.ppo.to_dict(),
            "landscape": {
                "resolution": self.landscape.resolution,
                "span": self.landscape.span,
                "samples_per_cell": self.landscape.samples_per_cell,
                "direction_seed": self.landscape.direction_seed,
                "normalization": self.landscape.normalization,
            },
            "gradsim": {
                "oracle_samples": self.gradsim.oracle_samples,
                "estimate_batch_size": self.gradsim.estimate_batch_size,
                "n_estimates": self.gradsim.n_estimates,
                "loss_terms": list(self.gradsim.loss_terms),
                "pairwise_mode": self.gradsim.pairwise_mode,
            },
            "seeds": list(self.seeds),
            "output_root": self.output_root,
            "desk_scale": self.desk_scale,
            "workers": self.workers,
        }


TOP_LEVEL_KEYS = {
    "experiment", "environment", "env_overrides", "actuation", "ppo",
    "landscape", "gradsim", "seeds", "output_root", "desk_scale", "workers",
}


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate and resolve a config dict (already parsed from JSON)."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(raw, TOP_LEVEL_KEYS, "config")

    desk = bool(raw.get("desk_scale", True))

    def section(name: str) -> dict:
        merged = dict(DESK_DEFAULTS.get(name, {})) if desk else {}
        user = raw.get(name, {})
        if not isinstance(user, dict):
            raise ConfigError(f"config section '{name}' must be an object")
        merged.update(user)
        return merged

    actuation_raw = raw.get("actuation", [{"kind": "torque"}])
    if isinstance(actuation_raw, dict):
        actuation_raw = [actuation_raw]
    specs = tuple(ActuationSpec.from_dict(entry) for entry in actuation_raw)
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate actuation labels: {labels}; set distinct 'label' fields")

    seeds = raw.get("seeds", list(range(10)))
    if isinstance(seeds, int):
        seeds = [seeds]

    output_root = os.environ.get(OUTPUT_ROOT_ENV) or raw.get("output_root", "runs")

    return ExperimentConfig(
        experiment=str(raw.get("experiment", "experiment")),
        environment=str(raw.get("environment", "pendulum")),
        env_overrides=dict(raw.get("env_overrides", {})),
        actuation=specs,
        ppo=PpoConfig.from_dict(section("ppo")),
        landscape=_dataclass_from_dict(LandscapeConfig, section("landscape"), "landscape"),
        gradsim=_gradsim_from_dict(section("gradsim")),
        seeds=tuple(int(s) for s in seeds),
        output_root=str(output_root),
        desk_scale=desk,
        workers=int(raw.get("workers", 1)),
    )


def _gradsim_from_dict(raw: dict) -> GradSimConfig:
    known = set(GradSimConfig.__dataclass_fields__)
    _reject_unknown(raw, known, "gradsim")
    raw = dict(raw)
    if "loss_terms" in raw:
        raw["loss_terms"] = tuple(raw["loss_terms"])
    return GradSimConfig(**raw)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return parse_config(raw)


def _broadcast(value, dof: int, what: str) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.size == 1:
        return (float(arr[0]),) * dof
    if arr.size != dof:
        raise ConfigError(f"{what} must be a scalar or have {dof} entries, got {arr.size}")
    return tuple(float(v) for v in arr)


def build_setup(cfg: ExperimentConfig, spec: ActuationSpec) -> RunSetup:
    """Instantiate the environment/actuation/network stack for one mode."""
    probe = make_env(cfg.environment, cfg.env_overrides)
    dof = probe.dof
    kind = ControlKind(spec.kind)
    gains = ControllerGains(
        **{
            name: _broadcast(value, dof, f"gains.{name}")
            for name, value in spec.gains.items()
            if value is not None
        }
    )
    mode = ActuationMode(kind, gains)
    if spec.bounds is not None:
        bounds = ActionBounds(
            _broadcast(spec.bounds["low"], dof, "bounds.low"),
            _broadcast(spec.bounds["high"], dof, "bounds.high"),
        )
    else:
        bounds = default_bounds(kind, probe)
    return RunSetup(cfg.environment, cfg.env_overrides, mode, bounds, cfg.ppo.hidden_layers)


def run_dir_for(cfg: ExperimentConfig, spec: ActuationSpec, seed: int) -> Path:
    return Path(cfg.output_root) / cfg.experiment / f"{spec.label}_seed{seed}"


def write_snapshot(cfg: ExperimentConfig, target_dir: Path, extra: dict | None = None) -> Path:
    """Write the fully resolved config (plus run-specific extras)."""
    payload = cfg.resolved_dict()
    if extra:
        payload["run"] = extra
    target_dir.mkdir(parents=True, exist_ok=True)
    path = target_dir / "config.snapshot"
    path.write_text(json.dumps(payload, sort_keys=True, indent=1), encoding="utf-8")
    return path
