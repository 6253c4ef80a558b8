"""Interchangeable action representations on top of the torque interface.

The policy always emits normalized actions in [-1, 1]; each mode rescales
them into its native units and converts the result into joint torques (or
a direct state override for ideal position control). Controllers run at
the policy frequency - exactly one controller evaluation per policy step,
no inner loop - and are memoryless pure functions of (action, state,
gains, bounds).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .envs import Env, JointState, wrap_angle
from .errors import ConfigError
from . import rng


class ControlKind(str, Enum):
    TORQUE = "torque"
    VELOCITY = "velocity"
    POSITION = "position"
    IDEAL_POSITION = "ideal_position"


@dataclass(frozen=True)
class ControllerGains:
    """Per-joint controller gains; only the fields the mode uses are set."""

    kd_vc: tuple[float, ...] | None = None
    kp_pc: tuple[float, ...] | None = None
    kd_pc: tuple[float, ...] | None = None

    def __post_init__(self):
        # Primary gains must be positive; pure damping may be zero.
        for name, minimum in (("kd_vc", "positive"), ("kp_pc", "positive"), ("kd_pc", "non-negative")):
            value = getattr(self, name)
            if value is None:
                continue
            ok = (lambda g: g > 0.0) if minimum == "positive" else (lambda g: g >= 0.0)
            if any(not (ok(g) and math.isfinite(g)) for g in value):
                raise ConfigError(f"{name} gains must be {minimum} and finite")

    def magnitude(self) -> float:
        parts = [g for v in (self.kd_vc, self.kp_pc, self.kd_pc) if v is not None for g in v]
        return float(np.linalg.norm(parts)) if parts else 0.0


@dataclass(frozen=True)
class ActuationMode:
    kind: ControlKind
    gains: ControllerGains = ControllerGains()

    def __post_init__(self):
        if self.kind == ControlKind.VELOCITY and self.gains.kd_vc is None:
            raise ConfigError("velocity control requires kd_vc gains")
        if self.kind == ControlKind.POSITION and (
            self.gains.kp_pc is None or self.gains.kd_pc is None
        ):
            raise ConfigError("position control requires kp_pc and kd_pc gains")


@dataclass(frozen=True)
class ActionBounds:
    """Per-joint action range in the mode's native units."""

    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self):
        if len(self.low) != len(self.high):
            raise ConfigError("bounds low/high must have equal length")
        if any(lo >= hi for lo, hi in zip(self.low, self.high)):
            raise ConfigError("bounds must satisfy low < high elementwise")

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.low), np.asarray(self.high)


def affine_rescale(a: np.ndarray, bounds: ActionBounds) -> np.ndarray:
    """Map [-1, 1] actions onto [low, high]; inputs are clipped first."""
    low, high = bounds.arrays()
    a = np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0)
    return low + (a + 1.0) * 0.5 * (high - low)


def apply_torque(a: np.ndarray, bounds: ActionBounds) -> np.ndarray:
    """Default mode: the rescaled action is the torque."""
    return affine_rescale(a, bounds)


def apply_velocity_control(
    a: np.ndarray,
    state: JointState,
    gains: ControllerGains,
    bounds: ActionBounds,
    torque_limit: tuple[float, ...],
) -> np.ndarray:
    """tau = kd_vc * (v_target - qdot), clamped to the torque limit."""
    if gains.kd_vc is None:
        raise ConfigError("velocity control requires kd_vc gains")
    v_target = affine_rescale(a, bounds)
    tau = np.asarray(gains.kd_vc) * (v_target - state.qdot)
    limit = np.asarray(torque_limit)
    return np.clip(tau, -limit, limit)


def apply_position_control(
    a: np.ndarray,
    state: JointState,
    gains: ControllerGains,
    bounds: ActionBounds,
    torque_limit: tuple[float, ...],
) -> np.ndarray:
    """PD law with zero target velocity: tau = kp (p - q) - kd qdot.

    The position error is angle-wrapped because all joints are revolute.
    """
    if gains.kp_pc is None or gains.kd_pc is None:
        raise ConfigError("position control requires kp_pc and kd_pc gains")
    p_target = affine_rescale(a, bounds)
    err = wrap_angle(p_target - state.q)
    tau = np.asarray(gains.kp_pc) * err - np.asarray(gains.kd_pc) * state.qdot
    limit = np.asarray(torque_limit)
    return np.clip(tau, -limit, limit)


def apply_ideal_position(a: np.ndarray, bounds: ActionBounds) -> np.ndarray:
    """Joint angles the simulation state is set to (velocities zeroed)."""
    return affine_rescale(a, bounds)


def default_bounds(kind: ControlKind, env: Env) -> ActionBounds:
    """Mode-native default action ranges for an environment.

    Torque: the torque limit. Position (and ideal position): joint limits,
    or [-pi, pi] for unlimited revolute joints. Velocity: the heuristic
    +-2 * joint_range / (horizon * dt), i.e. fast enough to sweep the
    range twice per episode.
    """
    spec = env.spec
    if kind == ControlKind.TORQUE:
        lim = spec.torque_limit
        return ActionBounds(tuple(-t for t in lim), tuple(lim))
    if spec.joint_limits is not None:
        ranges = [(lo, hi) for lo, hi in spec.joint_limits]
    else:
        ranges = [(-math.pi, math.pi)] * spec.dof
    if kind in (ControlKind.POSITION, ControlKind.IDEAL_POSITION):
        return ActionBounds(tuple(lo for lo, _ in ranges), tuple(hi for _, hi in ranges))
    if kind == ControlKind.VELOCITY:
        span = [2.0 * (hi - lo) / (spec.horizon * spec.dt) for lo, hi in ranges]
        return ActionBounds(tuple(-s for s in span), tuple(span))
    raise ConfigError(f"unknown control kind {kind}")


def compute_torque(
    mode: ActuationMode,
    a: np.ndarray,
    state: JointState,
    bounds: ActionBounds,
    torque_limit: tuple[float, ...],
) -> np.ndarray:
    """Dispatch the torque-producing modes (not ideal position)."""
    if mode.kind == ControlKind.TORQUE:
        limit = np.asarray(torque_limit)
        return np.clip(apply_torque(a, bounds), -limit, limit)
    if mode.kind == ControlKind.VELOCITY:
        return apply_velocity_control(a, state, mode.gains, bounds, torque_limit)
    if mode.kind == ControlKind.POSITION:
        return apply_position_control(a, state, mode.gains, bounds, torque_limit)
    raise ConfigError(f"{mode.kind.value} does not produce torques")


class Actuator:
    """Binds a mode and bounds to an environment's torque interface."""

    def __init__(self, mode: ActuationMode, bounds: ActionBounds, env: Env):
        if len(bounds.low) != env.dof:
            raise ConfigError("action bounds must have one entry per joint")
        if mode.kind == ControlKind.IDEAL_POSITION and not env.supports_state_override:
            raise ConfigError(
                f"environment '{env.name}' does not support ideal position control"
            )
        self.mode = mode
        self.bounds = bounds
        self.torque_limit = env.spec.torque_limit

    def step_env(self, env: Env, a: np.ndarray):
        """Apply a normalized action; returns (state, obs, reward, done, command)."""
        if self.mode.kind == ControlKind.IDEAL_POSITION:
            cmd = apply_ideal_position(a, self.bounds)
            return (*env.override_step(cmd), cmd)
        cmd = compute_torque(self.mode, a, env.state, self.bounds, self.torque_limit)
        return (*env.step(cmd), cmd)


def actuation_to_jsonable(mode: ActuationMode, bounds: ActionBounds) -> dict:
    gains = {
        name: list(value) if value is not None else None
        for name, value in (
            ("kd_vc", mode.gains.kd_vc),
            ("kp_pc", mode.gains.kp_pc),
            ("kd_pc", mode.gains.kd_pc),
        )
    }
    return {
        "kind": mode.kind.value,
        "gains": gains,
        "bounds": {"low": list(bounds.low), "high": list(bounds.high)},
    }


def actuation_from_jsonable(raw: dict) -> tuple[ActuationMode, ActionBounds]:
    try:
        kind = ControlKind(raw["kind"])
    except ValueError:
        raise ConfigError(
            f"unknown actuation kind '{raw.get('kind')}'; valid: {[k.value for k in ControlKind]}"
        ) from None
    gains_raw = raw.get("gains") or {}
    gains = ControllerGains(
        **{
            name: tuple(float(g) for g in gains_raw[name])
            for name in ("kd_vc", "kp_pc", "kd_pc")
            if gains_raw.get(name) is not None
        }
    )
    bounds_raw = raw["bounds"]
    bounds = ActionBounds(
        tuple(float(v) for v in bounds_raw["low"]),
        tuple(float(v) for v in bounds_raw["high"]),
    )
    return ActuationMode(kind, gains), bounds


def default_gain_grid(kind: ControlKind, dof: int) -> list[ControllerGains]:
    """Coarse log sweep, 7 values per gain over [1e-2, 1e2]."""
    sweep = np.logspace(-2.0, 2.0, 7)
    if kind == ControlKind.VELOCITY:
        return [ControllerGains(kd_vc=(float(g),) * dof) for g in sweep]
    if kind == ControlKind.POSITION:
        return [
            ControllerGains(kp_pc=(float(kp),) * dof, kd_pc=(float(kd),) * dof)
            for kp, kd in itertools.product(sweep, sweep)
        ]
    raise ConfigError(f"{kind.value} has no gains to tune")


def evaluate_gain_candidate(
    env_factory,
    kind: ControlKind,
    gains: ControllerGains,
    horizon: int,
    seed: int,
    episodes: int = 5,
    hold_steps: int = 25,
) -> float:
    """Mean absolute tracking error of one candidate over random targets.

    Every candidate sees the same seeded target sequences, so comparisons
    are paired. Targets are piecewise constant (redrawn every hold_steps)
    in normalized units; the error is measured in native units against
    the rescaled target (velocity error for VC, wrapped position error
    for PC).
    """
    mode = ActuationMode(kind, gains)
    errors = []
    for ep in range(episodes):
        env = env_factory()
        bounds = default_bounds(kind, env)
        actuator = Actuator(mode, bounds, env)
        env.reset(rng.draw_seed(rng.stream("tune-reset", seed, ep)))
        target_gen = rng.stream("tune-targets", seed, ep)
        a = target_gen.uniform(-1.0, 1.0, size=env.dof)
        for t in range(horizon):
            if t > 0 and t % hold_steps == 0:
                a = target_gen.uniform(-1.0, 1.0, size=env.dof)
            native = affine_rescale(a, bounds)
            state = env.state
            if kind == ControlKind.VELOCITY:
                errors.append(np.abs(native - state.qdot).mean())
            else:
                errors.append(np.abs(wrap_angle(native - state.q)).mean())
            actuator.step_env(env, a)
    return float(np.mean(errors))


def tune_gains(
    env_factory,
    kind: ControlKind,
    candidate_grid: list[ControllerGains],
    horizon: int,
    seed: int,
    episodes: int = 5,
) -> tuple[ControllerGains, list[tuple[ControllerGains, float]]]:
    """Pick the candidate minimizing mean tracking error.

    Candidates are evaluated in order of ascending gain magnitude so that
    exact ties resolve to the smallest gains. Returns the winner and the
    full (gains, error) table in evaluation order.
    """
    if not candidate_grid:
        raise ConfigError("gain candidate grid is empty")
    ordered = sorted(candidate_grid, key=lambda g: g.magnitude())
    table = [
        (g, evaluate_gain_candidate(env_factory, kind, g, horizon, seed, episodes))
        for g in ordered
    ]
    best = min(table, key=lambda pair: pair[1])
    return best[0], table
