"""Closed-form continuous-control environments.

Desk-scale analogs of the usual torque-controlled benchmarks: a classic
frictionless pendulum and a planar two-link reacher with decoupled damped
joints. All environments expose joint positions and velocities so the
actuation layer can run feedback controllers on top, and every episode is
fully determined by (seed, action sequence).

Observation layouts:
  pendulum       (cos th, sin th, th_dot)                          dim 3
  reacher        (cos q, sin q, q_dot, target_xy, fingertip-target) dim 10
  joint_reacher  (q, q_target, q_dot, wrapped q_target - q)         dim 8
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NumericError
from . import rng

TWO_PI = 2.0 * math.pi


def wrap_angle(x):
    """Wrap angles to [-pi, pi). Idempotent: wrap(wrap(x)) == wrap(x)."""
    return (np.asarray(x) + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment's stepping contract."""

    dof: int
    dt: float
    torque_limit: tuple[float, ...]
    horizon: int
    gamma: float
    joint_limits: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.dof < 1:
            raise ConfigError(f"dof must be >= 1, got {self.dof}")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must be in (0, 1), got {self.gamma}")
        if len(self.torque_limit) != self.dof:
            raise ConfigError("torque_limit must have one entry per joint")
        if any(not (t > 0.0 and math.isfinite(t)) for t in self.torque_limit):
            raise ConfigError("torque limits must be positive and finite")
        if self.joint_limits is not None:
            if len(self.joint_limits) != self.dof:
                raise ConfigError("joint_limits must have one entry per joint")
            if any(lo >= hi for lo, hi in self.joint_limits):
                raise ConfigError("joint limits must satisfy lo < hi")


@dataclass
class JointState:
    """Joint angles (rad) and angular velocities (rad/s)."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.qdot = np.asarray(self.qdot, dtype=np.float64)
        if self.q.shape != self.qdot.shape or self.q.ndim != 1:
            raise ConfigError("q and qdot must be 1-D arrays of equal length")
        if not (np.isfinite(self.q).all() and np.isfinite(self.qdot).all()):
            raise NumericError("joint state contains non-finite values")

    def copy(self) -> "JointState":
        return JointState(self.q.copy(), self.qdot.copy())


def _require_finite(name: str, value: np.ndarray) -> np.ndarray:
    value = np.asarray(value, dtype=np.float64)
    if not np.isfinite(value).all():
        raise NumericError(f"{name} contains non-finite values")
    return value


def _clamp_torque(torques: np.ndarray, spec: EnvSpec) -> np.ndarray:
    limit = np.asarray(spec.torque_limit)
    return np.clip(torques, -limit, limit)


def pendulum_step(
    state: JointState,
    torque: float,
    spec: EnvSpec,
    *,
    gravity: float = 10.0,
    mass: float = 1.0,
    length: float = 1.0,
    max_speed: float = 8.0,
) -> tuple[JointState, np.ndarray, float]:
    """One semi-implicit Euler step of the frictionless pendulum.

    Dynamics: thdd = (3 g / 2 l) sin(th) + 3 / (m l^2) * tau, with th = 0
    pointing up. The applied torque is clamped to the spec limit before
    integration and the velocity is clamped to +-max_speed afterwards
    (keeps the documented reward bound finite). The angle is wrapped to
    [-pi, pi) and the cost is -(th^2 + 0.1 thd^2 + 0.001 tau^2).
    """
    tau_arr = _require_finite("torque", np.atleast_1d(np.asarray(torque, dtype=np.float64)))
    _require_finite("state.q", state.q)
    _require_finite("state.qdot", state.qdot)
    tau = float(_clamp_torque(tau_arr, spec)[0])

    th = float(state.q[0])
    thdot = float(state.qdot[0])

    thacc = (3.0 * gravity / (2.0 * length)) * math.sin(th) + 3.0 / (mass * length**2) * tau
    new_thdot = thdot + spec.dt * thacc
    new_thdot = min(max(new_thdot, -max_speed), max_speed)
    new_th = float(wrap_angle(th + spec.dt * new_thdot))

    reward = -(new_th**2 + 0.1 * new_thdot**2 + 0.001 * tau**2)
    new_state = JointState(np.array([new_th]), np.array([new_thdot]))
    obs = np.array([math.cos(new_th), math.sin(new_th), new_thdot])
    return new_state, obs, reward


def fingertip(q: np.ndarray, link_lengths: tuple[float, float]) -> np.ndarray:
    """Planar forward kinematics of the two-link arm."""
    l1, l2 = link_lengths
    x = l1 * math.cos(q[0]) + l2 * math.cos(q[0] + q[1])
    y = l1 * math.sin(q[0]) + l2 * math.sin(q[0] + q[1])
    return np.array([x, y])


def _integrate_decoupled_joints(
    state: JointState,
    torques: np.ndarray,
    spec: EnvSpec,
    inertias: np.ndarray,
    damping: float,
) -> JointState:
    # Each joint is an independent damped double integrator:
    # qdd_i = (tau_i - c * qd_i) / I_i, integrated semi-implicitly.
    qacc = (torques - damping * state.qdot) / inertias
    new_qdot = state.qdot + spec.dt * qacc
    new_q = wrap_angle(state.q + spec.dt * new_qdot)
    return JointState(new_q, new_qdot)


def reacher_step(
    state: JointState,
    torques: np.ndarray,
    spec: EnvSpec,
    target: np.ndarray,
    *,
    link_lengths: tuple[float, float] = (0.1, 0.1),
    inertias: tuple[float, float] = (0.01, 0.01),
    damping: float = 0.1,
) -> tuple[JointState, np.ndarray, float]:
    """One step of the planar two-link reacher toward a cartesian target.

    Reward is -(fingertip distance) - 0.001 * |tau|^2, with the torque
    clamped per joint before integration.
    """
    torques = _require_finite("torques", torques)
    _require_finite("state.q", state.q)
    _require_finite("state.qdot", state.qdot)
    target = _require_finite("target", target)
    tau = _clamp_torque(torques, spec)

    new_state = _integrate_decoupled_joints(state, tau, spec, np.asarray(inertias), damping)
    tip = fingertip(new_state.q, link_lengths)
    dist = float(np.linalg.norm(tip - target))
    reward = -dist - 0.001 * float(tau @ tau)
    obs = np.concatenate(
        [np.cos(new_state.q), np.sin(new_state.q), new_state.qdot, target, tip - target]
    )
    return new_state, obs, reward


def joint_space_reacher_step(
    state: JointState,
    torques: np.ndarray,
    spec: EnvSpec,
    q_target: np.ndarray,
    *,
    inertias: tuple[float, float] = (0.01, 0.01),
    damping: float = 0.1,
) -> tuple[JointState, np.ndarray, float]:
    """Reacher variant with the target expressed in joint space.

    Observation is (q, q_target, qdot, dq) with dq the angle-wrapped
    difference q_target - q, and the reward is -|(2/pi) dq| so its range
    matches the end-effector task. The positive-norm reading of that
    formula would reward moving away from the target, so the negated norm
    is used.
    """
    q_target = _require_finite("q_target", q_target)
    if q_target.shape != state.q.shape:
        raise ConfigError(
            f"q_target has {q_target.shape[0] if q_target.ndim else 0} entries, expected {state.q.shape[0]}"
        )
    torques = _require_finite("torques", torques)
    tau = _clamp_torque(torques, spec)

    new_state = _integrate_decoupled_joints(state, tau, spec, np.asarray(inertias), damping)
    dq = wrap_angle(q_target - new_state.q)
    reward = -float(np.linalg.norm((2.0 / math.pi) * dq))
    obs = np.concatenate([new_state.q, q_target, new_state.qdot, dq])
    return new_state, obs, reward


class Env:
    """Stateful episode wrapper around the functional step operators.

    Single-threaded state machine: one owner at a time. `reset(seed)`
    makes the whole episode a deterministic function of the seed and the
    applied actions.
    """

    name: str = ""
    obs_dim: int = 0
    supports_state_override: bool = False

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self._state: JointState | None = None
        self._t = 0

    # -- interface -----------------------------------------------------
    @property
    def dof(self) -> int:
        return self.spec.dof

    @property
    def state(self) -> JointState:
        if self._state is None:
            raise ConfigError("environment must be reset before stepping")
        return self._state

    @property
    def steps_taken(self) -> int:
        return self._t

    def reward_bounds(self) -> tuple[float, float]:
        raise NotImplementedError

    def reset(self, seed: int) -> tuple[JointState, np.ndarray]:
        raise NotImplementedError

    def step(self, torques: np.ndarray) -> tuple[JointState, np.ndarray, float, bool]:
        """Apply clamped torques; returns (state, obs, reward, done)."""
        raise NotImplementedError

    def override_step(self, q_cmd: np.ndarray) -> tuple[JointState, np.ndarray, float, bool]:
        """Set q := q_cmd, qdot := 0 directly instead of applying torque."""
        raise ConfigError(f"environment '{self.name}' does not support state override")

    # -- shared helpers ------------------------------------------------
    def _advance(self, state: JointState, obs: np.ndarray, reward: float):
        self._state = state
        self._t += 1
        done = self._t >= self.spec.horizon
        if done:
            self._t = 0
        return state, obs, reward, done

    def snapshot(self) -> dict:
        """Resumable mid-episode state (used by checkpoints)."""
        return {
            "q": self.state.q.tolist(),
            "qdot": self.state.qdot.tolist(),
            "t": self._t,
        }

    def restore(self, snap: dict) -> None:
        self._state = JointState(np.array(snap["q"]), np.array(snap["qdot"]))
        self._t = int(snap["t"])


class PendulumEnv(Env):
    """Inverted pendulum swing-up, th = 0 upright.

    Initial distribution: th ~ U(-pi, pi), thdot ~ U(-1, 1). Reward lies
    in [-(pi^2 + 0.1 max_speed^2 + 0.001 max(tau)^2), 0].
    """

    name = "pendulum"
    obs_dim = 3
    supports_state_override = True

    def __init__(
        self,
        spec: EnvSpec | None = None,
        *,
        gravity: float = 10.0,
        mass: float = 1.0,
        length: float = 1.0,
        max_speed: float = 8.0,
    ):
        if spec is None:
            spec = EnvSpec(dof=1, dt=0.05, torque_limit=(2.0,), horizon=200, gamma=0.99)
        super().__init__(spec)
        self.gravity = gravity
        self.mass = mass
        self.length = length
        self.max_speed = max_speed

    def reward_bounds(self) -> tuple[float, float]:
        worst = math.pi**2 + 0.1 * self.max_speed**2 + 0.001 * max(self.spec.torque_limit) ** 2
        return (-worst, 0.0)

    def _observe(self) -> np.ndarray:
        th = float(self.state.q[0])
        return np.array([math.cos(th), math.sin(th), float(self.state.qdot[0])])

    def reset(self, seed: int) -> tuple[JointState, np.ndarray]:
        gen = rng.stream("env", self.name, seed)
        th = gen.uniform(-math.pi, math.pi)
        thdot = gen.uniform(-1.0, 1.0)
        self._state = JointState(np.array([th]), np.array([thdot]))
        self._t = 0
        return self.state, self._observe()

    def step(self, torques: np.ndarray):
        state, obs, reward = pendulum_step(
            self.state,
            float(np.atleast_1d(torques)[0]),
            self.spec,
            gravity=self.gravity,
            mass=self.mass,
            length=self.length,
            max_speed=self.max_speed,
        )
        return self._advance(state, obs, reward)

    def override_step(self, q_cmd: np.ndarray):
        q = wrap_angle(np.asarray(q_cmd, dtype=np.float64))
        state = JointState(q.copy(), np.zeros_like(q))
        th = float(state.q[0])
        reward = -(th**2)
        self._state = state
        return self._advance(state, self._observe(), reward)


def _annulus_point(gen: np.random.Generator, r_lo: float, r_hi: float) -> np.ndarray:
    # Area-uniform sample over the annulus [r_lo, r_hi].
    r = math.sqrt(gen.uniform(r_lo**2, r_hi**2))
    phi = gen.uniform(-math.pi, math.pi)
    return np.array([r * math.cos(phi), r * math.sin(phi)])


class ReacherEnv(Env):
    """Two-link planar reacher with a cartesian target.

    Initial distribution: q ~ U(-0.1, 0.1)^2, qdot ~ U(-0.005, 0.005)^2,
    target area-uniform over the reachable annulus. Reward lies in
    [-(2 (l1+l2) + 0.001 |tau_max|^2), 0].
    """

    name = "reacher"
    obs_dim = 10
    supports_state_override = True

    def __init__(
        self,
        spec: EnvSpec | None = None,
        *,
        link_lengths: tuple[float, float] = (0.1, 0.1),
        inertias: tuple[float, float] = (0.01, 0.01),
        damping: float = 0.1,
    ):
        if spec is None:
            spec = EnvSpec(dof=2, dt=0.02, torque_limit=(1.0, 1.0), horizon=200, gamma=0.99)
        if spec.dof != 2:
            raise ConfigError("reacher is a 2-dof arm")
        super().__init__(spec)
        self.link_lengths = link_lengths
        self.inertias = inertias
        self.damping = damping
        self.target = np.zeros(2)

    def reward_bounds(self) -> tuple[float, float]:
        reach = sum(self.link_lengths)
        tau = np.asarray(self.spec.torque_limit)
        return (-(2.0 * reach + 0.001 * float(tau @ tau)), 0.0)

    def _observe(self) -> np.ndarray:
        tip = fingertip(self.state.q, self.link_lengths)
        return np.concatenate(
            [np.cos(self.state.q), np.sin(self.state.q), self.state.qdot, self.target, tip - self.target]
        )

    def reset(self, seed: int) -> tuple[JointState, np.ndarray]:
        gen = rng.stream("env", self.name, seed)
        q = gen.uniform(-0.1, 0.1, size=2)
        qdot = gen.uniform(-0.005, 0.005, size=2)
        r_lo = abs(self.link_lengths[0] - self.link_lengths[1])
        r_hi = self.link_lengths[0] + self.link_lengths[1]
        self.target = _annulus_point(gen, r_lo, r_hi)
        self._state = JointState(q, qdot)
        self._t = 0
        return self.state, self._observe()

    def step(self, torques: np.ndarray):
        state, obs, reward = reacher_step(
            self.state,
            np.asarray(torques, dtype=np.float64),
            self.spec,
            self.target,
            link_lengths=self.link_lengths,
            inertias=self.inertias,
            damping=self.damping,
        )
        return self._advance(state, obs, reward)

    def override_step(self, q_cmd: np.ndarray):
        q = wrap_angle(np.asarray(q_cmd, dtype=np.float64))
        self._state = JointState(q.copy(), np.zeros_like(q))
        tip = fingertip(q, self.link_lengths)
        reward = -float(np.linalg.norm(tip - self.target))
        return self._advance(self._state, self._observe(), reward)

    def snapshot(self) -> dict:
        snap = super().snapshot()
        snap["target"] = self.target.tolist()
        return snap

    def restore(self, snap: dict) -> None:
        super().restore(snap)
        self.target = np.array(snap["target"])


class JointSpaceReacherEnv(ReacherEnv):
    """Reacher with the target given in joint space (q_target per joint).

    Initial distribution: q and qdot as the reacher, q_target ~ U(-pi, pi)
    per joint. Reward is -|(2/pi) dq| in [-2*sqrt(2), 0].
    """

    name = "joint_reacher"
    obs_dim = 8
    supports_state_override = True

    def __init__(self, spec: EnvSpec | None = None, **kwargs):
        super().__init__(spec, **kwargs)
        self.q_target = np.zeros(2)

    def reward_bounds(self) -> tuple[float, float]:
        return (-2.0 * math.sqrt(2.0), 0.0)

    def _observe(self) -> np.ndarray:
        dq = wrap_angle(self.q_target - self.state.q)
        return np.concatenate([self.state.q, self.q_target, self.state.qdot, dq])

    def reset(self, seed: int) -> tuple[JointState, np.ndarray]:
        gen = rng.stream("env", self.name, seed)
        q = gen.uniform(-0.1, 0.1, size=2)
        qdot = gen.uniform(-0.005, 0.005, size=2)
        self.q_target = gen.uniform(-math.pi, math.pi, size=2)
        self._state = JointState(q, qdot)
        self._t = 0
        return self.state, self._observe()

    def step(self, torques: np.ndarray):
        state, obs, reward = joint_space_reacher_step(
            self.state,
            np.asarray(torques, dtype=np.float64),
            self.spec,
            self.q_target,
            inertias=self.inertias,
            damping=self.damping,
        )
        return self._advance(state, obs, reward)

    def override_step(self, q_cmd: np.ndarray):
        q = wrap_angle(np.asarray(q_cmd, dtype=np.float64))
        self._state = JointState(q.copy(), np.zeros_like(q))
        dq = wrap_angle(self.q_target - q)
        reward = -float(np.linalg.norm((2.0 / math.pi) * dq))
        return self._advance(self._state, self._observe(), reward)

    def snapshot(self) -> dict:
        snap = super().snapshot()
        snap["q_target"] = self.q_target.tolist()
        return snap

    def restore(self, snap: dict) -> None:
        super().restore(snap)
        self.q_target = np.array(snap["q_target"])


ENVIRONMENTS = {
    "pendulum": PendulumEnv,
    "reacher": ReacherEnv,
    "joint_reacher": JointSpaceReacherEnv,
}

_SPEC_KEYS = {"dof", "dt", "torque_limit", "horizon", "gamma", "joint_limits"}
_CONSTANT_KEYS = {
    "pendulum": {"gravity", "mass", "length", "max_speed"},
    "reacher": {"link_lengths", "inertias", "damping"},
    "joint_reacher": {"link_lengths", "inertias", "damping"},
}


def make_env(name: str, overrides: dict | None = None) -> Env:
    """Instantiate a named environment, applying config overrides.

    Overrides may touch EnvSpec fields (dt, horizon, gamma, torque_limit,
    joint_limits) and environment constants (gravity, link_lengths, ...).
    Unknown keys are rejected.
    """
    if name not in ENVIRONMENTS:
        raise ConfigError(f"unknown environment '{name}'; valid: {sorted(ENVIRONMENTS)}")
    cls = ENVIRONMENTS[name]
    overrides = dict(overrides or {})

    probe = cls()
    spec_kwargs = {}
    for key in list(overrides):
        if key in _SPEC_KEYS:
            value = overrides.pop(key)
            if key == "torque_limit":
                value = tuple(float(v) for v in np.atleast_1d(value))
            elif key == "joint_limits" and value is not None:
                value = tuple((float(lo), float(hi)) for lo, hi in value)
            spec_kwargs[key] = value
    spec = replace(probe.spec, **spec_kwargs) if spec_kwargs else probe.spec

    ctor_kwargs = {}
    for key in list(overrides):
        if key in _CONSTANT_KEYS[name]:
            value = overrides.pop(key)
            if isinstance(getattr(probe, key), tuple):
                value = tuple(float(v) for v in value)
            ctor_kwargs[key] = value
    if overrides:
        raise ConfigError(f"unknown environment overrides for '{name}': {sorted(overrides)}")
    return cls(spec, **ctor_kwargs)
