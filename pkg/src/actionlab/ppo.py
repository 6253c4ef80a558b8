"""PPO training loop with per-term loss gradients and exact resumability.

The update is the standard clipped-surrogate recipe (rollouts, GAE,
minibatch epochs, Adam with global-norm gradient clipping). Two things
are nonstandard because the analysis tooling depends on them:

* the loss keeps its policy / value / entropy terms separately
  differentiable, so gradient-quality analysis can study each one;
* every source of randomness is a named stream owned by the trainer and
  snapshotted into checkpoints, so a resumed run is bit-identical to an
  uninterrupted one and repeated runs are bit-identical.

Rollouts always start at an episode boundary: a rollout collects fresh
episodes until `n_steps` transitions exist, cutting the last episode
short if needed. Fixed-horizon episodes are truncations, so every segment
(and the cut tail) bootstraps from the value of its final next-state.

Setting `gradient_batch_override` switches to the accurate-gradient mode:
each optimizer step consumes one freshly collected batch of that size in
a single gradient step (no epoch reuse), and curves are indexed by
gradient steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import policy as pol
from . import rng
from .actuation import (
    ActionBounds,
    ActuationMode,
    Actuator,
    actuation_from_jsonable,
    actuation_to_jsonable,
    default_bounds,
)
from .data import Batch, Checkpoint, RunningStats, Trajectory
from .envs import Env, make_env
from .errors import ConfigError, NumericError
from .policy import FlatParams, PolicyValueModel


@dataclass(frozen=True)
class PpoConfig:
    """Hyperparameters; defaults follow the common PPO baseline settings."""

    n_steps: int = 2048
    minibatch_size: int = 64
    epochs: int = 10
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    learning_rate: float = 3e-4
    max_grad_norm: float = 0.5
    total_env_steps: int = 1_000_000
    gradient_batch_override: int | None = None
    checkpoint_count: int = 20
    eval_every: int = 10_000
    eval_episodes: int = 20
    normalize_observations: bool = False
    hidden_layers: tuple[int, ...] = (64, 64)
    advantage_std_floor: float = 1e-8

    def __post_init__(self):
        if self.n_steps < 1 or self.n_steps % self.minibatch_size != 0:
            raise ConfigError("minibatch_size must divide n_steps")
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigError(f"clip_eps must be in (0, 1), got {self.clip_eps}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must be in (0, 1), got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if self.gradient_batch_override is not None and self.gradient_batch_override < 1:
            raise ConfigError("gradient_batch_override must be >= 1")
        if self.checkpoint_count < 1:
            raise ConfigError("checkpoint_count must be >= 1")
        object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_layers"] = list(self.hidden_layers)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "PpoConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown ppo config keys: {sorted(unknown)}")
        raw = dict(raw)
        if "hidden_layers" in raw:
            raw["hidden_layers"] = tuple(int(h) for h in raw["hidden_layers"])
        return cls(**raw)


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    last_value: float,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """GAE over one episode segment, bootstrapping with last_value.

    delta_t = r_t + gamma V(s_{t+1}) - V(s_t);
    A_t = sum_k (gamma lam)^k delta_{t+k}; returns = A + V.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    n = len(rewards)
    advantages = np.zeros(n)
    next_value = float(last_value)
    acc = 0.0
    for t in reversed(range(n)):
        delta = rewards[t] + gamma * next_value - values[t]
        acc = delta + gamma * lam * acc
        advantages[t] = acc
        next_value = values[t]
    return advantages, advantages + values


def normalize_advantages(advantages: np.ndarray, std_floor: float = 1e-8) -> np.ndarray:
    std = advantages.std()
    return (advantages - advantages.mean()) / max(std, std_floor)


class LossTerms(NamedTuple):
    total: float
    policy: float
    value: float
    entropy: float

    def to_dict(self) -> dict[str, float]:
        return {"total": self.total, "policy": self.policy, "value": self.value, "entropy": self.entropy}


class TermGrads(NamedTuple):
    total: FlatParams
    policy: FlatParams
    value: FlatParams
    entropy: FlatParams


def ppo_loss(
    model: PolicyValueModel,
    params: FlatParams,
    batch: Batch,
    clip_eps: float,
    value_coef: float,
    entropy_coef: float,
) -> LossTerms:
    """Loss values only (no gradients); see ppo_loss_and_grads."""
    terms, _ = _loss_impl(model, params, batch, clip_eps, value_coef, entropy_coef, want_grads=False)
    return terms


def ppo_loss_and_grads(
    model: PolicyValueModel,
    params: FlatParams,
    batch: Batch,
    clip_eps: float,
    value_coef: float,
    entropy_coef: float,
) -> tuple[LossTerms, TermGrads]:
    """Clipped-surrogate loss with exact per-term gradients.

    policy = -mean(min(rho A, clip(rho, 1-eps, 1+eps) A)) with
    rho = exp(logpi_new - logpi_old); value = mean((V - returns)^2);
    total = policy + value_coef * value - entropy_coef * entropy. The
    terms touch disjoint parameter blocks (policy and entropy share only
    log_std), so the total gradient is assembled from the term gradients.
    """
    terms, grads = _loss_impl(model, params, batch, clip_eps, value_coef, entropy_coef, want_grads=True)
    return terms, grads


def _loss_impl(model, params, batch, clip_eps, value_coef, entropy_coef, want_grads):
    n = batch.n
    log_std = params.view("policy.log_std")

    if want_grads:
        mean, cache_p = model.policy_forward_cached(params, batch.observations)
        v, cache_v = model.value_forward_cached(params, batch.observations)
    else:
        mean = pol.mlp_forward(params, "policy", model.policy_spec, batch.observations)
        v = pol.mlp_forward(params, "value", model.value_spec, batch.observations)[:, 0]

    logp_new = pol.log_prob(mean, log_std, batch.actions)
    ratio = np.exp(logp_new - batch.old_log_probs)
    adv = batch.advantages
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    use_unclipped = surr1 <= surr2
    policy_loss = -float(np.where(use_unclipped, surr1, surr2).mean())

    value_err = v - batch.returns
    value_loss = float(np.mean(value_err**2))
    entropy_val = pol.entropy(log_std)
    total = policy_loss + value_coef * value_loss - entropy_coef * entropy_val
    terms = LossTerms(total, policy_loss, value_loss, entropy_val)
    if not want_grads:
        return terms, None

    g_policy = params.zeros_like()
    g_value = params.zeros_like()
    g_entropy = params.zeros_like()

    # d(policy_loss)/d(logp_new): only the unclipped branch carries grad.
    d_logp = np.where(use_unclipped, -adv * ratio / n, 0.0)
    inv_var = np.exp(-2.0 * log_std)
    diff = batch.actions - mean
    d_mean = d_logp[:, None] * diff * inv_var
    model.policy_backward(params, cache_p, d_mean, g_policy)
    z2 = diff**2 * inv_var
    g_policy.view("policy.log_std")[...] = (d_logp[:, None] * (z2 - 1.0)).sum(axis=0)

    d_v = 2.0 * value_err / n
    model.value_backward(params, cache_v, d_v, g_value)

    g_entropy.view("policy.log_std")[...] = 1.0

    g_total = params.zeros_like()
    g_total.data[...] = (
        g_policy.data + value_coef * g_value.data - entropy_coef * g_entropy.data
    )
    return terms, TermGrads(g_total, g_policy, g_value, g_entropy)


def batched_loss_and_grads(
    model: PolicyValueModel,
    params: FlatParams,
    batch: Batch,
    clip_eps: float,
    value_coef: float,
    entropy_coef: float,
    chunk: int = 8192,
) -> tuple[LossTerms, TermGrads]:
    """ppo_loss_and_grads in fixed-size chunks (bounded memory).

    Losses are per-sample means, so chunk results recombine exactly by
    sample-count weights; the fixed chunk size keeps the accumulation
    order (and thus the bits) independent of callers and workers.
    """
    n = batch.n
    if n <= chunk:
        return ppo_loss_and_grads(model, params, batch, clip_eps, value_coef, entropy_coef)
    acc_terms = np.zeros(4)
    acc = TermGrads(*(params.zeros_like() for _ in range(4)))
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        sub = batch.select(idx)
        w = sub.n / n
        terms, grads = ppo_loss_and_grads(model, params, sub, clip_eps, value_coef, entropy_coef)
        acc_terms += w * np.asarray(terms)
        for total_g, part_g in zip(acc, grads):
            total_g.data += w * part_g.data
    return LossTerms(*acc_terms), acc


# -- optimizer ----------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def clip_by_global_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm > 0.0:
        return grad * (max_norm / norm)
    return grad


def adam_step(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam step; pure (returns new arrays).

    Update: theta - lr * m_hat / (sqrt(v_hat) + eps). Gradient clipping
    is the caller's job (clip_by_global_norm before this call).
    """
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad**2
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m, v, t)


# -- run setup ----------------------------------------------------------


class RunSetup:
    """Environment + actuation + network bound together for one run."""

    def __init__(
        self,
        env_name: str,
        env_overrides: dict,
        mode: ActuationMode,
        bounds: ActionBounds | None = None,
        hidden_layers: tuple[int, ...] = (64, 64),
    ):
        self.env_name = env_name
        self.env_overrides = dict(env_overrides)
        probe = make_env(env_name, env_overrides)
        self.mode = mode
        self.bounds = bounds if bounds is not None else default_bounds(mode.kind, probe)
        self.obs_dim = probe.obs_dim
        self.act_dim = probe.dof
        self.gamma_env = probe.spec.gamma
        self.horizon = probe.spec.horizon
        self.model = PolicyValueModel(self.obs_dim, self.act_dim, tuple(hidden_layers))
        # Validates mode/bounds against the environment early.
        Actuator(self.mode, self.bounds, probe)

    def make_env(self) -> Env:
        return make_env(self.env_name, self.env_overrides)

    def actuator(self, env: Env) -> Actuator:
        return Actuator(self.mode, self.bounds, env)

    def actuation_jsonable(self) -> dict:
        return actuation_to_jsonable(self.mode, self.bounds)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "RunSetup":
        mode, bounds = actuation_from_jsonable(ckpt.actuation)
        hidden = tuple(ckpt.ppo.get("hidden_layers", (64, 64)))
        return cls(ckpt.env_name, ckpt.env_overrides, mode, bounds, hidden)


# -- rollout collection ---------------------------------------------------


def collect_rollout(
    setup: RunSetup,
    params: FlatParams,
    n_steps: int,
    episode_seed_gen: np.random.Generator,
    action_gen: np.random.Generator,
    obs_norm: RunningStats | None,
) -> Trajectory:
    """Collect fresh whole episodes until n_steps transitions exist.

    The final episode is cut at the rollout boundary; its segment (like
    every segment) bootstraps from the value of the next state. Raw
    unclipped actions and their log-probs are stored; the environment
    sees the clipped action.
    """
    model = setup.model
    env = setup.make_env()
    actuator = setup.actuator(env)

    obs_list, act_list, cmd_list, rew_list = [], [], [], []
    done_list, logp_list, val_list = [], [], []
    segment_starts: list[int] = []
    bootstrap_values: list[float] = []
    episode_returns: list[float] = []
    episode_discounted: list[float] = []

    collected = 0
    while collected < n_steps:
        _, obs = env.reset(rng.draw_seed(episode_seed_gen))
        segment_starts.append(collected)
        ep_rewards = []
        while True:
            net_in = obs_norm.normalize(obs) if obs_norm is not None else obs
            mean, log_std = model.forward_policy(params, net_in)
            action = pol.sample_action(mean, log_std, action_gen)
            logp = float(pol.log_prob(mean, log_std, action))
            value = float(model.forward_value(params, net_in))
            _, next_obs, reward, done, cmd = actuator.step_env(env, np.clip(action, -1.0, 1.0))

            obs_list.append(net_in)
            act_list.append(action)
            cmd_list.append(cmd)
            rew_list.append(reward)
            done_list.append(done)
            logp_list.append(logp)
            val_list.append(value)
            ep_rewards.append(reward)

            obs = next_obs
            collected += 1
            if done or collected >= n_steps:
                next_in = obs_norm.normalize(obs) if obs_norm is not None else obs
                bootstrap_values.append(float(model.forward_value(params, next_in)))
                if done:
                    ep_rewards_arr = np.asarray(ep_rewards)
                    episode_returns.append(float(ep_rewards_arr.sum()))
                    discount = setup.gamma_env ** np.arange(len(ep_rewards_arr))
                    episode_discounted.append(float(ep_rewards_arr @ discount))
                break

    return Trajectory(
        observations=np.asarray(obs_list),
        actions=np.asarray(act_list),
        commands=np.asarray(cmd_list),
        rewards=np.asarray(rew_list),
        dones=np.asarray(done_list, dtype=bool),
        log_probs=np.asarray(logp_list),
        values=np.asarray(val_list),
        segment_starts=segment_starts,
        bootstrap_values=bootstrap_values,
        episode_returns=episode_returns,
        episode_discounted=episode_discounted,
    )


def process_rollout(traj: Trajectory, gamma: float, lam: float, std_floor: float) -> Batch:
    """Segment-wise GAE, then advantage normalization over the rollout."""
    n = traj.n
    advantages = np.zeros(n)
    returns = np.zeros(n)
    bounds = traj.segment_starts + [n]
    for seg, (start, end) in enumerate(zip(bounds[:-1], bounds[1:])):
        adv, ret = compute_gae(
            traj.rewards[start:end],
            traj.values[start:end],
            traj.bootstrap_values[seg],
            gamma,
            lam,
        )
        advantages[start:end] = adv
        returns[start:end] = ret
    return Batch(
        observations=traj.observations,
        actions=traj.actions,
        old_log_probs=traj.log_probs,
        advantages=normalize_advantages(advantages, std_floor),
        returns=returns,
        old_values=traj.values,
    )


def rollout_returns(
    setup: RunSetup,
    params: FlatParams,
    obs_norm: RunningStats | None,
    n_episodes: int,
    seed_keys: tuple,
    deterministic: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-episode (undiscounted, discounted) returns of whole episodes.

    Episode e uses streams derived from seed_keys + (e,), so results are
    independent of scheduling and reproducible from the keys alone.
    """
    model = setup.model
    undiscounted = np.zeros(n_episodes)
    discounted = np.zeros(n_episodes)
    for ep in range(n_episodes):
        env = setup.make_env()
        actuator = setup.actuator(env)
        _, obs = env.reset(rng.draw_seed(rng.stream(*seed_keys, "reset", ep)))
        action_gen = rng.stream(*seed_keys, "actions", ep)
        total = 0.0
        disc = 0.0
        scale = 1.0
        done = False
        while not done:
            net_in = obs_norm.normalize(obs) if obs_norm is not None else obs
            mean, log_std = model.forward_policy(params, net_in)
            action = mean if deterministic else pol.sample_action(mean, log_std, action_gen)
            _, obs, reward, done, _ = actuator.step_env(env, np.clip(action, -1.0, 1.0))
            total += reward
            disc += scale * reward
            scale *= setup.gamma_env
        undiscounted[ep] = total
        discounted[ep] = disc
    return undiscounted, discounted


def random_policy_returns(setup: RunSetup, n_episodes: int, seed_keys: tuple) -> np.ndarray:
    """Returns of a uniform-random policy; the measured floor baseline."""
    returns = np.zeros(n_episodes)
    for ep in range(n_episodes):
        env = setup.make_env()
        actuator = setup.actuator(env)
        env.reset(rng.draw_seed(rng.stream(*seed_keys, "reset", ep)))
        gen = rng.stream(*seed_keys, "actions", ep)
        total = 0.0
        done = False
        while not done:
            _, _, reward, done, _ = actuator.step_env(env, gen.uniform(-1.0, 1.0, size=setup.act_dim))
            total += reward
        returns[ep] = total
    return returns


class EvalResult(NamedTuple):
    mean_return: float
    std_return: float
    mean_discounted: float


def evaluate_policy(
    setup: RunSetup,
    params: FlatParams,
    obs_norm: RunningStats | None,
    n_episodes: int,
    seed_keys: tuple,
) -> EvalResult:
    """Deterministic-mean-action evaluation over fresh episodes."""
    undisc, disc = rollout_returns(setup, params, obs_norm, n_episodes, seed_keys, deterministic=True)
    return EvalResult(float(undisc.mean()), float(undisc.std()), float(disc.mean()))


# -- trainer --------------------------------------------------------------


@dataclass
class CurvePoint:
    seed: int
    env_step: int
    gradient_step: int
    mean_return: float
    std_return: float
    discounted_return: float

    def row(self) -> list:
        return [
            self.seed,
            self.env_step,
            self.gradient_step,
            self.mean_return,
            self.std_return,
            self.discounted_return,
        ]


CURVE_COLUMNS = ["seed", "env_step", "gradient_step", "mean_return", "std_return", "discounted_return"]


@dataclass
class TrainResult:
    final_checkpoint: Checkpoint
    curve: list[CurvePoint]
    checkpoint_paths: list[Path]
    checkpoints: list[Checkpoint]


class Trainer:
    """Owns the full mutable training state for one (config, seed) run."""

    def __init__(self, setup: RunSetup, cfg: PpoConfig, seed: int, out_dir: Path | None = None):
        self.setup = setup
        self.cfg = cfg
        self.seed = seed
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.params = setup.model.init_params(seed)
        self.adam = AdamState.zeros(len(self.params))
        self.rngs = {
            "episodes": rng.stream("train-episodes", seed),
            "actions": rng.stream("train-actions", seed),
            "shuffle": rng.stream("train-shuffle", seed),
        }
        self.obs_norm = RunningStats.create(setup.obs_dim) if cfg.normalize_observations else None
        self.env_step = 0
        self.gradient_step = 0
        self.iteration = 0
        self._last_batch: Batch | None = None

    # -- construction from a snapshot -----------------------------------
    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, out_dir: Path | None = None) -> "Trainer":
        setup = RunSetup.from_checkpoint(ckpt)
        cfg = PpoConfig.from_dict(ckpt.ppo)
        trainer = cls.__new__(cls)
        trainer.setup = setup
        trainer.cfg = cfg
        trainer.seed = ckpt.run_seed
        trainer.out_dir = Path(out_dir) if out_dir is not None else None
        trainer.params = ckpt.params.copy()
        trainer.adam = AdamState(ckpt.adam_m.copy(), ckpt.adam_v.copy(), ckpt.adam_t)
        trainer.rngs = {name: rng.restore(state) for name, state in ckpt.rng_states.items()}
        trainer.obs_norm = (
            RunningStats.from_jsonable(ckpt.obs_norm) if ckpt.obs_norm is not None else None
        )
        trainer.env_step = ckpt.env_step
        trainer.gradient_step = ckpt.gradient_step
        trainer.iteration = ckpt.iteration
        trainer._last_batch = ckpt.frozen
        return trainer

    def _empty_batch(self) -> Batch:
        return Batch(
            observations=np.zeros((0, self.setup.obs_dim)),
            actions=np.zeros((0, self.setup.act_dim)),
            old_log_probs=np.zeros(0),
            advantages=np.zeros(0),
            returns=np.zeros(0),
            old_values=np.zeros(0),
        )

    # -- checkpoint assembly ---------------------------------------------
    def make_checkpoint(self) -> Checkpoint:
        if self._last_batch is None:
            # No-op run: checkpoint the initial state with an empty buffer.
            batch = self._empty_batch()
            losses = {}
        else:
            batch = self._last_batch
            losses = ppo_loss(
                self.setup.model,
                self.params,
                batch,
                self.cfg.clip_eps,
                self.cfg.value_coef,
                self.cfg.entropy_coef,
            ).to_dict()
        return Checkpoint(
            checkpoint_id=f"ckpt_{self.env_step:010d}",
            run_seed=self.seed,
            env_name=self.setup.env_name,
            env_overrides=dict(self.setup.env_overrides),
            actuation=self.setup.actuation_jsonable(),
            ppo=self.cfg.to_dict(),
            params=self.params.copy(),
            adam_m=self.adam.m.copy(),
            adam_v=self.adam.v.copy(),
            adam_t=self.adam.t,
            rng_states={name: rng.get_state(gen) for name, gen in self.rngs.items()},
            obs_norm=self.obs_norm.to_jsonable() if self.obs_norm is not None else None,
            env_step=self.env_step,
            gradient_step=self.gradient_step,
            iteration=self.iteration,
            frozen=batch,
            stored_losses=losses,
        )

    # -- internals --------------------------------------------------------
    def _check_finite(self, terms: LossTerms, batch: Batch) -> None:
        if all(math.isfinite(v) for v in terms) and np.isfinite(self.params.data).all():
            return
        dump = None
        if self.out_dir is not None:
            dump = self.out_dir / f"nan_dump_step{self.env_step}.npz"
            np.savez(dump, **batch.to_arrays(), params=self.params.data)
        raise NumericError(
            f"non-finite loss or parameters at env_step={self.env_step}, "
            f"gradient_step={self.gradient_step}"
            + (f"; offending batch dumped to {dump}" if dump else "")
        )

    def _apply_gradient(self, grad: FlatParams) -> None:
        clipped = clip_by_global_norm(grad.data, self.cfg.max_grad_norm)
        new_data, self.adam = adam_step(self.params.data, clipped, self.adam, self.cfg.learning_rate)
        self.params = FlatParams(new_data, self.params.layout)
        self.gradient_step += 1

    def _update_from_rollout(self, batch: Batch) -> None:
        cfg = self.cfg
        n = batch.n
        for _ in range(cfg.epochs):
            perm = self.rngs["shuffle"].permutation(n)
            for start in range(0, n, cfg.minibatch_size):
                mb = batch.select(perm[start : start + cfg.minibatch_size])
                terms, grads = ppo_loss_and_grads(
                    self.setup.model, self.params, mb,
                    cfg.clip_eps, cfg.value_coef, cfg.entropy_coef,
                )
                self._check_finite(terms, mb)
                self._apply_gradient(grads.total)
        if not np.isfinite(self.params.data).all():
            raise NumericError(f"non-finite parameters after update at env_step={self.env_step}")

    def _eval_point(self) -> CurvePoint:
        res = evaluate_policy(
            self.setup,
            self.params,
            self.obs_norm,
            self.cfg.eval_episodes,
            ("eval", self.seed, self.env_step),
        )
        return CurvePoint(
            self.seed, self.env_step, self.gradient_step,
            res.mean_return, res.std_return, res.mean_discounted,
        )

    # -- main loop ----------------------------------------------------------
    def run(self) -> TrainResult:
        """Train to total_env_steps; returns curve and checkpoint series.

        If `out_dir` is set, checkpoints are written to
        out_dir/checkpoints/ckpt_<step>.bin as they are produced.
        """
        cfg = self.cfg
        total = cfg.total_env_steps
        batch_steps = cfg.gradient_batch_override or cfg.n_steps
        ckpt_marks = [math.ceil(total * k / cfg.checkpoint_count) for k in range(1, cfg.checkpoint_count + 1)]
        curve: list[CurvePoint] = []
        checkpoints: list[Checkpoint] = []
        paths: list[Path] = []

        def emit(ckpt: Checkpoint) -> None:
            checkpoints.append(ckpt)
            if self.out_dir is not None:
                from .report import save_checkpoint

                path = self.out_dir / "checkpoints" / f"{ckpt.checkpoint_id}.bin"
                path.parent.mkdir(parents=True, exist_ok=True)
                save_checkpoint(ckpt, path)
                paths.append(path)

        if total <= self.env_step:
            # No-op run: initial checkpoint, empty curve.
            final = self.make_checkpoint()
            emit(final)
            return TrainResult(final, curve, paths, checkpoints)

        if self.env_step == 0:
            curve.append(self._eval_point())
        next_eval = (self.env_step // cfg.eval_every + 1) * cfg.eval_every if cfg.eval_every > 0 else None
        ckpt_idx = sum(1 for m in ckpt_marks if m <= self.env_step)

        while self.env_step < total:
            traj = collect_rollout(
                self.setup, self.params, batch_steps,
                self.rngs["episodes"], self.rngs["actions"], self.obs_norm,
            )
            batch = process_rollout(traj, cfg.gamma, cfg.gae_lambda, cfg.advantage_std_floor)
            self._last_batch = batch
            self.env_step += traj.n
            self.iteration += 1

            if cfg.gradient_batch_override is not None:
                terms, grads = ppo_loss_and_grads(
                    self.setup.model, self.params, batch,
                    cfg.clip_eps, cfg.value_coef, cfg.entropy_coef,
                )
                self._check_finite(terms, batch)
                self._apply_gradient(grads.total)
            else:
                self._update_from_rollout(batch)

            if self.obs_norm is not None:
                # Stats stay frozen within a rollout; refresh for the next one.
                self.obs_norm.update(traj.observations)

            while next_eval is not None and self.env_step >= next_eval:
                curve.append(self._eval_point())
                next_eval += cfg.eval_every
            if ckpt_idx < len(ckpt_marks) and self.env_step >= ckpt_marks[ckpt_idx]:
                emit(self.make_checkpoint())
                while ckpt_idx < len(ckpt_marks) and self.env_step >= ckpt_marks[ckpt_idx]:
                    ckpt_idx += 1

        if not curve or curve[-1].env_step != self.env_step:
            curve.append(self._eval_point())
        if not checkpoints or checkpoints[-1].env_step != self.env_step:
            emit(self.make_checkpoint())
        final = checkpoints[-1]
        return TrainResult(final, curve, paths, checkpoints)
