"""GAE, loss terms, Adam, and trainer determinism."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actionlab import rng
from actionlab.actuation import ActuationMode, ControlKind
from actionlab.data import Batch
from actionlab.errors import ConfigError, NumericError
from actionlab.policy import FlatParams
from actionlab.ppo import (
    AdamState,
    PpoConfig,
    RunSetup,
    Trainer,
    adam_step,
    batched_loss_and_grads,
    clip_by_global_norm,
    collect_rollout,
    compute_gae,
    normalize_advantages,
    ppo_loss,
    ppo_loss_and_grads,
    process_rollout,
)


def brute_force_gae(rewards, values, last_value, gamma, lam):
    # Direct double sum: A_t = sum_k (gamma lam)^k delta_{t+k}.
    n = len(rewards)
    vals = list(values) + [last_value]
    deltas = [rewards[t] + gamma * vals[t + 1] - vals[t] for t in range(n)]
    adv = [
        sum((gamma * lam) ** (k - t) * deltas[k] for k in range(t, n))
        for t in range(n)
    ]
    return np.array(adv), np.array(adv) + np.asarray(values)


def synth_batch(gen, n, obs_dim, act_dim):
    adv = gen.standard_normal(n)
    return Batch(
        observations=gen.standard_normal((n, obs_dim)),
        actions=gen.standard_normal((n, act_dim)) * 0.5,
        old_log_probs=gen.standard_normal(n) * 0.3 - 1.0,
        advantages=(adv - adv.mean()) / max(adv.std(), 1e-8),
        returns=gen.standard_normal(n) * 0.5,
        old_values=np.zeros(n),
    )


# -- GAE ------------------------------------------------------------------------


def test_gae_lambda_zero_is_td0():
    gen = rng.stream("gae", 0)
    r, v, last = gen.standard_normal(8), gen.standard_normal(8), 0.3
    adv, _ = compute_gae(r, v, last, gamma=0.9, lam=0.0)
    v_next = np.append(v[1:], last)
    np.testing.assert_allclose(adv, r + 0.9 * v_next - v, atol=1e-12)


def test_gae_monte_carlo_reduction():
    gen = rng.stream("gae", 1)
    r = gen.standard_normal(6)
    adv, ret = compute_gae(r, np.zeros(6), 0.0, gamma=1.0, lam=1.0)
    suffix = np.cumsum(r[::-1])[::-1]
    np.testing.assert_allclose(adv, suffix, atol=1e-12)
    np.testing.assert_allclose(ret, suffix, atol=1e-12)


def test_gae_matches_brute_force_double_sum():
    gen = rng.stream("gae", 2)
    for _ in range(20):
        n = int(gen.integers(5, 21))
        r, v = gen.standard_normal(n), gen.standard_normal(n)
        last = float(gen.standard_normal())
        gamma, lam = float(gen.uniform(0.5, 0.999)), float(gen.uniform(0.0, 1.0))
        adv, ret = compute_gae(r, v, last, gamma, lam)
        b_adv, b_ret = brute_force_gae(r, v, last, gamma, lam)
        np.testing.assert_allclose(adv, b_adv, atol=1e-12)
        np.testing.assert_allclose(ret, b_ret, atol=1e-12)


# -- loss ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def loss_fixture(small_setup):
    model = small_setup.model
    params = model.init_params(3)
    traj = collect_rollout(small_setup, params, 64, rng.stream("lf-e", 0), rng.stream("lf-a", 0), None)
    batch = process_rollout(traj, 0.99, 0.95, 1e-8)
    return small_setup, model, params, batch


def test_unit_ratio_policy_term(loss_fixture):
    setup, model, params, batch = loss_fixture
    terms = ppo_loss(model, params, batch, 0.2, 0.5, 0.0)
    # new params == old params: rho = 1, policy term = -mean(A) = 0 after
    # advantage normalization.
    assert terms.policy == pytest.approx(-batch.advantages.mean(), abs=1e-12)
    assert abs(terms.policy) < 1e-10


def test_zero_advantage_zero_policy_term(loss_fixture):
    setup, model, params, batch = loss_fixture
    zeroed = Batch(
        batch.observations, batch.actions, batch.old_log_probs,
        np.zeros_like(batch.advantages), batch.returns, batch.old_values,
    )
    shifted = FlatParams(params.data + 0.03, params.layout)
    terms = ppo_loss(model, shifted, zeroed, 0.2, 0.5, 0.0)
    assert terms.policy == 0.0


def duplicate_loss(model, params, batch, clip_eps, value_coef, entropy_coef):
    # Independent reimplementation with explicit per-sample loops.
    from actionlab.policy import log_prob as lp, entropy as ent, mlp_forward

    policy_sum = 0.0
    value_sum = 0.0
    for i in range(batch.n):
        mean = mlp_forward(params, "policy", model.policy_spec, batch.observations[i])[0]
        logp = float(lp(mean, params.view("policy.log_std"), batch.actions[i]))
        ratio = math.exp(logp - batch.old_log_probs[i])
        clipped = min(max(ratio, 1 - clip_eps), 1 + clip_eps)
        policy_sum += min(ratio * batch.advantages[i], clipped * batch.advantages[i])
        v = float(mlp_forward(params, "value", model.value_spec, batch.observations[i])[0, 0])
        value_sum += (v - batch.returns[i]) ** 2
    policy = -policy_sum / batch.n
    value = value_sum / batch.n
    entropy_val = ent(params.view("policy.log_std"))
    return policy + value_coef * value - entropy_coef * entropy_val, policy, value, entropy_val


def test_loss_matches_duplicate_implementation(loss_fixture):
    setup, model, params, batch = loss_fixture
    gen = rng.stream("dup", 1)
    shifted = FlatParams(params.data + 0.05 * gen.standard_normal(len(params)), params.layout)
    terms = ppo_loss(model, shifted, batch, 0.2, 0.5, 0.01)
    total, policy, value, entropy_val = duplicate_loss(model, shifted, batch, 0.2, 0.5, 0.01)
    assert terms.total == pytest.approx(total, abs=1e-10)
    assert terms.policy == pytest.approx(policy, abs=1e-10)
    assert terms.value == pytest.approx(value, abs=1e-10)
    assert terms.entropy == pytest.approx(entropy_val, abs=1e-12)


def test_loss_gradient_matches_finite_differences(loss_fixture):
    setup, model, params, batch = loss_fixture
    small = batch.select(np.arange(16))
    gen = rng.stream("dup", 2)
    shifted = FlatParams(params.data + 0.05 * gen.standard_normal(len(params)), params.layout)
    _, grads = ppo_loss_and_grads(model, shifted, small, 0.2, 0.5, 0.01)
    h = 1e-6
    for k in range(0, len(shifted), 5):
        p, m = shifted.data.copy(), shifted.data.copy()
        p[k] += h
        m[k] -= h
        fd = (
            ppo_loss(model, FlatParams(p, shifted.layout), small, 0.2, 0.5, 0.01).total
            - ppo_loss(model, FlatParams(m, shifted.layout), small, 0.2, 0.5, 0.01).total
        ) / (2 * h)
        assert fd == pytest.approx(grads.total.data[k], rel=1e-4, abs=1e-6)


def test_term_gradients_touch_disjoint_blocks(loss_fixture):
    setup, model, params, batch = loss_fixture
    _, grads = ppo_loss_and_grads(model, params, batch, 0.2, 0.5, 0.01)
    for block in params.layout:
        g_pol = grads.policy.view(block.name)
        g_val = grads.value.view(block.name)
        if block.name.startswith("value."):
            assert np.array_equal(g_pol, np.zeros_like(g_pol))
        else:
            assert np.array_equal(g_val, np.zeros_like(g_val))
    combined = grads.policy.data + 0.5 * grads.value.data - 0.01 * grads.entropy.data
    np.testing.assert_array_equal(combined, grads.total.data)


def test_huge_clip_equals_vanilla_importance_gradient(loss_fixture):
    # With the clip range effectively infinite and ratio == 1 (first
    # epoch at the old parameters), the PPO policy gradient is the plain
    # importance-weighted policy gradient.
    setup, model, params, batch = loss_fixture
    _, g_clip = ppo_loss_and_grads(model, params, batch, 1e9, 0.5, 0.0)
    _, g_tight = ppo_loss_and_grads(model, params, batch, 0.2, 0.5, 0.0)
    np.testing.assert_array_equal(g_clip.policy.data, g_tight.policy.data)

    # Independent vanilla gradient: -mean(A * dlogpi).
    mean, cache = model.policy_forward_cached(params, batch.observations)
    log_std = params.view("policy.log_std")
    d_logp = -batch.advantages / batch.n
    inv_var = np.exp(-2.0 * log_std)
    vanilla = params.zeros_like()
    model.policy_backward(params, cache, d_logp[:, None] * (batch.actions - mean) * inv_var, vanilla)
    z2 = (batch.actions - mean) ** 2 * inv_var
    vanilla.view("policy.log_std")[...] = (d_logp[:, None] * (z2 - 1.0)).sum(axis=0)
    np.testing.assert_allclose(g_clip.policy.data, vanilla.data, atol=1e-12)


def test_clipped_contribution_bound_for_positive_advantage():
    # For A >= 0 the per-sample surrogate is bounded by (1 + eps) |A|;
    # for A < 0 the bound holds whenever the ratio stays inside the clip
    # band (the unclipped branch is unbounded below by design).
    gen = rng.stream("clipbound", 0)
    eps = 0.2
    for _ in range(2000):
        ratio = math.exp(gen.uniform(-2, 2))
        adv = gen.standard_normal()
        clipped = min(max(ratio, 1 - eps), 1 + eps)
        contribution = min(ratio * adv, clipped * adv)
        if adv >= 0 or ratio <= 1 + eps:
            assert abs(contribution) <= (1 + eps) * abs(adv) + 1e-12


def test_batched_loss_matches_unbatched(loss_fixture):
    setup, model, params, batch = loss_fixture
    gen = rng.stream("dup", 3)
    shifted = FlatParams(params.data + 0.05 * gen.standard_normal(len(params)), params.layout)
    t_full, g_full = ppo_loss_and_grads(model, shifted, batch, 0.2, 0.5, 0.01)
    t_chunk, g_chunk = batched_loss_and_grads(model, shifted, batch, 0.2, 0.5, 0.01, chunk=17)
    assert t_chunk.total == pytest.approx(t_full.total, abs=1e-12)
    np.testing.assert_allclose(g_chunk.total.data, g_full.total.data, atol=1e-12)


# -- advantage normalization -------------------------------------------------------


def test_advantage_normalization_invariant(loss_fixture):
    setup, model, params, batch = loss_fixture
    assert abs(batch.advantages.mean()) < 1e-10
    assert abs(batch.advantages.std() - 1.0) < 1e-8


def test_normalize_advantages_constant_input_uses_floor():
    out = normalize_advantages(np.ones(16), 1e-8)
    np.testing.assert_array_equal(out, np.zeros(16))


# -- Adam ---------------------------------------------------------------------------


def test_adam_zero_gradient_no_update():
    params = np.array([1.0, -2.0, 3.0])
    new, state = adam_step(params, np.zeros(3), AdamState.zeros(3), lr=1e-3)
    np.testing.assert_array_equal(new, params)
    assert state.t == 1


def test_adam_first_step_hand_formula():
    g = np.array([0.3, -4.0, 1e-3])
    params = np.zeros(3)
    lr = 3e-4
    new, state = adam_step(params, g, AdamState.zeros(3), lr=lr)
    m_hat = g  # (1 - b1) g / (1 - b1)
    v_hat = g**2
    expected = params - lr * m_hat / (np.sqrt(v_hat) + 1e-8)
    np.testing.assert_allclose(new, expected, atol=1e-12)


def test_adam_deterministic():
    gen = rng.stream("adam", 0)
    g1, g2 = gen.standard_normal(5), gen.standard_normal(5)
    runs = []
    for _ in range(2):
        p, s = np.ones(5), AdamState.zeros(5)
        p, s = adam_step(p, g1, s, 1e-3)
        p, s = adam_step(p, g2, s, 1e-3)
        runs.append((p, s.m, s.v))
    for a, b in zip(*runs):
        np.testing.assert_array_equal(a, b)


@given(st.floats(0.01, 100.0))
@settings(max_examples=20)
def test_clip_by_global_norm(scale):
    gen = rng.stream("clip", 7)
    g = gen.standard_normal(12) * scale
    clipped = clip_by_global_norm(g, 0.5)
    assert np.linalg.norm(clipped) <= 0.5 + 1e-12
    if np.linalg.norm(g) <= 0.5:
        np.testing.assert_array_equal(clipped, g)
    else:
        np.testing.assert_allclose(clipped / np.linalg.norm(clipped), g / np.linalg.norm(g), atol=1e-12)


# -- config -----------------------------------------------------------------------


def test_ppo_config_validation():
    with pytest.raises(ConfigError):
        PpoConfig(n_steps=100, minibatch_size=64)
    with pytest.raises(ConfigError):
        PpoConfig(clip_eps=1.5)
    with pytest.raises(ConfigError):
        PpoConfig(gamma=0.0)
    with pytest.raises(ConfigError):
        PpoConfig(gae_lambda=1.5)
    with pytest.raises(ConfigError):
        PpoConfig.from_dict({"bogus": 1})


def test_ppo_config_round_trip():
    cfg = PpoConfig(n_steps=512, minibatch_size=128, hidden_layers=(32, 32))
    assert PpoConfig.from_dict(cfg.to_dict()) == cfg


# -- trainer -----------------------------------------------------------------------


def test_rollout_starts_at_episode_boundaries(small_setup):
    params = small_setup.model.init_params(0)
    traj = collect_rollout(small_setup, params, 450, rng.stream("rb", 0), rng.stream("rb", 1), None)
    assert traj.n == 450
    assert traj.segment_starts == [0, 200, 400]
    assert traj.dones[199] and traj.dones[399] and not traj.dones[449]
    assert len(traj.bootstrap_values) == 3
    assert len(traj.episode_returns) == 2  # the cut tail is not a full episode


def test_trainer_bit_identical_repeat(small_setup, short_cfg):
    curves, params = [], []
    for _ in range(2):
        res = Trainer(small_setup, short_cfg, seed=3).run()
        curves.append([p.row() for p in res.curve])
        params.append(res.final_checkpoint.params.data.copy())
    assert curves[0] == curves[1]
    np.testing.assert_array_equal(params[0], params[1])


def test_trainer_noop_run(small_setup):
    cfg = PpoConfig(total_env_steps=0, n_steps=256, eval_every=0, checkpoint_count=1)
    res = Trainer(small_setup, cfg, seed=0).run()
    assert res.curve == []
    assert res.final_checkpoint.env_step == 0
    assert res.final_checkpoint.frozen.n == 0
    np.testing.assert_array_equal(
        res.final_checkpoint.params.data, small_setup.model.init_params(0).data
    )


def test_checkpoint_series_strictly_increasing(trained_run):
    steps = [c.env_step for c in trained_run.checkpoints]
    assert steps == sorted(steps)
    assert len(set(steps)) == len(steps)
    assert len(trained_run.checkpoints) == 5


def test_resume_reproduces_uninterrupted_run(small_setup):
    cfg = PpoConfig(
        total_env_steps=3072, n_steps=512, epochs=2, eval_every=1024,
        eval_episodes=2, checkpoint_count=3,
    )
    full = Trainer(small_setup, cfg, seed=11).run()
    mid = full.checkpoints[0]
    resumed = Trainer.from_checkpoint(mid).run()
    np.testing.assert_array_equal(
        resumed.final_checkpoint.params.data, full.final_checkpoint.params.data
    )
    np.testing.assert_array_equal(
        resumed.final_checkpoint.frozen.observations, full.final_checkpoint.frozen.observations
    )
    assert resumed.final_checkpoint.rng_states == full.final_checkpoint.rng_states
    full_tail = [p.row() for p in full.curve if p.env_step > mid.env_step]
    resumed_rows = [p.row() for p in resumed.curve]
    assert resumed_rows == full_tail


def test_center_losses_stored_in_checkpoint(trained_checkpoint, pendulum_setup):
    stored = trained_checkpoint.stored_losses
    cfg = PpoConfig.from_dict(trained_checkpoint.ppo)
    terms = ppo_loss(
        pendulum_setup.model, trained_checkpoint.params, trained_checkpoint.frozen,
        cfg.clip_eps, cfg.value_coef, cfg.entropy_coef,
    )
    assert terms.total == pytest.approx(stored["total"], abs=1e-12)
    assert terms.policy == pytest.approx(stored["policy"], abs=1e-12)
    assert terms.value == pytest.approx(stored["value"], abs=1e-12)


def test_nan_abort_with_dump(small_setup, tmp_path):
    cfg = PpoConfig(total_env_steps=512, n_steps=256, epochs=1, eval_every=0, checkpoint_count=1)
    trainer = Trainer(small_setup, cfg, seed=0, out_dir=tmp_path)
    bad = Batch(
        observations=np.full((4, 3), np.nan),
        actions=np.zeros((4, 1)),
        old_log_probs=np.zeros(4),
        advantages=np.zeros(4),
        returns=np.zeros(4),
        old_values=np.zeros(4),
    )
    from actionlab.ppo import LossTerms

    with pytest.raises(NumericError):
        trainer._check_finite(LossTerms(math.nan, 0.0, 0.0, 0.0), bad)
    dumps = list(tmp_path.glob("nan_dump_*.npz"))
    assert len(dumps) == 1


def test_appendix_c_mode_single_step_per_batch(small_setup):
    cfg = PpoConfig(
        total_env_steps=2048, n_steps=512, gradient_batch_override=512,
        eval_every=1024, eval_episodes=2, checkpoint_count=2,
    )
    res = Trainer(small_setup, cfg, seed=1).run()
    # one gradient step per collected batch
    assert res.final_checkpoint.gradient_step == 4
    assert res.final_checkpoint.env_step == 2048
    # the curve is indexed by gradient steps as well
    assert [p.gradient_step for p in res.curve] == sorted(p.gradient_step for p in res.curve)


def test_learning_signal_on_pendulum(pendulum_setup, trained_run):
    first = trained_run.curve[0].mean_return
    best = max(p.mean_return for p in trained_run.curve)
    assert best > first + 100.0  # 20k steps visibly improves the return
