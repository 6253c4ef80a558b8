"""Shared fixtures: small setups and one session-scoped trained run."""

from __future__ import annotations

import numpy as np
import pytest

from actionlab.actuation import ActuationMode, ControlKind
from actionlab.ppo import PpoConfig, RunSetup, Trainer


@pytest.fixture(scope="session")
def pendulum_setup() -> RunSetup:
    return RunSetup("pendulum", {}, ActuationMode(ControlKind.TORQUE))


@pytest.fixture(scope="session")
def small_setup() -> RunSetup:
    """Pendulum stack with a tiny network, for gradient-heavy tests."""
    return RunSetup("pendulum", {}, ActuationMode(ControlKind.TORQUE), hidden_layers=(8, 8))


@pytest.fixture(scope="session")
def short_cfg() -> PpoConfig:
    return PpoConfig(
        total_env_steps=4096,
        n_steps=1024,
        epochs=3,
        eval_every=2048,
        eval_episodes=3,
        checkpoint_count=2,
    )


@pytest.fixture(scope="session")
def trained_run(pendulum_setup):
    """One modest pendulum training run shared by analysis tests.

    20k steps is enough for the value function and returns to carry
    structure; 5 checkpoints cover the series-shaped tests.
    """
    cfg = PpoConfig(
        total_env_steps=20_000,
        eval_every=10_000,
        eval_episodes=5,
        checkpoint_count=5,
    )
    trainer = Trainer(pendulum_setup, cfg, seed=7)
    return trainer.run()


@pytest.fixture(scope="session")
def trained_checkpoint(trained_run):
    return trained_run.final_checkpoint


def assert_bit_equal(a: np.ndarray, b: np.ndarray, what: str = "arrays") -> None:
    assert a.shape == b.shape, f"{what}: shape {a.shape} != {b.shape}"
    assert np.array_equal(a, b), f"{what}: values differ (max abs diff {np.max(np.abs(a - b))})"
