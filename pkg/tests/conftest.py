"""Shared fixtures: tiny trainer configurations that run in milliseconds."""

from __future__ import annotations

import numpy as np
import pytest

from marlab.config import RunConfig, validate
from marlab.trainer import Trainer


def tiny_config(**overrides) -> RunConfig:
    base = dict(
        env="corridor_meet", mode="full", seed=0,
        k_agent=3, c_agent=3, k_global=3, c_global=3,
        h_agent=8, h_global=8, hidden=8,
        seq_length=3, horizon=3,
        batch_model=2, batch_rollout=2,
        model_steps=2, policy_steps=2,
        episodes=2, warmup_episodes=0,
        eval_interval=1, eval_episodes=1,
        activation="elu",
    )
    base.update(overrides)
    return validate(RunConfig(**base))


def tiny_trainer(**overrides) -> Trainer:
    return Trainer(tiny_config(**overrides))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
