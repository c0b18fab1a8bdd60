"""Bounded FIFO episode buffer and trajectory-window sampling.

Model timesteps use the arrival convention: timestep t carries the
observation/state arrived at, the action that led there (prev_action), and
the reward/termination produced by that action. An episode of T environment
steps therefore yields T+1 model timesteps, with the terminal arrival
observation stored explicitly on the episode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import StepRecord


@dataclass
class Episode:
    """A full episode plus the terminal arrival point."""

    records: list[StepRecord]
    final_state: np.ndarray
    final_obs: np.ndarray

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_timesteps(self) -> int:
        return len(self.records) + 1


@dataclass
class Batch:
    """B windows of L model timesteps, zero-padded with a validity mask."""

    states: np.ndarray        # [B, L, state_dim]
    obs: np.ndarray           # [B, L, N, obs_dim]
    prev_actions: np.ndarray  # [B, L, N] int, -1 when no previous action exists
    actions: np.ndarray       # [B, L, N] int, -1 at terminal/padded timesteps
    rewards: np.ndarray       # [B, L, N]
    terminals: np.ndarray     # [B, L] 0/1
    avail: np.ndarray         # [B, L, N, A]
    mask: np.ndarray          # [B, L] 1 where the timestep is real
    action_mask: np.ndarray   # [B, L] 1 where an action was actually taken
    fresh_start: np.ndarray   # [B] 1 where the window begins at an episode start

    @property
    def size(self) -> tuple[int, int]:
        return self.states.shape[0], self.states.shape[1]


class ModelBuffer:
    """FIFO buffer of episodes, bounded by total environment steps."""

    def __init__(self, capacity_steps: int):
        if capacity_steps <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity_steps
        self.episodes: list[Episode] = []
        self.total_steps = 0

    def append(self, episode: Episode) -> None:
        self.episodes.append(episode)
        self.total_steps += len(episode)
        while self.total_steps > self.capacity and len(self.episodes) > 1:
            evicted = self.episodes.pop(0)
            self.total_steps -= len(evicted)

    def sample(self, batch_size: int, length: int, rng: np.random.Generator) -> Batch:
        """Draw B uniform windows of `length` model timesteps."""
        if not self.episodes:
            raise RuntimeError("cannot sample from an empty buffer")
        n_eps = len(self.episodes)
        first = next(iter(self.episodes))
        n_agents, obs_dim = first.records[0].observations.shape
        state_dim = first.records[0].state.shape[0]
        action_count = first.records[0].avail_actions.shape[1]

        B, L = batch_size, length
        out = Batch(
            states=np.zeros((B, L, state_dim)),
            obs=np.zeros((B, L, n_agents, obs_dim)),
            prev_actions=np.full((B, L, n_agents), -1, dtype=np.int64),
            actions=np.full((B, L, n_agents), -1, dtype=np.int64),
            rewards=np.zeros((B, L, n_agents)),
            terminals=np.zeros((B, L)),
            avail=np.ones((B, L, n_agents, action_count)),
            mask=np.zeros((B, L)),
            action_mask=np.zeros((B, L)),
            fresh_start=np.zeros(B),
        )
        for b in range(B):
            ep = self.episodes[int(rng.integers(n_eps))]
            T = ep.n_timesteps
            start = int(rng.integers(max(T - L, 0) + 1))
            out.fresh_start[b] = 1.0 if start == 0 else 0.0
            for j in range(min(L, T - start)):
                t = start + j
                self._fill_timestep(out, b, j, ep, t)
        return out

    @staticmethod
    def _fill_timestep(out: Batch, b: int, j: int, ep: Episode, t: int) -> None:
        T_env = len(ep.records)
        if t < T_env:
            rec = ep.records[t]
            out.states[b, j] = rec.state
            out.obs[b, j] = rec.observations
            out.actions[b, j] = rec.joint_action
            out.avail[b, j] = rec.avail_actions
            out.action_mask[b, j] = 1.0
        else:
            out.states[b, j] = ep.final_state
            out.obs[b, j] = ep.final_obs
        if t > 0:
            prev = ep.records[t - 1]
            out.prev_actions[b, j] = prev.joint_action
            out.rewards[b, j] = prev.rewards
            out.terminals[b, j] = 1.0 if prev.terminated else 0.0
        out.mask[b, j] = 1.0
