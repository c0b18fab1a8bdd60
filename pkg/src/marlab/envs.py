"""Toy partially observable Markov games and the model buffer.

Three built-in environments:

* CorridorMeet — the primary testbed. Two agents on a 7-cell corridor must
  meet on a hidden goal cell. The goal location is always part of the global
  state but enters an agent's observation only when the agent is within one
  cell of it, so global information is genuinely more informative than local
  observations.
* SyncMatrix — a repeated 2-agent matching game, fully observable and
  trivially learnable; a fast sanity check for the whole pipeline.
* ChainWalk — a deterministic single-agent 5-state chain used to measure
  imagination fidelity against real rollouts.

Episodes serialize to line-delimited JSON (one StepRecord per line, fields
in declared order).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class StepRecord:
    """One environment transition, as stored in the model buffer."""

    state: np.ndarray            # s_t before the transition
    observations: np.ndarray     # [n_agents, obs_dim] at time t
    joint_action: np.ndarray     # [n_agents] int action indices taken at t
    rewards: np.ndarray          # [n_agents]
    terminated: bool
    avail_actions: np.ndarray    # [n_agents, action_count] 0/1 mask at time t

    def to_json(self) -> str:
        return json.dumps({
            "state": self.state.tolist(),
            "observations": self.observations.tolist(),
            "joint_action": self.joint_action.tolist(),
            "rewards": self.rewards.tolist(),
            "terminated": bool(self.terminated),
            "avail_actions": self.avail_actions.tolist(),
        })

    @staticmethod
    def from_json(line: str) -> "StepRecord":
        d = json.loads(line)
        return StepRecord(
            state=np.asarray(d["state"], dtype=np.float64),
            observations=np.asarray(d["observations"], dtype=np.float64),
            joint_action=np.asarray(d["joint_action"], dtype=np.int64),
            rewards=np.asarray(d["rewards"], dtype=np.float64),
            terminated=bool(d["terminated"]),
            avail_actions=np.asarray(d["avail_actions"], dtype=np.float64),
        )


def dump_episode(episode: list[StepRecord], path) -> None:
    with open(path, "w") as f:
        for rec in episode:
            f.write(rec.to_json() + "\n")


def load_episode(path) -> list[StepRecord]:
    with open(path) as f:
        return [StepRecord.from_json(line) for line in f if line.strip()]


class MarkovGame:
    """Base interface: deterministic observation function, seeded dynamics.

    `step_count` tallies every call to step(); the trainer asserts it stays
    frozen during imagination phases.
    """

    n_agents: int
    state_dim: int
    obs_dim: int
    action_count: int
    episode_limit: int

    def __init__(self):
        self.step_count = 0
        self._t = 0
        self._terminated = True

    def reset(self, seed: int | None = None):
        raise NotImplementedError

    def step(self, joint_action) -> StepRecord:
        raise NotImplementedError

    def current_state(self) -> np.ndarray:
        return self._state()

    def current_obs(self) -> np.ndarray:
        return self._obs()

    def current_avail(self) -> np.ndarray:
        return self._avail()

    def _check_step(self, joint_action, avail) -> np.ndarray:
        if self._terminated:
            raise RuntimeError("step() called on a terminated episode")
        joint_action = np.asarray(joint_action, dtype=np.int64)
        if joint_action.shape != (self.n_agents,):
            raise ValueError(f"joint_action must have shape ({self.n_agents},)")
        for i, a in enumerate(joint_action):
            if not 0 <= a < self.action_count or avail[i, a] != 1:
                raise ValueError(f"agent {i} chose unavailable action {a}")
        return joint_action


class CorridorMeet(MarkovGame):
    """Two agents on a 7-cell corridor must both stand on a hidden goal cell.

    Actions: 0=left, 1=stay, 2=right, with clamped movement. Observation per
    agent: own position one-hot (7), a flag for whether the other agent is
    within one cell (1), and the goal one-hot (7) zeroed out unless the agent
    is within one cell of the goal. Global state: both positions and the goal,
    all one-hot. Reward is +1 to everyone when both agents occupy the goal
    (episode ends), else -0.01 per step. Episode limit 50.
    """

    CELLS = 7
    n_agents = 2
    state_dim = 3 * CELLS
    obs_dim = CELLS + 1 + CELLS
    action_count = 3
    episode_limit = 50

    def __init__(self):
        super().__init__()
        self._rng = np.random.default_rng(0)
        self._pos = np.array([0, 6])
        self._goal = 1

    def reset(self, seed: int | None = None):
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._pos = np.array([0, self.CELLS - 1])
        self._goal = int(self._rng.integers(1, self.CELLS - 1))
        self._t = 0
        self._terminated = False
        return self._state(), self._obs(), self._avail()

    def _state(self) -> np.ndarray:
        s = np.zeros(self.state_dim)
        s[self._pos[0]] = 1.0
        s[self.CELLS + self._pos[1]] = 1.0
        s[2 * self.CELLS + self._goal] = 1.0
        return s

    def _obs(self) -> np.ndarray:
        obs = np.zeros((self.n_agents, self.obs_dim))
        for i in range(self.n_agents):
            obs[i, self._pos[i]] = 1.0
            other = self._pos[1 - i]
            if abs(self._pos[i] - other) <= 1:
                obs[i, self.CELLS] = 1.0
            if abs(self._pos[i] - self._goal) <= 1:
                obs[i, self.CELLS + 1 + self._goal] = 1.0
        return obs

    def _avail(self) -> np.ndarray:
        return np.ones((self.n_agents, self.action_count))

    def step(self, joint_action) -> StepRecord:
        avail = self._avail()
        joint_action = self._check_step(joint_action, avail)
        self.step_count += 1
        state_before = self._state()
        obs_before = self._obs()
        moves = joint_action - 1  # {0,1,2} -> {-1,0,+1}
        self._pos = np.clip(self._pos + moves, 0, self.CELLS - 1)
        self._t += 1
        success = bool(np.all(self._pos == self._goal))
        timeout = self._t >= self.episode_limit
        self._terminated = success or timeout
        reward = 1.0 if success else -0.01
        return StepRecord(
            state=state_before,
            observations=obs_before,
            joint_action=joint_action,
            rewards=np.full(self.n_agents, reward),
            terminated=self._terminated,
            avail_actions=avail,
        )


class SyncMatrix(MarkovGame):
    """Stateless repeated matching game: +1 to both agents iff actions match.

    Observation and state are both the previous joint action encoded as a
    concatenation of per-agent one-hots (all zeros at the first step).
    Episode length is fixed at 10 steps, so the maximum return is 10.
    """

    n_agents = 2
    action_count = 3
    state_dim = 6
    obs_dim = 6
    episode_limit = 10

    def __init__(self):
        super().__init__()
        self._prev = None

    def reset(self, seed: int | None = None):
        self._prev = None
        self._t = 0
        self._terminated = False
        return self._state(), self._obs(), self._avail()

    def _state(self) -> np.ndarray:
        s = np.zeros(self.state_dim)
        if self._prev is not None:
            s[self._prev[0]] = 1.0
            s[self.action_count + self._prev[1]] = 1.0
        return s

    def _obs(self) -> np.ndarray:
        return np.tile(self._state(), (self.n_agents, 1))

    def _avail(self) -> np.ndarray:
        return np.ones((self.n_agents, self.action_count))

    def step(self, joint_action) -> StepRecord:
        avail = self._avail()
        joint_action = self._check_step(joint_action, avail)
        self.step_count += 1
        state_before = self._state()
        obs_before = self._obs()
        reward = 1.0 if joint_action[0] == joint_action[1] else 0.0
        self._prev = joint_action.copy()
        self._t += 1
        self._terminated = self._t >= self.episode_limit
        return StepRecord(
            state=state_before,
            observations=obs_before,
            joint_action=joint_action,
            rewards=np.full(self.n_agents, reward),
            terminated=self._terminated,
            avail_actions=avail,
        )


class ChainWalk(MarkovGame):
    """Deterministic 1-agent chain of 5 states; used for fidelity tests.

    Action 0 stays, action 1 advances one state. Reaching the last state
    yields reward +1 and ends the episode; every other step yields 0.
    Fully observable: observation == state == position one-hot.
    """

    n_agents = 1
    action_count = 2
    state_dim = 5
    obs_dim = 5
    episode_limit = 8

    def __init__(self):
        super().__init__()
        self._pos = 0

    def reset(self, seed: int | None = None):
        self._pos = 0
        self._t = 0
        self._terminated = False
        return self._state(), self._obs(), self._avail()

    def _state(self) -> np.ndarray:
        s = np.zeros(self.state_dim)
        s[self._pos] = 1.0
        return s

    def _obs(self) -> np.ndarray:
        return self._state()[None, :]

    def _avail(self) -> np.ndarray:
        return np.ones((self.n_agents, self.action_count))

    def step(self, joint_action) -> StepRecord:
        avail = self._avail()
        joint_action = self._check_step(joint_action, avail)
        self.step_count += 1
        state_before = self._state()
        obs_before = self._obs()
        self._pos = min(self._pos + int(joint_action[0]), self.state_dim - 1)
        self._t += 1
        success = self._pos == self.state_dim - 1
        self._terminated = success or self._t >= self.episode_limit
        reward = 1.0 if success else 0.0
        return StepRecord(
            state=state_before,
            observations=obs_before,
            joint_action=joint_action,
            rewards=np.full(self.n_agents, reward),
            terminated=self._terminated,
            avail_actions=avail,
        )


ENV_REGISTRY = {
    "corridor_meet": CorridorMeet,
    "sync_matrix": SyncMatrix,
    "chain_walk": ChainWalk,
}


def make_env(name: str) -> MarkovGame:
    if name not in ENV_REGISTRY:
        raise ValueError(f"unknown environment '{name}' (have {sorted(ENV_REGISTRY)})")
    return ENV_REGISTRY[name]()
