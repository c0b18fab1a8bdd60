"""Training orchestration: interleaved collection, model training,
imagination, and policy updates, with strict phase isolation and
fully seeded determinism.

One outer iteration = one collected episode, M model optimizer steps, and
R imagination/PPO rounds. Model parameters are frozen during the policy
phase and policy parameters during the model phase; both are asserted by
checksum every episode.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .buffer import Episode, ModelBuffer
from .config import RunConfig, serialize_config
from .envs import MarkovGame, make_env
from .marl import (LatentActorCritic, PolicyConfig, build_ppo_batch,
                   critic_tokens)
from .optim import Adam, clip_grad_norm
from .tensor import Tensor, forward_backward, no_grad
from .worldmodel import BiLevelWorldModel, ModelConfig, one_hot

METRICS_VERSION = "marlab-metrics v1"
METRICS_COLUMNS = [
    "episode", "env_steps", "train_return", "eval_return_mean",
    "loss_total", "recon_nll", "kl_agent", "kl_global", "reward_nll",
    "term_nll", "avail_nll", "action_nll",
    "ppo_ratio_mean", "ppo_clip_fraction", "policy_loss", "value_loss",
    "entropy",
]


def params_checksum(params: dict[str, Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(params[name].data.tobytes())
    return h.hexdigest()


def model_config_from_run(cfg: RunConfig, env: MarkovGame) -> ModelConfig:
    return ModelConfig(
        n_agents=env.n_agents, obs_dim=env.obs_dim, state_dim=env.state_dim,
        action_count=env.action_count,
        k_agent=cfg.k_agent, c_agent=cfg.c_agent,
        k_global=cfg.k_global, c_global=cfg.c_global,
        h_agent=cfg.h_agent, h_global=cfg.h_global, hidden=cfg.hidden,
        activation=cfg.activation, unimix=cfg.unimix, kl_alpha=cfg.kl_alpha,
        loss_weights={"kl_agent": cfg.kl_weight, "kl_global": cfg.kl_weight},
        mode=cfg.mode,
    )


def policy_config_from_run(cfg: RunConfig, mc: ModelConfig) -> PolicyConfig:
    no_global = cfg.mode == "no_global"
    return PolicyConfig(
        n_agents=mc.n_agents, action_count=mc.action_count,
        za_dim=mc.za_dim, ha_dim=mc.h_agent,
        zg_dim=0 if no_global else mc.zg_dim,
        hg_dim=0 if no_global else mc.h_global,
        hidden=cfg.hidden, activation=cfg.activation,
        critic_global_only=cfg.critic_global_only,
        lr_actor=cfg.lr_actor, lr_critic=cfg.lr_critic,
        clip_eps=cfg.clip_eps, epochs=cfg.ppo_epochs,
        entropy_coef=cfg.entropy_coef, entropy_anneal=cfg.entropy_anneal,
        value_coef=cfg.value_coef, max_grad_norm=cfg.grad_clip,
        gamma=cfg.gamma, gae_lambda=cfg.gae_lambda,
    )


class Trainer:
    def __init__(self, cfg: RunConfig, out_dir: str | Path | None = None):
        self.cfg = cfg
        self.env = make_env(cfg.env)
        self.eval_env = make_env(cfg.env)
        ss = np.random.SeedSequence(cfg.seed)
        (self.rng_model_init, self.rng_policy_init, self.rng_collect,
         self.rng_sample, self.rng_train, self.rng_eval) = [
            np.random.default_rng(s) for s in ss.spawn(6)]
        self.model_config = model_config_from_run(cfg, self.env)
        self.model = BiLevelWorldModel(self.model_config, self.rng_model_init)
        self.agent = LatentActorCritic(
            policy_config_from_run(cfg, self.model_config), self.rng_policy_init)
        self.buffer = ModelBuffer(cfg.buffer_capacity)
        self.model_opt = Adam(self.model.params, lr=cfg.lr_model)
        self.env_steps = 0
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self._metrics_rows: list[dict] = []
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    # -- environment interaction -----------------------------------------------

    def collect_episode(self, env: MarkovGame | None = None,
                        rng: np.random.Generator | None = None,
                        greedy: bool = False,
                        store: bool = True) -> tuple[Episode, float]:
        """Run one episode with the decentralized acting path.

        The action path touches only each agent's own observation, action,
        and recurrent state: agent GRU step, agent posterior, actor.
        """
        env = env or self.env
        rng = rng or self.rng_collect
        cfg = self.model_config
        N = cfg.n_agents
        seed = int(rng.integers(2 ** 31 - 1))
        state, obs, avail = env.reset(seed)
        with no_grad():
            h_a = Tensor(np.zeros((N, cfg.h_agent)))
            z_a = self.model._uniform_sample(N, cfg.k_agent, cfg.c_agent, rng)
            prev_actions = np.full(N, -1, dtype=np.int64)
            records = []
            ep_return = 0.0
            while True:
                own = Tensor(one_hot(prev_actions, cfg.action_count))
                h_a = self.model.recurrent_step_agent(h_a, z_a, own)
                q_a = self.model.posterior_agent(Tensor(obs), h_a)
                z_a = self.model._sample(q_a, rng, "hard")
                actions, _ = self.agent.act_batch(z_a.data, h_a.data, avail,
                                                  rng, greedy=greedy)
                if store and not greedy and self.cfg.explore_eps > 0.0:
                    # collection-time epsilon-greedy: keeps rare rewarding
                    # events flowing into the buffer even if the policy's
                    # own entropy decays, so the reward head never starves
                    explore = rng.random(N) < self.cfg.explore_eps
                    for i in np.flatnonzero(explore):
                        choices = np.flatnonzero(avail[i])
                        actions[i] = int(choices[rng.integers(len(choices))])
                rec = env.step(actions)
                records.append(rec)
                ep_return += float(rec.rewards.mean())
                prev_actions = actions
                if rec.terminated:
                    break
                obs = env.current_obs()
                avail = env.current_avail()
        episode = Episode(records=records,
                          final_state=env.current_state(),
                          final_obs=env.current_obs())
        if store:
            self.buffer.append(episode)
            self.env_steps += len(records)
        return episode, ep_return

    # -- training phases ---------------------------------------------------------

    def model_train_step(self, batch=None) -> dict[str, float]:
        if batch is None:
            batch = self.buffer.sample(self.cfg.batch_model, self.cfg.seq_length,
                                       self.rng_sample)
        loss = self.model.model_loss(batch, self.rng_train)
        grad_map = forward_backward(loss.total)
        grads = {name: grad_map.get(id(p), np.zeros_like(p.data))
                 for name, p in self.model.params.items()}
        self.model_opt.step(clip_grad_norm(grads, self.cfg.grad_clip))
        return loss.to_floats()

    def train_model_phase(self, steps: int | None = None) -> list[dict[str, float]]:
        steps = self.cfg.model_steps if steps is None else steps
        return [self.model_train_step() for _ in range(steps)]

    def train_policy_phase(self, rounds: int | None = None) -> list[dict[str, float]]:
        rounds = self.cfg.policy_steps if rounds is None else rounds
        cfg = self.cfg
        stats = []
        for _ in range(rounds):
            start = self.buffer.sample(cfg.batch_rollout, cfg.seq_length,
                                       self.rng_sample)
            rollout = self.model.imagine(start, self.agent, cfg.horizon,
                                         self.rng_train)
            tokens = critic_tokens(rollout, self.model_config.n_agents,
                                   cfg.critic_global_only)
            H = rollout.horizon
            rows = rollout.z_agent.shape[1]
            values = self.agent.values_np(tokens).reshape(H, rows)
            batch = build_ppo_batch(rollout, tokens, values,
                                    cfg.gamma, cfg.gae_lambda)
            stats.append(self.agent.ppo_update(batch))
        return stats

    def evaluate(self, episodes: int | None = None) -> float:
        episodes = self.cfg.eval_episodes if episodes is None else episodes
        returns = []
        for _ in range(episodes):
            _, ret = self.collect_episode(env=self.eval_env, rng=self.rng_eval,
                                          greedy=True, store=False)
        # eval episodes do not count toward the training env-step budget
            returns.append(ret)
        return float(np.mean(returns))

    # -- outer loop ----------------------------------------------------------------

    def run(self) -> list[dict]:
        cfg = self.cfg
        log_path = self.out_dir / "log.jsonl" if self.out_dir else None
        last_eval = float("nan")
        for ep in range(cfg.episodes):
            actor_sum = params_checksum(self.agent.actor_params)
            critic_sum = params_checksum(self.agent.critic_params)
            _, train_return = self.collect_episode()
            losses = self.train_model_phase()
            assert params_checksum(self.agent.actor_params) == actor_sum
            assert params_checksum(self.agent.critic_params) == critic_sum

            ppo_stats: list[dict[str, float]] = []
            if ep + 1 > cfg.warmup_episodes:
                model_sum = params_checksum(self.model.params)
                steps_before = self.env.step_count
                ppo_stats = self.train_policy_phase()
                assert params_checksum(self.model.params) == model_sum
                assert self.env.step_count == steps_before

            if (ep + 1) % cfg.eval_interval == 0 or ep == cfg.episodes - 1:
                last_eval = self.evaluate()

            row = self._metrics_row(ep, train_return, losses, ppo_stats, last_eval)
            self._metrics_rows.append(row)
            if self.out_dir:
                self._flush_metrics()
                if log_path:
                    with open(log_path, "a") as f:
                        f.write(json.dumps({**row, "timestamp": time.time()}) + "\n")
        if self.out_dir:
            save_checkpoint(self.out_dir / "checkpoint.npz", self)
            (self.out_dir / "config.txt").write_text(serialize_config(cfg))
        return self._metrics_rows

    def _metrics_row(self, ep, train_return, losses, ppo_stats, last_eval) -> dict:
        mean_loss = {k: float(np.mean([l[k] for l in losses])) if losses else 0.0
                     for k in ("total", "recon_nll", "kl_agent", "kl_global",
                               "reward_nll", "term_nll", "avail_nll", "action_nll")}
        mean_ppo = {k: float(np.mean([s[k] for s in ppo_stats])) if ppo_stats else 0.0
                    for k in ("ratio_mean", "clip_fraction", "policy_loss",
                              "value_loss", "entropy")}
        return {
            "episode": ep,
            "env_steps": self.env_steps,
            "train_return": train_return,
            "eval_return_mean": last_eval,
            "loss_total": mean_loss["total"],
            "recon_nll": mean_loss["recon_nll"],
            "kl_agent": mean_loss["kl_agent"],
            "kl_global": mean_loss["kl_global"],
            "reward_nll": mean_loss["reward_nll"],
            "term_nll": mean_loss["term_nll"],
            "avail_nll": mean_loss["avail_nll"],
            "action_nll": mean_loss["action_nll"],
            "ppo_ratio_mean": mean_ppo["ratio_mean"],
            "ppo_clip_fraction": mean_ppo["clip_fraction"],
            "policy_loss": mean_ppo["policy_loss"],
            "value_loss": mean_ppo["value_loss"],
            "entropy": mean_ppo["entropy"],
        }

    def _flush_metrics(self) -> None:
        path = self.out_dir / "metrics.csv"
        lines = [f"# {METRICS_VERSION}", ",".join(METRICS_COLUMNS)]
        for row in self._metrics_rows:
            lines.append(",".join(_fmt(row[c]) for c in METRICS_COLUMNS))
        path.write_text("\n".join(lines) + "\n")


def _fmt(x) -> str:
    if isinstance(x, int):
        return str(x)
    return f"{x:.12g}"


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(path, trainer: Trainer) -> None:
    """All named parameter arrays plus a config fingerprint, as an npz."""
    cfg_text = serialize_config(trainer.cfg)
    fingerprint = hashlib.sha256(cfg_text.encode()).hexdigest()
    arrays = {}
    for prefix, params in (("model", trainer.model.params),
                           ("actor", trainer.agent.actor_params),
                           ("critic", trainer.agent.critic_params)):
        for name, p in params.items():
            arrays[f"{prefix}/{name}"] = p.data
    arrays["config_fingerprint"] = np.frombuffer(
        fingerprint.encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path, trainer: Trainer, strict_fingerprint: bool = True) -> None:
    data = np.load(path)
    cfg_text = serialize_config(trainer.cfg)
    fingerprint = hashlib.sha256(cfg_text.encode()).hexdigest()
    stored = bytes(data["config_fingerprint"]).decode()
    if strict_fingerprint and stored != fingerprint:
        raise ValueError("checkpoint config fingerprint does not match this config")
    for prefix, params in (("model", trainer.model.params),
                           ("actor", trainer.agent.actor_params),
                           ("critic", trainer.agent.critic_params)):
        for name, p in params.items():
            p.data = np.array(data[f"{prefix}/{name}"], dtype=np.float64)
