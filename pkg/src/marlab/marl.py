"""Latent-space actor-critic: shared decentralized actor, shared centralized
critic with self-attention over agents, GAE, and clipped PPO updates.

The actor sees only an agent's own latent state and embedding, so trained
policies execute decentralized. The critic sees every agent's latents and
embeddings (training-time only): each agent is a token in a single
scaled-dot-product attention layer followed by a shared value head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nets import init_linear, init_mlp, linear, mlp
from .optim import Adam, clip_grad_norm
from .tensor import Tensor, concat, forward_backward, no_grad, xlogy


@dataclass
class PolicyConfig:
    n_agents: int
    action_count: int
    za_dim: int
    ha_dim: int
    zg_dim: int = 0            # 0 in no_global mode
    hg_dim: int = 0
    hidden: int = 64
    attn_dim: int = 32
    activation: str = "relu"
    critic_global_only: bool = False  # feed only the global latent to the critic
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    clip_eps: float = 0.2
    epochs: int = 5
    entropy_coef: float = 0.001
    entropy_anneal: float = 0.99998
    value_coef: float = 0.5
    max_grad_norm: float = 100.0
    gamma: float = 0.99
    gae_lambda: float = 0.95

    @property
    def critic_token_dim(self) -> int:
        if self.zg_dim == 0:
            return self.za_dim + self.ha_dim
        if self.critic_global_only:
            return self.zg_dim + self.hg_dim
        return self.za_dim + self.zg_dim + self.ha_dim + self.hg_dim


@dataclass
class PpoBatch:
    """Flattened imagined transitions for one update."""

    actor_inputs: np.ndarray   # [T*B*N, za+ha]
    critic_tokens: np.ndarray  # [T*B, N, token_dim]
    actions: np.ndarray        # [T*B*N] int
    old_log_probs: np.ndarray  # [T*B*N]
    advantages: np.ndarray     # [T*B*N]
    value_targets: np.ndarray  # [T*B*N]
    avail: np.ndarray          # [T*B*N, A]
    weights: np.ndarray        # [T*B*N] continuation weighting


def masked_log_probs(logits: Tensor, avail: np.ndarray) -> Tensor:
    """Log-probs with unavailable actions at exactly -inf (probability 0).

    Rows with no available action fall back to the unmasked distribution.
    """
    safe = avail.copy()
    dead = safe.sum(axis=-1) == 0
    if dead.any():
        safe[dead] = 1.0
    # -1e9 underflows to probability exactly 0.0 after the softmax while
    # keeping every intermediate finite (an actual -inf poisons 0 * -inf)
    gate = np.where(safe > 0, 0.0, -1e9)
    return (logits + Tensor(gate)).log_softmax()


class LatentActorCritic:
    """Parameter-shared actor (theta) and attention critic (phi)."""

    def __init__(self, config: PolicyConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self.actor_params: dict[str, Tensor] = {}
        init_mlp(self.actor_params, rng, "actor", c.za_dim + c.ha_dim,
                 c.hidden, c.action_count, out_scale=0.01)
        self.critic_params: dict[str, Tensor] = {}
        d = c.attn_dim
        init_linear(self.critic_params, rng, "embed", c.critic_token_dim, d)
        init_linear(self.critic_params, rng, "q", d, d)
        init_linear(self.critic_params, rng, "k", d, d)
        init_linear(self.critic_params, rng, "v", d, d)
        init_mlp(self.critic_params, rng, "vhead", d, c.hidden, 1)
        self.actor_opt = Adam(self.actor_params, lr=c.lr_actor)
        self.critic_opt = Adam(self.critic_params, lr=c.lr_critic)
        self.entropy_coef = c.entropy_coef

    # -- acting ------------------------------------------------------------------

    def action_log_probs(self, actor_inputs: Tensor, avail: np.ndarray) -> Tensor:
        logits = mlp(self.actor_params, "actor", actor_inputs, self.config.activation)
        return masked_log_probs(logits, avail)

    def act_batch(self, z_agent: np.ndarray, h_agent: np.ndarray,
                  avail: np.ndarray, rng: np.random.Generator,
                  greedy: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Sample (or argmax) one action per row; returns (indices, log-probs)."""
        with no_grad():
            x = Tensor(np.concatenate([z_agent, h_agent], axis=-1))
            logp = self.action_log_probs(x, avail).data
        p = np.exp(logp)
        if greedy:
            idx = p.argmax(axis=-1)
        else:
            cdf = np.cumsum(p, axis=-1)
            cdf[:, -1] = 1.0
            u = rng.random((p.shape[0], 1))
            idx = (u > cdf).sum(axis=-1)
        return idx, logp[np.arange(len(idx)), idx]

    def value(self, tokens: Tensor) -> Tensor:
        """Centralized value: tokens [B, N, token_dim] -> values [B, N]."""
        c = self.config
        x = linear(self.critic_params, "embed", tokens)
        q = linear(self.critic_params, "q", x)
        k = linear(self.critic_params, "k", x)
        v = linear(self.critic_params, "v", x)
        scores = (q @ k.transpose_last2()) * (1.0 / math.sqrt(c.attn_dim))
        mixed = scores.softmax() @ v
        out = mlp(self.critic_params, "vhead", mixed, c.activation)
        return out.reshape(out.shape[0], out.shape[1])

    def values_np(self, tokens: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.value(Tensor(tokens)).data

    # -- learning -----------------------------------------------------------------

    def ppo_update(self, batch: PpoBatch) -> dict[str, float]:
        """Clipped-surrogate update; returns summary stats of the last epoch."""
        c = self.config
        adv = normalize_advantages(batch.advantages)
        n = len(adv)
        rows = np.arange(n)
        act_onehot = np.zeros((n, c.action_count))
        act_onehot[rows, batch.actions] = 1.0
        w = batch.weights
        w_sum = max(float(w.sum()), 1e-12)
        stats: dict[str, float] = {}

        for _ in range(c.epochs):
            x = Tensor(batch.actor_inputs)
            logp_all = self.action_log_probs(x, batch.avail)
            logp = (logp_all * Tensor(act_onehot)).sum(axis=-1)
            ratio = (logp - Tensor(batch.old_log_probs)).exp()
            clipped = _clip(ratio, 1.0 - c.clip_eps, 1.0 + c.clip_eps)
            adv_t = Tensor(adv)
            surrogate = _elementwise_min(ratio * adv_t, clipped * adv_t)
            w_t = Tensor(w / w_sum)
            policy_loss = -(w_t * surrogate).sum()
            probs = logp_all.exp()
            entropy = -(xlogy(probs, probs)).sum(axis=-1)
            entropy_bonus = (w_t * entropy).sum()
            actor_loss = policy_loss - entropy_bonus * self.entropy_coef
            if not np.isfinite(actor_loss.data):
                raise FloatingPointError("non-finite PPO actor loss")
            grads = _named_grads(actor_loss, self.actor_params)
            self.actor_opt.step(clip_grad_norm(grads, c.max_grad_norm))

            values = self.value(Tensor(batch.critic_tokens)).reshape(n)
            v_err = values - Tensor(batch.value_targets)
            value_loss = (Tensor(w / w_sum) * v_err * v_err).sum() * (0.5 * c.value_coef)
            if not np.isfinite(value_loss.data):
                raise FloatingPointError("non-finite PPO value loss")
            vgrads = _named_grads(value_loss, self.critic_params)
            self.critic_opt.step(clip_grad_norm(vgrads, c.max_grad_norm))

            ratio_d = ratio.data
            stats = {
                "ratio_mean": float(ratio_d.mean()),
                "clip_fraction": float(np.mean(
                    (ratio_d < 1.0 - c.clip_eps) | (ratio_d > 1.0 + c.clip_eps))),
                "policy_loss": float(policy_loss.data),
                "value_loss": float(value_loss.data),
                "entropy": float((w / w_sum * entropy.data).sum()),
            }
        self.entropy_coef *= c.entropy_anneal
        return stats


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    if adv.size <= 1:
        return adv - adv.mean()
    std = adv.std()
    return (adv - adv.mean()) / (std + 1e-8)


def gae(rewards: np.ndarray, values: np.ndarray, continuation: np.ndarray,
        gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation with per-step discount gamma*c_t.

    rewards, continuation: [T, ...]; values: [T+1, ...] (bootstrap at T).
    Returns (advantages [T, ...], value_targets = advantages + values[:T]).
    """
    T = rewards.shape[0]
    if values.shape[0] != T + 1 or continuation.shape[0] != T:
        raise ValueError("gae: misaligned sequence lengths")
    adv = np.zeros_like(rewards)
    carry = np.zeros_like(rewards[0])
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * continuation[t] * values[t + 1] - values[t]
        carry = delta + gamma * lam * continuation[t] * carry
        adv[t] = carry
    return adv, adv + values[:T]


def critic_tokens(rollout, n_agents: int, global_only: bool) -> np.ndarray:
    """Critic token array [H*B, N, token_dim] from an imagined rollout."""
    if rollout.z_global is None:
        feats = [rollout.z_agent, rollout.h_agent]
    elif global_only:
        feats = [rollout.z_global, rollout.h_global]
    else:
        feats = [rollout.z_agent, rollout.z_global, rollout.h_agent, rollout.h_global]
    flat = np.concatenate(feats, axis=-1)                # [H, B*N, D]
    H, rows, D = flat.shape
    return flat.reshape(H * (rows // n_agents), n_agents, D)


def build_ppo_batch(rollout, tokens_all: np.ndarray, values: np.ndarray,
                    gamma: float, lam: float) -> PpoBatch:
    """Turn an imagined rollout plus critic values into PPO training rows.

    `values` has shape [H, B*N]; transition t (0..H-2) pairs step t's state
    and action with the reward predicted at arrival t+1. Transitions are
    weighted by the probability the rollout is still alive at step t.
    """
    H = rollout.horizon
    if H < 2:
        raise ValueError("policy learning needs imagination horizon >= 2")
    T = H - 1
    rewards = rollout.rewards[1:]                        # [T, B*N]
    cont = 1.0 - rollout.term_probs[1:]                  # [T, B*N]
    adv, targets = gae(rewards, values, cont, gamma, lam)
    weights = rollout.continuation[:T]

    rows = rollout.z_agent.shape[1]
    actor_inputs = np.concatenate([rollout.z_agent[:T], rollout.h_agent[:T]],
                                  axis=-1).reshape(T * rows, -1)
    n_agents = rows // (tokens_all.shape[0] // H)
    tokens = tokens_all[:T * (rows // n_agents)]         # [T*B, N, token_dim]
    return PpoBatch(
        actor_inputs=actor_inputs,
        critic_tokens=tokens,
        actions=rollout.actions[:T].reshape(-1),
        old_log_probs=rollout.log_probs[:T].reshape(-1),
        advantages=adv.reshape(-1),
        value_targets=targets.reshape(-1),
        avail=rollout.avail_masks[:T].reshape(-1, rollout.avail_masks.shape[-1]),
        weights=weights.reshape(-1),
    )


def _named_grads(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    grad_map = forward_backward(loss)
    return {name: grad_map.get(id(p), np.zeros_like(p.data))
            for name, p in params.items()}


def _clip(x: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(x.data, lo, hi)

    def backward(g, a=x, lo=lo, hi=hi):
        a._accum(g * ((a.data > lo) & (a.data < hi)))

    return Tensor._from_op(data, (x,), backward)


def _elementwise_min(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def backward(g, a=a, b=b, take_a=take_a):
        if a.requires_grad or a._parents:
            a._accum(g * take_a)
        if b.requires_grad or b._parents:
            b._accum(g * ~take_a)

    return Tensor._from_op(data, (a, b), backward)
