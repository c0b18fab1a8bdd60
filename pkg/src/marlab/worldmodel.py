"""Bi-level categorical latent world model.

Each agent carries two levels of latent state: a global latent informed by
the environment state during training, and an agent latent computable from
the agent's own observation alone. During training the posterior chain is
bottom-up (agent latent feeds the global posterior) and the prior chain is
top-down (global latent feeds the agent prior); during imagination only the
priors run, so no real state or observation is ever touched after the first
encoded step.

Three model modes:
* "full"          — one global latent per agent (the default).
* "no_global"     — the global level removed entirely; the agent prior
                    conditions on the agent embedding only.
* "single_global" — one shared global latent per environment (not per
                    agent); the global networks run once per batch element.

Internally agents are folded into the batch axis: per-agent arrays have
B*N rows in agent-major order (row b*N + i is agent i of batch element b).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dists import CategoricalDist, kl_balanced
from .nets import gru, init_gru, init_mlp, mlp
from .tensor import Tensor, concat, no_grad

MODES = ("full", "no_global", "single_global")


@dataclass
class ModelConfig:
    n_agents: int
    obs_dim: int
    state_dim: int
    action_count: int
    k_agent: int = 8
    c_agent: int = 8
    k_global: int = 8
    c_global: int = 8
    h_agent: int = 64
    h_global: int = 64
    hidden: int = 64
    activation: str = "relu"
    unimix: float = 0.01
    kl_alpha: float = 0.8
    kl_balance: bool = True   # False: plain KL (true-derivative gradients)
    mode: str = "full"
    loss_weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{self.mode}'")

    @property
    def za_dim(self) -> int:
        return self.k_agent * self.c_agent

    @property
    def zg_dim(self) -> int:
        return self.k_global * self.c_global

    @property
    def joint_feat_dim(self) -> int:
        """Input width of heads that see both latent levels."""
        if self.mode == "no_global":
            return self.za_dim + self.h_agent
        return self.za_dim + self.zg_dim + self.h_agent + self.h_global


@dataclass
class BiLevelState:
    """Recurrent embeddings and latest latent samples (flat one-hots)."""

    h_agent: Tensor            # [B*N, Ha]
    z_agent: Tensor            # [B*N, Ka*Ca]
    h_global: Tensor | None    # [B*N, Hg] (full) or [B, Hg] (single_global)
    z_global: Tensor | None    # matching rows


@dataclass
class LossBreakdown:
    recon_nll: Tensor
    kl_agent: Tensor
    kl_global: Tensor
    reward_nll: Tensor
    term_nll: Tensor
    avail_nll: Tensor
    action_nll: Tensor
    total: Tensor

    def to_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in (
            "recon_nll", "kl_agent", "kl_global", "reward_nll",
            "term_nll", "avail_nll", "action_nll", "total")}


@dataclass
class ImaginedRollout:
    """H steps of latent trajectories, stored as plain arrays (model frozen).

    Step 0 is posterior-encoded from real data; steps 1..H-1 come from the
    prior chain under the acting policy. PPO transitions pair step t with the
    action taken at t and the reward predicted at t+1.
    """

    z_agent: np.ndarray        # [H, B*N, Ka*Ca]
    h_agent: np.ndarray        # [H, B*N, Ha]
    z_global: np.ndarray | None  # [H, B*N, Kg*Cg] (agent-row aligned)
    h_global: np.ndarray | None  # [H, B*N, Hg]
    actions: np.ndarray        # [H-1, B*N] int
    log_probs: np.ndarray      # [H-1, B*N]
    avail_masks: np.ndarray    # [H-1, B*N, A] masks the policy actually saw
    rewards: np.ndarray        # [H, B*N] predicted (index 0 unused by GAE)
    term_probs: np.ndarray     # [H, B*N]
    continuation: np.ndarray   # [H, B*N] running product of (1 - term_prob)

    @property
    def horizon(self) -> int:
        return self.z_agent.shape[0]


def one_hot(indices: np.ndarray, depth: int) -> np.ndarray:
    """One-hot encode; negative indices map to all-zero rows."""
    idx = np.asarray(indices, dtype=np.int64)
    out = np.zeros(idx.shape + (depth,))
    valid = idx >= 0
    out[(*np.nonzero(valid), idx[valid])] = 1.0
    return out


class BiLevelWorldModel:
    """All model components over one shared parameter dict."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict[str, Tensor] = {}
        c = config
        joint_act = c.n_agents * c.action_count
        init_gru(self.params, rng, "gru_a", c.za_dim + c.action_count, c.h_agent)
        init_mlp(self.params, rng, "post_a", c.obs_dim + c.h_agent, c.hidden, c.za_dim)
        init_mlp(self.params, rng, "dec_obs", c.h_agent + c.za_dim, c.hidden, c.obs_dim)
        init_mlp(self.params, rng, "head_r", c.za_dim + c.h_agent, c.hidden, 1)
        init_mlp(self.params, rng, "head_y", c.joint_feat_dim, c.hidden, 1)
        init_mlp(self.params, rng, "head_avail", c.joint_feat_dim, c.hidden, c.action_count)
        init_mlp(self.params, rng, "dec_act", c.joint_feat_dim, c.hidden, c.action_count)
        if c.mode == "no_global":
            init_mlp(self.params, rng, "prior_a", c.h_agent, c.hidden, c.za_dim)
        else:
            init_gru(self.params, rng, "gru_g", c.zg_dim + joint_act, c.h_global)
            init_mlp(self.params, rng, "post_g", c.state_dim + c.za_dim + c.h_global,
                     c.hidden, c.zg_dim)
            init_mlp(self.params, rng, "prior_g", c.h_global, c.hidden, c.zg_dim)
            init_mlp(self.params, rng, "prior_a", c.h_agent + c.zg_dim, c.hidden, c.za_dim)

    # -- component forward passes -------------------------------------------------

    def recurrent_step_agent(self, h_agent: Tensor, z_agent_prev: Tensor,
                             own_action: Tensor) -> Tensor:
        return gru(self.params, "gru_a", concat([z_agent_prev, own_action]), h_agent)

    def recurrent_step_global(self, h_global: Tensor, z_global_prev: Tensor,
                              joint_action: Tensor) -> Tensor:
        return gru(self.params, "gru_g", concat([z_global_prev, joint_action]), h_global)

    def posterior_agent(self, obs: Tensor, h_agent: Tensor) -> CategoricalDist:
        logits = mlp(self.params, "post_a", concat([obs, h_agent]), self.config.activation)
        return self._dist(logits, self.config.k_agent, self.config.c_agent)

    def posterior_global(self, state: Tensor, z_agent: Tensor,
                         h_global: Tensor) -> CategoricalDist:
        logits = mlp(self.params, "post_g", concat([state, z_agent, h_global]),
                     self.config.activation)
        return self._dist(logits, self.config.k_global, self.config.c_global)

    def prior_global(self, h_global: Tensor) -> CategoricalDist:
        logits = mlp(self.params, "prior_g", h_global, self.config.activation)
        return self._dist(logits, self.config.k_global, self.config.c_global)

    def prior_agent(self, h_agent: Tensor, z_global: Tensor | None) -> CategoricalDist:
        if self.config.mode == "no_global":
            x = h_agent
        else:
            x = concat([h_agent, z_global])
        logits = mlp(self.params, "prior_a", x, self.config.activation)
        return self._dist(logits, self.config.k_agent, self.config.c_agent)

    def decode_observation(self, h_agent: Tensor, z_agent: Tensor) -> Tensor:
        return mlp(self.params, "dec_obs", concat([h_agent, z_agent]),
                   self.config.activation)

    def predict_reward(self, z_agent: Tensor, h_agent: Tensor) -> Tensor:
        out = mlp(self.params, "head_r", concat([z_agent, h_agent]),
                  self.config.activation)
        return out.reshape(out.shape[0])

    def predict_termination(self, feat: Tensor) -> Tensor:
        out = mlp(self.params, "head_y", feat, self.config.activation)
        return out.reshape(out.shape[0]).sigmoid()

    def predict_avail_actions(self, feat: Tensor) -> Tensor:
        return mlp(self.params, "head_avail", feat, self.config.activation).sigmoid()

    def decode_action(self, feat: Tensor) -> Tensor:
        """Log-probabilities over the agent's own action."""
        return mlp(self.params, "dec_act", feat, self.config.activation).log_softmax()

    def _dist(self, logits: Tensor, k: int, c: int) -> CategoricalDist:
        rows = logits.shape[:-1]
        return CategoricalDist(logits.reshape(*rows, k, c), unimix=self.config.unimix)

    def joint_features(self, st: BiLevelState) -> Tensor:
        """Head input: both latent levels, agent-row aligned."""
        if self.config.mode == "no_global":
            return concat([st.z_agent, st.h_agent])
        z_g, h_g = st.z_global, st.h_global
        if self.config.mode == "single_global":
            z_g = z_g.repeat_rows(self.config.n_agents)
            h_g = h_g.repeat_rows(self.config.n_agents)
        return concat([st.z_agent, z_g, st.h_agent, h_g])

    # -- state handling -------------------------------------------------------------

    def init_state(self, batch_size: int, rng: np.random.Generator) -> BiLevelState:
        """Zero embeddings; latents sampled from the uniform distribution."""
        c = self.config
        rows = batch_size * c.n_agents
        z_a = self._uniform_sample(rows, c.k_agent, c.c_agent, rng)
        if c.mode == "no_global":
            return BiLevelState(Tensor(np.zeros((rows, c.h_agent))), z_a, None, None)
        g_rows = batch_size if c.mode == "single_global" else rows
        z_g = self._uniform_sample(g_rows, c.k_global, c.c_global, rng)
        return BiLevelState(
            h_agent=Tensor(np.zeros((rows, c.h_agent))),
            z_agent=z_a,
            h_global=Tensor(np.zeros((g_rows, c.h_global))),
            z_global=z_g,
        )

    @staticmethod
    def _uniform_sample(rows: int, k: int, c: int, rng: np.random.Generator) -> Tensor:
        idx = rng.integers(c, size=(rows, k))
        return Tensor(one_hot(idx, c).reshape(rows, k * c))

    def _sample(self, dist: CategoricalDist, rng: np.random.Generator,
                sample_mode: str) -> Tensor:
        s = dist.mean_sample() if sample_mode == "soft" else dist.sample_st(rng)
        rows = s.shape[:-2]
        return s.reshape(*rows, s.shape[-2] * s.shape[-1])

    def advance(self, st: BiLevelState, prev_own_action: Tensor,
                prev_joint_action: Tensor) -> BiLevelState:
        """Run both recurrent models one step (latents left at t-1 values)."""
        h_a = self.recurrent_step_agent(st.h_agent, st.z_agent, prev_own_action)
        if self.config.mode == "no_global":
            return BiLevelState(h_a, st.z_agent, None, None)
        h_g = self.recurrent_step_global(st.h_global, st.z_global, prev_joint_action)
        return BiLevelState(h_a, st.z_agent, h_g, st.z_global)

    def posterior_step(self, st: BiLevelState, obs: Tensor, state: Tensor,
                       rng: np.random.Generator, sample_mode: str = "hard"):
        """Posterior chain at one timestep: bottom-up agent then global.

        Returns (new_state, q_agent, q_global, p_agent, p_global); the agent
        prior consumes the global posterior sample (training-time wiring).
        """
        c = self.config
        q_a = self.posterior_agent(obs, st.h_agent)
        z_a = self._sample(q_a, rng, sample_mode)
        if c.mode == "no_global":
            p_a = self.prior_agent(st.h_agent, None)
            return BiLevelState(st.h_agent, z_a, None, None), q_a, None, p_a, None
        if c.mode == "single_global":
            B = st.h_global.shape[0]
            z_a_pooled = z_a.reshape(B, c.n_agents, c.za_dim).mean(axis=1)
            q_g = self.posterior_global(state, z_a_pooled, st.h_global)
        else:
            per_agent_state = state.repeat_rows(c.n_agents)
            q_g = self.posterior_global(per_agent_state, z_a, st.h_global)
        z_g = self._sample(q_g, rng, sample_mode)
        p_g = self.prior_global(st.h_global)
        z_g_agents = z_g.repeat_rows(c.n_agents) if c.mode == "single_global" else z_g
        p_a = self.prior_agent(st.h_agent, z_g_agents)
        return BiLevelState(st.h_agent, z_a, st.h_global, z_g), q_a, q_g, p_a, p_g

    def prior_step(self, st: BiLevelState, rng: np.random.Generator,
                   sample_mode: str = "hard") -> BiLevelState:
        """Prior chain at one timestep (imagination: no state/obs access)."""
        c = self.config
        if c.mode == "no_global":
            p_a = self.prior_agent(st.h_agent, None)
            return BiLevelState(st.h_agent, self._sample(p_a, rng, sample_mode),
                                None, None)
        p_g = self.prior_global(st.h_global)
        z_g = self._sample(p_g, rng, sample_mode)
        z_g_agents = z_g.repeat_rows(c.n_agents) if c.mode == "single_global" else z_g
        p_a = self.prior_agent(st.h_agent, z_g_agents)
        z_a = self._sample(p_a, rng, sample_mode)
        return BiLevelState(st.h_agent, z_a, st.h_global, z_g)

    # -- training loss -----------------------------------------------------------------

    def model_loss(self, batch, rng: np.random.Generator,
                   sample_mode: str = "hard") -> LossBreakdown:
        """Unroll the posterior chain over a window batch and score L(psi).

        Components (each a masked mean over batch, time, and agents):
          recon_nll  — 0.5 * squared error of the observation decoder
          kl_agent   — balanced KL(q(z_a | o, h_a) || p(z_a | h_a, z_g))
          kl_global  — balanced KL(q(z_g | s, z_a, h_g) || p(z_g | h_g))
          reward_nll — 0.5 * squared error of the reward head
          term_nll   — Bernoulli cross-entropy of the termination head
          avail_nll  — Bernoulli cross-entropy of the availability head
          action_nll — categorical NLL of the action decoder
        """
        c = self.config
        B, L = batch.size
        if B == 0 or L == 0:
            raise ValueError("model_loss requires a non-empty batch")
        N = c.n_agents
        alpha = c.kl_alpha
        w = {k: float(c.loss_weights.get(k, 1.0)) for k in (
            "recon", "kl_agent", "kl_global", "reward", "term", "avail", "action")}

        prev_own = one_hot(batch.prev_actions, c.action_count)            # [B,L,N,A]
        prev_joint = prev_own.reshape(B, L, N * c.action_count)           # [B,L,N*A]
        act_idx = batch.actions                                            # [B,L,N]

        st = self.init_state(B, rng)
        zero = Tensor(0.0)
        sums = {k: zero for k in ("recon", "kl_agent", "kl_global",
                                  "reward", "term", "avail", "action")}
        mask_rows_total = 0.0
        amask_rows_total = 0.0

        for t in range(L):
            m = batch.mask[:, t]                                # [B]
            if m.sum() == 0.0:
                break
            m_rows = np.repeat(m, N)                            # [B*N]
            am_rows = np.repeat(batch.action_mask[:, t], N)
            mask_rows_total += float(m_rows.sum())
            amask_rows_total += float(am_rows.sum())
            m_t = Tensor(m_rows)
            am_t = Tensor(am_rows)

            own_a = Tensor(prev_own[:, t].reshape(B * N, c.action_count))
            joint_a = Tensor(np.repeat(prev_joint[:, t], N, axis=0)
                             if c.mode != "single_global" else prev_joint[:, t])
            st = self.advance(st, own_a, joint_a)
            obs_t = Tensor(batch.obs[:, t].reshape(B * N, c.obs_dim))
            state_t = Tensor(batch.states[:, t])
            st, q_a, q_g, p_a, p_g = self.posterior_step(st, obs_t, state_t, rng,
                                                         sample_mode)

            recon = self.decode_observation(st.h_agent, st.z_agent)
            err = recon - obs_t
            sums["recon"] = sums["recon"] + (m_t * (err * err).sum(axis=-1) * 0.5).sum()

            kl_a = _masked_kl(q_a, p_a, alpha, m_rows, c.kl_balance)
            sums["kl_agent"] = sums["kl_agent"] + kl_a
            if q_g is not None:
                m_g = m if c.mode == "single_global" else m_rows
                sums["kl_global"] = sums["kl_global"] + _masked_kl(
                    q_g, p_g, alpha, m_g, c.kl_balance)

            r_hat = self.predict_reward(st.z_agent, st.h_agent)
            r_err = r_hat - Tensor(batch.rewards[:, t].reshape(B * N))
            sums["reward"] = sums["reward"] + (m_t * r_err * r_err * 0.5).sum()

            feat = self.joint_features(st)
            y_hat = self.predict_termination(feat)
            y_tgt = Tensor(np.repeat(batch.terminals[:, t], N))
            sums["term"] = sums["term"] + (m_t * _bce(y_hat, y_tgt)).sum()

            a_hat = self.predict_avail_actions(feat)
            a_tgt = Tensor(batch.avail[:, t].reshape(B * N, c.action_count))
            sums["avail"] = sums["avail"] + (am_t * _bce(a_hat, a_tgt).sum(axis=-1)).sum()

            logp = self.decode_action(feat)
            act_onehot = Tensor(one_hot(act_idx[:, t], c.action_count)
                                .reshape(B * N, c.action_count))
            sums["action"] = sums["action"] + (am_t * -(logp * act_onehot).sum(axis=-1)).sum()

        denom = max(mask_rows_total, 1.0)
        adenom = max(amask_rows_total, 1.0)
        # kl_global on the single shared latent is averaged per batch element
        g_denom = denom / N if c.mode == "single_global" else denom
        comps = {
            "recon": sums["recon"] * (w["recon"] / denom),
            "kl_agent": sums["kl_agent"] * (w["kl_agent"] / denom),
            "kl_global": sums["kl_global"] * (w["kl_global"] / g_denom),
            "reward": sums["reward"] * (w["reward"] / denom),
            "term": sums["term"] * (w["term"] / denom),
            "avail": sums["avail"] * (w["avail"] / adenom),
            "action": sums["action"] * (w["action"] / adenom),
        }
        total = (comps["recon"] + comps["kl_agent"] + comps["kl_global"]
                 + comps["reward"] + comps["term"] + comps["avail"] + comps["action"])
        return LossBreakdown(
            recon_nll=comps["recon"], kl_agent=comps["kl_agent"],
            kl_global=comps["kl_global"], reward_nll=comps["reward"],
            term_nll=comps["term"], avail_nll=comps["avail"],
            action_nll=comps["action"], total=total,
        )

    # -- imagination ---------------------------------------------------------------------

    def imagine(self, start_batch, policy, horizon: int,
                rng: np.random.Generator) -> ImaginedRollout:
        """Roll the frozen model forward under `policy` for `horizon` steps.

        The start batch is a real window: the posterior chain is unrolled
        along it (recorded actions, masked blending for short windows) and
        each window's last valid timestep becomes imagination step 0. All
        subsequent steps use only the prior chain and the policy's actions.
        """
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon}")
        c = self.config
        B, L = start_batch.size
        N = c.n_agents

        with no_grad():
            st, last_avail = self._encode_start(start_batch, rng)
            H = horizon
            rows = B * N
            z_a = np.zeros((H, rows, c.za_dim))
            h_a = np.zeros((H, rows, c.h_agent))
            z_g = h_g = None
            if c.mode != "no_global":
                z_g = np.zeros((H, rows, c.zg_dim))
                h_g = np.zeros((H, rows, c.h_global))
            actions = np.zeros((max(H - 1, 0), rows), dtype=np.int64)
            log_probs = np.zeros((max(H - 1, 0), rows))
            avail_masks = np.ones((max(H - 1, 0), rows, c.action_count))
            rewards = np.zeros((H, rows))
            term_probs = np.zeros((H, rows))

            avail = last_avail
            for t in range(H):
                self._record_step(st, z_a, h_a, z_g, h_g, t)
                feat = self.joint_features(st)
                rewards[t] = self.predict_reward(st.z_agent, st.h_agent).data
                term_probs[t] = self.predict_termination(feat).data
                if t == H - 1:
                    break
                a_idx, logp = policy.act_batch(st.z_agent.data, st.h_agent.data,
                                               avail, rng)
                actions[t] = a_idx
                log_probs[t] = logp
                avail_masks[t] = avail
                own = Tensor(one_hot(a_idx, c.action_count))
                joint = own.data.reshape(B, N * c.action_count)
                joint_t = Tensor(np.repeat(joint, N, axis=0)
                                 if c.mode != "single_global" else joint)
                st = self.advance(st, own, joint_t)
                st = self.prior_step(st, rng)
                # availability of the next step comes from the model itself
                pred = self.predict_avail_actions(self.joint_features(st)).data
                avail = (pred > 0.5).astype(np.float64)

            continuation = np.cumprod(1.0 - term_probs, axis=0)
            return ImaginedRollout(
                z_agent=z_a, h_agent=h_a, z_global=z_g, h_global=h_g,
                actions=actions, log_probs=log_probs, avail_masks=avail_masks,
                rewards=rewards, term_probs=term_probs, continuation=continuation,
            )

    def _record_step(self, st, z_a, h_a, z_g, h_g, t) -> None:
        c = self.config
        z_a[t] = st.z_agent.data
        h_a[t] = st.h_agent.data
        if c.mode == "no_global":
            return
        if c.mode == "single_global":
            z_g[t] = np.repeat(st.z_global.data, c.n_agents, axis=0)
            h_g[t] = np.repeat(st.h_global.data, c.n_agents, axis=0)
        else:
            z_g[t] = st.z_global.data
            h_g[t] = st.h_global.data

    def _encode_start(self, batch, rng: np.random.Generator):
        """Posterior-encode a real window; freeze at each row's last valid step."""
        c = self.config
        B, L = batch.size
        N = c.n_agents
        prev_own = one_hot(batch.prev_actions, c.action_count)
        prev_joint = prev_own.reshape(B, L, N * c.action_count)
        st = self.init_state(B, rng)
        frozen = None
        frozen_avail = np.ones((B * N, c.action_count))
        for t in range(L):
            m = batch.mask[:, t]
            if m.sum() == 0.0:
                break
            own_a = Tensor(prev_own[:, t].reshape(B * N, c.action_count))
            joint_a = Tensor(np.repeat(prev_joint[:, t], N, axis=0)
                             if c.mode != "single_global" else prev_joint[:, t])
            new = self.advance(st, own_a, joint_a)
            obs_t = Tensor(batch.obs[:, t].reshape(B * N, c.obs_dim))
            state_t = Tensor(batch.states[:, t])
            new, *_ = self.posterior_step(new, obs_t, state_t, rng)
            if frozen is None:
                frozen = new
                frozen_avail = batch.avail[:, t].reshape(B * N, c.action_count).copy()
                st = new
            else:
                st = self._blend(new, st, m)
                frozen = st
                valid = np.repeat(m, N)[:, None]
                frozen_avail = np.where(
                    valid > 0,
                    batch.avail[:, t].reshape(B * N, c.action_count), frozen_avail)
        return frozen, frozen_avail

    def _blend(self, new: BiLevelState, old: BiLevelState, m: np.ndarray) -> BiLevelState:
        """Keep `old` rows where the window has already ended (mask 0)."""
        c = self.config
        m_rows = Tensor(np.repeat(m, c.n_agents)[:, None])
        h_a = new.h_agent * m_rows + old.h_agent * (1.0 - m_rows)
        z_a = new.z_agent * m_rows + old.z_agent * (1.0 - m_rows)
        if c.mode == "no_global":
            return BiLevelState(h_a, z_a, None, None)
        m_g = m_rows if c.mode == "full" else Tensor(m[:, None])
        h_g = new.h_global * m_g + old.h_global * (1.0 - m_g)
        z_g = new.z_global * m_g + old.z_global * (1.0 - m_g)
        return BiLevelState(h_a, z_a, h_g, z_g)


def _bce(prob: Tensor, target: Tensor) -> Tensor:
    """Elementwise Bernoulli cross-entropy with clamped probabilities."""
    eps = 1e-7
    p = prob * (1.0 - 2.0 * eps) + eps
    return -(target * p.log() + (1.0 - target) * (1.0 - p).log())


def _masked_kl(q: CategoricalDist, p: CategoricalDist, alpha: float,
               mask: np.ndarray, balance: bool = True) -> Tensor:
    """Sum over masked rows of the (optionally balanced) KL."""
    m = Tensor(mask)
    if not balance:
        return (m * _row_kl(q.probs, p.probs)).sum()
    lhs = _row_kl(q.probs.detach(), p.probs)
    rhs = _row_kl(q.probs, p.probs.detach())
    return (m * lhs).sum() * alpha + (m * rhs).sum() * (1.0 - alpha)


def _row_kl(qp: Tensor, pp: Tensor) -> Tensor:
    from .tensor import xlogy
    return (xlogy(qp, qp) - xlogy(qp, pp)).sum(axis=-1).sum(axis=-1)
