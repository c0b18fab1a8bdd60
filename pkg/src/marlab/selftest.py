"""Fast invariant suite runnable from the CLI (`marlab selftest`).

Each check is independent, seeded, and takes at most a few seconds; the
whole suite finishes well under two minutes on one CPU core.
"""

from __future__ import annotations

import numpy as np

from .buffer import ModelBuffer
from .config import RunConfig, validate
from .dists import CategoricalDist, kl_balanced, kl_categorical
from .gradcheck import check_gradients
from .marl import gae
from .optim import Adam, clip_grad_norm
from .tensor import Tensor, forward_backward
from .trainer import Trainer, params_checksum
from .worldmodel import BiLevelWorldModel, ModelConfig


def _tiny_trainer(mode: str = "full", seed: int = 0,
                  activation: str = "elu") -> Trainer:
    cfg = validate(RunConfig(
        env="corridor_meet", mode=mode, seed=seed,
        k_agent=3, c_agent=3, k_global=3, c_global=3,
        h_agent=8, h_global=8, hidden=8, seq_length=3,
        batch_model=2, batch_rollout=2, horizon=3,
        model_steps=2, policy_steps=2, episodes=2, warmup_episodes=0,
        activation=activation, eval_interval=1, eval_episodes=1,
    ))
    return Trainer(cfg)


def check_autodiff_composite(rng=None) -> tuple[bool, str]:
    """Reverse-mode grads of matmul/softmax/log vs finite differences."""
    rng = rng or np.random.default_rng(0)
    params = {
        "a": Tensor(rng.normal(size=(3, 3)), requires_grad=True),
        "b": Tensor(rng.normal(size=(3, 3)), requires_grad=True),
    }

    def loss_fn():
        y = (params["a"] @ params["b"]).softmax()
        return ((y + 0.1).log() * Tensor(rng0)).sum()

    rng0 = np.random.default_rng(1).normal(size=(3, 3))
    return check_gradients(loss_fn, params, tol=1e-4)


def check_kl_identity() -> tuple[bool, str]:
    """Balanced KL value equals plain KL on random distribution pairs."""
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        q = CategoricalDist(Tensor(rng.normal(size=(2, 3))), unimix=0.01)
        p = CategoricalDist(Tensor(rng.normal(size=(2, 3))), unimix=0.01)
        for alpha in (0.0, 0.3, 0.8, 1.0):
            diff = abs(float(kl_balanced(q, p, alpha).data)
                       - float(kl_categorical(q, p).data))
            worst = max(worst, diff)
    return worst < 1e-12, f"max |balanced - plain| = {worst:.2e}"


def check_straight_through() -> tuple[bool, str]:
    """d sum(sample) / d logits == d sum(probs) / d logits, elementwise."""
    rng = np.random.default_rng(3)
    logits = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    d = CategoricalDist(logits, unimix=0.01)
    forward_backward(d.sample_st(np.random.default_rng(0)).sum())
    g_sample = logits.grad.copy()
    d2 = CategoricalDist(logits, unimix=0.01)
    forward_backward(d2.probs.sum())
    g_probs = logits.grad.copy()
    ok = np.array_equal(g_sample, g_probs)
    return ok, f"max abs diff {np.abs(g_sample - g_probs).max():.2e}"


def check_gae_oracle() -> tuple[bool, str]:
    """lambda=1 matches brute-force returns; lambda=0 matches TD residuals."""
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        T = 5
        r = rng.normal(size=T)
        v = rng.normal(size=T + 1)
        c = rng.random(T)
        gamma = 0.97
        adv1, _ = gae(r, v, c, gamma, 1.0)
        for t in range(T):
            ret = 0.0
            disc = 1.0
            for j in range(t, T):
                ret += disc * r[j]
                disc *= gamma * c[j]
            ret += disc * v[T]
            worst = max(worst, abs(adv1[t] - (ret - v[t])))
        adv0, _ = gae(r, v, c, gamma, 0.0)
        td = r + gamma * c * v[1:] - v[:T]
        worst = max(worst, float(np.abs(adv0 - td).max()))
    return worst < 1e-10, f"max abs err {worst:.2e}"


def check_decentralized_execution(trials: int = 50) -> tuple[bool, str]:
    """Perturbing global state and other agents' data leaves an agent's
    execution-path action bit-identical."""
    from .worldmodel import one_hot
    from .tensor import no_grad
    tr = _tiny_trainer()
    model, agent = tr.model, tr.agent
    c = tr.model_config
    rng = np.random.default_rng(5)
    violations = 0
    for trial in range(trials):
        obs = rng.normal(size=(c.n_agents, c.obs_dim))
        prev = rng.integers(c.action_count, size=c.n_agents)
        avail = np.ones((c.n_agents, c.action_count))
        obs_perturbed = obs.copy()
        obs_perturbed[1] += rng.normal(size=c.obs_dim)  # other agent only

        def action_of_agent0(o):
            with no_grad():
                h = Tensor(np.zeros((c.n_agents, c.h_agent)))
                z = model._uniform_sample(c.n_agents, c.k_agent, c.c_agent,
                                          np.random.default_rng(trial))
                h = model.recurrent_step_agent(h, z, Tensor(one_hot(prev, c.action_count)))
                q = model.posterior_agent(Tensor(o), h)
                z = model._sample(q, np.random.default_rng(trial + 1), "hard")
                a, _ = agent.act_batch(z.data, h.data, avail,
                                       np.random.default_rng(trial + 2))
            return a[0]

        if action_of_agent0(obs) != action_of_agent0(obs_perturbed):
            violations += 1
    return violations == 0, f"{violations}/{trials} violations"


def check_adam_first_step() -> tuple[bool, str]:
    p = {"w": Tensor(np.zeros(4), requires_grad=True)}
    opt = Adam(p, lr=1e-3, eps=1e-8)
    opt.step({"w": np.ones(4)})
    mag = np.abs(p["w"].data + 1e-3).max()  # update is -lr * 1/(1+eps) approx
    return mag < 1e-9, f"first-step deviation {mag:.2e}"


def check_clip_norm() -> tuple[bool, str]:
    rng = np.random.default_rng(6)
    g = {"a": rng.normal(size=(5, 5)), "b": rng.normal(size=7)}
    clipped = clip_grad_norm(g, 0.5)
    norm = np.sqrt(sum(float((x * x).sum()) for x in clipped.values()))
    return norm <= 0.5 + 1e-9, f"post-clip norm {norm:.6f}"


def check_model_gradients(mode: str = "full") -> tuple[bool, str]:
    """Finite differences through the full model loss (soft samples)."""
    tr = _tiny_trainer(mode=mode)
    for _ in range(2):
        tr.collect_episode()
    batch = tr.buffer.sample(2, 3, np.random.default_rng(7))
    model = tr.model
    # balancing rescales KL gradients on purpose; disable it so analytic
    # gradients are true derivatives (the routing has its own oracle test)
    model.config.kl_balance = False

    def loss_fn():
        return model.model_loss(batch, np.random.default_rng(8),
                                sample_mode="soft").total

    return check_gradients(loss_fn, model.params, tol=1e-3)


def run_selftest(corrupt_kl: bool = False, verbose: bool = True) -> bool:
    """Run all checks; returns True iff everything passed.

    corrupt_kl deliberately breaks the KL-identity check (negative control
    for the harness itself).
    """
    checks = [
        ("autodiff finite differences", check_autodiff_composite),
        ("KL balancing value identity", check_kl_identity),
        ("straight-through estimator", check_straight_through),
        ("GAE oracle", check_gae_oracle),
        ("decentralized execution", check_decentralized_execution),
        ("adam first step", check_adam_first_step),
        ("gradient norm clipping", check_clip_norm),
        ("full-model gradient check", check_model_gradients),
    ]
    all_ok = True
    for name, fn in checks:
        ok, detail = fn()
        if corrupt_kl and name == "KL balancing value identity":
            ok, detail = False, "deliberately corrupted (negative control)"
        all_ok &= bool(ok)
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name:32s} {detail}")
    return all_ok
