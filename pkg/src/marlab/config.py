"""Run configuration: a flat dataclass parsed from key=value text files.

Every field has a default; file values are applied first, then command-line
overrides. Unknown keys, type mismatches, and out-of-range values are
rejected with the offending name.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

ABLATION_MODES = ("full", "no_global", "single_global")


@dataclass
class RunConfig:
    # environment / run shape
    env: str = "corridor_meet"
    mode: str = "full"              # full | no_global | single_global
    seed: int = 0
    episodes: int = 200             # outer-loop episode count
    model_steps: int = 20           # optimizer steps per model phase
    policy_steps: int = 10          # imagination/update rounds per policy phase
    batch_model: int = 16           # windows per model step
    batch_rollout: int = 16         # start windows per imagination round
    seq_length: int = 20            # window length L
    horizon: int = 5                # imagination horizon H
    warmup_episodes: int = 5        # model-only episodes before policy learning
    buffer_capacity: int = 100_000  # in environment steps
    # model sizes
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
    kl_weight: float = 1.0          # ELBO weight on both KL terms; values
                                    # below 1 let the latents carry more
                                    # information before the prior catches up
    # optimization
    lr_model: float = 3e-4
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    grad_clip: float = 100.0
    # MARL
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    ppo_epochs: int = 5
    entropy_coef: float = 0.001
    entropy_anneal: float = 0.99998
    value_coef: float = 0.5
    critic_global_only: bool = False
    explore_eps: float = 0.0        # per-agent chance of a uniform random
                                    # action during training collection only
    # evaluation / logging cadence (in episodes)
    eval_interval: int = 10
    eval_episodes: int = 4


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _convert(name: str, raw: str):
    ftype = _FIELDS[name].type
    raw = raw.strip()
    try:
        if ftype == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ValueError(f"config key '{name}' expects {ftype}, got '{raw}'") from None


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.mode not in ABLATION_MODES:
        raise ValueError(f"config key 'mode' must be one of {ABLATION_MODES}")
    if cfg.horizon < 1:
        raise ValueError("config key 'horizon' must be >= 1")
    if cfg.seq_length < 2:
        raise ValueError("config key 'seq_length' must be >= 2")
    for name in ("episodes", "model_steps", "policy_steps", "batch_model",
                 "batch_rollout", "buffer_capacity", "eval_interval",
                 "eval_episodes", "k_agent", "c_agent", "k_global", "c_global",
                 "h_agent", "h_global", "hidden"):
        if getattr(cfg, name) < 1:
            raise ValueError(f"config key '{name}' must be positive")
    if not 0.0 <= cfg.kl_alpha <= 1.0:
        raise ValueError("config key 'kl_alpha' must be in [0, 1]")
    if cfg.kl_weight < 0.0:
        raise ValueError("config key 'kl_weight' must be >= 0")
    if not 0.0 <= cfg.explore_eps <= 1.0:
        raise ValueError("config key 'explore_eps' must be in [0, 1]")
    if not 0.0 <= cfg.unimix < 1.0:
        raise ValueError("config key 'unimix' must be in [0, 1)")
    return cfg


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ValueError(f"unknown config key '{key}'")
        setattr(cfg, key, _convert(key, raw))
    return cfg


def parse_config(path: str | None = None,
                 overrides: list[str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value")
                key, raw = line.split("=", 1)
                key = key.strip()
                if key not in _FIELDS:
                    raise ValueError(f"{path}:{lineno}: unknown config key '{key}'")
                setattr(cfg, key, _convert(key, raw))
    if overrides:
        apply_overrides(cfg, overrides)
    return validate(cfg)


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)!r}".replace("'", "")
             for f in dataclasses.fields(RunConfig)]
    return "\n".join(lines) + "\n"
