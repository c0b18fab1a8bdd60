"""Functional building blocks: linear layers, 2-hidden-layer MLPs, GRU cells.

Parameters live in a flat dict[str, Tensor] owned by the caller, which keeps
the whole model's parameter set a single container that can be checkpointed,
checksummed, and fed to one optimizer. All init goes through the given rng.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def init_linear(params: dict[str, Tensor], rng: np.random.Generator,
                name: str, n_in: int, n_out: int, scale: float = 1.0) -> None:
    w = rng.normal(0.0, scale / np.sqrt(n_in), size=(n_in, n_out))
    params[f"{name}.w"] = Tensor(w, requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(n_out), requires_grad=True)


def linear(params: dict[str, Tensor], name: str, x: Tensor) -> Tensor:
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def _activate(x: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return x.relu()
    if activation == "elu":
        return x.elu()
    if activation == "tanh":
        return x.tanh()
    raise ValueError(f"unknown activation '{activation}'")


def init_mlp(params: dict[str, Tensor], rng: np.random.Generator, name: str,
             n_in: int, n_hidden: int, n_out: int, out_scale: float = 1.0) -> None:
    """Two hidden layers plus a linear output head."""
    init_linear(params, rng, f"{name}.l0", n_in, n_hidden)
    init_linear(params, rng, f"{name}.l1", n_hidden, n_hidden)
    init_linear(params, rng, f"{name}.out", n_hidden, n_out, scale=out_scale)


def mlp(params: dict[str, Tensor], name: str, x: Tensor, activation: str) -> Tensor:
    h = _activate(linear(params, f"{name}.l0", x), activation)
    h = _activate(linear(params, f"{name}.l1", h), activation)
    return linear(params, f"{name}.out", h)


def init_gru(params: dict[str, Tensor], rng: np.random.Generator,
             name: str, n_in: int, n_h: int) -> None:
    """Fused-gate GRU cell: one input matmul and one hidden matmul per step."""
    init_linear(params, rng, f"{name}.x", n_in, 3 * n_h)
    wh = rng.normal(0.0, 1.0 / np.sqrt(n_h), size=(n_h, 3 * n_h))
    params[f"{name}.h.w"] = Tensor(wh, requires_grad=True)


def gru(params: dict[str, Tensor], name: str, x: Tensor, h: Tensor) -> Tensor:
    n_h = h.shape[-1]
    gx = linear(params, f"{name}.x", x)
    gh = h @ params[f"{name}.h.w"]
    r = (gx.narrow(-1, 0, n_h) + gh.narrow(-1, 0, n_h)).sigmoid()
    u = (gx.narrow(-1, n_h, n_h) + gh.narrow(-1, n_h, n_h)).sigmoid()
    n = (gx.narrow(-1, 2 * n_h, n_h) + r * gh.narrow(-1, 2 * n_h, n_h)).tanh()
    return u * h + (1.0 - u) * n
