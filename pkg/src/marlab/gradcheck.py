"""Central finite-difference gradient checking against the autodiff engine."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, forward_backward


def finite_difference_grads(loss_fn: Callable[[], Tensor],
                            params: dict[str, Tensor],
                            step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences of loss_fn w.r.t. every entry of every parameter.

    loss_fn must re-run the full forward pass (it reads params by reference)
    and be deterministic across calls.
    """
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(loss_fn().data)
            flat[i] = orig - step
            lo = float(loss_fn().data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads[name] = g
    return grads


def max_relative_error(analytic: dict[str, np.ndarray],
                       numeric: dict[str, np.ndarray],
                       floor: float = 1e-6) -> tuple[float, str]:
    """Worst relative error across all parameters; the floor guards tiny grads."""
    worst = 0.0
    worst_name = ""
    for name in analytic:
        a = analytic[name]
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        err = float((np.abs(a - n) / denom).max())
        if err > worst:
            worst = err
            worst_name = name
    return worst, worst_name


def check_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                    step: float = 1e-5, tol: float = 1e-4) -> tuple[bool, str]:
    loss = loss_fn()
    grad_map = forward_backward(loss)
    analytic = {name: grad_map.get(id(p), np.zeros_like(p.data))
                for name, p in params.items()}
    numeric = finite_difference_grads(loss_fn, params, step)
    err, name = max_relative_error(analytic, numeric)
    return err < tol, f"max rel err {err:.3e} ({name or 'n/a'}), tol {tol:g}"
