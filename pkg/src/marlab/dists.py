"""Vectors of categorical variables: sampling, KL, and KL balancing.

A latent is K independent categoricals with C classes each. Probabilities
are mixed with a small uniform component ("unimix") so KL terms and log
probabilities stay finite even when logits saturate; the mix weight is
configurable and can be set to 0 for exact one-hot tests.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, xlogy


class CategoricalDist:
    """Batched K-by-C categorical distribution (leading batch axes allowed).

    `logits` and `probs` share trailing shape [..., K, C]; each row of
    `probs` sums to 1 and is strictly positive when unimix > 0.
    """

    def __init__(self, logits: Tensor, unimix: float = 0.01):
        if not np.all(np.isfinite(logits.data)):
            raise ValueError("categorical logits must be finite")
        self.logits = logits
        probs = logits.softmax()
        if unimix > 0.0:
            c = logits.shape[-1]
            probs = probs * (1.0 - unimix) + unimix / c
        self.probs = probs

    @property
    def shape(self) -> tuple[int, ...]:
        return self.probs.shape

    def sample_st(self, rng: np.random.Generator) -> Tensor:
        """One-hot sample with straight-through gradients to the probs.

        Forward value is the hard one-hot; the backward pass treats the
        sample as if it were the probability vector, i.e.
        sample = probs + stop_gradient(one_hot - probs).
        """
        p = self.probs.data
        c = p.shape[-1]
        flat = p.reshape(-1, c)
        u = rng.random((flat.shape[0], 1))
        cdf = np.cumsum(flat, axis=-1)
        cdf[:, -1] = 1.0  # guard against rounding shortfall
        idx = (u > cdf).sum(axis=-1)
        onehot = np.zeros_like(flat)
        onehot[np.arange(flat.shape[0]), idx] = 1.0
        onehot = onehot.reshape(p.shape)
        return self.probs + Tensor(onehot - p)

    def mode(self) -> np.ndarray:
        """Most likely class index per categorical (plain array)."""
        return self.probs.data.argmax(axis=-1)

    def mean_sample(self) -> Tensor:
        """Differentiable relaxation: the probability vector itself.

        Used in place of sample_st for finite-difference gradient checks,
        where the hard sample's piecewise-constant forward value would make
        the check ill-posed.
        """
        return self.probs


def kl_categorical(q: CategoricalDist, p: CategoricalDist) -> Tensor:
    """Sum over categoricals of KL(q_k || p_k), averaged over batch axes.

    Returns a scalar: sum_k sum_c q log(q/p), with leading batch axes
    averaged out.
    """
    if q.shape != p.shape:
        raise ValueError(f"KL shape mismatch: {q.shape} vs {p.shape}")
    return _kl_term(q.probs, p.probs)


def _kl_term(qp: Tensor, pp: Tensor) -> Tensor:
    elem = xlogy(qp, qp) - xlogy(qp, pp)
    per_row = elem.sum(axis=-1).sum(axis=-1)  # sum classes, then categoricals
    if per_row.shape == ():
        return per_row
    return per_row.mean()


def kl_balanced(q: CategoricalDist, p: CategoricalDist, alpha: float = 0.8) -> Tensor:
    """KL(q || p) with gradients split between the two sides.

    value  == kl_categorical(q, p)
    grad wrt p-side parameters scaled by alpha (posterior stopped),
    grad wrt q-side parameters scaled by 1 - alpha (prior stopped).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if q.shape != p.shape:
        raise ValueError(f"KL shape mismatch: {q.shape} vs {p.shape}")
    lhs = _kl_term(q.probs.detach(), p.probs)   # trains the prior
    rhs = _kl_term(q.probs, p.probs.detach())   # trains the posterior
    return lhs * alpha + rhs * (1.0 - alpha)
