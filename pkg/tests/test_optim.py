"""Adam optimizer and gradient clipping: hand-evaluated oracles and
determinism."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from marlab.optim import Adam, clip_grad_norm
from marlab.tensor import Tensor


def _adam_oracle(g_seq, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam reference: returns the parameter after len(g_seq) steps
    starting from zero."""
    p = np.zeros_like(g_seq[0])
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(g_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
    return p


class TestAdam:
    def test_first_step_magnitude(self):
        # t=1, g=1: mhat=1, vhat=1 -> update = -lr/(1+eps) ~ -lr
        p = {"w": Tensor(np.zeros(4), requires_grad=True)}
        Adam(p, lr=1e-3, eps=1e-8).step({"w": np.ones(4)})
        np.testing.assert_allclose(p["w"].data, -1e-3, rtol=1e-7)

    def test_matches_reference_over_many_steps(self, rng):
        g_seq = [rng.normal(size=(3, 2)) for _ in range(50)]
        p = {"w": Tensor(np.zeros((3, 2)), requires_grad=True)}
        opt = Adam(p, lr=1e-3)
        for g in g_seq:
            opt.step({"w": g})
        np.testing.assert_allclose(p["w"].data, _adam_oracle(g_seq), atol=1e-14)

    def test_zero_gradient_fixed_point(self):
        p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
        opt = Adam(p)
        before = p["w"].data.copy()
        m_before = opt.m["w"].copy()
        opt.step({"w": np.zeros(2)})
        np.testing.assert_array_equal(p["w"].data, before)
        np.testing.assert_array_equal(opt.m["w"], m_before)

    def test_moments_decay_toward_zero(self, rng):
        p = {"w": Tensor(np.zeros(2), requires_grad=True)}
        opt = Adam(p)
        opt.step({"w": np.ones(2)})
        m1 = np.abs(opt.m["w"]).max()
        for _ in range(20):
            opt.step({"w": np.zeros(2)})
        assert np.abs(opt.m["w"]).max() < m1

    def test_deterministic_runs_bit_identical(self, rng):
        def run():
            r = np.random.default_rng(9)
            p = {"w": Tensor(np.zeros((4, 4)), requires_grad=True)}
            opt = Adam(p, lr=3e-4)
            for _ in range(100):
                opt.step({"w": r.normal(size=(4, 4))})
            return p["w"].data

        np.testing.assert_array_equal(run(), run())

    def test_nan_gradient_names_parameter(self):
        p = {"bad_param": Tensor(np.zeros(2), requires_grad=True)}
        with pytest.raises(FloatingPointError, match="bad_param"):
            Adam(p).step({"bad_param": np.array([np.nan, 0.0])})

    def test_missing_gradient_treated_as_zero(self):
        p = {"a": Tensor(np.ones(2), requires_grad=True),
             "b": Tensor(np.ones(2), requires_grad=True)}
        opt = Adam(p)
        opt.step({"a": np.ones(2)})
        np.testing.assert_array_equal(p["b"].data, np.ones(2))
        assert p["a"].data[0] < 1.0


class TestClipGradNorm:
    def test_above_threshold_uniform_scaling(self):
        g = {"a": np.full(4, 5.0)}  # norm 10
        clipped = clip_grad_norm(g, 5.0)
        np.testing.assert_allclose(clipped["a"], 2.5)

    def test_below_threshold_unchanged(self):
        g = {"a": np.array([3.0])}  # norm 3
        assert clip_grad_norm(g, 5.0) is g

    @given(data=hnp.arrays(np.float64, (3, 5),
                           elements=st.floats(-100, 100, allow_nan=False)),
           max_norm=st.floats(0.1, 50))
    @settings(max_examples=50, deadline=None)
    def test_post_clip_norm_bounded(self, data, max_norm):
        clipped = clip_grad_norm({"a": data, "b": data[0]}, max_norm)
        norm = np.sqrt(sum(float((g * g).sum()) for g in clipped.values()))
        assert norm <= max_norm + 1e-9

    def test_direction_preserved(self, rng):
        g = {"a": rng.normal(size=6) * 100}
        clipped = clip_grad_norm(g, 1.0)
        cos = (g["a"] @ clipped["a"]) / (
            np.linalg.norm(g["a"]) * np.linalg.norm(clipped["a"]))
        assert cos == pytest.approx(1.0, abs=1e-12)

    def test_nonpositive_max_norm_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            clip_grad_norm({"a": np.ones(2)}, 0.0)
