"""Network building blocks: shapes, determinism, finite-difference oracles,
and a GRU reference implementation."""

import numpy as np
import pytest

from marlab.gradcheck import check_gradients
from marlab.nets import gru, init_gru, init_linear, init_mlp, linear, mlp
from marlab.tensor import Tensor


def _gru_oracle(params, name, x, h):
    """Independent numpy evaluation of the fused-gate cell."""
    n_h = h.shape[-1]
    gx = x @ params[f"{name}.x.w"].data + params[f"{name}.x.b"].data
    gh = h @ params[f"{name}.h.w"].data

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    r = sig(gx[:, :n_h] + gh[:, :n_h])
    u = sig(gx[:, n_h:2 * n_h] + gh[:, n_h:2 * n_h])
    n = np.tanh(gx[:, 2 * n_h:] + r * gh[:, 2 * n_h:])
    return u * h + (1.0 - u) * n


class TestLinear:
    def test_shapes_and_zero_bias(self, rng):
        params = {}
        init_linear(params, rng, "l", 4, 3)
        assert params["l.w"].shape == (4, 3)
        np.testing.assert_array_equal(params["l.b"].data, np.zeros(3))

    def test_forward_matches_numpy(self, rng):
        params = {}
        init_linear(params, rng, "l", 4, 3)
        x = rng.normal(size=(5, 4))
        out = linear(params, "l", Tensor(x))
        np.testing.assert_allclose(
            out.data, x @ params["l.w"].data + params["l.b"].data)

    def test_init_deterministic(self):
        p1, p2 = {}, {}
        init_linear(p1, np.random.default_rng(3), "l", 4, 3)
        init_linear(p2, np.random.default_rng(3), "l", 4, 3)
        np.testing.assert_array_equal(p1["l.w"].data, p2["l.w"].data)


class TestMlp:
    def test_output_shape(self, rng):
        params = {}
        init_mlp(params, rng, "m", 5, 8, 2)
        out = mlp(params, "m", Tensor(rng.normal(size=(3, 5))), "relu")
        assert out.shape == (3, 2)

    def test_two_hidden_layers(self, rng):
        params = {}
        init_mlp(params, rng, "m", 5, 8, 2)
        layers = {k.rsplit(".", 2)[-2] for k in params}
        assert layers == {"l0", "l1", "out"}

    def test_out_scale_shrinks_head(self, rng):
        big, small = {}, {}
        init_mlp(big, np.random.default_rng(0), "m", 5, 8, 2, out_scale=1.0)
        init_mlp(small, np.random.default_rng(0), "m", 5, 8, 2, out_scale=0.01)
        np.testing.assert_allclose(small["m.out.w"].data,
                                   0.01 * big["m.out.w"].data)

    # relu is excluded: central differences straddling its kink are not a
    # valid oracle, smooth activations are
    @pytest.mark.parametrize("activation", ["elu", "tanh"])
    def test_gradients_match_finite_differences(self, activation, rng):
        params = {}
        init_mlp(params, rng, "m", 3, 4, 2)
        x = rng.normal(size=(2, 3))
        ok, detail = check_gradients(
            lambda: (mlp(params, "m", Tensor(x), activation) ** 2).sum(),
            params, tol=1e-4)
        assert ok, detail

    def test_relu_gradient_away_from_kink(self):
        x = Tensor(np.array([-2.0, 3.0]), requires_grad=True)
        from marlab.tensor import forward_backward
        grads = forward_backward(x.relu().sum())
        np.testing.assert_array_equal(grads[id(x)], [0.0, 1.0])

    def test_unknown_activation_rejected(self, rng):
        params = {}
        init_mlp(params, rng, "m", 3, 4, 2)
        with pytest.raises(ValueError, match="activation"):
            mlp(params, "m", Tensor(rng.normal(size=(1, 3))), "swish")


class TestGru:
    def test_output_shape_preserved(self, rng):
        params = {}
        init_gru(params, rng, "g", 4, 6)
        out = gru(params, "g", Tensor(rng.normal(size=(3, 4))),
                  Tensor(rng.normal(size=(3, 6))))
        assert out.shape == (3, 6)

    def test_matches_reference_implementation(self, rng):
        params = {}
        init_gru(params, rng, "g", 4, 6)
        x = rng.normal(size=(3, 4))
        h = rng.normal(size=(3, 6))
        out = gru(params, "g", Tensor(x), Tensor(h))
        np.testing.assert_allclose(out.data, _gru_oracle(params, "g", x, h),
                                   atol=1e-12)

    def test_deterministic(self, rng):
        params = {}
        init_gru(params, rng, "g", 4, 6)
        x, h = rng.normal(size=(2, 4)), rng.normal(size=(2, 6))
        a = gru(params, "g", Tensor(x), Tensor(h)).data
        b = gru(params, "g", Tensor(x), Tensor(h)).data
        np.testing.assert_array_equal(a, b)

    def test_gradients_match_finite_differences(self, rng):
        params = {}
        init_gru(params, rng, "g", 3, 4)
        x = rng.normal(size=(2, 3))
        h = rng.normal(size=(2, 4))
        ok, detail = check_gradients(
            lambda: (gru(params, "g", Tensor(x), Tensor(h)) ** 2).sum(),
            params, tol=1e-4)
        assert ok, detail

    def test_saturated_update_gate_keeps_state(self, rng):
        # force u ~ 1 by a large update-gate bias: h' ~ h
        params = {}
        init_gru(params, rng, "g", 3, 4)
        params["g.x.b"].data[4:8] = 50.0
        h = rng.normal(size=(2, 4))
        out = gru(params, "g", Tensor(np.zeros((2, 3))), Tensor(h))
        np.testing.assert_allclose(out.data, h, atol=1e-8)
