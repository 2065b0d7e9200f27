from __future__ import annotations

import numpy as np
import pytest

from sdrm import nn
from sdrm.errors import ConfigurationError, TrainingError


def identity_net(dim: int) -> nn.MlpNet:
    return nn.MlpNet([nn.Layer(np.eye(dim), np.zeros(dim), "identity")])


def random_net(sizes, rng, activations=None) -> nn.MlpNet:
    if activations is None:
        activations = ["tanh"] * (len(sizes) - 2) + ["identity"]
    return nn.glorot_uniform_init(list(sizes), activations, rng)


class TestForward:
    def test_identity_layer_passes_input_through(self):
        net = identity_net(2)
        out = nn.mlp_forward(net, np.array([[1.0, 2.0]])).output
        np.testing.assert_array_equal(out, [[1.0, 2.0]])

    def test_zero_weights_yield_activated_bias(self):
        b = np.array([0.3, -0.7, 1.1])
        net = nn.MlpNet([nn.Layer(np.zeros((4, 3)), b, "tanh")])
        out = nn.mlp_forward(net, np.ones((5, 4))).output
        np.testing.assert_allclose(out, np.tile(np.tanh(b), (5, 1)))

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(7)
        net = random_net([3, 4, 2], rng)
        x = rng.normal(size=(6, 3))
        out = nn.mlp_forward(net, x).output

        # independent per-element recomputation
        expected = np.zeros((6, 2))
        for r in range(6):
            a = x[r]
            for layer in net.layers:
                z = np.array(
                    [sum(a[i] * layer.w[i, j] for i in range(layer.fan_in)) + layer.b[j]
                     for j in range(layer.fan_out)]
                )
                a = np.tanh(z) if layer.activation == "tanh" else z
            expected[r] = a
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        net = random_net([5, 8, 3], rng)
        x = rng.normal(size=(4, 5))
        a = nn.mlp_forward(net, x).output
        b = nn.mlp_forward(net, x).output
        assert np.array_equal(a, b)

    def test_width_mismatch_raises(self):
        net = identity_net(3)
        with pytest.raises(ConfigurationError):
            nn.mlp_forward(net, np.ones((2, 4)))

    def test_dimension_chain_validated(self):
        with pytest.raises(ConfigurationError):
            nn.MlpNet([
                nn.Layer(np.zeros((3, 4)), np.zeros(4)),
                nn.Layer(np.zeros((5, 2)), np.zeros(2)),
            ])


class TestBackward:
    def test_identity_net_sum_loss_gives_unit_input_grad(self):
        net = identity_net(3)
        trace = nn.mlp_forward(net, np.zeros((2, 3)))
        _, dx = nn.mlp_backward(net, trace, np.ones((2, 3)))
        np.testing.assert_array_equal(dx, np.ones((2, 3)))

    def test_weight_grad_of_half_squared_norm(self):
        # loss = ||Wx||^2 / 2  =>  dL/dW = x (Wx)^T laid out as outer(x, Wx)
        w = np.array([[1.0, 2.0], [3.0, -1.0]])
        x = np.array([[0.5, -2.0]])
        net = nn.MlpNet([nn.Layer(w, np.zeros(2), "identity")])
        trace = nn.mlp_forward(net, x)
        grads, _ = nn.mlp_backward(net, trace, trace.output)  # dL/dout = out
        wx = x @ w
        np.testing.assert_allclose(grads[0], x.T @ wx)

    def test_missing_trace_raises(self):
        net = identity_net(2)
        with pytest.raises(ValueError):
            nn.mlp_backward(net, nn.ForwardTrace(), np.ones((1, 2)))

    @pytest.mark.parametrize("sizes,acts", [
        ([3, 5, 2], ["tanh", "identity"]),
        ([4, 6, 6, 3], ["tanh", "softplus", "identity"]),
        ([2, 2], ["softplus"]),
    ])
    def test_matches_finite_differences(self, sizes, acts):
        rng = np.random.default_rng(42)
        net = nn.glorot_uniform_init(sizes, acts, rng)
        x = rng.normal(size=(5, sizes[0]))
        target = rng.normal(size=(5, sizes[-1]))

        def loss_fn(params):
            trace = nn.mlp_forward(net, x)
            diff = trace.output - target
            grads, _ = nn.mlp_backward(net, trace, diff / diff.size)
            return float(np.sum(diff * diff) / (2 * diff.size)), grads

        assert nn.gradient_check(loss_fn, net.parameters()) < 1e-6


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        rng = np.random.default_rng(1)
        params = [rng.normal(size=(3, 2)), rng.normal(size=2)]
        before = [p.copy() for p in params]
        state = nn.AdamState.init(params, lr=0.1)
        nn.adam_step(params, [np.zeros_like(p) for p in params], state)
        for p, q in zip(params, before):
            np.testing.assert_array_equal(p, q)
        assert state.step == 1

    def test_single_step_magnitude_equals_lr(self):
        # Bias correction makes the very first update lr * g/|g| (up to eps).
        params = [np.array([0.0])]
        state = nn.AdamState.init(params, lr=0.1)
        nn.adam_step(params, [np.array([1.0])], state)
        assert params[0][0] == pytest.approx(-0.1, rel=1e-6)

    def test_converges_on_quadratic(self):
        params = [np.array([1.0])]
        state = nn.AdamState.init(params, lr=0.05)
        history = [abs(params[0][0])]
        for _ in range(300):
            nn.adam_step(params, [2.0 * params[0]], state)
            history.append(abs(params[0][0]))
        assert history[-1] < 1e-6
        # the step size self-normalizes so |p| oscillates locally; the
        # 20-step moving average must still fall monotonically
        averages = [np.mean(history[i:i + 20]) for i in range(0, 281, 20)]
        assert all(b < a for a, b in zip(averages, averages[1:]))

    def test_nonfinite_gradient_names_parameter(self):
        params = [np.zeros(2), np.zeros(3)]
        state = nn.AdamState.init(params, lr=0.1)
        bad = [np.zeros(2), np.array([1.0, np.nan, 0.0])]
        with pytest.raises(TrainingError, match="parameter 1"):
            nn.adam_step(params, bad, state)


class TestGradientCheck:
    def test_quadratic_is_exact_up_to_roundoff(self):
        params = [np.array([1.5, -0.5, 2.0])]

        def loss_fn(ps):
            return float(np.sum(ps[0] ** 2)), [2.0 * ps[0]]

        assert nn.gradient_check(loss_fn, params, epsilon=1e-6) < 1e-8


class TestCheckpoint:
    def test_round_trip_arrays_and_header(self, tmp_path):
        rng = np.random.default_rng(3)
        arrays = [rng.normal(size=(4, 3)), rng.normal(size=(1, 5))]
        header = {"kind": "test", "latent": 5}
        path = tmp_path / "model.sdrm"
        nn.save_checkpoint(path, arrays, header)
        loaded, loaded_header = nn.load_checkpoint(path)
        assert loaded_header == header
        for a, b in zip(arrays, loaded):
            np.testing.assert_array_equal(np.atleast_2d(a), b)

    def test_magic_bytes_lead_the_file(self, tmp_path):
        path = tmp_path / "m.sdrm"
        nn.save_checkpoint(path, [np.zeros((1, 1))])
        assert path.read_bytes()[:4] == b"SDRM"

    def test_net_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        net = nn.glorot_uniform_init([3, 4, 2], ["tanh", "identity"], rng)
        path = tmp_path / "net.sdrm"
        nn.save_checkpoint(path, nn.net_to_arrays(net), {"activations": ["tanh", "identity"]})
        arrays, header = nn.load_checkpoint(path)
        rebuilt = nn.net_from_arrays(arrays, header["activations"])
        x = rng.normal(size=(2, 3))
        np.testing.assert_array_equal(
            nn.mlp_forward(net, x).output, nn.mlp_forward(rebuilt, x).output
        )

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ConfigurationError):
            nn.load_checkpoint(path)
