import numpy as np
import pytest

from rile.nets import (
    ACTIVATIONS,
    AdamState,
    MlpParams,
    adam_init,
    adam_step,
    finite_diff_check,
    flat_to_params,
    load_mlp,
    mlp_backward,
    mlp_forward,
    mlp_from_bytes,
    mlp_init,
    mlp_to_bytes,
    params_to_flat,
    save_mlp,
    sgd_step,
    zeros_like_params,
)


def single_layer(w, b, act):
    return MlpParams([np.asarray(w, float)], [np.asarray(b, float)], [act])


class TestForward:
    def test_identity_layer(self):
        p = single_layer(np.eye(2), [0.0, 0.0], "identity")
        assert np.array_equal(mlp_forward(p, [3.0, -1.0]), [3.0, -1.0])

    def test_relu_clamps_negative_preactivation(self):
        p = single_layer([[1.0, 0.0], [0.0, 1.0]], [-2.0, 0.0], "relu")
        assert np.array_equal(mlp_forward(p, [1.0, 1.0]), [0.0, 1.0])

    def test_two_layer_hand_computed_chain(self):
        # 2 -> 2 (tanh) -> 1 (identity), every element written out by hand.
        w1 = [[0.5, -0.25], [0.1, 0.3]]
        b1 = [0.05, -0.1]
        w2 = [[2.0, -1.0]]
        b2 = [0.25]
        p = MlpParams(
            [np.array(w1), np.array(w2)],
            [np.array(b1), np.array(b2)],
            ["tanh", "identity"],
        )
        x0, x1 = 0.8, -0.4
        z1_0 = 0.5 * x0 + (-0.25) * x1 + 0.05
        z1_1 = 0.1 * x0 + 0.3 * x1 + (-0.1)
        h1_0 = np.tanh(z1_0)
        h1_1 = np.tanh(z1_1)
        y = 2.0 * h1_0 + (-1.0) * h1_1 + 0.25
        out = mlp_forward(p, [x0, x1])
        assert out.shape == (1,)
        assert out[0] == pytest.approx(y, abs=1e-15)

    def test_batch_matches_per_row(self):
        rng = np.random.default_rng(0)
        p = mlp_init([3, 5, 2], ["relu", "identity"], rng)
        xs = rng.normal(size=(7, 3))
        batch = mlp_forward(p, xs)
        # gemm vs gemv BLAS paths may differ in the last bits
        for i in range(7):
            np.testing.assert_allclose(batch[i], mlp_forward(p, xs[i]), rtol=1e-13, atol=1e-15)

    def test_deterministic_bit_identical(self):
        rng = np.random.default_rng(1)
        p = mlp_init([4, 8, 3], ["tanh", "identity"], rng)
        x = rng.normal(size=4)
        a, b = mlp_forward(p, x), mlp_forward(p, x)
        assert np.array_equal(a, b)

    def test_dimension_mismatch_names_layer(self):
        p = single_layer(np.eye(2), [0.0, 0.0], "identity")
        with pytest.raises(ValueError, match="dim"):
            mlp_forward(p, [1.0, 2.0, 3.0])

    def test_bad_chain_rejected(self):
        with pytest.raises(ValueError, match="layer 1"):
            MlpParams(
                [np.zeros((3, 2)), np.zeros((1, 4))],
                [np.zeros(3), np.zeros(1)],
                ["relu", "identity"],
            )


class TestBackward:
    def test_linear_layer_gradient(self):
        # y = Wx + b, upstream e1: d/db = e1, d/dW = e1 x^T.
        w = np.array([[1.0, 2.0], [3.0, 4.0]])
        p = single_layer(w, [0.0, 0.0], "identity")
        x = np.array([0.7, -1.3])
        grads, gx = mlp_backward(p, x, [1.0, 0.0])
        assert np.array_equal(grads.biases[0], [1.0, 0.0])
        assert np.array_equal(grads.weights[0], np.outer([1.0, 0.0], x))
        assert np.array_equal(gx, w[0])

    def test_relu_subgradient_at_zero_is_zero(self):
        # Pre-activation exactly 0: convention pins the subgradient to 0.
        p = single_layer([[1.0]], [0.0], "relu")
        grads, gx = mlp_backward(p, [0.0], [1.0])
        assert grads.weights[0][0, 0] == 0.0
        assert grads.biases[0][0] == 0.0
        assert gx[0] == 0.0

    @pytest.mark.parametrize("act", ["relu", "tanh", "sigmoid", "identity"])
    def test_two_layer_matches_finite_differences(self, act):
        rng = np.random.default_rng(42)
        p = mlp_init([3, 6, 2], [act, "identity"], rng)
        x = rng.normal(size=3)
        u = rng.normal(size=2)

        def loss(q):
            return float(mlp_forward(q, x) @ u)

        analytic, _ = mlp_backward(p, x, u)
        assert finite_diff_check(loss, p, analytic, step=1e-5) <= 1e-4

    def test_input_grad_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        p = mlp_init([4, 5, 3], ["tanh", "identity"], rng)
        x = rng.normal(size=4)
        u = rng.normal(size=3)
        _, gx = mlp_backward(p, x, u)
        eps = 1e-6
        for i in range(4):
            dx = np.zeros(4)
            dx[i] = eps
            fd = (mlp_forward(p, x + dx) @ u - mlp_forward(p, x - dx) @ u) / (2 * eps)
            assert gx[i] == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_upstream_dim_mismatch_rejected(self):
        p = single_layer(np.eye(2), [0.0, 0.0], "identity")
        with pytest.raises(ValueError):
            mlp_backward(p, [1.0, 2.0], [1.0, 0.0, 0.0])


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        rng = np.random.default_rng(5)
        p = mlp_init([2, 3, 1], ["relu", "identity"], rng)
        state = adam_init(p, lr=0.1)
        new_p, new_state = adam_step(p, zeros_like_params(p), state)
        assert np.array_equal(params_to_flat(new_p), params_to_flat(p))
        assert new_state.step == 1
        assert np.array_equal(params_to_flat(new_state.m), np.zeros(p.n_params()))
        assert np.array_equal(params_to_flat(new_state.v), np.zeros(p.n_params()))

    def test_single_step_hand_computed(self):
        # One scalar parameter, g=1, lr=0.1, fresh state:
        #   m=0.1, v=0.001, m_hat=1, v_hat=1 -> delta = 0.1/(1+1e-8)
        p = single_layer([[2.0]], [0.0], "identity")
        g = single_layer([[1.0]], [0.0], "identity")
        new_p, st = adam_step(p, g, adam_init(p, lr=0.1))
        expected = 2.0 - 0.1 * 1.0 / (1.0 + 1e-8)
        assert new_p.weights[0][0, 0] == pytest.approx(expected, abs=1e-15)
        assert st.step == 1
        assert st.m.weights[0][0, 0] == pytest.approx(0.1, abs=1e-15)
        assert st.v.weights[0][0, 0] == pytest.approx(0.001, abs=1e-15)

    def test_two_identical_steps_follow_recurrence(self):
        # Second step with g=1: m=0.19, v=0.001999, both bias corrections
        # cancel exactly (1-0.9^2=0.19, 1-0.999^2=0.001999) so delta repeats.
        p = single_layer([[0.0]], [5.0], "identity")
        g = single_layer([[1.0]], [1.0], "identity")
        p1, st1 = adam_step(p, g, adam_init(p, lr=0.1))
        p2, st2 = adam_step(p1, g, st1)
        delta = 0.1 * 1.0 / (1.0 + 1e-8)
        assert st2.m.biases[0][0] == pytest.approx(0.9 * 0.1 + 0.1, abs=1e-15)
        assert st2.v.biases[0][0] == pytest.approx(0.999 * 0.001 + 0.001, abs=1e-15)
        m_hat = (0.9 * 0.1 + 0.1) / (1.0 - 0.9**2)
        v_hat = (0.999 * 0.001 + 0.001) / (1.0 - 0.999**2)
        assert m_hat == pytest.approx(1.0, abs=1e-12)
        assert v_hat == pytest.approx(1.0, abs=1e-12)
        assert p2.biases[0][0] == pytest.approx(5.0 - 2 * delta, abs=1e-12)
        assert p2.weights[0][0, 0] == pytest.approx(0.0 - 2 * delta, abs=1e-12)

    def test_non_finite_gradient_rejected(self):
        p = single_layer([[1.0]], [0.0], "identity")
        g = single_layer([[1.0]], [0.0], "identity")
        g.weights[0][0, 0] = np.nan  # after construction: param validation is separate
        with pytest.raises(ValueError, match="non-finite"):
            adam_step(p, g, adam_init(p, lr=0.1))

    def test_shape_closure(self):
        rng = np.random.default_rng(6)
        p = mlp_init([3, 4, 2], ["tanh", "identity"], rng)
        g = mlp_init([3, 4, 2], ["tanh", "identity"], rng)
        new_p, st = adam_step(p, g, adam_init(p, lr=1e-3))
        for a, b in zip(new_p.weights, p.weights):
            assert a.shape == b.shape
        for a, b in zip(st.m.weights, p.weights):
            assert a.shape == b.shape

    def test_counter_strictly_increments(self):
        p = single_layer([[1.0]], [0.0], "identity")
        st = adam_init(p, lr=0.1)
        for expect in (1, 2, 3):
            p, st = adam_step(p, zeros_like_params(p), st)
            assert st.step == expect

    def test_sgd_step(self):
        p = single_layer([[1.0]], [2.0], "identity")
        g = single_layer([[0.5]], [1.0], "identity")
        q = sgd_step(p, g, lr=0.1)
        assert q.weights[0][0, 0] == pytest.approx(0.95)
        assert q.biases[0][0] == pytest.approx(1.9)


class TestFiniteDiffCheck:
    def test_quadratic_loss_is_nearly_exact(self):
        rng = np.random.default_rng(7)
        p = mlp_init([3, 4, 2], ["identity", "identity"], rng)

        def loss(q):
            f = params_to_flat(q)
            return 0.5 * float(f @ f)

        assert finite_diff_check(loss, p, p, step=1e-5) <= 1e-8

    def test_bce_through_mlp(self):
        rng = np.random.default_rng(8)
        p = mlp_init([2, 8, 1], ["tanh", "identity"], rng)
        xs = rng.normal(size=(16, 2))
        ys = rng.integers(0, 2, size=16).astype(float)

        def loss(q):
            logits = mlp_forward(q, xs)[:, 0]
            probs = 1.0 / (1.0 + np.exp(-logits))
            return float(-np.mean(ys * np.log(probs) + (1 - ys) * np.log(1 - probs)))

        logits = mlp_forward(p, xs)[:, 0]
        probs = 1.0 / (1.0 + np.exp(-logits))
        upstream = ((probs - ys) / len(ys))[:, None]
        analytic, _ = mlp_backward(p, xs, upstream)
        assert finite_diff_check(loss, p, analytic, step=1e-5) <= 1e-4

    def test_corrupted_gradient_detected(self):
        # Doubling one large-gradient entry must push the error past 0.4.
        p = single_layer([[2.0, 1.0]], [0.5], "identity")

        def loss(q):
            f = params_to_flat(q)
            return 0.5 * float(f @ f)

        corrupted = p.copy()
        corrupted.weights[0][0, 0] *= 2.0
        assert finite_diff_check(loss, p, corrupted) > 0.4

    def test_rejects_bad_step(self):
        p = single_layer([[1.0]], [0.0], "identity")
        with pytest.raises(ValueError):
            finite_diff_check(lambda q: 0.0, p, p, step=0.0)

    def test_rejects_non_finite_loss(self):
        p = single_layer([[1.0]], [0.0], "identity")
        with pytest.raises(ValueError):
            finite_diff_check(lambda q: np.inf, p, p)


class TestBackpropExactnessSweep:
    @pytest.mark.parametrize("hidden", [(64, 64), (256, 256)])
    @pytest.mark.parametrize("act", ACTIVATIONS)
    def test_shapes_and_activations(self, hidden, act):
        rng = np.random.default_rng(hash((hidden, act)) % 2**32)
        dims = [5, *hidden, 2]
        p = mlp_init(dims, [act, act, "identity"], rng)
        x = rng.normal(size=5)
        u = rng.normal(size=2)
        analytic, _ = mlp_backward(p, x, u)

        def loss(q):
            return float(mlp_forward(q, x) @ u)

        err = finite_diff_check(loss, p, analytic, step=1e-5, coords=24, rng=rng)
        assert err <= 1e-4


class TestSerialization:
    def test_round_trip_identity(self):
        rng = np.random.default_rng(9)
        p = mlp_init([3, 7, 2], ["relu", "tanh"], rng)
        q = mlp_from_bytes(mlp_to_bytes(p))
        assert q.activations == p.activations
        assert np.array_equal(params_to_flat(q), params_to_flat(p))

    def test_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        p = mlp_init([2, 4, 1], ["sigmoid", "identity"], rng)
        path = tmp_path / "net.mlp"
        save_mlp(p, path)
        q = load_mlp(path)
        assert np.array_equal(params_to_flat(q), params_to_flat(p))

    def test_bad_magic_rejected(self):
        with pytest.raises(ValueError, match="magic"):
            mlp_from_bytes(b"NOTAMLP0" + b"\x00" * 16)

    def test_flat_round_trip(self):
        rng = np.random.default_rng(11)
        p = mlp_init([4, 3, 2], ["tanh", "identity"], rng)
        q = flat_to_params(params_to_flat(p), p)
        assert np.array_equal(params_to_flat(q), params_to_flat(p))
