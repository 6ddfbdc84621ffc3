import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from andnet.network import (
    ACTIVATION_GAIN,
    CheckpointError,
    Gradients,
    LayerParams,
    NetworkParams,
    activation,
    backward,
    classification_loss,
    config_digest,
    forward,
    init_params,
    input_filter,
    load_checkpoint,
    normalize_network,
    normalize_weights,
    predict,
    save_checkpoint,
    sigmoid,
    softmax,
)
from andnet.numerics import RngStream


def ref_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestFilters:
    def test_input_filter_values(self):
        assert input_filter(0.0) == pytest.approx(0.5)
        assert input_filter(1.0) == pytest.approx(ref_sigmoid(4.0), abs=1e-12)
        assert input_filter(1.0) == pytest.approx(0.98201, abs=1e-5)
        assert input_filter(0.25) == pytest.approx(ref_sigmoid(1.0), abs=1e-12)
        assert input_filter(0.25) == pytest.approx(0.73106, abs=1e-5)

    def test_input_filter_center(self):
        assert input_filter(0.5, center=0.5) == pytest.approx(0.5)
        assert input_filter(0.75, center=0.5) == pytest.approx(ref_sigmoid(1.0), abs=1e-12)

    def test_activation_values(self):
        assert activation(0.0) == pytest.approx(0.5)
        assert activation(1.0) == pytest.approx(ref_sigmoid(8.0), abs=1e-12)
        assert activation(1.0) == pytest.approx(0.99966, abs=1e-5)
        assert activation(-1.0) == pytest.approx(0.000335, abs=1e-6)

    def test_filter_monotone(self):
        x = np.linspace(0, 1, 101)
        y = input_filter(x)
        assert np.all(np.diff(y) > 0)

    def test_sigmoid_extreme_arguments_stable(self):
        assert sigmoid(1000.0) == 1.0
        assert sigmoid(-1000.0) == pytest.approx(0.0, abs=1e-300)
        assert np.isfinite(sigmoid(np.array([-1e6, 0.0, 1e6]))).all()

    @given(st.floats(-50, 50))
    @settings(max_examples=100, deadline=None)
    def test_sigmoid_matches_reference(self, x):
        assert sigmoid(x) == pytest.approx(ref_sigmoid(x), rel=1e-12, abs=1e-300)


class TestNormalize:
    def test_positives_rescaled(self):
        layer = LayerParams(np.array([[2.0], [2.0]]), np.zeros(1))
        out = normalize_weights(layer)
        assert np.allclose(out.weights[:, 0], [0.5, 0.5])

    def test_already_normalized_unchanged(self):
        layer = LayerParams(np.array([[0.2], [0.3], [0.5]]), np.zeros(1))
        out = normalize_weights(layer)
        assert np.array_equal(out.weights, layer.weights)

    def test_negatives_rescaled_only_over_budget(self):
        over = normalize_weights(LayerParams(np.array([[-2.0], [-2.0]]), np.zeros(1)))
        assert np.allclose(over.weights[:, 0], [-0.5, -0.5])
        under = normalize_weights(LayerParams(np.array([[-0.1], [-0.2]]), np.zeros(1)))
        assert np.array_equal(under.weights[:, 0], [-0.1, -0.2])

    def test_mixed_signs_independent_budgets(self):
        layer = LayerParams(np.array([[4.0], [-3.0], [1.0], [-3.0]]), np.zeros(1))
        out = normalize_weights(layer)
        assert np.allclose(out.weights[:, 0], [0.8, -0.5, 0.2, -0.5])

    def test_all_negative_under_budget_unchanged(self):
        layer = LayerParams(np.array([[-0.4], [-0.5]]), np.zeros(1))
        assert np.array_equal(normalize_weights(layer).weights, layer.weights)

    def test_bias_untouched(self):
        layer = LayerParams(np.array([[5.0]]), np.array([3.0]))
        assert normalize_weights(layer).bias[0] == 3.0

    def test_budget_invariant_random_layers(self):
        rng = RngStream(0)
        for i in range(100):
            w = rng.uniform(-3, 3, (17, 9))
            out = normalize_weights(LayerParams(w, np.zeros(9))).weights
            pos = np.where(out > 0, out, 0).sum(axis=0)
            neg = np.where(out < 0, -out, 0).sum(axis=0)
            has_pos = pos > 0
            assert np.all(np.abs(pos[has_pos] - 1.0) < 1e-9)
            assert np.all(neg <= 1.0 + 1e-9)

    def test_idempotence_bit_exact(self):
        rng = RngStream(1)
        for i in range(50):
            w = rng.uniform(-3, 3, (23, 7))
            once = normalize_weights(LayerParams(w, np.zeros(7)))
            twice = normalize_weights(once)
            assert np.array_equal(once.weights, twice.weights)

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_idempotence_property(self, seed):
        w = RngStream(seed).uniform(-5, 5, (6, 4))
        once = normalize_weights(LayerParams(w, np.zeros(4)))
        twice = normalize_weights(once)
        assert np.array_equal(once.weights, twice.weights)


class TestInit:
    def test_shapes_and_budgets(self):
        p = init_params((20, 10, 5), RngStream(0))
        assert [layer.weights.shape for layer in p.layers] == [(20, 10), (10, 5)]
        for layer in p.layers:
            pos = np.where(layer.weights > 0, layer.weights, 0).sum(axis=0)
            neg = np.where(layer.weights < 0, -layer.weights, 0).sum(axis=0)
            assert np.all(np.abs(pos - 1.0) < 1e-9)
            assert np.all(neg <= 1.0 + 1e-9)
            assert np.all(layer.bias == 0.0)

    def test_no_exact_zero_weights(self):
        p = init_params((30, 8, 4), RngStream(3))
        for layer in p.layers:
            assert np.all(layer.weights != 0.0)

    def test_deterministic(self):
        a = init_params((12, 6, 3), RngStream(9))
        b = init_params((12, 6, 3), RngStream(9))
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.weights, lb.weights)

    def test_sign_balanced(self):
        # Negative mass matches the positive budget exactly, so fresh
        # pre-activations are centred instead of pinned at a rail.
        p = init_params((50, 20, 8), RngStream(1))
        for layer in p.layers:
            neg = np.where(layer.weights < 0, -layer.weights, 0).sum(axis=0)
            assert np.all(np.abs(neg - 1.0) < 1e-9)

    def test_budget_concentrated_in_few_weights(self):
        p = init_params((100, 12), RngStream(4))
        w = p.layers[0].weights
        top2_pos = np.sort(np.where(w > 0, w, 0.0), axis=0)[-2:].sum(axis=0)
        top2_neg = np.sort(np.where(w < 0, -w, 0.0), axis=0)[-2:].sum(axis=0)
        assert np.all(top2_pos > 0.6)
        assert np.all(top2_neg > 0.6)

    def test_activations_spread_at_init(self):
        # The property the init exists for: no layer starts collapsed
        # onto a constant, so gradients flow from the first batch.
        p = init_params((784, 512, 384, 256, 10), RngStream(0))
        x = RngStream(5).uniform(0.0, 1.0, (64, 784))
        tr = forward(p, x)
        for y in tr.outputs[:-1]:
            assert float(np.std(y)) > 0.02
            assert 0.05 < float(np.mean(y)) < 0.95


class TestForward:
    def test_zero_weights_give_half(self):
        p = NetworkParams(
            (4, 3, 2),
            [
                LayerParams(np.zeros((4, 3)), np.zeros(3)),
                LayerParams(np.zeros((3, 2)), np.zeros(2)),
            ],
        )
        tr = forward(p, np.random.default_rng(0).uniform(0, 1, (5, 4)))
        assert np.all(tr.outputs[0] == 0.5)

    def test_trace_shapes(self):
        p = init_params((7, 5, 4, 3), RngStream(0))
        tr = forward(p, np.zeros((11, 7)))
        assert [o.shape for o in tr.outputs] == [(11, 5), (11, 4), (11, 3)]
        assert [z.shape for z in tr.pre] == [(11, 5), (11, 4), (11, 3)]
        assert tr.batch_size == 11

    def test_single_neuron_composition(self):
        p = NetworkParams(
            (1, 1), [LayerParams(np.array([[1.0]]), np.zeros(1))], use_input_filter=True
        )
        # Output layer is softmax; with one class it is constant 1, but the
        # pre-activation must equal W * IF(x).
        tr = forward(p, np.array([[0.9]]))
        assert tr.pre[0][0, 0] == pytest.approx(input_filter(0.9), abs=1e-15)

    def test_hidden_composition_with_filter(self):
        p = NetworkParams(
            (1, 1, 1),
            [
                LayerParams(np.array([[1.0]]), np.zeros(1)),
                LayerParams(np.array([[1.0]]), np.zeros(1)),
            ],
        )
        tr = forward(p, np.array([[0.9]]))
        expected = activation(input_filter(0.9))
        assert tr.outputs[0][0, 0] == pytest.approx(float(expected), abs=1e-15)

    def test_filter_disabled(self):
        p = NetworkParams(
            (2, 1, 1),
            [
                LayerParams(np.array([[0.5], [0.5]]), np.zeros(1)),
                LayerParams(np.array([[1.0]]), np.zeros(1)),
            ],
            use_input_filter=False,
        )
        tr = forward(p, np.array([[0.4, 0.6]]))
        assert tr.pre[0][0, 0] == pytest.approx(0.5, abs=1e-15)

    def test_deterministic_bit_exact(self):
        p = init_params((10, 6, 3), RngStream(2))
        x = RngStream(5).uniform(0, 1, (8, 10))
        a = forward(p, x)
        b = forward(p, x)
        for oa, ob in zip(a.outputs, b.outputs):
            assert np.array_equal(oa, ob)

    def test_rejects_wrong_width(self):
        p = init_params((10, 6, 3), RngStream(2))
        with pytest.raises(ValueError, match="features"):
            forward(p, np.zeros((4, 9)))

    def test_hidden_outputs_in_unit_interval(self):
        p = init_params((10, 6, 3), RngStream(2))
        tr = forward(p, RngStream(1).uniform(0, 1, (20, 10)))
        for o in tr.hidden_outputs:
            assert np.all((o > 0) & (o < 1))

    def test_softmax_rows_sum_to_one(self):
        p = init_params((10, 6, 3), RngStream(2))
        tr = forward(p, RngStream(1).uniform(0, 1, (20, 10)))
        assert np.allclose(tr.outputs[-1].sum(axis=1), 1.0, atol=1e-12)


class TestClassificationLoss:
    def _uniform_trace(self, n, k):
        p = NetworkParams(
            (4, k), [LayerParams(np.zeros((4, k)), np.zeros(k))]
        )
        return forward(p, np.zeros((n, 4)))

    def test_uniform_logits_ln10(self):
        tr = self._uniform_trace(6, 10)
        loss, _ = classification_loss(tr, np.zeros(6, dtype=int))
        assert loss == pytest.approx(math.log(10.0), abs=1e-12)

    def test_perfect_logits_approach_zero(self):
        p = NetworkParams(
            (1, 2),
            [LayerParams(np.array([[100.0, -100.0]]), np.zeros(2))],
            use_input_filter=False,
        )
        tr = forward(p, np.array([[1.0]]))
        loss, _ = classification_loss(tr, np.array([0]))
        assert loss < 1e-20

    def test_matches_brute_force(self):
        rng = RngStream(11)
        p = init_params((5, 4, 3), rng.child(0))
        x = rng.child(1).uniform(0, 1, (7, 5))
        labels = rng.child(2).indices(3, 7)
        tr = forward(p, x)
        loss, _ = classification_loss(tr, labels)
        # Brute force: -ln softmax[label], computed naively per row.
        expected = 0.0
        for i in range(7):
            z = tr.pre[-1][i]
            probs = np.exp(z) / np.exp(z).sum()
            expected += -math.log(probs[labels[i]])
        assert loss == pytest.approx(expected / 7, rel=1e-12)

    def test_gradient_is_softmax_minus_onehot_over_n(self):
        rng = RngStream(4)
        p = init_params((5, 3), rng.child(0))
        x = rng.child(1).uniform(0, 1, (4, 5))
        labels = np.array([0, 2, 1, 2])
        tr = forward(p, x)
        _, grad = classification_loss(tr, labels)
        probs = tr.outputs[-1]
        onehot = np.zeros_like(probs)
        onehot[np.arange(4), labels] = 1.0
        assert np.allclose(grad, (probs - onehot) / 4, atol=1e-15)

    def test_label_out_of_range(self):
        tr = self._uniform_trace(2, 3)
        with pytest.raises(ValueError, match="labels"):
            classification_loss(tr, np.array([0, 3]))

    def test_label_count_mismatch(self):
        tr = self._uniform_trace(2, 3)
        with pytest.raises(ValueError):
            classification_loss(tr, np.array([0]))


def fd_gradient(loss_fn, params, h=1e-5):
    """Central finite differences over every parameter."""
    grads = Gradients.zeros_like(params)
    for li, layer in enumerate(params.layers):
        for idx in np.ndindex(layer.weights.shape):
            q = params.copy()
            q.layers[li].weights[idx] += h
            up = loss_fn(q)
            q = params.copy()
            q.layers[li].weights[idx] -= h
            dn = loss_fn(q)
            grads.weights[li][idx] = (up - dn) / (2 * h)
        for j in range(layer.bias.size):
            q = params.copy()
            q.layers[li].bias[j] += h
            up = loss_fn(q)
            q = params.copy()
            q.layers[li].bias[j] -= h
            dn = loss_fn(q)
            grads.biases[li][j] = (up - dn) / (2 * h)
    return grads


def assert_grads_close(analytic, numeric, rtol):
    for ga, gn in zip(
        analytic.weights + analytic.biases, numeric.weights + numeric.biases
    ):
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1e-8)
        assert np.all(np.abs(ga - gn) / denom < rtol), (
            f"max rel err {(np.abs(ga - gn) / denom).max():.3e}"
        )


class TestBackward:
    def _setup(self, sizes=(8, 4, 3), seed=0, batch=6, use_filter=True):
        rng = RngStream(seed)
        p = init_params(sizes, rng.child(0), use_input_filter=use_filter)
        x = rng.child(1).uniform(0, 1, (batch, sizes[0]))
        labels = rng.child(2).indices(sizes[-1], batch)
        return p, x, labels

    def test_zero_output_grad_gives_zero(self):
        p, x, _ = self._setup()
        tr = forward(p, x)
        bp = backward(p, tr, np.zeros_like(tr.pre[-1]))
        for g in bp.grads.weights + bp.grads.biases:
            assert np.all(g == 0.0)
        assert np.all(bp.input_grad == 0.0)

    def test_ce_gradients_match_finite_differences(self):
        p, x, labels = self._setup()

        def loss_fn(q):
            return classification_loss(forward(q, x), labels)[0]

        tr = forward(p, x)
        _, og = classification_loss(tr, labels)
        bp = backward(p, tr, og)
        fd = fd_gradient(loss_fn, p)
        assert_grads_close(bp.grads, fd, rtol=1e-4)

    def test_ce_gradients_without_filter(self):
        p, x, labels = self._setup(use_filter=False)

        def loss_fn(q):
            return classification_loss(forward(q, x), labels)[0]

        tr = forward(p, x)
        _, og = classification_loss(tr, labels)
        bp = backward(p, tr, og)
        fd = fd_gradient(loss_fn, p)
        assert_grads_close(bp.grads, fd, rtol=1e-4)

    def test_input_gradient_matches_finite_differences(self):
        p, x, labels = self._setup(batch=3)
        tr = forward(p, x)
        _, og = classification_loss(tr, labels)
        bp = backward(p, tr, og)
        h = 1e-6
        for (i, j) in [(0, 0), (1, 3), (2, 7)]:
            up = x.copy()
            up[i, j] += h
            dn = x.copy()
            dn[i, j] -= h
            fd = (
                classification_loss(forward(p, up), labels)[0]
                - classification_loss(forward(p, dn), labels)[0]
            ) / (2 * h)
            assert bp.input_grad[i, j] == pytest.approx(fd, rel=1e-4, abs=1e-9)

    def test_hidden_grads_shapes(self):
        p, x, labels = self._setup(sizes=(8, 5, 4, 3), batch=6)
        tr = forward(p, x)
        _, og = classification_loss(tr, labels)
        bp = backward(p, tr, og)
        assert [g.shape for g in bp.hidden_grads] == [(6, 5), (6, 4)]

    def test_activation_derivative_closed_form(self):
        # dAF/dz = 8 a (1 - a), probed through a 1-1 linear path.
        z = 0.3
        a = float(activation(z))
        h = 1e-7
        fd = (float(activation(z + h)) - float(activation(z - h))) / (2 * h)
        assert fd == pytest.approx(ACTIVATION_GAIN * a * (1 - a), rel=1e-6)


class TestPredict:
    def test_predict_matches_argmax(self):
        p = init_params((6, 4, 3), RngStream(0))
        x = RngStream(1).uniform(0, 1, (9, 6))
        assert np.array_equal(
            predict(p, x), np.argmax(forward(p, x).outputs[-1], axis=1)
        )


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = init_params((9, 5, 4), RngStream(8), filter_center=0.25)
        path = tmp_path / "model.npz"
        save_checkpoint(path, p, config_hash="abc123")
        q, meta = load_checkpoint(path)
        assert q.layer_sizes == p.layer_sizes
        assert q.use_input_filter == p.use_input_filter
        assert q.filter_center == p.filter_center
        assert meta["config_hash"] == "abc123"
        assert meta["version"] == 1
        for la, lb in zip(p.layers, q.layers):
            assert np.array_equal(la.weights, lb.weights)
            assert np.array_equal(la.bias, lb.bias)

    def test_rejects_garbage_file(self, tmp_path):
        path = tmp_path / "bad.npz"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_rejects_missing_fields(self, tmp_path):
        path = tmp_path / "partial.npz"
        np.savez(path, version=np.int64(1), layer_sizes=np.array([4, 2]))
        with pytest.raises(CheckpointError, match="missing"):
            load_checkpoint(path)

    def test_config_digest_stable(self):
        a = config_digest({"lr": 0.05, "epochs": 10})
        b = config_digest({"epochs": 10, "lr": 0.05})
        assert a == b and len(a) == 16


class TestParamsValidation:
    def test_rejects_inconsistent_sizes(self):
        with pytest.raises(ValueError):
            NetworkParams((4, 3, 2), [LayerParams(np.zeros((4, 3)), np.zeros(3))])

    def test_rejects_wrong_layer_shape(self):
        with pytest.raises(ValueError):
            NetworkParams(
                (4, 3),
                [LayerParams(np.zeros((4, 2)), np.zeros(2))],
            )

    def test_rejects_nan_weights(self):
        with pytest.raises(ValueError):
            LayerParams(np.array([[float("nan")]]), np.zeros(1))

    def test_rejects_bias_shape(self):
        with pytest.raises(ValueError):
            LayerParams(np.zeros((3, 2)), np.zeros(3))
