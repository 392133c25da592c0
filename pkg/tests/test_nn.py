"""MLP forward/backward correctness, SGD, pooling, serialization."""

import numpy as np
import pytest

from icfps import Layer, MlpNet, Rng, StaleCacheError, masked_maxpool


def finite_difference_check(net, x, loss_of, grads, eps=1e-6, tol=1e-4):
    """Central-difference check of every parameter gradient."""
    worst = 0.0
    for li, layer in enumerate(net.layers):
        for arr, g in ((layer.w, grads[li][0]), (layer.b, grads[li][1])):
            flat = arr.ravel()
            gflat = np.asarray(g).ravel()
            idx = np.linspace(0, flat.size - 1, min(flat.size, 24)).astype(int)
            for j in idx:
                orig = flat[j]
                flat[j] = orig + eps
                lp = loss_of(net.forward(x))
                flat[j] = orig - eps
                lm = loss_of(net.forward(x))
                flat[j] = orig
                num = (lp - lm) / (2 * eps)
                rel = abs(num - gflat[j]) / max(abs(num) + abs(gflat[j]), 1e-8)
                worst = max(worst, rel)
    return worst


class TestForward:
    def test_identity_layer(self):
        net = MlpNet([Layer(w=np.eye(3), b=np.zeros(3), act="none")])
        x = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(net.forward(x), x)

    def test_relu_kills_negatives(self):
        net = MlpNet([Layer(w=-np.eye(3), b=np.zeros(3), act="relu")])
        out = net.forward(np.array([[1.0, 2.0, 3.0]]))
        np.testing.assert_array_equal(out, np.zeros((1, 3)))

    def test_sigmoid_at_zero(self):
        net = MlpNet([Layer(w=np.zeros((2, 3)), b=np.zeros(2), act="sigmoid")])
        out = net.forward(np.array([[5.0, -1.0, 2.0]]))
        np.testing.assert_allclose(out, 0.5)

    def test_width_mismatch(self):
        net = MlpNet([Layer(w=np.eye(3), b=np.zeros(3), act="none")])
        with pytest.raises(ValueError):
            net.forward(np.zeros((1, 4)))

    def test_batch_order_equivariance(self):
        net = MlpNet.init(5, [8, 4], ["relu", "none"], Rng(1))
        x = Rng(2).uniform(-1, 1, size=(10, 5))
        perm = Rng(3).permutation(10)
        np.testing.assert_array_equal(net.forward(x)[perm], net.forward(x[perm]))


class TestBackward:
    def test_scalar_product_rule(self):
        net = MlpNet([Layer(w=np.array([[2.0]]), b=np.array([0.0]), act="none")])
        y = net.forward(np.array([[3.0]]))
        grads, dx = net.backward(np.array([[1.0]]))
        assert grads[0][0][0, 0] == 3.0   # dL/dw = x
        assert dx[0, 0] == 2.0            # dL/dx = w

    def test_zero_upstream_gradient(self):
        net = MlpNet.init(4, [6, 2], ["relu", "sigmoid"], Rng(4))
        net.forward(Rng(5).uniform(-1, 1, size=(7, 4)))
        grads, dx = net.backward(np.zeros((7, 2)))
        for dw, db in grads:
            assert not dw.any() and not db.any()
        assert not dx.any()

    def test_gradients_match_finite_differences(self):
        net = MlpNet.init(5, [8, 8, 3], ["relu", "relu", "none"], Rng(6))
        x = Rng(7).uniform(-1, 1, size=(6, 5))
        target = Rng(8).uniform(-1, 1, size=(6, 3))
        loss_of = lambda y: float(((y - target) ** 2).sum())
        y = net.forward(x)
        grads, _ = net.backward(2 * (y - target))
        assert finite_difference_check(net, x, loss_of, grads) < 1e-4

    def test_backward_before_forward_raises(self):
        net = MlpNet.init(3, [2], ["none"], Rng(9))
        with pytest.raises(StaleCacheError):
            net.backward(np.zeros((1, 2)))

    def test_shape_mismatch_vs_cache_raises(self):
        net = MlpNet.init(3, [2], ["none"], Rng(10))
        net.forward(np.zeros((4, 3)))
        with pytest.raises(StaleCacheError):
            net.backward(np.zeros((5, 2)))


class TestSgd:
    def test_lr_zero_is_identity(self):
        net = MlpNet.init(3, [4], ["relu"], Rng(11))
        before = [p.copy() for p in net.parameters()]
        net.forward(np.ones((2, 3)))
        grads, _ = net.backward(np.ones((2, 4)))
        net.sgd_step(grads, 0.0)
        for b, a in zip(before, net.parameters()):
            np.testing.assert_array_equal(b, a)

    def test_scalar_step(self):
        net = MlpNet([Layer(w=np.array([[1.0]]), b=np.array([0.0]), act="none")])
        net.sgd_step([(np.array([[2.0]]), np.array([0.0]))], 0.5)
        assert net.layers[0].w[0, 0] == 0.0

    def test_step_decreases_convex_loss(self):
        net = MlpNet([Layer(w=np.array([[3.0]]), b=np.array([0.0]), act="none")])
        x = np.array([[1.0]])

        def loss():
            return float(net.forward(x)[0, 0] ** 2)

        before = loss()
        y = net.forward(x)
        grads, _ = net.backward(2 * y)
        net.sgd_step(grads, 0.1)
        assert loss() < before


class TestMaskedMaxpool:
    def test_single_valid_slot(self):
        values = np.zeros((1, 3, 2))
        values[0, 1] = [4.0, -1.0]
        mask = np.array([[False, True, False]])
        pooled, empty = masked_maxpool(values, mask)
        np.testing.assert_array_equal(pooled[0], [4.0, -1.0])
        assert not empty[0]

    def test_elementwise_max(self):
        values = np.array([[[1.0, 5.0], [3.0, 2.0]]])
        pooled, _ = masked_maxpool(values, np.array([[True, True]]))
        np.testing.assert_array_equal(pooled[0], [3.0, 5.0])

    def test_matches_loop_oracle(self):
        rng = Rng(12)
        values = rng.uniform(-1, 1, size=(6, 5, 4))
        mask = rng.uniform(size=(6, 5)) > 0.4
        pooled, empty = masked_maxpool(values, mask)
        for b in range(6):
            rows = [values[b, s] for s in range(5) if mask[b, s]]
            if rows:
                np.testing.assert_array_equal(pooled[b], np.max(rows, axis=0))
                assert not empty[b]
            else:
                np.testing.assert_array_equal(pooled[b], 0)
                assert empty[b]

    def test_slot_order_invariance(self):
        rng = Rng(13)
        values = rng.uniform(-1, 1, size=(1, 6, 3))
        mask = np.array([[True, True, False, True, False, True]])
        pooled, _ = masked_maxpool(values, mask)
        perm = Rng(14).permutation(6)
        pooled2, _ = masked_maxpool(values[:, perm], mask[:, perm])
        np.testing.assert_array_equal(pooled, pooled2)

    def test_duplicate_slot_idempotent(self):
        values = np.array([[[2.0, 1.0], [2.0, 1.0], [0.5, 0.5]]])
        mask = np.array([[True, True, True]])
        pooled, _ = masked_maxpool(values, mask)
        np.testing.assert_array_equal(pooled[0], [2.0, 1.0])


class TestSerialization:
    def test_json_roundtrip(self):
        net = MlpNet.init(4, [6, 2], ["relu", "sigmoid"], Rng(15))
        again = MlpNet.from_json_obj(net.to_json_obj())
        x = Rng(16).uniform(-1, 1, size=(3, 4))
        np.testing.assert_array_equal(net.forward(x), again.forward(x))
        for a, b in zip(net.layers, again.layers):
            np.testing.assert_array_equal(a.w, b.w)
            np.testing.assert_array_equal(a.b, b.b)
            assert a.act == b.act

    def test_init_bounds(self):
        net = MlpNet.init(16, [8], ["relu"], Rng(17))
        bound = np.sqrt(1.0 / 16)
        assert np.abs(net.layers[0].w).max() <= bound
        assert np.abs(net.layers[0].b).max() <= bound

    def test_dimension_chain_validated(self):
        with pytest.raises(ValueError):
            MlpNet([
                Layer(w=np.zeros((4, 3)), b=np.zeros(4), act="relu"),
                Layer(w=np.zeros((2, 5)), b=np.zeros(2), act="none"),
            ])
