import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpmcluster.neural import (PARAMS, TARGET_FLOOR, AssignNet, adam_step, cross_entropy_loss_grad,
                               duplicate_output_unit, forward, init_net, isotropic_subcluster_loss_grad,
                               kl_cluster_loss_grad, logits, remove_output_unit)

FD_STEP = 1e-5


def random_net(rng, d=3, h=5, k=3, shifted=True):
    net = init_net(d, h, k, int(rng.integers(2**31)))
    net.b1 = rng.normal(scale=0.3, size=h)
    net.b2 = rng.normal(scale=0.3, size=k)
    if shifted:
        net.x_shift = rng.normal(size=d)
        net.x_scale = rng.uniform(0.5, 2.0, size=d)
    return net


def numeric_grads(loss_fn, net):
    out = {}
    for name in PARAMS:
        p = getattr(net, name)
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            keep = p[idx]
            p[idx] = keep + FD_STEP
            up = loss_fn(net)
            p[idx] = keep - FD_STEP
            down = loss_fn(net)
            p[idx] = keep
            g[idx] = (up - down) / (2 * FD_STEP)
        out[name] = g
    return out


def assert_grads_match(analytic, numeric):
    for name in PARAMS:
        a, n = analytic[name], numeric[name]
        err = np.abs(a - n)
        bound = 1e-4 * np.maximum(np.abs(a), np.abs(n)) + 1e-8
        assert np.all(err <= bound), f"{name}: worst relative error {np.max(err / (np.abs(n) + 1e-12))}"


def zero_net(d, h, k):
    return AssignNet(np.zeros((d, h)), np.zeros(h), np.zeros((h, k)), np.zeros(k))


class TestForward:
    def test_single_output(self, rng):
        net = init_net(4, 6, 1, 0)
        np.testing.assert_array_equal(forward(net, rng.normal(size=(9, 4))), np.ones((9, 1)))

    def test_zero_params_uniform(self, rng):
        r = forward(zero_net(3, 5, 4), rng.normal(size=(6, 3)))
        np.testing.assert_array_equal(r, np.full((6, 4), 0.25))

    def test_deterministic(self, rng):
        x = rng.normal(size=(20, 3))
        a = forward(init_net(3, 8, 5, 42), x)
        b = forward(init_net(3, 8, 5, 42), x)
        np.testing.assert_array_equal(a, b)

    @given(st.integers(0, 2**32 - 1))
    def test_rows_stochastic(self, seed):
        rng = np.random.default_rng(seed)
        net = random_net(rng, k=int(rng.integers(1, 7)))
        r = forward(net, rng.normal(size=(10, 3)) * 50)
        assert np.all(r >= 0)
        np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-9)

    def test_shift_invariance(self, rng):
        net = random_net(rng)
        x = rng.normal(size=(15, 3))
        before = forward(net, x)
        net.b2 = net.b2 + 3.7
        np.testing.assert_allclose(forward(net, x), before, atol=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            forward(init_net(3, 4, 2, 0), rng.normal(size=(5, 2)))


class TestKLLoss:
    def test_matching_target_zero_loss(self, rng):
        net = random_net(rng)
        x = rng.normal(size=(8, 3))
        loss, _ = kl_cluster_loss_grad(net, x, forward(net, x))
        assert abs(loss) < 1e-12

    def test_clamped_hand_value(self):
        net = zero_net(2, 3, 2)
        loss, _ = kl_cluster_loss_grad(net, np.zeros((1, 2)), np.array([[1.0, 0.0]]))
        want = 0.5 * math.log(0.5 / 1.0) + 0.5 * math.log(0.5 / TARGET_FLOOR)
        assert loss == pytest.approx(want, rel=1e-14)

    def test_k_mismatch(self, rng):
        with pytest.raises(ValueError):
            kl_cluster_loss_grad(init_net(3, 4, 3, 0), rng.normal(size=(2, 3)), np.full((2, 2), 0.5))

    def test_gradient_at_matching_target(self, rng):
        net = random_net(rng)
        x = rng.normal(size=(6, 3))
        target = forward(net, x)
        _, grads = kl_cluster_loss_grad(net, x, target)
        assert_grads_match(grads, numeric_grads(lambda n: kl_cluster_loss_grad(n, x, target)[0], net))

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(1000 + seed)
        net = random_net(rng)
        x = rng.normal(size=(5, 3)) * 2
        target = rng.dirichlet(np.ones(3), size=5)
        _, grads = kl_cluster_loss_grad(net, x, target)
        assert_grads_match(grads, numeric_grads(lambda n: kl_cluster_loss_grad(n, x, target)[0], net))


class TestCrossEntropyLoss:
    def test_hand_value(self):
        loss, _ = cross_entropy_loss_grad(zero_net(2, 3, 4), np.zeros((2, 2)),
                                          np.array([[1.0, 0, 0, 0], [0, 0.5, 0.5, 0]]))
        assert loss == pytest.approx(2 * math.log(4.0), rel=1e-14)

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(2000 + seed)
        net = random_net(rng)
        x = rng.normal(size=(5, 3)) * 2
        target = rng.dirichlet(np.ones(3), size=5)
        _, grads = cross_entropy_loss_grad(net, x, target)
        assert_grads_match(grads, numeric_grads(lambda n: cross_entropy_loss_grad(n, x, target)[0], net))


class TestIsotropicLoss:
    def test_points_at_shared_mean(self, rng):
        mu = rng.normal(size=3)
        loss, _ = isotropic_subcluster_loss_grad(random_net(rng, k=2), np.tile(mu, (4, 1)),
                                                 np.stack([mu, mu]))
        assert loss == 0.0

    def test_equidistant_point(self, rng):
        means = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        x = np.array([[0.0, 2.0, 0.0]])
        loss, _ = isotropic_subcluster_loss_grad(random_net(rng, k=2), x, means)
        assert loss == pytest.approx(5.0, rel=1e-14)

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(3000 + seed)
        net = random_net(rng, k=2)
        x = rng.normal(size=(5, 3)) * 2
        means = rng.normal(size=(2, 3)) * 2
        _, grads = isotropic_subcluster_loss_grad(net, x, means)
        assert_grads_match(grads, numeric_grads(
            lambda n: isotropic_subcluster_loss_grad(n, x, means)[0], net))


class TestAdam:
    def test_zero_gradient(self, rng):
        net = random_net(rng)
        before = net.copy()
        adam_step(net, {p: np.zeros_like(getattr(net, p)) for p in PARAMS}, 0.01)
        for p in PARAMS:
            np.testing.assert_array_equal(getattr(net, p), getattr(before, p))
        assert net.t == 1

    def test_first_step_sign(self, rng):
        net = random_net(rng)
        before = net.copy()
        grads = {p: rng.normal(size=getattr(net, p).shape) for p in PARAMS}
        lr = 1e-3
        adam_step(net, grads, lr)
        for p in PARAMS:
            delta = getattr(net, p) - getattr(before, p)
            np.testing.assert_allclose(delta, -lr * np.sign(grads[p]), rtol=1e-6)

    def test_convex_descent(self, rng):
        net = random_net(rng)
        goal = {p: rng.normal(size=getattr(net, p).shape) for p in PARAMS}

        def loss():
            return sum(0.5 * float(np.sum((getattr(net, p) - goal[p]) ** 2)) for p in PARAMS)

        trace = []
        for _ in range(200):
            trace.append(loss())
            adam_step(net, {p: getattr(net, p) - goal[p] for p in PARAMS}, 1e-3)
        assert all(b < a for a, b in zip(trace[10:], trace[11:]))


class TestSurgery:
    def test_duplicate_identical_logits(self, rng):
        net = random_net(rng)
        dup = duplicate_output_unit(net.copy(), 1)
        assert dup.k_out == 4
        a = logits(dup, rng.normal(size=(100, 3)) * 5)
        np.testing.assert_array_equal(a[:, 1], a[:, 3])

    def test_duplicate_leaves_hidden_layer(self, rng):
        net = random_net(rng)
        dup = duplicate_output_unit(net.copy(), 0)
        np.testing.assert_array_equal(dup.w1, net.w1)
        np.testing.assert_array_equal(dup.b1, net.b1)

    def test_duplicate_softmax_algebra(self, rng):
        net = random_net(rng)
        x = rng.normal(size=(30, 3))
        old = forward(net, x)
        new = forward(duplicate_output_unit(net.copy(), 2), x)
        # Z' = Z (1 + r_k), so r'_j = r_j / (1 + r_k)
        scale = 1.0 / (1.0 + old[:, 2])
        np.testing.assert_allclose(new[:, [0, 1, 2]], old * scale[:, None], rtol=1e-12)
        np.testing.assert_allclose(new[:, 3], new[:, 2], rtol=1e-15)

    def test_duplicate_copies_moments(self, rng):
        net = random_net(rng)
        x = rng.normal(size=(8, 3))
        _, grads = kl_cluster_loss_grad(net, x, rng.dirichlet(np.ones(3), size=8))
        adam_step(net, grads, 1e-3)
        duplicate_output_unit(net, 1)
        for buf in (net.m, net.v):
            np.testing.assert_array_equal(buf["w2"][:, 3], buf["w2"][:, 1])
            assert buf["b2"][3] == buf["b2"][1]
            assert buf["w2"].shape == net.w2.shape

    def test_duplicate_with_noise(self, rng):
        net = random_net(rng)
        dup = duplicate_output_unit(net.copy(), 0, noise_scale=0.1, rng=rng)
        assert not np.array_equal(dup.w2[:, 0], dup.w2[:, 3])

    def test_remove_masked_softmax(self, rng):
        net = random_net(rng, k=4)
        x = rng.normal(size=(50, 3)) * 3
        full = forward(net, x)
        masked = np.delete(full, 2, axis=1)
        masked /= masked.sum(axis=1, keepdims=True)
        cut = remove_output_unit(net.copy(), 2)
        np.testing.assert_allclose(forward(cut, x), masked, atol=1e-12)
        np.testing.assert_array_equal(logits(cut, x), np.delete(logits(net, x), 2, axis=1))

    def test_remove_then_duplicate_round_trip(self, rng):
        net = random_net(rng, k=4)
        net = duplicate_output_unit(remove_output_unit(net, 0), 1)
        assert net.k_out == 4
        assert net.m["w2"].shape == net.w2.shape

    def test_remove_errors(self, rng):
        with pytest.raises(ValueError):
            remove_output_unit(init_net(2, 3, 1, 0), 0)
        with pytest.raises(IndexError):
            remove_output_unit(init_net(2, 3, 3, 0), 3)
        with pytest.raises(IndexError):
            duplicate_output_unit(init_net(2, 3, 3, 0), 5)

    @given(st.integers(0, 2**32 - 1), st.lists(st.booleans(), max_size=12))
    def test_random_surgery_sequence(self, seed, ops):
        rng = np.random.default_rng(seed)
        net = random_net(rng, k=2)
        expected = 2
        for grow in ops:
            if grow or net.k_out == 1:
                duplicate_output_unit(net, int(rng.integers(net.k_out)))
                expected += 1
            else:
                remove_output_unit(net, int(rng.integers(net.k_out)))
                expected -= 1
        assert net.k_out == expected
        r = forward(net, rng.normal(size=(10, 3)))
        np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-9)


class TestInit:
    def test_same_seed(self):
        a, b = init_net(4, 7, 3, 11), init_net(4, 7, 3, 11)
        for p in PARAMS:
            np.testing.assert_array_equal(getattr(a, p), getattr(b, p))

    def test_different_seed(self):
        assert not np.array_equal(init_net(4, 7, 3, 1).w1, init_net(4, 7, 3, 2).w1)

    def test_bounds_and_zero_biases(self):
        net = init_net(10, 50, 6, 3)
        assert np.abs(net.w1).max() <= math.sqrt(6 / 60)
        assert np.abs(net.w2).max() <= math.sqrt(6 / 56)
        assert not net.b1.any() and not net.b2.any()

    def test_bad_dims(self):
        with pytest.raises(ValueError):
            init_net(0, 5, 2, 0)
