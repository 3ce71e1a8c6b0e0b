import numpy as np
import pytest

from pacfl.neural import Adam, Mlp, Sgd, log_softmax, make_optimizer, softmax


def finite_difference_check(net, x, count, rng, h=1e-5):
    """Max relative error of backward() against central differences on random parameters."""
    net.forward(x)
    grads, _ = net.backward(np.ones((x.shape[0], net.sizes[-1])))
    flat_grad = np.concatenate([g.ravel() for g in grads])
    flat = net.get_flat()
    worst = 0.0
    for idx in rng.choice(flat.size, size=min(count, flat.size), replace=False):
        up, down = flat.copy(), flat.copy()
        up[idx] += h
        down[idx] -= h
        net.set_flat(up)
        f_up = net.predict(x).sum()
        net.set_flat(down)
        f_down = net.predict(x).sum()
        numeric = (f_up - f_down) / (2 * h)
        worst = max(worst, abs(numeric - flat_grad[idx]) / max(1.0, abs(numeric), abs(flat_grad[idx])))
    net.set_flat(flat)
    return worst


class TestForward:
    def test_zero_init_gives_zero_output(self):
        assert np.array_equal(Mlp([4, 8, 3]).forward(np.ones(4)), np.zeros(3))

    def test_identity_layer(self):
        net = Mlp([3, 3])
        net.weights[0][...] = np.eye(3)
        assert np.array_equal(net.forward(np.array([1.0, 2.0, 0.5])), [1.0, 2.0, 0.5])

    def test_seeded_init_is_bit_stable(self):
        x = np.linspace(-1, 1, 5)
        a = Mlp([5, 16, 2], np.random.default_rng(3)).forward(x)
        b = Mlp([5, 16, 2], np.random.default_rng(3)).forward(x)
        assert np.array_equal(a, b)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Mlp([4, 2]).forward(np.ones(3))

    def test_param_count(self):
        assert Mlp([7, 64, 128, 1]).num_params == 8 * 64 + 65 * 128 + 129

    def test_init_within_glorot_limit(self):
        net = Mlp([10, 30], np.random.default_rng(0))
        assert np.abs(net.weights[0]).max() <= np.sqrt(6 / 40)

    def test_invalid_sizes(self):
        with pytest.raises(ValueError):
            Mlp([4])


class TestBackward:
    @pytest.mark.parametrize("sizes", [[12, 64, 64, 128, 64, 1], [24, 64, 128, 1], [16, 64, 64, 81], [5, 7, 3]])
    def test_finite_differences(self, sizes, rng):
        net = Mlp(sizes, rng)
        for b in net.biases:
            b[...] = rng.normal(0, 0.1, b.shape)
        x = rng.standard_normal((4, sizes[0]))
        assert finite_difference_check(net, x, 100, rng) <= 1e-5

    def test_input_gradient(self, rng):
        net = Mlp([3, 5, 1], rng)
        x = rng.standard_normal(3)
        net.forward(x)
        _, gx = net.backward(np.ones(1))
        h = 1e-6
        num = [(net.predict(x + h * e)[0] - net.predict(x - h * e)[0]) / (2 * h) for e in np.eye(3)]
        assert np.allclose(gx[0], num, atol=1e-7)

    def test_zero_upstream(self, rng):
        net = Mlp([3, 5, 2], rng)
        net.forward(rng.standard_normal(3))
        grads, _ = net.backward(np.zeros(2))
        assert all(not g.any() for g in grads)

    def test_linear_in_upstream(self, rng):
        net = Mlp([3, 5, 2], rng)
        net.forward(rng.standard_normal((2, 3)))
        g = rng.standard_normal((2, 2))
        one, _ = net.backward(g)
        two, _ = net.backward(2 * g)
        assert all(np.allclose(2 * a, b) for a, b in zip(one, two))

    def test_requires_forward(self):
        with pytest.raises(RuntimeError):
            Mlp([2, 2]).backward(np.ones(2))


class TestOptimizers:
    def test_sgd_rate_zero(self):
        p = [np.array([1.0, 2.0])]
        Sgd(0.0).step(p, [np.array([5.0, 5.0])])
        assert p[0].tolist() == [1.0, 2.0]

    def test_sgd_rate_one(self):
        p = [np.array([1.0, 2.0])]
        Sgd(1.0).step(p, [np.array([0.5, -1.0])])
        assert p[0].tolist() == [0.5, 3.0]

    def test_adam_minimizes_square(self):
        x = [np.array([1.0])]
        opt = Adam(0.01)
        for _ in range(500):
            opt.step(x, [2 * x[0]])
        assert abs(x[0][0]) < 0.05

    def test_adam_first_step_is_rate_sized(self):
        x = [np.array([1.0])]
        Adam(0.01).step(x, [np.array([123.0])])
        assert x[0][0] == pytest.approx(0.99, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Sgd(0.1).step([np.zeros(2)], [np.zeros(3)])

    def test_factory(self):
        assert isinstance(make_optimizer("adam", 0.1), Adam)
        assert isinstance(make_optimizer("sgd", 0.1), Sgd)
        with pytest.raises(ValueError):
            make_optimizer("rmsprop", 0.1)


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path, rng):
        net = Mlp([4, 6, 2], rng)
        net.save(tmp_path / "net.npz")
        twin = Mlp.load(tmp_path / "net.npz")
        assert twin.sizes == net.sizes
        assert np.array_equal(twin.get_flat(), net.get_flat())

    def test_soft_update(self, rng):
        a, b = Mlp([2, 2], rng), Mlp([2, 2], rng)
        expect = 0.9 * a.get_flat() + 0.1 * b.get_flat()
        a.soft_update(b, 0.9)
        assert np.allclose(a.get_flat(), expect)

    def test_copy_is_independent(self, rng):
        a = Mlp([2, 2], rng)
        c = a.copy()
        c.weights[0] += 1
        assert not np.array_equal(a.get_flat(), c.get_flat())


def test_softmax_helpers():
    z = np.array([[1.0, 2.0, 3.0], [1000.0, 1000.0, 1000.0]])
    assert np.allclose(softmax(z).sum(axis=1), 1.0)
    assert np.allclose(softmax(z)[1], 1 / 3)
    assert np.allclose(np.exp(log_softmax(z)), softmax(z))
