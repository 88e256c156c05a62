"""Reverse-mode gradients against closed forms and central finite differences."""

import numpy as np
import pytest

from conftest import random_model
from sskan.datagen import default_wh_spec
from sskan.diffengine import GradientVector, initial_state, loss_and_gradient, pack, unpack
from sskan.errors import LengthMismatchError, NonFiniteLossError
from sskan.experiment import build_model, resolve_config
from sskan.kan import init_network, l1_norm
from sskan.ssmodel import CascadeModel, LinearSS, SsKanModel, cascade_rollout, init_cascade_from_filters, rollout
from sskan.trainer import Normalization


def objective_oracle(model, u, y, lam1, lam2, x0=None):
    """Loss recomputed from a forward rollout and the penalty definitions."""
    if isinstance(model, CascadeModel):
        y_hat = cascade_rollout(model, u.ravel())[0][:, None]
        blocks = (model.front, model.back)
        nets = (model.mid_kan,)
    else:
        y_hat = rollout(model, u, x0)[0]
        blocks = (model.linear,)
        nets = (model.kan_f, model.kan_g)
    mse = np.sum((y_hat - y) ** 2) / u.shape[0]
    l2 = sum(np.sum(getattr(b, m) ** 2) for b in blocks for m in "ABCD")
    l1 = sum(l1_norm(n) for n in nets if n is not None)
    return mse + lam2 * l2 + lam1 * l1


def central_differences(model, segment, hyper, h=1e-5):
    theta = model.params()
    fd = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        hi = loss_and_gradient(model.with_params(theta + e), segment, hyper)[0]
        lo = loss_and_gradient(model.with_params(theta - e), segment, hyper)[0]
        fd[i] = (hi - lo) / (2 * h)
    return fd


def assert_gradient_close(grad, fd, rel=1e-4, floor=1e-8):
    small = (np.abs(grad) < floor) & (np.abs(fd) < floor)
    np.testing.assert_allclose(grad[small], fd[small], atol=floor)
    err = np.abs(grad[~small] - fd[~small]) / np.maximum(np.abs(grad[~small]), np.abs(fd[~small]))
    assert err.max() < rel


def segment_for(model, rng, n=20):
    u = rng.uniform(-1, 1, (n, model.n_u))
    y = rng.uniform(-1, 1, (n, model.n_y))
    return u, y


class TestLoss:
    def test_matches_forward_oracle(self, rng):
        model = random_model(4)
        u, y = segment_for(model, rng)
        x0 = rng.normal(size=2) * 0.1
        loss, _ = loss_and_gradient(model, (u, y, x0), (1e-3, 2e-3))
        assert loss == pytest.approx(objective_oracle(model, u, y, 1e-3, 2e-3, x0), rel=1e-12)

    def test_zero_residual(self, rng):
        model = random_model(5)
        u = rng.uniform(-1, 1, (30, 1))
        y, _ = rollout(model, u)
        loss, grad = loss_and_gradient(model, (u, y, None))
        assert loss == 0.0
        assert not np.any(grad.values)

    def test_non_finite(self):
        model = SsKanModel(LinearSS([[1e200]], [[1.0]], [[1.0]], [[0.0]]))
        with pytest.raises(NonFiniteLossError):
            loss_and_gradient(model, (np.ones(5), np.zeros(5), [1e200]))

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            loss_and_gradient(random_model(0), (np.zeros(5), np.zeros(4), None))


class TestGradient:
    def test_single_step_linear_closed_form(self, rng):
        lin = LinearSS(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)), rng.normal(size=(1, 2)), rng.normal(size=(1, 1)))
        model = SsKanModel(lin)
        x0, u0, y0 = rng.normal(size=2), rng.normal(size=(1, 1)), rng.normal(size=(1, 1))
        _, grad = loss_and_gradient(model, (u0, y0, x0))
        r = (lin.C @ x0 + lin.D @ u0[0] - y0[0])
        np.testing.assert_allclose(grad.component("C"), 2 * np.outer(r, x0), atol=1e-10)
        np.testing.assert_allclose(grad.component("D"), 2 * np.outer(r, u0[0]), atol=1e-10)
        assert not np.any(grad.component("A")) and not np.any(grad.component("B"))

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_finite_differences_sskan(self, seed, rng):
        model = random_model(seed)
        u, y = segment_for(model, np.random.default_rng(seed))
        segment = (u, y, np.random.default_rng(seed).normal(size=2) * 0.2)
        _, grad = loss_and_gradient(model, segment, (1e-3, 1e-3))
        assert_gradient_close(grad.values, central_differences(model, segment, (1e-3, 1e-3)))

    def test_finite_differences_multi_io(self):
        model = random_model(9, n_x=3, n_u=2, n_y=2, hidden=3)
        rng = np.random.default_rng(9)
        segment = (*segment_for(model, rng, 15), None)
        _, grad = loss_and_gradient(model, segment, (0.0, 1e-2))
        assert_gradient_close(grad.values, central_differences(model, segment, (0.0, 1e-2)))

    @pytest.mark.parametrize("seed", [0, 1])
    def test_finite_differences_cascade(self, seed):
        spec = default_wh_spec()
        model = init_cascade_from_filters(spec.front, spec.back, hidden=3, seed=seed, jitter=0.05)
        rng = np.random.default_rng(seed)
        theta = model.params()
        theta[model.n_linear :] += rng.normal(0, 0.1, theta.size - model.n_linear)
        model = model.with_params(theta)
        u = rng.uniform(-2, 2, (25, 1))
        y = rng.uniform(-1, 1, (25, 1))
        segment = (u, y, None)
        loss, grad = loss_and_gradient(model, segment, (1e-3, 1e-3))
        assert loss == pytest.approx(objective_oracle(model, u, y, 1e-3, 1e-3), rel=1e-12)
        assert_gradient_close(grad.values, central_differences(model, segment, (1e-3, 1e-3)))

    def test_l1_subgradient(self, rng):
        model = random_model(6)
        theta = model.params()
        theta[model.n_linear + 3] = 0.0
        model = model.with_params(theta)
        segment = (*segment_for(model, rng), None)
        g0 = loss_and_gradient(model, segment, (0.0, 0.0))[1].values
        g1 = loss_and_gradient(model, segment, (0.5, 0.0))[1].values
        expected = np.zeros_like(theta)
        expected[model.n_linear :] = 0.5 * np.sign(theta[model.n_linear :])
        np.testing.assert_allclose(g1 - g0, expected, atol=1e-12)
        assert g1[model.n_linear + 3] == g0[model.n_linear + 3]

    def test_l1_term_change_at_zero(self):
        net = init_network([2, 1], seed=0)
        theta = net.params()
        theta[0] = 0.0
        delta = 1e-3
        for sign in (1, -1):
            bumped = theta.copy()
            bumped[0] = sign * delta
            assert l1_norm(net.with_params(bumped)) - l1_norm(net.with_params(theta)) == pytest.approx(delta, rel=1e-9)

    @pytest.mark.parametrize("a", [1e-3, 0.1, 2.0])
    def test_linear_in_lambda_l2(self, a, rng):
        model = random_model(7)
        segment = (*segment_for(model, rng), None)
        diff = loss_and_gradient(model, segment, (0.0, a))[1].values - loss_and_gradient(model, segment, (0.0, 0.0))[1].values
        theta = model.params()
        n = model.n_linear
        np.testing.assert_allclose(diff[:n], 2 * a * theta[:n], atol=1e-12)
        assert not np.any(diff[n:])

    def test_deterministic(self, rng):
        model = random_model(8)
        segment = (*segment_for(model, rng, 50), None)
        a = loss_and_gradient(model, segment, (1e-4, 1e-4))
        b = loss_and_gradient(model, segment, (1e-4, 1e-4))
        assert a[0] == b[0] and a[1].values.tobytes() == b[1].values.tobytes()

    def test_gradient_vector_labels(self, rng):
        model = random_model(1)
        _, grad = loss_and_gradient(model, (*segment_for(model, rng), None))
        assert isinstance(grad, GradientVector)
        assert list(grad.index) == ["A", "B", "C", "D", "kan_f", "kan_g"]
        assert grad.component("A").shape == (2, 2)


class TestPack:
    def test_round_trip(self):
        model = random_model(2)
        again = unpack(model, pack(model))
        assert pack(again).values.tobytes() == pack(model).values.tobytes()

    def test_basis_perturbation(self):
        model = random_model(3)
        p = pack(model)
        for k in (0, 5, p.values.size - 1):
            e = np.zeros(p.values.size)
            e[k] = 0.25
            changed = pack(unpack(model, p.values + e)).values != p.values
            assert np.flatnonzero(changed).tolist() == [k]

    def test_offsets(self):
        model = random_model(0)
        p = pack(model)
        assert p.values[p.offset("C", (0, 1))] == model.linear.C[0, 1]

    def test_length_mismatch(self):
        model = random_model(0)
        with pytest.raises(LengthMismatchError):
            unpack(model, np.zeros(3))

    def test_silverbox_preset_count(self):
        cfg = resolve_config("silverbox-desk", {}, 1)
        model = build_model(cfg, Normalization([1.0], [0.0], [1.0], [0.0]), {})
        assert [layer.n_in for layer in model.kan_f.layers] == [3, 2] and model.kan_g is None
        n_edges = sum(layer.n_in * layer.n_out for layer in model.kan_f.layers)
        per_edge = model.kan_f.n_basis + 2
        assert (n_edges, per_edge) == (10, 10)
        linear = 2 * 2 + 2 * 1 + 1 * 2 + 1 * 1
        assert len(pack(model)) == linear + n_edges * per_edge == 109

    def test_cascade_layout(self):
        spec = default_wh_spec()
        model = init_cascade_from_filters(spec.front, spec.back)
        p = pack(model)
        assert list(p.index)[:4] == ["A1", "B1", "C1", "D1"]
        np.testing.assert_array_equal(p.component("A2"), model.back.A)
        assert initial_state(model)[1].shape == (3,)
