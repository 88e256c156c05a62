"""Slices, polynomial fits, dominance, affine alignment and plot-data files."""

import json

import numpy as np
import pytest

from sskan.errors import AllZeroCoefficientsError, IndexOutOfRangeError, InvalidSizeError, RankDeficientError
from sskan.interp import (
    SliceReport,
    affine_align,
    attach_fit,
    dominance,
    emit_plot_data,
    emit_timeseries,
    is_monotone,
    kan_slice,
    polyfit,
    read_plot_data,
    robustness_sweep,
)
from sskan.interp import slice as interp_slice
from sskan.kan import KanEdge, KanLayer, KanNetwork, edge_forward, init_network, network_forward, zero_network
from sskan.spline import make_uniform_basis


def poly_report(coeffs, x=None):
    x = np.linspace(-1, 1, 101) if x is None else x
    return SliceReport(0, [0.0], x, np.polynomial.polynomial.polyval(x, coeffs))


def single_active_network(active=0, n_in=3):
    """Layer where only input ``active`` has nonzero edges."""
    basis = make_uniform_basis()
    rng = np.random.default_rng(0)
    coeffs = np.zeros((2, n_in, 8))
    coeffs[:, active] = rng.normal(size=(2, 8))
    w_b = np.zeros((2, n_in))
    w_b[:, active] = [0.7, -0.4]
    return KanNetwork([KanLayer([basis] * n_in, coeffs, w_b, np.ones((2, n_in)))])


def diode(v, knee=0.4, soft=0.3):
    return np.where(v <= knee, v, knee + soft * np.tanh((v - knee) / soft))


class TestSlice:
    def test_zero_network(self):
        rep = kan_slice(zero_network([3, 2, 2]), 0, [0.1, 0.2, 0.3], np.linspace(-1, 1, 20))
        assert not np.any(rep.responses)

    def test_single_edge(self):
        basis = make_uniform_basis()
        c = np.random.default_rng(2).normal(size=8)
        net = KanNetwork([KanLayer([basis], c[None, None], [[0.3]], [[1.2]])])
        grid = np.linspace(-1.5, 1.5, 64)
        rep = interp_slice(net, 0, [0.0], grid)
        np.testing.assert_allclose(rep.channel(0), edge_forward(KanEdge(basis, c, 0.3, 1.2), grid), atol=1e-14)

    def test_substitutes_varied_coordinate(self, rng):
        net = init_network([3, 2, 2], seed=1)
        fixed = np.array([0.2, -0.3, 0.5])
        grid = np.linspace(-1, 1, 9)
        rep = kan_slice(net, 1, fixed, grid)
        for g, row in zip(grid, rep.responses):
            np.testing.assert_array_equal(row, network_forward(net, [0.2, g, 0.5]))

    def test_defaults_from_inputs(self, rng):
        net = init_network([3, 2], seed=0)
        inputs = rng.normal(size=(300, 3))
        rep = kan_slice(net, 2, inputs=inputs)
        assert rep.n_samples == 512
        assert (rep.grid[0], rep.grid[-1]) == (inputs[:, 2].min(), inputs[:, 2].max())
        np.testing.assert_allclose(rep.fixed_values, inputs.mean(axis=0))

    def test_independent_of_inactive_inputs(self):
        net = single_active_network(active=0)
        grid = np.linspace(-1, 1, 50)
        a = kan_slice(net, 0, [0.0, -0.9, 0.4], grid).responses
        b = kan_slice(net, 0, [0.0, 0.8, -0.7], grid).responses
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("index", [-1, 3])
    def test_index_out_of_range(self, index):
        with pytest.raises(IndexOutOfRangeError):
            kan_slice(init_network([3, 2]), index, [0, 0, 0], [0.0, 1.0])

    def test_grid_must_increase(self):
        with pytest.raises(InvalidSizeError):
            kan_slice(init_network([1, 1]), 0, [0.0], [0.0, 0.0, 1.0])

    def test_untrained_is_near_silu(self):
        net = init_network([1, 1], seed=0)
        rep = kan_slice(net, 0, [0.0], np.linspace(-1, 1, 100))
        silu = rep.grid / (1 + np.exp(-rep.grid))
        assert np.max(np.abs(rep.channel(0) - silu)) < 0.1


class TestPolyfit:
    def test_exact_cubic(self):
        fit = polyfit(poly_report([0, -1, 0, 2]), 3)
        np.testing.assert_allclose(fit.coeffs, [0, -1, 0, 2], atol=1e-10)
        assert fit.residual_rms < 1e-12

    def test_constant(self):
        fit = polyfit(poly_report([0.37]), 3)
        np.testing.assert_allclose(fit.coeffs, [0.37, 0, 0, 0], atol=1e-12)

    def test_monte_carlo_confidence(self):
        rng = np.random.default_rng(0)
        x = np.linspace(-1, 1, 80)
        truth = np.array([0.1, -0.5, 0.3, 1.2])
        sigma = 0.05
        V = np.polynomial.polynomial.polyvander(x, 3)
        se = sigma * np.sqrt(np.diag(np.linalg.inv(V.T @ V)))
        hits = np.zeros(4)
        errors = []
        trials = 400
        for _ in range(trials):
            noisy = np.polynomial.polynomial.polyval(x, truth) + rng.normal(0, sigma, x.size)
            c = polyfit(SliceReport(0, [0.0], x, noisy), 3).coeffs
            hits += np.abs(c - truth) < 3 * se
            errors.append(c - truth)
        assert np.all(hits / trials > 0.98)
        assert np.all(np.abs(np.mean(errors, axis=0)) < 4 * se / np.sqrt(trials))

    def test_idempotent(self, rng):
        rep = SliceReport(0, [0.0], np.linspace(-1, 1, 60), rng.normal(size=60))
        fitted = attach_fit(rep, 3)
        again = polyfit(SliceReport(0, [0.0], rep.grid, fitted.fitted_curve()), 3)
        np.testing.assert_allclose(again.coeffs, fitted.fit_coeffs, atol=1e-10)

    def test_rank_deficient(self):
        with pytest.raises(RankDeficientError):
            polyfit(poly_report([1.0], np.array([0.0, 0.5, 1.0])), 3)


class TestDominance:
    def test_pure_cubic(self):
        np.testing.assert_allclose(dominance([0, 0, 0, 1], 1.0), [0, 0, 0, 1])

    def test_half_half(self):
        np.testing.assert_allclose(dominance([1, 1, 0, 0], 1.0), [0.5, 0.5, 0, 0])

    def test_published_coefficients(self):
        shares = dominance([-0.115, -24.6, 12.8, -996], 1.0)
        assert shares[3] == pytest.approx(996 / (0.115 + 24.6 + 12.8 + 996), rel=1e-12)
        assert shares[3] == pytest.approx(0.964, abs=5e-4)

    def test_sums_to_one(self, rng):
        for _ in range(20):
            assert dominance(rng.normal(size=5), rng.uniform(0.1, 3)).sum() == pytest.approx(1.0, abs=1e-14)

    def test_all_zero(self):
        with pytest.raises(AllZeroCoefficientsError):
            dominance([0, 0, 0], 1.0)


class TestRobustnessSweep:
    def test_additive_network_has_zero_deviation(self, rng):
        net = single_active_network(active=1)
        inputs = rng.uniform(-1, 1, (200, 3))
        assert robustness_sweep(net, 1, inputs, channel=0) < 1e-12

    def test_coupled_network_deviates(self, rng):
        net = init_network([3, 3, 2], seed=4)
        inputs = rng.uniform(-1, 1, (200, 3))
        assert robustness_sweep(net, 0, inputs, channel=0) > 1e-6


class TestAffineAlign:
    X = np.linspace(-1.0, 1.2, 300)

    def test_exact_affine(self):
        al = affine_align(self.X, diode(self.X), lambda z: 2 * diode(z) + 1)
        assert al.error < 1e-9
        assert (al.a, al.b) == pytest.approx((2.0, 1.0), abs=1e-7)

    def test_identity(self):
        al = affine_align(self.X, diode(self.X), diode)
        assert (al.a, al.b, al.scale, al.shift) == pytest.approx((1, 0, 1, 0), abs=1e-7)
        assert al.error < 1e-12

    def test_input_scale(self):
        al = affine_align(self.X, diode(self.X), lambda z: diode(0.5 * z), start=(1.5, 0.0))
        assert al.scale == pytest.approx(0.5, abs=1e-6)
        assert al.error < 1e-6

    def test_sampled_learned_curve(self):
        z = np.linspace(-3, 3, 400)
        al = affine_align(self.X, diode(self.X), (z, -0.5 * diode(z) + 0.2))
        assert al.error < 1e-6 and al.a == pytest.approx(-0.5, abs=1e-5)

    def test_invariant_under_reparameterization(self):
        learned = lambda z: np.tanh(1.3 * z) + 0.1 * z
        base = affine_align(self.X, diode(self.X), learned)
        other = affine_align(self.X, diode(self.X), lambda z: 3.0 * learned(z) - 2.0)
        assert abs(base.error - other.error) < 1e-9
        assert base.error > 1e-3

    def test_constant_learned_is_flagged(self):
        al = affine_align(self.X, diode(self.X), lambda z: np.full_like(z, 0.3))
        assert al.degenerate
        assert al.error == pytest.approx(np.max(np.abs(diode(self.X) - 0.3)))


class TestMonotone:
    def test_increasing(self):
        assert is_monotone(diode(np.linspace(-1, 2, 100)))

    def test_small_dip_tolerated(self):
        v = np.linspace(0, 1, 101)
        v[50] -= 0.015  # drop of 0.005 below the running max
        assert is_monotone(v) and not is_monotone(v, tolerance=0.001)

    def test_decreasing(self):
        assert not is_monotone(np.linspace(1, 0, 10))


class TestEmit:
    def test_round_trip(self, tmp_path, rng):
        rep = attach_fit(SliceReport(1, [0.5, 0.0], np.linspace(-1, 1, 33), rng.normal(size=(33, 2)), "x2"), 3, 1)
        csv_path, side = emit_plot_data(rep, tmp_path / "slice.csv")
        header, data = read_plot_data(csv_path)
        assert header == ["x", "response_1", "response_2", "fit"]
        np.testing.assert_allclose(data[:, 0], rep.grid, atol=1e-12)
        np.testing.assert_allclose(data[:, 1:3], rep.responses, atol=1e-12)
        np.testing.assert_allclose(data[:, 3], rep.fitted_curve(), atol=1e-12)
        meta = json.loads(side.read_text())
        np.testing.assert_allclose(meta["fit"]["coefficients_ascending"], rep.fit_coeffs, atol=1e-15)
        assert meta["fit"]["channel"] == 1 and meta["varied_name"] == "x2"
        assert sum(meta["fit"]["dominance"]) == pytest.approx(1.0)

    def test_no_fit_column_is_nan(self, tmp_path):
        csv_path, side = emit_plot_data(poly_report([1.0, 2.0]), tmp_path / "s.csv")
        _, data = read_plot_data(csv_path)
        assert np.all(np.isnan(data[:, -1]))
        assert json.loads(side.read_text())["fit"] is None

    def test_zero_samples(self, tmp_path):
        rep = SliceReport(0, [0.0], np.zeros(0), np.zeros((0, 1)))
        with pytest.raises(InvalidSizeError):
            emit_plot_data(rep, tmp_path / "empty.csv")
        assert not (tmp_path / "empty.csv").exists()

    def test_timeseries(self, tmp_path, rng):
        a, b = rng.normal(size=20), rng.normal(size=20)
        header, data = read_plot_data(emit_timeseries(tmp_path / "t.csv", a, b))
        assert header == ["k", "y_data", "y_model", "error"]
        np.testing.assert_array_equal(data[:, 0], np.arange(20))
        np.testing.assert_array_equal(data[:, 3], a - b)

    def test_unwritable(self, tmp_path):
        from sskan.errors import IOFailureError

        with pytest.raises(IOFailureError):
            emit_plot_data(poly_report([1.0]), tmp_path / "missing" / "s.csv")
