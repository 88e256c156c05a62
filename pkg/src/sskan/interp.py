"""Interpretability tools: univariate slices of trained KANs, polynomial fits
of those slices, and affine-aligned comparison with a known nonlinearity.

A slice fixes every KAN input but one and sweeps the remaining input over a
grid. For an SS-KAN state network the interesting case is varying a state
while the other state and the input sit at their training means.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import least_squares

from .errors import (
    AllZeroCoefficientsError,
    DimensionMismatchError,
    IndexOutOfRangeError,
    InvalidSizeError,
    IOFailureError,
    RankDeficientError,
)
from .kan import KanNetwork, network_forward

DEFAULT_SLICE_POINTS = 512
DEFAULT_FIT_DEGREE = 3


@dataclass
class SliceReport:
    """Network responses along one input with the others frozen.

    ``responses`` has shape (len(grid), n_out). ``fit_coeffs`` (ascending
    powers) and ``fit_rms`` are filled by :func:`attach_fit`; ``oracle`` holds
    an optional alignment summary.
    """

    varied_index: int
    fixed_values: np.ndarray
    grid: np.ndarray
    responses: np.ndarray
    varied_name: str = ""
    fit_channel: int | None = None
    fit_coeffs: np.ndarray | None = None
    fit_rms: float | None = None
    oracle: dict | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        responses = np.asarray(self.responses, dtype=float)
        width = responses.shape[-1] if responses.ndim == 2 else 1
        self.responses = responses.reshape(self.grid.size, width)
        self.fixed_values = np.asarray(self.fixed_values, dtype=float)

    @property
    def n_samples(self) -> int:
        return self.grid.size

    @property
    def n_channels(self) -> int:
        return self.responses.shape[1]

    def channel(self, j: int) -> np.ndarray:
        return self.responses[:, j]

    def fitted_curve(self) -> np.ndarray | None:
        if self.fit_coeffs is None:
            return None
        return np.polynomial.polynomial.polyval(self.grid, self.fit_coeffs)


class PolyFit(NamedTuple):
    coeffs: np.ndarray
    residual_rms: float


class Alignment(NamedTuple):
    """``learned(z) ~= a * oracle(scale * z + shift) + b``.

    ``error`` is the sup-norm misfit in oracle output units on the oracle
    grid. ``degenerate`` flags a learned curve too flat to align, in which
    case ``error`` is the raw sup difference.
    """

    a: float
    b: float
    scale: float
    shift: float
    error: float
    degenerate: bool


def _training_stats(inputs, n_in: int):
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[0] == 0:
        raise InvalidSizeError("need at least one training input vector")
    if inputs.shape[1] != n_in:
        raise DimensionMismatchError(f"training inputs have {inputs.shape[1]} columns, network expects {n_in}")
    return inputs.mean(axis=0), inputs.min(axis=0), inputs.max(axis=0)


def kan_slice(
    net: KanNetwork,
    varied_index: int,
    fixed_values=None,
    grid=None,
    inputs=None,
    n_points: int = DEFAULT_SLICE_POINTS,
    names=None,
) -> SliceReport:
    """Evaluate ``net`` along input ``varied_index`` with the other inputs fixed.

    Parameters
    ----------
    fixed_values : array, optional
        One value per network input; the entry at ``varied_index`` is
        ignored. Defaults to the column means of ``inputs``.
    grid : array, optional
        Values of the varied input. Defaults to ``n_points`` points spanning
        the range of that column in ``inputs``.
    inputs : array (N, n_in), optional
        Training-time network inputs, used only for the defaults.

    Raises
    ------
    IndexOutOfRangeError
        If ``varied_index`` is not a valid input position.
    """
    n_in = net.n_in
    if not 0 <= int(varied_index) < n_in:
        raise IndexOutOfRangeError(f"varied index {varied_index} outside 0..{n_in - 1}")
    varied_index = int(varied_index)
    if (fixed_values is None or grid is None) and inputs is None:
        raise InvalidSizeError("fixed_values and grid default to training statistics, so inputs are required")
    if inputs is not None:
        mean, lo, hi = _training_stats(inputs, n_in)
    if fixed_values is None:
        fixed_values = mean
    fixed_values = np.asarray(fixed_values, dtype=float).ravel()
    if fixed_values.size != n_in:
        raise DimensionMismatchError(f"need {n_in} fixed values, got {fixed_values.size}")
    if grid is None:
        grid = np.linspace(lo[varied_index], hi[varied_index], n_points)
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size and np.any(np.diff(grid) <= 0):
        raise InvalidSizeError("slice grid must be strictly increasing")
    batch = np.tile(fixed_values, (grid.size, 1))
    batch[:, varied_index] = grid
    responses = network_forward(net, batch) if grid.size else np.zeros((0, net.n_out))
    name = names[varied_index] if names is not None else f"z{varied_index}"
    return SliceReport(varied_index, fixed_values, grid, responses, varied_name=name)


# The interface name; the module itself never needs the builtin.
slice = kan_slice


def polyfit(report: SliceReport, degree: int = DEFAULT_FIT_DEGREE, channel: int = 0) -> PolyFit:
    """Ordinary least-squares polynomial fit of one response channel.

    Returns ascending coefficients and the residual RMS.

    Raises
    ------
    RankDeficientError
        If the grid has fewer than ``degree + 1`` distinct points.
    """
    if not 0 <= channel < report.n_channels:
        raise IndexOutOfRangeError(f"channel {channel} outside 0..{report.n_channels - 1}")
    x, y = report.grid, report.channel(channel)
    if np.unique(x).size <= degree:
        raise RankDeficientError(f"degree {degree} fit needs more than {degree} distinct grid points, got {np.unique(x).size}")
    V = np.polynomial.polynomial.polyvander(x, degree)
    coeffs, _, rank, _ = np.linalg.lstsq(V, y, rcond=None)
    if rank < degree + 1:
        raise RankDeficientError(f"design matrix has rank {rank} < {degree + 1}")
    resid = y - V @ coeffs
    return PolyFit(coeffs, float(np.sqrt(np.mean(resid**2))))


def attach_fit(report: SliceReport, degree: int = DEFAULT_FIT_DEGREE, channel: int = 0) -> SliceReport:
    fit = polyfit(report, degree, channel)
    return replace(report, fit_channel=channel, fit_coeffs=fit.coeffs, fit_rms=fit.residual_rms)


def dominance(coeffs, r: float) -> np.ndarray:
    """Share of each term in ``sum_j |c_j| r^j``, its size at the boundary ``|x| = r``."""
    c = np.abs(np.asarray(coeffs, dtype=float).ravel())
    if not np.any(c):
        raise AllZeroCoefficientsError("all polynomial coefficients are zero")
    terms = c * float(r) ** np.arange(c.size)
    total = terms.sum()
    if total == 0.0:
        raise AllZeroCoefficientsError(f"every term vanishes at r = {r}")
    return terms / total


def robustness_sweep(
    net: KanNetwork,
    varied_index: int,
    inputs,
    channel: int,
    n_settings: int = 5,
    n_points: int = DEFAULT_SLICE_POINTS,
) -> float:
    """Largest pairwise sup-norm gap between mean-removed slices, relative to the slice range.

    The frozen inputs move together from their training minima to their
    training maxima over ``n_settings`` settings. The reference range is
    that of the slice at the training means.
    """
    mean, lo, hi = _training_stats(inputs, net.n_in)
    base = kan_slice(net, varied_index, inputs=inputs, n_points=n_points)
    span = float(np.ptp(base.channel(channel)))
    curves = []
    for frac in np.linspace(0.0, 1.0, n_settings):
        fixed = lo + frac * (hi - lo)
        s = kan_slice(net, varied_index, fixed, base.grid).channel(channel)
        curves.append(s - s.mean())
    gap = max(float(np.max(np.abs(a - b))) for a in curves for b in curves)
    return gap / span if span > 0 else float("inf")


def _as_callable(learned) -> Callable[[np.ndarray], np.ndarray]:
    if callable(learned):
        return lambda z: np.asarray(learned(z), dtype=float).ravel()
    grid, values = (np.asarray(a, dtype=float).ravel() for a in learned)
    if grid.size != values.size or grid.size < 2:
        raise DimensionMismatchError("learned samples need matching grid and values with at least 2 points")
    return CubicSpline(grid, values, extrapolate=True)


def _flat(raw, f) -> Alignment:
    return Alignment(0.0, float(raw.mean()), float("nan"), float("nan"), float(np.max(np.abs(f - raw))), True)


def affine_align(x, oracle_values, learned, start=(1.0, 0.0)) -> Alignment:
    """Best affine match of a learned curve to an oracle curve.

    Finds ``alpha, beta, s, t`` minimising the squared misfit of
    ``oracle(x) ~= alpha * learned(s x + t) + beta`` over the oracle grid
    ``x``, solving for ``alpha, beta`` in closed form for each ``(s, t)``.
    The result is reported the other way round, as ``learned(z) ~= a *
    oracle(scale * z + shift) + b``.

    Parameters
    ----------
    x, oracle_values : array
        Oracle curve samples; ``x`` should cover the observed input range.
    learned : callable or (grid, values)
        The learned curve. Samples are interpolated by a cubic spline.
    start : (s, t)
        Initial input map from oracle to learned coordinates.
    """
    x = np.asarray(x, dtype=float).ravel()
    f = np.asarray(oracle_values, dtype=float).ravel()
    if x.size != f.size or x.size < 2:
        raise DimensionMismatchError("oracle grid and values must match and hold at least 2 points")
    g = _as_callable(learned)

    def solve(p):
        z = g(p[0] * x + p[1])
        M = np.column_stack([z, np.ones_like(z)])
        ab, _, rank, _ = np.linalg.lstsq(M, f, rcond=None)
        return M @ ab - f, ab, rank

    raw = g(start[0] * x + start[1])
    if np.ptp(raw) <= 1e-12 * max(1.0, float(np.max(np.abs(raw)))):
        return _flat(raw, f)

    fit = least_squares(lambda p: solve(p)[0], np.asarray(start, dtype=float), x_scale="jac", xtol=1e-14, ftol=1e-14, gtol=1e-14)
    s, t = fit.x
    resid, (alpha, beta), rank = solve(fit.x)
    if rank < 2 or alpha == 0.0 or s == 0.0:
        return _flat(raw, f)
    return Alignment(float(1.0 / alpha), float(-beta / alpha), float(1.0 / s), float(-t / s), float(np.max(np.abs(resid))), False)


def is_monotone(values, tolerance: float = 0.01) -> bool:
    """Non-decreasing up to drops of ``tolerance`` times the curve's range."""
    v = np.asarray(values, dtype=float).ravel()
    running_max = np.maximum.accumulate(v)
    return bool(np.max(running_max - v) <= tolerance * np.ptp(v))


def _write_rows(path: Path, header, columns):
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in zip(*columns):
                fh.write(",".join(repr(float(v)) if not isinstance(v, (int, np.integer)) else str(v) for v in row) + "\n")
    except OSError as exc:
        raise IOFailureError(f"cannot write {path}: {exc}") from exc


def emit_plot_data(report: SliceReport, path) -> tuple[Path, Path]:
    """Write the slice as CSV ``x, response_1..c, fit`` plus a JSON sidecar.

    The ``fit`` column is NaN when no fit is attached. Returns the two paths.
    """
    if report.n_samples == 0:
        raise InvalidSizeError("refusing to write a slice with no samples")
    path = Path(path)
    fit = report.fitted_curve()
    if fit is None:
        fit = np.full(report.n_samples, np.nan)
    header = ["x"] + [f"response_{j + 1}" for j in range(report.n_channels)] + ["fit"]
    _write_rows(path, header, [report.grid, *report.responses.T, fit])
    side = {
        "varied_index": report.varied_index,
        "varied_name": report.varied_name,
        "fixed_values": [float(v) for v in report.fixed_values],
        "n_samples": report.n_samples,
        "fit": None,
        "oracle": report.oracle,
        "meta": report.meta,
    }
    if report.fit_coeffs is not None:
        r = float(np.max(np.abs(report.grid)))
        side["fit"] = {
            "channel": report.fit_channel,
            "degree": int(report.fit_coeffs.size - 1),
            "coefficients_ascending": [float(c) for c in report.fit_coeffs],
            "residual_rms": report.fit_rms,
            "half_width": r,
            "dominance": [float(s) for s in dominance(report.fit_coeffs, r)] if np.any(report.fit_coeffs) else None,
        }
    sidecar = path.with_suffix(".json")
    try:
        sidecar.write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IOFailureError(f"cannot write {sidecar}: {exc}") from exc
    return path, sidecar


def emit_timeseries(path, y_data, y_model) -> Path:
    """Write ``k, y_data, y_model, error`` rows for a time-domain error plot."""
    y_data = np.asarray(y_data, dtype=float).ravel()
    y_model = np.asarray(y_model, dtype=float).ravel()
    if y_data.size != y_model.size:
        raise DimensionMismatchError(f"y_data has {y_data.size} samples, y_model {y_model.size}")
    if y_data.size == 0:
        raise InvalidSizeError("refusing to write an empty time series")
    path = Path(path)
    _write_rows(path, ["k", "y_data", "y_model", "error"], [np.arange(y_data.size), y_data, y_model, y_data - y_model])
    return path


def read_plot_data(path) -> tuple[list[str], np.ndarray]:
    """Parse a CSV written by this module into its header and a float array."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IOFailureError(f"cannot read {path}: {exc}") from exc
    return rows[0], np.array([[float(c) for c in r] for r in rows[1:]])
