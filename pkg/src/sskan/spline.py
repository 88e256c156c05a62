"""Uniform-grid B-spline bases used by every KAN edge.

A basis on ``[domain_lo, domain_hi]`` with ``G`` intervals carries ``degree``
extra knots of the same spacing beyond each end, giving ``G + degree`` basis
functions that form a partition of unity on the domain. Outside the domain
the functions are evaluated as-is and vanish beyond the outermost knots.

The default configuration (cubic, ``G = 5`` intervals on ``[-1, 1]``) gives
eight basis functions per edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateRangeError, InvalidDomainError, InvalidSizeError, LengthMismatchError

DEFAULT_DEGREE = 3
DEFAULT_INTERVALS = 5
GRID_MARGIN = 0.05
REFIT_OVERSAMPLING = 10


@dataclass(frozen=True)
class SplineBasis:
    degree: int
    domain_lo: float
    domain_hi: float
    n_intervals: int
    knots: np.ndarray

    def __post_init__(self):
        self.knots.setflags(write=False)

    @property
    def n_basis(self) -> int:
        return self.n_intervals + self.degree

    @property
    def spacing(self) -> float:
        return (self.domain_hi - self.domain_lo) / self.n_intervals

    def __eq__(self, other):
        if not isinstance(other, SplineBasis):
            return NotImplemented
        return (
            self.degree == other.degree
            and self.n_intervals == other.n_intervals
            and self.domain_lo == other.domain_lo
            and self.domain_hi == other.domain_hi
            and np.array_equal(self.knots, other.knots)
        )

    __hash__ = None


def uniform_knots(degree: int, lo: float, hi: float, n_intervals: int) -> np.ndarray:
    h = (hi - lo) / n_intervals
    return lo + np.arange(-degree, n_intervals + degree + 1, dtype=float) * h


def make_uniform_basis(
    degree: int = DEFAULT_DEGREE,
    domain_lo: float = -1.0,
    domain_hi: float = 1.0,
    n_intervals: int = DEFAULT_INTERVALS,
) -> SplineBasis:
    """Build a uniform extended-knot basis.

    Raises
    ------
    InvalidDomainError
        If ``domain_lo >= domain_hi`` or either bound is not finite.
    InvalidSizeError
        If ``n_intervals < 1`` or ``degree < 1``.
    """
    if not (np.isfinite(domain_lo) and np.isfinite(domain_hi)) or domain_lo >= domain_hi:
        raise InvalidDomainError(f"domain [{domain_lo}, {domain_hi}] is empty or not finite")
    if int(n_intervals) != n_intervals or n_intervals < 1:
        raise InvalidSizeError(f"n_intervals must be a positive integer, got {n_intervals}")
    if int(degree) != degree or degree < 1:
        raise InvalidSizeError(f"degree must be a positive integer, got {degree}")
    degree, n_intervals = int(degree), int(n_intervals)
    knots = uniform_knots(degree, float(domain_lo), float(domain_hi), n_intervals)
    return SplineBasis(degree, float(domain_lo), float(domain_hi), n_intervals, knots)


def basis_from_knots(knots: np.ndarray, degree: int) -> SplineBasis:
    """Recover the basis description from a stored uniform knot row."""
    knots = np.array(knots, dtype=float)
    n_intervals = knots.shape[0] - 2 * degree - 1
    return SplineBasis(degree, float(knots[degree]), float(knots[degree + n_intervals]), n_intervals, knots)


def _evaluate(basis: SplineBasis, x):
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    vals, ders = _kernels.basis_batch(np.ascontiguousarray(basis.knots), basis.degree, xs.ravel())
    return xs, vals, ders


def eval_basis(basis: SplineBasis, x) -> np.ndarray:
    """Values of all basis functions at ``x``.

    A scalar ``x`` gives a vector of length ``n_basis``; an array gives shape
    ``x.shape + (n_basis,)``.
    """
    xs, vals, _ = _evaluate(basis, x)
    if np.ndim(x) == 0:
        return vals[0]
    return vals.reshape(xs.shape + (basis.n_basis,))


def eval_basis_derivative(basis: SplineBasis, x) -> np.ndarray:
    """First derivatives of all basis functions at ``x`` (same shapes as :func:`eval_basis`)."""
    xs, _, ders = _evaluate(basis, x)
    if np.ndim(x) == 0:
        return ders[0]
    return ders.reshape(xs.shape + (basis.n_basis,))


def evaluate_curve(basis: SplineBasis, coeffs, x) -> np.ndarray:
    return eval_basis(basis, x) @ np.asarray(coeffs, dtype=float)


def fit_coeffs(basis: SplineBasis, x, y) -> np.ndarray:
    """Least-squares spline coefficients for samples ``(x, y)``."""
    design = eval_basis(basis, np.asarray(x, dtype=float))
    coeffs, *_ = np.linalg.lstsq(design, np.asarray(y, dtype=float), rcond=None)
    return coeffs


def _extended_curve(basis: SplineBasis, coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Beyond the domain the polynomial piece of the boundary interval is continued,
    # so a spline that is a global polynomial on its domain stays that polynomial.
    out = evaluate_curve(basis, coeffs, x)
    d, h = basis.degree, basis.spacing
    for side, mask in (("lo", x < basis.domain_lo), ("hi", x > basis.domain_hi)):
        if not mask.any():
            continue
        a = basis.domain_lo if side == "lo" else basis.domain_hi - h
        nodes = a + h * (np.arange(d + 1) + 0.5) / (d + 1)
        poly = np.polynomial.Polynomial.fit(nodes, evaluate_curve(basis, coeffs, nodes), d)
        out[mask] = poly(x[mask])
    return out


def update_grid(
    basis: SplineBasis, coeffs, observed_lo: float, observed_hi: float
) -> tuple[SplineBasis, np.ndarray]:
    """Re-span the grid to the observed input range and refit the coefficients.

    The new domain is the observed range padded by ``GRID_MARGIN`` of its width
    on each side; ``degree`` and the interval count are kept. Coefficients
    are the least-squares fit of the old curve sampled at
    ``REFIT_OVERSAMPLING * n_basis`` points across the new domain.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.n_basis,):
        raise LengthMismatchError(f"expected {basis.n_basis} coefficients, got {coeffs.shape}")
    width = observed_hi - observed_lo
    if not np.isfinite(width) or width < 1e-9:
        raise DegenerateRangeError(f"observed range [{observed_lo}, {observed_hi}] is degenerate")
    margin = GRID_MARGIN * width
    new = make_uniform_basis(basis.degree, observed_lo - margin, observed_hi + margin, basis.n_intervals)
    xs = np.linspace(new.domain_lo, new.domain_hi, REFIT_OVERSAMPLING * new.n_basis)
    target = _extended_curve(basis, coeffs, xs)
    return new, fit_coeffs(new, xs, target)
