"""Kolmogorov-Arnold networks built from spline-plus-SiLU edge functions.

Each edge computes ``w_b * silu(x) + w_s * sum_i c_i B_i(x)``. A layer with
``n_in`` inputs and ``n_out`` outputs holds an ``n_out x n_in`` grid of edges
and output ``j`` is the sum over ``i`` of edge ``(j, i)`` applied to input
``i``. Edges in the same input column share a spline grid; the grid is
driven by the range of that input, so a grid update moves the whole column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import DimensionMismatchError, EmptyBatchError, InvalidSizeError
from .spline import (
    DEFAULT_DEGREE,
    DEFAULT_INTERVALS,
    SplineBasis,
    basis_from_knots,
    evaluate_curve,
    fit_coeffs,
    make_uniform_basis,
    update_grid,
)


def silu(x):
    """x * sigmoid(x), elementwise."""
    x = np.asarray(x, dtype=float)
    return x * expit(x)


@dataclass
class KanEdge:
    basis: SplineBasis
    coeffs: np.ndarray
    w_b: float = 1.0
    w_s: float = 1.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.basis.n_basis,):
            raise DimensionMismatchError(
                f"edge needs {self.basis.n_basis} coefficients, got shape {self.coeffs.shape}"
            )


def edge_forward(edge: KanEdge, x):
    return edge.w_b * silu(x) + edge.w_s * evaluate_curve(edge.basis, edge.coeffs, x)


@dataclass
class KanLayer:
    """``coeffs`` has shape (n_out, n_in, n_basis); ``w_b`` and ``w_s`` are (n_out, n_in)."""

    bases: list[SplineBasis]
    coeffs: np.ndarray
    w_b: np.ndarray
    w_s: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        self.w_b = np.asarray(self.w_b, dtype=float)
        self.w_s = np.asarray(self.w_s, dtype=float)
        n_out, n_in, nb = self.coeffs.shape
        if len(self.bases) != n_in or self.w_b.shape != (n_out, n_in) or self.w_s.shape != (n_out, n_in):
            raise DimensionMismatchError("layer arrays disagree on (n_out, n_in)")
        if any(b.n_basis != nb or b.degree != self.bases[0].degree for b in self.bases):
            raise DimensionMismatchError("all input grids of a layer need the same degree and size")

    @property
    def n_in(self) -> int:
        return self.coeffs.shape[1]

    @property
    def n_out(self) -> int:
        return self.coeffs.shape[0]

    @property
    def degree(self) -> int:
        return self.bases[0].degree

    @property
    def knots(self) -> np.ndarray:
        return np.stack([b.knots for b in self.bases])

    def edge(self, j: int, i: int) -> KanEdge:
        return KanEdge(self.bases[i], self.coeffs[j, i].copy(), float(self.w_b[j, i]), float(self.w_s[j, i]))

    @classmethod
    def from_edges(cls, edges: list[list[KanEdge]]) -> "KanLayer":
        n_in = len(edges[0])
        bases = [edges[0][i].basis for i in range(n_in)]
        for row in edges:
            for i, e in enumerate(row):
                if e.basis != bases[i]:
                    raise DimensionMismatchError(f"edges in input column {i} must share one grid")
        return cls(
            bases,
            np.array([[e.coeffs for e in row] for row in edges]),
            np.array([[e.w_b for e in row] for row in edges]),
            np.array([[e.w_s for e in row] for row in edges]),
        )

    def copy(self) -> "KanLayer":
        return KanLayer(list(self.bases), self.coeffs.copy(), self.w_b.copy(), self.w_s.copy())


@dataclass
class KanNetwork:
    layers: list[KanLayer] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise InvalidSizeError("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise DimensionMismatchError(f"layer widths do not chain: {a.n_out} -> {b.n_in}")
        nb = self.layers[0].coeffs.shape[2]
        if any(l.coeffs.shape[2] != nb or l.degree != self.layers[0].degree for l in self.layers):
            raise DimensionMismatchError("all layers must use the same spline size and degree")

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.layers[0].n_in] + [l.n_out for l in self.layers], dtype=np.int64)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def degree(self) -> int:
        return self.layers[0].degree

    @property
    def n_basis(self) -> int:
        return self.layers[0].coeffs.shape[2]

    @property
    def n_edges(self) -> int:
        return sum(l.n_in * l.n_out for l in self.layers)

    @property
    def n_params(self) -> int:
        return self.n_edges * (self.n_basis + 2)

    def knot_matrix(self) -> np.ndarray:
        return np.ascontiguousarray(np.concatenate([l.knots for l in self.layers]))

    def params(self) -> np.ndarray:
        """Flat parameters: per layer, edges row-major, each ``[c..., w_b, w_s]``."""
        chunks = []
        for l in self.layers:
            block = np.concatenate([l.coeffs, l.w_b[..., None], l.w_s[..., None]], axis=2)
            chunks.append(block.ravel())
        return np.concatenate(chunks)

    def with_params(self, values) -> "KanNetwork":
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_params,):
            raise DimensionMismatchError(f"expected {self.n_params} parameters, got {values.shape}")
        nb = self.n_basis
        layers, p = [], 0
        for l in self.layers:
            size = l.n_out * l.n_in * (nb + 2)
            block = values[p : p + size].reshape(l.n_out, l.n_in, nb + 2)
            layers.append(KanLayer(list(l.bases), block[..., :nb].copy(), block[..., nb].copy(), block[..., nb + 1].copy()))
            p += size
        return KanNetwork(layers)

    def copy(self) -> "KanNetwork":
        return KanNetwork([l.copy() for l in self.layers])


def _forward(net: KanNetwork, x):
    x = np.asarray(x, dtype=float)
    batch = np.atleast_2d(x)
    if batch.shape[-1] != net.n_in:
        raise DimensionMismatchError(f"network expects {net.n_in} inputs, got {batch.shape[-1]}")
    out, acts = _kernels.kan_batch(
        net.params(), 0, net.dims, net.knot_matrix(), net.degree, np.ascontiguousarray(batch)
    )
    return (out[0] if x.ndim == 1 else out), acts


def network_forward(net: KanNetwork, x) -> np.ndarray:
    """Evaluate the network at a vector (n_in,) or a batch (N, n_in)."""
    return _forward(net, x)[0]


def layer_forward(layer: KanLayer, x) -> np.ndarray:
    return network_forward(KanNetwork([layer]), x)


def l1_norm(net: KanNetwork | None) -> float:
    if net is None:
        return 0.0
    return float(np.sum(np.abs(net.params())))


def observed_ranges(net: KanNetwork, inputs) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per layer, the (lo, hi) of each input over the batch.

    Edge ``(j, i)`` of layer ``l`` sees input ``i``, so its range is
    ``(lo[i], hi[i])`` of entry ``l``.
    """
    batch = np.atleast_2d(np.asarray(inputs, dtype=float))
    if batch.shape[0] == 0 or np.asarray(inputs).size == 0:
        raise EmptyBatchError("observed_ranges needs at least one input vector")
    _, acts = _forward(net, batch)
    ranges = []
    for l, layer in enumerate(net.layers):
        a = acts[:, l, : layer.n_in]
        ranges.append((a.min(axis=0), a.max(axis=0)))
    return ranges


def update_network_grid(net: KanNetwork, ranges) -> KanNetwork:
    """Move every input grid to its observed range, refitting each edge's spline.

    Inputs whose observed range is degenerate keep their grid.
    """
    layers = []
    for layer, (lo, hi) in zip(net.layers, ranges):
        bases, coeffs = list(layer.bases), layer.coeffs.copy()
        for i, basis in enumerate(layer.bases):
            if float(hi[i]) - float(lo[i]) < 1e-9:
                continue  # constant input: nothing to span, keep the old grid
            for j in range(layer.n_out):
                bases[i], coeffs[j, i] = update_grid(basis, layer.coeffs[j, i], float(lo[i]), float(hi[i]))
        layers.append(KanLayer(bases, coeffs, layer.w_b.copy(), layer.w_s.copy()))
    return KanNetwork(layers)


def init_network(
    widths,
    seed: int | np.random.Generator = 0,
    degree: int = DEFAULT_DEGREE,
    n_intervals: int = DEFAULT_INTERVALS,
    domain=(-1.0, 1.0),
    w_b: float = 1.0,
    w_s: float = 1.0,
    output_scale: float = 1.0,
) -> KanNetwork:
    """Random network with spline coefficients ~ U(+-0.1/sqrt(n_basis)).

    ``output_scale`` multiplies ``w_b`` and the spline coefficients of the last
    layer so an embedding model can start close to its linear part.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise InvalidSizeError(f"widths must list at least two positive sizes, got {widths}")
    rng = np.random.default_rng(seed)
    basis = make_uniform_basis(degree, domain[0], domain[1], n_intervals)
    bound = 0.1 / np.sqrt(basis.n_basis)
    layers = []
    for l, (n_in, n_out) in enumerate(zip(widths, widths[1:])):
        scale = output_scale if l == len(widths) - 2 else 1.0
        coeffs = rng.uniform(-bound, bound, size=(n_out, n_in, basis.n_basis)) * scale
        layers.append(
            KanLayer([basis] * n_in, coeffs, np.full((n_out, n_in), w_b * scale), np.full((n_out, n_in), float(w_s)))
        )
    return KanNetwork(layers)


def zero_network(widths, degree: int = DEFAULT_DEGREE, n_intervals: int = DEFAULT_INTERVALS, domain=(-1.0, 1.0)) -> KanNetwork:
    net = init_network(widths, 0, degree, n_intervals, domain)
    return net.with_params(np.zeros(net.n_params))


def identity_network(
    hidden: int,
    seed: int | np.random.Generator | None = None,
    jitter: float = 0.0,
    degree: int = DEFAULT_DEGREE,
    n_intervals: int = DEFAULT_INTERVALS,
    domain=(-1.0, 1.0),
) -> KanNetwork:
    """1 -> hidden -> 1 network equal to the identity on ``domain``.

    Hidden edges carry ``v``, output edges ``h / hidden``; SiLU weights are 0.
    ``jitter`` adds U(+-jitter) noise to every spline coefficient to break the
    symmetry between hidden units.
    """
    basis = make_uniform_basis(degree, domain[0], domain[1], n_intervals)
    xs = np.linspace(domain[0], domain[1], 20 * basis.n_basis)
    ident = fit_coeffs(basis, xs, xs)
    first = np.tile(ident, (hidden, 1, 1))
    second = np.tile(ident / hidden, (1, hidden, 1))
    if jitter:
        rng = np.random.default_rng(seed)
        first = first + rng.uniform(-jitter, jitter, first.shape)
        second = second + rng.uniform(-jitter, jitter, second.shape) / hidden
    return KanNetwork(
        [
            KanLayer([basis], first, np.zeros((hidden, 1)), np.ones((hidden, 1))),
            KanLayer([basis] * hidden, second, np.zeros((1, hidden)), np.ones((1, hidden))),
        ]
    )


def layer_bases(net: KanNetwork) -> list[list[SplineBasis]]:
    return [list(l.bases) for l in net.layers]


def network_from_arrays(dims, knots, params, degree: int) -> KanNetwork:
    """Rebuild a network from its stacked knot rows and flat parameters."""
    dims = [int(d) for d in dims]
    knots = np.asarray(knots, dtype=float)
    nb = knots.shape[1] - degree - 1
    layers, row, p = [], 0, 0
    for n_in, n_out in zip(dims, dims[1:]):
        bases = [basis_from_knots(knots[row + i], degree) for i in range(n_in)]
        size = n_out * n_in * (nb + 2)
        block = np.asarray(params[p : p + size], dtype=float).reshape(n_out, n_in, nb + 2)
        layers.append(KanLayer(bases, block[..., :nb].copy(), block[..., nb].copy(), block[..., nb + 1].copy()))
        row += n_in
        p += size
    return KanNetwork(layers)
