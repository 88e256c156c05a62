"""SS-KAN dynamical models and their free-run simulation.

General form::

    x(k+1) = A x(k) + B u(k) + KAN_f(x(k), u(k))
    y(k)   = C x(k) + D u(k) + KAN_g(x(k), u(k))

KAN inputs are the concatenation ``(x_1..x_nx, u_1..u_nu)``. A network set to
``None`` is identically zero and contributes no parameters.

Cascade (Wiener-Hammerstein) form: linear block, scalar KAN, linear block::

    x1(k+1) = A1 x1(k) + B1 u(k),   v(k) = C1 x1(k) + D1 u(k)
    w(k)    = KAN(v(k))
    x2(k+1) = A2 x2(k) + B2 w(k),   y(k) = C2 x2(k) + D2 w(k)

Flat parameter order is ``[A, B, C, D, KAN_f, KAN_g]`` and
``[A1, B1, C1, D1, A2, B2, C2, D2, KAN]`` respectively, matrices row-major
and KAN parameters as in :meth:`KanNetwork.params`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from . import _kernels
from .errors import DimensionMismatchError, NonFiniteStateError, OrderMismatchError, UnstableSpecError
from .kan import KanNetwork, identity_network
from .spline import DEFAULT_DEGREE, DEFAULT_INTERVALS

FILTER_ORDER = 3


@dataclass
class LinearSS:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float).reshape(self.A.shape[0], -1)
        self.C = np.asarray(self.C, dtype=float).reshape(-1, self.A.shape[0])
        self.D = np.asarray(self.D, dtype=float).reshape(self.C.shape[0], self.B.shape[1])
        nx = self.A.shape[0]
        if self.A.shape != (nx, nx):
            raise DimensionMismatchError(f"A must be square, got {self.A.shape}")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def params(self) -> np.ndarray:
        return np.concatenate([self.A.ravel(), self.B.ravel(), self.C.ravel(), self.D.ravel()])

    def with_params(self, values) -> "LinearSS":
        nx, nu, ny = self.n_x, self.n_u, self.n_y
        sizes = np.cumsum([nx * nx, nx * nu, ny * nx, ny * nu])
        a, b, c, d, _ = np.split(np.asarray(values, dtype=float), sizes)
        return LinearSS(a.reshape(nx, nx), b.reshape(nx, nu), c.reshape(ny, nx), d.reshape(ny, nu))

    def copy(self) -> "LinearSS":
        return LinearSS(self.A.copy(), self.B.copy(), self.C.copy(), self.D.copy())


def spectral_radius(A) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(A)))))


@dataclass
class SsKanModel:
    linear: LinearSS
    kan_f: KanNetwork | None = None
    kan_g: KanNetwork | None = None
    normalization: Any = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        width = self.n_x + self.n_u
        for name, net, n_out in (("kan_f", self.kan_f, self.n_x), ("kan_g", self.kan_g, self.n_y)):
            if net is not None and (net.n_in != width or net.n_out != n_out):
                raise DimensionMismatchError(f"{name} must map {width} -> {n_out}, got {net.n_in} -> {net.n_out}")
        if self.kan_f is not None and self.kan_g is not None:
            if (self.kan_f.degree, self.kan_f.n_basis) != (self.kan_g.degree, self.kan_g.n_basis):
                raise DimensionMismatchError("kan_f and kan_g must use the same spline size")

    n_x = property(lambda self: self.linear.n_x)
    n_u = property(lambda self: self.linear.n_u)
    n_y = property(lambda self: self.linear.n_y)

    @property
    def n_linear(self) -> int:
        return self.linear.params().size

    def params(self) -> np.ndarray:
        parts = [self.linear.params()]
        parts += [net.params() for net in (self.kan_f, self.kan_g) if net is not None]
        return np.concatenate(parts)

    def with_params(self, values) -> "SsKanModel":
        values = np.asarray(values, dtype=float)
        if values.shape != (self.params().size,):
            raise DimensionMismatchError(f"expected {self.params().size} parameters, got {values.shape}")
        p = self.n_linear
        linear = self.linear.with_params(values[:p])
        nets = []
        for net in (self.kan_f, self.kan_g):
            if net is None:
                nets.append(None)
                continue
            nets.append(net.with_params(values[p : p + net.n_params]))
            p += net.n_params
        return replace(self, linear=linear, kan_f=nets[0], kan_g=nets[1], meta=dict(self.meta))

    def kernel_args(self):
        """Structural arguments of the compiled simulation kernels."""
        nets = [n for n in (self.kan_f, self.kan_g) if n is not None]
        degree = nets[0].degree if nets else DEFAULT_DEGREE
        nk = nets[0].knot_matrix().shape[1] if nets else DEFAULT_INTERVALS + 2 * degree + 1
        out = []
        for net in (self.kan_f, self.kan_g):
            if net is None:
                out += [np.zeros(0, dtype=np.int64), np.zeros((0, nk))]
            else:
                out += [net.dims, net.knot_matrix()]
        return (self.n_x, self.n_u, self.n_y, *out, degree)


@dataclass
class CascadeModel:
    front: LinearSS
    mid_kan: KanNetwork | None
    back: LinearSS
    normalization: Any = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, blk in (("front", self.front), ("back", self.back)):
            if blk.n_u != 1 or blk.n_y != 1:
                raise DimensionMismatchError(f"{name} block must be SISO")
        if self.mid_kan is not None and (self.mid_kan.n_in != 1 or self.mid_kan.n_out != 1):
            raise DimensionMismatchError("mid_kan must map 1 -> 1")

    n_u = property(lambda self: 1)
    n_y = property(lambda self: 1)

    @property
    def n_linear(self) -> int:
        return self.front.params().size + self.back.params().size

    def params(self) -> np.ndarray:
        parts = [self.front.params(), self.back.params()]
        if self.mid_kan is not None:
            parts.append(self.mid_kan.params())
        return np.concatenate(parts)

    def with_params(self, values) -> "CascadeModel":
        values = np.asarray(values, dtype=float)
        if values.shape != (self.params().size,):
            raise DimensionMismatchError(f"expected {self.params().size} parameters, got {values.shape}")
        n1 = self.front.params().size
        n2 = self.back.params().size
        front = self.front.with_params(values[:n1])
        back = self.back.with_params(values[n1 : n1 + n2])
        mid = None if self.mid_kan is None else self.mid_kan.with_params(values[n1 + n2 :])
        return replace(self, front=front, back=back, mid_kan=mid, meta=dict(self.meta))

    def kernel_args(self):
        if self.mid_kan is None:
            dims = np.zeros(0, dtype=np.int64)
            knots = np.zeros((0, DEFAULT_INTERVALS + 2 * DEFAULT_DEGREE + 1))
            degree = DEFAULT_DEGREE
        else:
            dims, knots, degree = self.mid_kan.dims, self.mid_kan.knot_matrix(), self.mid_kan.degree
        return (self.front.n_x, self.back.n_x, dims, knots, degree)


def _as_inputs(u, n_u: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, 1) if n_u == 1 else u.reshape(1, -1)
    if u.shape[1] != n_u:
        raise DimensionMismatchError(f"expected {n_u} input channels, got {u.shape[1]}")
    return np.ascontiguousarray(u)


def _state(x0, n: int) -> np.ndarray:
    if x0 is None:
        return np.zeros(n)
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (n,):
        raise DimensionMismatchError(f"state must have length {n}, got {x0.shape}")
    return x0


def rollout(model: SsKanModel, u, x0=None) -> tuple[np.ndarray, np.ndarray]:
    """Free-run simulation from ``x0`` (zeros by default).

    Returns ``(y, x)`` with shapes (T, n_y) and (T + 1, n_x); ``x[T]`` is the
    state after the last input. Measured outputs are never consulted.
    """
    u = _as_inputs(u, model.n_u)
    if u.shape[0] < 1:
        raise DimensionMismatchError("rollout needs at least one input sample")
    y, x, fail = _kernels.sskan_simulate(model.params(), *model.kernel_args(), u, _state(x0, model.n_x))
    if fail >= 0:
        raise NonFiniteStateError(f"state became non-finite at step {fail}", index=int(fail))
    return y, x


def step(model: SsKanModel, x, u) -> tuple[np.ndarray, np.ndarray]:
    """One model update; returns ``(x_next, y)``."""
    u = np.asarray(u, dtype=float).reshape(1, model.n_u)
    y, xs = rollout(model, u, x)
    return xs[1], y[0]


def simulate_linear(linear: LinearSS, u, x0=None) -> tuple[np.ndarray, np.ndarray]:
    """Reference linear recursion in plain numpy (no KAN terms)."""
    u = _as_inputs(u, linear.n_u)
    x = _state(x0, linear.n_x).copy()
    ys = np.empty((u.shape[0], linear.n_y))
    xs = np.empty((u.shape[0] + 1, linear.n_x))
    xs[0] = x
    for k, uk in enumerate(u):
        ys[k] = linear.C @ x + linear.D @ uk
        x = linear.A @ x + linear.B @ uk
        xs[k + 1] = x
    return ys, xs


def cascade_rollout(model: CascadeModel, u, x1_0=None, x2_0=None, return_states: bool = False):
    """Free-run the cascade; returns ``(y, v, w)`` and optionally ``(x1, x2)``."""
    u = np.ascontiguousarray(np.asarray(u, dtype=float).ravel())
    if u.shape[0] < 1:
        raise DimensionMismatchError("rollout needs at least one input sample")
    n1, n2, dims, knots, degree = model.kernel_args()
    y, v, w, x1, x2, fail = _kernels.cascade_simulate(
        model.params(), n1, n2, dims, knots, degree, u, _state(x1_0, n1), _state(x2_0, n2)
    )
    if fail >= 0:
        raise NonFiniteStateError(f"state became non-finite at step {fail}", index=int(fail))
    if return_states:
        return y, v, w, x1, x2
    return y, v, w


def cascade_step(model: CascadeModel, x1, x2, u):
    """One cascade update; returns ``(x1_next, x2_next, y, v, w)``."""
    y, v, w, s1, s2 = cascade_rollout(model, [u], x1, x2, return_states=True)
    return s1[1], s2[1], y[0], v[0], w[0]


def init_stable_linear(
    n_x: int,
    n_u: int,
    n_y: int,
    seed: int = 0,
    kind: str = "perturbed-identity",
    angle: float = 0.15,
    radius: float = 0.99,
) -> LinearSS:
    """Stable, weakly damped linear system close to the identity map.

    ``kind="perturbed-identity"``: ``A = 0.99 I`` plus N(0, 1e-2^2) noise,
    ``B, C ~ U(-0.1, 0.1)``, ``D = 0``.

    ``kind="oscillator"``: ``A`` is block diagonal with ``radius * R(angle)``
    rotation blocks, i.e. a discretised lightly damped oscillator in
    (position, velocity) coordinates. The first block is wired so that the
    input drives velocity (``B[1] = angle``) and the output reads position
    (``C[:, 0] = 1``). Its static gain from input to position is about 1.

    The spectral radius of ``A`` is kept inside [0.95, 0.999].
    """
    rng = np.random.default_rng(seed)
    B = rng.uniform(-0.1, 0.1, (n_x, n_u))
    C = rng.uniform(-0.1, 0.1, (n_y, n_x))
    D = np.zeros((n_y, n_u))
    if kind == "perturbed-identity":
        A = 0.99 * np.eye(n_x) + rng.normal(0.0, 1e-2, (n_x, n_x))
    elif kind == "oscillator":
        A = radius * np.eye(n_x)
        c, s = np.cos(angle), np.sin(angle)
        for m in range(n_x // 2):
            A[2 * m : 2 * m + 2, 2 * m : 2 * m + 2] = radius * np.array([[c, s], [-s, c]])
        if n_x >= 2:
            B[:2] = 0.0
            B[1] = angle
            C[:, :2] = 0.0
            C[:, 0] = 1.0
    else:
        raise ValueError(f"unknown init kind {kind!r}")
    rho = spectral_radius(A)
    # stay strictly inside [0.95, 0.999] after rounding of the rescale
    target = min(max(rho, 0.9501), 0.9989)
    if rho != target:
        A = A * (target / rho)
    return LinearSS(A, B, C, D)


def _pad_filter(spec: dict) -> tuple[np.ndarray, np.ndarray]:
    b = np.asarray(spec["b"], dtype=float).ravel()
    a = np.asarray(spec["a"], dtype=float).ravel()
    if b.size > FILTER_ORDER + 1 or a.size > FILTER_ORDER + 1 or a.size == 0:
        raise OrderMismatchError(f"filter must be at most order {FILTER_ORDER}, got b={b.size}, a={a.size} taps")
    if a[0] == 0.0:
        raise OrderMismatchError("leading denominator coefficient must be nonzero")
    b = np.pad(b, (0, FILTER_ORDER + 1 - b.size)) / a[0]
    a = np.pad(a, (0, FILTER_ORDER + 1 - a.size)) / a[0]
    return b, a


def realize_filter(spec: dict) -> LinearSS:
    """Third-order controllable canonical realisation of ``H(z) = b(z^-1) / a(z^-1)``.

    Raises
    ------
    OrderMismatchError
        For filters longer than four taps.
    UnstableSpecError
        If any pole has magnitude >= 1.
    """
    b, a = _pad_filter(spec)
    poles = np.roots(a)
    if poles.size and np.max(np.abs(poles)) >= 1.0:
        raise UnstableSpecError(f"filter pole magnitude {np.max(np.abs(poles)):.6g} >= 1")
    n = FILTER_ORDER
    A = np.zeros((n, n))
    A[0] = -a[1:]
    A[1:, :-1] = np.eye(n - 1)
    B = np.zeros((n, 1))
    B[0, 0] = 1.0
    C = (b[1:] - b[0] * a[1:]).reshape(1, n)
    return LinearSS(A, B, C, [[b[0]]])


def series_linear(first: LinearSS, second: LinearSS) -> LinearSS:
    """State-space realisation of ``first`` followed by ``second`` (SISO blocks)."""
    n1, n2 = first.n_x, second.n_x
    A = np.block([[first.A, np.zeros((n1, n2))], [second.B @ first.C, second.A]])
    B = np.vstack([first.B, second.B @ first.D])
    C = np.hstack([second.D @ first.C, second.C])
    return LinearSS(A, B, C, second.D @ first.D)


def _scale_io(linear: LinearSS, u_gain: float = 1.0, y_gain: float = 1.0) -> LinearSS:
    return LinearSS(linear.A, linear.B * u_gain, linear.C * y_gain, linear.D * (u_gain * y_gain))


def init_cascade_from_filters(
    front_spec: dict,
    back_spec: dict,
    hidden: int = 15,
    seed: int | None = 0,
    jitter: float = 0.0,
    degree: int = DEFAULT_DEGREE,
    n_intervals: int = DEFAULT_INTERVALS,
    normalization=None,
) -> CascadeModel:
    """Cascade whose linear blocks realise the given filters and whose KAN is ~identity on [-1, 1].

    The filters describe physical signals. When ``normalization`` is given,
    the input gain of the front block is divided by the input scale and the
    output gain of the back block multiplied by the output scale, so the
    model maps normalized ``u`` to normalized ``y`` while ``v`` keeps
    physical units. Offsets are left for the KAN to absorb.
    """
    front = realize_filter(front_spec)
    back = realize_filter(back_spec)
    if normalization is not None:
        front = _scale_io(front, u_gain=1.0 / float(np.ravel(normalization.u_scale)[0]))
        back = _scale_io(back, y_gain=float(np.ravel(normalization.y_scale)[0]))
    mid = identity_network(hidden, seed=seed, jitter=jitter, degree=degree, n_intervals=n_intervals)
    return CascadeModel(front, mid, back, normalization=normalization)
