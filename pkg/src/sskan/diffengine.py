"""Exact gradients of the training objective by backpropagation through time.

The objective on one segment of ``N`` samples is::

    (1/N) sum_k ||y_model(k) - y(k)||^2
      + lambda_l2 * (||A||_F^2 + ||B||_F^2 + ||C||_F^2 + ||D||_F^2)
      + lambda_l1 * (||theta_KAN_f||_1 + ||theta_KAN_g||_1)

The segment is rolled out from the supplied initial state, which is treated
as a constant: gradients stop at segment boundaries. The L1 subgradient at
zero is 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionMismatchError, LengthMismatchError, NonFiniteLossError
from .ssmodel import CascadeModel, SsKanModel, _as_inputs, _state


@dataclass
class ParamVector:
    """Flat parameters plus a map from component name to its slice and shape."""

    values: np.ndarray
    index: dict[str, tuple[slice, tuple[int, ...]]]

    def __len__(self):
        return self.values.size

    def offset(self, component: str, position) -> int:
        sl, shape = self.index[component]
        return sl.start + int(np.ravel_multi_index(tuple(np.atleast_1d(position)), shape))

    def component(self, name: str) -> np.ndarray:
        sl, shape = self.index[name]
        return self.values[sl].reshape(shape)


@dataclass
class GradientVector(ParamVector):
    pass


def _index(model) -> dict[str, tuple[slice, tuple[int, ...]]]:
    if isinstance(model, SsKanModel):
        lin = model.linear
        parts = [("A", lin.A.shape), ("B", lin.B.shape), ("C", lin.C.shape), ("D", lin.D.shape)]
        nets = (("kan_f", model.kan_f), ("kan_g", model.kan_g))
    else:
        parts = []
        for tag, blk in (("1", model.front), ("2", model.back)):
            parts += [(f"A{tag}", blk.A.shape), (f"B{tag}", blk.B.shape), (f"C{tag}", blk.C.shape), (f"D{tag}", blk.D.shape)]
        nets = (("kan", model.mid_kan),)
    parts += [(name, (net.n_params,)) for name, net in nets if net is not None]
    index, p = {}, 0
    for name, shape in parts:
        size = int(np.prod(shape))
        index[name] = (slice(p, p + size), tuple(shape))
        p += size
    return index


def pack(model: SsKanModel | CascadeModel) -> ParamVector:
    """Flatten ``[A, B, C, D, KAN_f, KAN_g]`` (or the cascade order) into one vector."""
    return ParamVector(model.params().copy(), _index(model))


def unpack(model, params) -> SsKanModel | CascadeModel:
    """Return a copy of ``model`` carrying the parameters in ``params``."""
    values = params.values if isinstance(params, ParamVector) else np.asarray(params, dtype=float)
    n = model.params().size
    if values.shape != (n,):
        raise LengthMismatchError(f"expected {n} parameters, got {values.shape}")
    return model.with_params(values)


class SegmentObjective:
    """Compiled objective for a fixed model structure, evaluated on flat parameters.

    Calling it returns ``(loss, mse, grad, final_state, fail)`` where
    ``final_state`` is the state after the segment (a tuple of two states for
    the cascade) and ``fail`` is -1 or the step where the rollout blew up.
    """

    def __init__(self, model, lambda_l1: float = 0.0, lambda_l2: float = 0.0):
        self.cascade = isinstance(model, CascadeModel)
        self.args = model.kernel_args()
        self.lambda_l1 = float(lambda_l1)
        self.lambda_l2 = float(lambda_l2)
        self.n_linear = model.n_linear

    def __call__(self, theta, u, y, x0):
        if self.cascade:
            n1, n2, dims, knots, degree = self.args
            loss, mse, grad, s1, s2, fail = _kernels.cascade_loss_grad(
                theta, n1, n2, dims, knots, degree, u[:, 0], y[:, 0], x0[0], x0[1], self.lambda_l1, self.lambda_l2
            )
            return loss, mse, grad, (s1, s2), fail
        loss, mse, grad, xf, fail = _kernels.sskan_loss_grad(
            theta, *self.args, u, y, x0, self.lambda_l1, self.lambda_l2
        )
        return loss, mse, grad, xf, fail

    def penalty_terms(self, theta) -> tuple[float, float]:
        """(sum of squares of the linear matrices, L1 norm of the KAN parameters)."""
        return _kernels.penalties(theta, self.n_linear)


def initial_state(model, x0=None):
    if isinstance(model, CascadeModel):
        if x0 is None:
            return (np.zeros(model.front.n_x), np.zeros(model.back.n_x))
        return (_state(x0[0], model.front.n_x), _state(x0[1], model.back.n_x))
    return _state(x0, model.n_x)


def loss_and_gradient(model, segment, hyper=(0.0, 0.0)) -> tuple[float, GradientVector]:
    """Objective value on ``segment = (u, y, x0)`` and its exact gradient.

    ``hyper`` is ``(lambda_l1, lambda_l2)``. For a cascade model ``x0`` is a
    pair ``(x1_0, x2_0)``; ``None`` means zero initial state.

    Raises
    ------
    NonFiniteLossError
        If the rollout or the loss is not finite.
    """
    u, y, x0 = segment
    u = _as_inputs(u, model.n_u)
    y = _as_inputs(y, model.n_y)
    if u.shape[0] != y.shape[0] or u.shape[0] < 1:
        raise LengthMismatchError(f"u and y need equal nonzero length, got {u.shape[0]} and {y.shape[0]}")
    x0 = initial_state(model, x0)
    objective = SegmentObjective(model, *hyper)
    try:
        loss, _, grad, _, fail = objective(model.params(), u, y, x0)
    except ValueError as exc:
        raise DimensionMismatchError(str(exc)) from exc
    if fail >= 0 or not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NonFiniteLossError(f"non-finite loss (rollout failure at step {fail})")
    return float(loss), GradientVector(grad, _index(model))
