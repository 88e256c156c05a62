"""AdamW training of SS-KAN and cascade models with truncated BPTT.

One epoch walks the training record in temporal order in segments of
``batch_size`` samples. Each segment starts from the final state of the
previous one (zero at the start of the epoch), gradients stop at segment
boundaries, and every segment triggers one AdamW update. A trailing partial
segment is not used for updates. The last ``val_fraction`` of the record is
held out and only used for monitoring.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .diffengine import SegmentObjective, initial_state
from .errors import (
    DivergedError,
    InvalidConfigError,
    LengthMismatchError,
    ZeroRangeChannelError,
)
from .kan import KanNetwork, observed_ranges, update_network_grid
from .ssmodel import CascadeModel, _as_inputs

log = logging.getLogger(__name__)


@dataclass
class Normalization:
    """Per-channel affine maps ``z -> scale * z + offset`` sending training min/max to -1/+1."""

    u_scale: np.ndarray
    u_offset: np.ndarray
    y_scale: np.ndarray
    y_offset: np.ndarray

    def __post_init__(self):
        for name in ("u_scale", "u_offset", "y_scale", "y_offset"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))

    def apply_u(self, u):
        return np.asarray(u, dtype=float) * self._shape(u, self.u_scale) + self._shape(u, self.u_offset)

    def apply_y(self, y):
        return np.asarray(y, dtype=float) * self._shape(y, self.y_scale) + self._shape(y, self.y_offset)

    def invert_u(self, u):
        return (np.asarray(u, dtype=float) - self._shape(u, self.u_offset)) / self._shape(u, self.u_scale)

    def invert_y(self, y):
        return (np.asarray(y, dtype=float) - self._shape(y, self.y_offset)) / self._shape(y, self.y_scale)

    @staticmethod
    def _shape(z, v):
        return v if np.ndim(z) > 1 else (v[0] if v.size == 1 else v)


def _affine_to_unit(z: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=float)
    z = z.reshape(z.shape[0], -1)
    if z.shape[0] == 0:
        raise ZeroRangeChannelError(f"{name}: no samples")
    lo, hi = z.min(axis=0), z.max(axis=0)
    span = hi - lo
    if np.any(span <= 0):
        raise ZeroRangeChannelError(f"{name}: channel {int(np.argmin(span))} has zero range")
    return 2.0 / span, -(hi + lo) / span


def normalize_fit(u, y) -> Normalization:
    """Fit the [-1, 1] maps on training data only."""
    us, uo = _affine_to_unit(u, "u")
    ys, yo = _affine_to_unit(y, "y")
    return Normalization(us, uo, ys, yo)


def rmse(y_pred, y_data) -> float:
    """Root mean squared error; for several channels the squared norm per sample is averaged."""
    a = np.asarray(y_pred, dtype=float)
    b = np.asarray(y_data, dtype=float)
    if a.shape != b.shape or a.shape[0] < 1:
        raise LengthMismatchError(f"rmse needs equal nonzero lengths, got {a.shape} and {b.shape}")
    e = (a - b).reshape(a.shape[0], -1)
    return float(np.sqrt(np.sum(e * e) / a.shape[0]))


@dataclass
class TrainConfig:
    lambda_l1: float = 1e-4
    lambda_l2: float = 1e-4
    lr0: float = 1e-3
    lr_decay: float = 1.0
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    grid_update_epochs: tuple[int, ...] = ()
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    val_fraction: float = 0.2

    def __post_init__(self):
        self.grid_update_epochs = tuple(sorted(int(e) for e in self.grid_update_epochs))

    @property
    def lr_schedule(self) -> str:
        return "constant" if self.lr_decay == 1.0 else f"exponential-decay({self.lr_decay})"

    def lr_at(self, epoch: int) -> float:
        return self.lr0 * self.lr_decay**epoch

    def validate(self, n_samples: int | None = None):
        if self.lambda_l1 < 0 or self.lambda_l2 < 0:
            raise InvalidConfigError("regularization weights must be nonnegative")
        if not self.lr0 > 0 and self.lr0 != 0:
            raise InvalidConfigError("lr0 must be positive")
        if not 0 < self.lr_decay <= 1:
            raise InvalidConfigError("lr_decay must lie in (0, 1]")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidConfigError("batch_size and epochs must be positive")
        if not 0 <= self.val_fraction < 1:
            raise InvalidConfigError("val_fraction must lie in [0, 1)")
        if n_samples is not None and self.batch_size > n_samples:
            raise InvalidConfigError(f"batch_size {self.batch_size} exceeds training length {n_samples}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid_update_epochs"] = list(self.grid_update_epochs)
        return d

    @classmethod
    def silverbox(cls, **overrides) -> "TrainConfig":
        return cls(**{**dict(lambda_l1=1e-4, lambda_l2=1e-4, lr0=1e-3, batch_size=64, epochs=100), **overrides})

    @classmethod
    def wiener_hammerstein(cls, **overrides) -> "TrainConfig":
        base = dict(
            lambda_l1=1e-4, lambda_l2=1e-4, lr0=1e-4, lr_decay=0.995,
            batch_size=2048, epochs=500, grid_update_epochs=(10, 25, 50),
        )
        return cls(**{**base, **overrides})


@dataclass
class TrainReport:
    epoch: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    train_rmse: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    train_rmse_phys: list[float] = field(default_factory=list)
    val_rmse_phys: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    mse_term: list[float] = field(default_factory=list)
    l2_term: list[float] = field(default_factory=list)
    l1_term: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    initial_train_rmse: float = float("nan")
    final_params: np.ndarray | None = None

    CSV_COLUMNS = ("epoch", "loss", "train_rmse", "val_rmse", "lr")

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.CSV_COLUMNS) + "\n")
            for row in zip(*(getattr(self, c) for c in self.CSV_COLUMNS)):
                fh.write(",".join(repr(v) for v in row) + "\n")


def adamw_step(params, grads, moments, t: int, config: TrainConfig, lr: float | None = None):
    """One AdamW update with bias-corrected moments and decoupled weight decay.

    ``moments`` is ``(m, v)``; returns ``(new_params, (m, v))``.
    """
    lr = config.lr0 if lr is None else lr
    m, v = moments
    m = config.beta1 * m + (1.0 - config.beta1) * grads
    v = config.beta2 * v + (1.0 - config.beta2) * grads * grads
    m_hat = m / (1.0 - config.beta1**t)
    v_hat = v / (1.0 - config.beta2**t)
    new = params - lr * (m_hat / (np.sqrt(v_hat) + config.eps) + config.weight_decay * params)
    return new, (m, v)


def simulate_flat(model, theta, u, x0=None) -> np.ndarray:
    """Free-run outputs (T, n_y) of ``model``'s structure carrying parameters ``theta``."""
    x0 = initial_state(model, x0)
    if isinstance(model, CascadeModel):
        n1, n2, dims, knots, degree = model.kernel_args()
        y, *_, fail = _kernels.cascade_simulate(theta, n1, n2, dims, knots, degree, u[:, 0], x0[0], x0[1])
        y = y[:, None]
    else:
        y, _, fail = _kernels.sskan_simulate(theta, *model.kernel_args(), u, x0)
    if fail >= 0:
        y = y.copy()
        y[fail:] = np.nan
    return y


def kan_inputs(model, u) -> dict[str, np.ndarray]:
    """Inputs seen by each KAN of the model during a free run from rest."""
    u = _as_inputs(u, model.n_u)
    if isinstance(model, CascadeModel):
        from .ssmodel import cascade_rollout

        _, v, _ = cascade_rollout(model, u[:, 0])
        return {"mid_kan": v[:, None]}
    from .ssmodel import rollout

    _, x = rollout(model, u)
    z = np.hstack([x[:-1], u])
    return {name: z for name in ("kan_f", "kan_g") if getattr(model, name) is not None}


def _regrid_network(net: KanNetwork, inputs: np.ndarray) -> KanNetwork:
    return update_network_grid(net, observed_ranges(net, inputs))


def regrid(model, u):
    """Grid update of every KAN edge to the activation ranges of a free run on ``u``."""
    from dataclasses import replace

    updates = {name: _regrid_network(getattr(model, name), z) for name, z in kan_inputs(model, u).items()}
    return replace(model, **updates)


def _as_arrays(model, dataset):
    if isinstance(dataset, tuple):
        u, y = dataset
    else:
        u, y = dataset.u, dataset.y
    u = _as_inputs(u, model.n_u)
    y = _as_inputs(y, model.n_y)
    if u.shape[0] != y.shape[0]:
        raise LengthMismatchError(f"u has {u.shape[0]} samples but y has {y.shape[0]}")
    return u, y


def _phys_rmse(model, y_pred, y_data) -> float:
    norm = model.normalization
    if norm is None:
        return rmse(y_pred, y_data)
    return rmse(norm.invert_y(y_pred), norm.invert_y(y_data))


def train(model, dataset, config: TrainConfig, progress=None):
    """Optimise ``model`` on normalized training data; returns ``(model, TrainReport)``.

    ``dataset`` is a ``(u, y)`` pair or any object with ``u`` and ``y``
    attributes. ``progress`` is called with the report after each epoch.

    Raises
    ------
    DivergedError
        When a segment loss is not finite; ``epoch``, ``segment`` and the
        partial ``report`` are attached.
    """
    u, y = _as_arrays(model, dataset)
    n = u.shape[0]
    n_val = int(round(config.val_fraction * n))
    n_tr = n - n_val
    config.validate(n_tr)
    n_seg = n_tr // config.batch_size
    theta = model.params().copy()
    objective = SegmentObjective(model, config.lambda_l1, config.lambda_l2)
    m, v = np.zeros_like(theta), np.zeros_like(theta)
    t = 0
    report = TrainReport()
    y0 = simulate_flat(model, theta, u[:n_tr])
    report.initial_train_rmse = rmse(y0, y[:n_tr]) if np.all(np.isfinite(y0)) else float("inf")

    for epoch in range(config.epochs):
        start = time.perf_counter()
        if epoch in config.grid_update_epochs:
            model = regrid(model.with_params(theta), u[:n_tr])
            theta = model.params().copy()
            objective = SegmentObjective(model, config.lambda_l1, config.lambda_l2)
            m, v, t = np.zeros_like(theta), np.zeros_like(theta), 0
        lr = config.lr_at(epoch)
        state = initial_state(model)
        seg_losses = []
        for s in range(n_seg):
            sl = slice(s * config.batch_size, (s + 1) * config.batch_size)
            loss, _, grad, state, fail = objective(theta, u[sl], y[sl], state)
            if fail >= 0 or not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                report.final_params = theta
                raise DivergedError(f"non-finite loss at epoch {epoch}, segment {s}", epoch=epoch, segment=s, report=report)
            t += 1
            theta, (m, v) = adamw_step(theta, grad, (m, v), t, config, lr)
            seg_losses.append(loss)

        y_hat = simulate_flat(model, theta, u)
        mse = float(np.sum((y_hat[:n_tr] - y[:n_tr]) ** 2) / n_tr)
        l2, l1 = objective.penalty_terms(theta)
        report.epoch.append(epoch)
        report.loss.append(float(np.mean(seg_losses)) if seg_losses else float("nan"))
        report.lr.append(lr)
        report.train_rmse.append(rmse(y_hat[:n_tr], y[:n_tr]))
        report.train_rmse_phys.append(_phys_rmse(model, y_hat[:n_tr], y[:n_tr]))
        report.val_rmse.append(rmse(y_hat[n_tr:], y[n_tr:]) if n_val else float("nan"))
        report.val_rmse_phys.append(_phys_rmse(model, y_hat[n_tr:], y[n_tr:]) if n_val else float("nan"))
        report.mse_term.append(mse)
        report.l2_term.append(float(l2))
        report.l1_term.append(float(l1))
        report.objective.append(mse + config.lambda_l2 * l2 + config.lambda_l1 * l1)
        report.wall_time.append(time.perf_counter() - start)
        if not np.isfinite(mse):
            report.final_params = theta
            raise DivergedError(f"free-run simulation diverged after epoch {epoch}", epoch=epoch, segment=None, report=report)
        log.debug("epoch %d loss %.6g train_rmse %.6g val_rmse %.6g", epoch, report.loss[-1], report.train_rmse[-1], report.val_rmse[-1])
        if progress is not None:
            progress(report)

    report.final_params = theta.copy()
    return model.with_params(theta), report
