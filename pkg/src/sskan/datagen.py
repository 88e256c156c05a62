"""Synthetic benchmark oracles, excitation signals, CSV I/O and the linear baseline."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import signal

from .errors import (
    AliasingError,
    InvalidConfigError,
    IOFailureError,
    LengthMismatchError,
    MalformedHeaderError,
    NonNumericCellError,
    UnstableIntegrationError,
    UnstableSpecError,
)

CSV_HEADER = ("k", "u", "y")


@dataclass
class DuffingParams:
    """``m x'' + c x' + k x + alpha x^3 = u``."""

    m: float = 1.0
    c: float = 0.3
    k: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.m <= 0 or self.k <= 0 or self.c < 0 or self.alpha < 0:
            raise InvalidConfigError("Duffing parameters need m, k > 0 and c, alpha >= 0")

    @property
    def natural_frequency(self) -> float:
        """Linearised natural frequency in Hz."""
        return math.sqrt(self.k / self.m) / (2.0 * math.pi)


@dataclass
class Dataset:
    u: np.ndarray
    y: np.ndarray
    sample_rate: float = 1.0
    split: int | None = None
    provenance: str = "synthetic"
    hidden: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.u.shape[0] != self.y.shape[0]:
            raise LengthMismatchError(f"u has {self.u.shape[0]} samples but y has {self.y.shape[0]}")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.y))):
            raise InvalidConfigError("dataset contains non-finite values")

    def __len__(self):
        return self.u.shape[0]

    @property
    def train(self) -> "Dataset":
        end = len(self) if self.split is None else self.split
        return Dataset(self.u[:end], self.y[:end], self.sample_rate, None, self.provenance,
                       {k: v[:end] for k, v in self.hidden.items()})

    @property
    def test(self) -> "Dataset":
        start = len(self) if self.split is None else self.split
        return Dataset(self.u[start:], self.y[start:], self.sample_rate, None, self.provenance,
                       {k: v[start:] for k, v in self.hidden.items()})


@njit(cache=True)
def _duffing_rk4(m, c, k, alpha, u, h, substeps, x0, v0):
    n = u.shape[0]
    pos = np.empty(n)
    vel = np.empty(n)
    x, v = x0, v0
    dt = h / substeps
    for i in range(n):
        pos[i] = x
        vel[i] = v
        f = u[i]
        for _ in range(substeps):
            k1x = v
            k1v = (f - c * v - k * x - alpha * x ** 3) / m
            x2 = x + 0.5 * dt * k1x
            v2 = v + 0.5 * dt * k1v
            k2x = v2
            k2v = (f - c * v2 - k * x2 - alpha * x2 ** 3) / m
            x3 = x + 0.5 * dt * k2x
            v3 = v + 0.5 * dt * k2v
            k3x = v3
            k3v = (f - c * v3 - k * x3 - alpha * x3 ** 3) / m
            x4 = x + dt * k3x
            v4 = v + dt * k3v
            k4x = v4
            k4v = (f - c * v4 - k * x4 - alpha * x4 ** 3) / m
            x = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            v = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if not (abs(x) <= 1e6 and abs(v) <= 1e6):
            return pos, vel, i
    return pos, vel, -1


def simulate_duffing(
    params: DuffingParams,
    u,
    sample_rate: float,
    x0: float = 0.0,
    v0: float = 0.0,
    substeps: int = 1,
    noise_std: float = 0.0,
    seed: int | None = None,
) -> Dataset:
    """Fixed-step RK4 integration with the input held constant over each sample.

    ``y[k]`` is the position at ``t = k / sample_rate``; ``u[k]`` acts on the
    interval that follows. Position and velocity are kept in ``hidden``.

    Raises
    ------
    UnstableIntegrationError
        If the state magnitude exceeds 1e6.
    """
    u = np.ascontiguousarray(np.asarray(u, dtype=float).ravel())
    pos, vel, fail = _duffing_rk4(params.m, params.c, params.k, params.alpha, u, 1.0 / sample_rate, int(substeps), float(x0), float(v0))
    if fail >= 0:
        raise UnstableIntegrationError(f"Duffing state exceeded 1e6 at sample {fail}")
    y = pos.copy()
    if noise_std > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise_std, y.shape)
    return Dataset(u, y, sample_rate, None, "synthetic-duffing", {"position": pos, "velocity": vel})


def calibrate_alpha(params: DuffingParams, u, sample_rate: float, substeps: int = 1) -> float:
    """Cubic stiffness making ``alpha x^3 == k x`` at the linear system's peak displacement."""
    lin = DuffingParams(params.m, params.c, params.k, 0.0)
    peak = np.max(np.abs(simulate_duffing(lin, u, sample_rate, substeps=substeps).y))
    return params.k / peak**2


@dataclass
class WhOracleSpec:
    """Linear filter -> diode-like saturation -> linear filter.

    Filters are ``{"b": [...], "a": [...]}`` in powers of ``z^-1``. The
    nonlinearity is the identity up to ``knee`` and saturates smoothly
    towards ``knee + softness`` above it.
    """

    front: dict
    back: dict
    knee: float = 0.4
    softness: float = 0.3
    noise_std: float = 0.0

    def __post_init__(self):
        for name, filt in (("front", self.front), ("back", self.back)):
            a = np.asarray(filt["a"], dtype=float)
            if len(a) != 4 or len(filt["b"]) != 4:
                raise InvalidConfigError(f"{name} filter must be third order (4 taps)")
            if np.max(np.abs(np.roots(a))) >= 1.0:
                raise UnstableSpecError(f"{name} filter is unstable")
        if self.softness <= 0:
            raise InvalidConfigError("softness must be positive")

    @property
    def saturation_level(self) -> float:
        return self.knee + self.softness

    def nonlinearity(self, v):
        v = np.asarray(v, dtype=float)
        out = v.copy()
        above = v > self.knee
        out[above] = self.knee + self.softness * np.tanh((v[above] - self.knee) / self.softness)
        return out

    def to_dict(self) -> dict:
        return {
            "front": {k: list(map(float, v)) for k, v in self.front.items()},
            "back": {k: list(map(float, v)) for k, v in self.back.items()},
            "knee": self.knee,
            "softness": self.softness,
            "noise_std": self.noise_std,
        }


def default_wh_spec() -> WhOracleSpec:
    """Chebyshev type I front filter and type II back filter, both third order."""
    b1, a1 = signal.cheby1(3, 1.0, 0.25)
    b2, a2 = signal.cheby2(3, 40.0, 0.3)
    return WhOracleSpec({"b": list(b1), "a": list(a1)}, {"b": list(b2), "a": list(a2)})


def _filter(filt: dict, x: np.ndarray) -> np.ndarray:
    return signal.lfilter(np.asarray(filt["b"], dtype=float), np.asarray(filt["a"], dtype=float), x)


def simulate_wh(spec: WhOracleSpec, u, sample_rate: float = 1.0, seed: int | None = None, nonlinearity=None) -> Dataset:
    """Simulate ``u -> front -> f -> back -> y``; true ``v`` and ``w`` go to ``hidden``."""
    u = np.asarray(u, dtype=float).ravel()
    f = spec.nonlinearity if nonlinearity is None else nonlinearity
    v = _filter(spec.front, u)
    w = np.asarray(f(v), dtype=float)
    y = _filter(spec.back, w)
    if spec.noise_std > 0:
        y = y + np.random.default_rng(seed).normal(0.0, spec.noise_std, y.shape)
    return Dataset(u, y, sample_rate, None, "synthetic-wh", {"v": v, "w": w})


def _check_band(f_max: float, sample_rate: float):
    if not 0 < f_max < sample_rate / 2:
        raise AliasingError(f"f_max={f_max} must lie in (0, Nyquist={sample_rate / 2})")


def multisine(
    n_samples: int, sample_rate: float, f_max: float, amplitude: float, seed: int | None = 0, odd_only: bool = False
) -> np.ndarray:
    """Random-phase multisine, flat amplitude on bins ``1..floor(f_max N / fs)``, scaled to RMS ``amplitude``.

    With ``odd_only`` only odd bins are excited, so for even ``N`` the record
    is half-period antisymmetric, ``u[k + N/2] = -u[k]``, and its range is
    symmetric about zero.
    """
    _check_band(f_max, sample_rate)
    rng = np.random.default_rng(seed)
    n_bins = int(np.floor(f_max * n_samples / sample_rate))
    if n_bins < 1:
        raise AliasingError(f"no frequency bin below f_max={f_max} at resolution {sample_rate / n_samples}")
    spectrum = np.zeros(n_samples // 2 + 1, dtype=complex)
    spectrum[1 : n_bins + 1] = np.exp(2j * np.pi * rng.uniform(size=n_bins))
    if odd_only:
        spectrum[2 : n_bins + 1 : 2] = 0.0
    x = np.fft.irfft(spectrum, n_samples)
    return x * (amplitude / np.sqrt(np.mean(x * x)))


def filtered_gaussian_ramp(
    n_samples: int,
    sample_rate: float,
    f_max: float,
    amp_start: float,
    amp_end: float,
    seed: int | None = 0,
) -> np.ndarray:
    """Low-pass (6th order Butterworth) Gaussian noise, unit RMS, times a linear amplitude ramp."""
    _check_band(f_max, sample_rate)
    rng = np.random.default_rng(seed)
    sos = signal.butter(6, f_max / (sample_rate / 2), output="sos")
    x = signal.sosfilt(sos, rng.standard_normal(n_samples))
    x = x / np.sqrt(np.mean(x * x))
    return x * np.linspace(amp_start, amp_end, n_samples)


def save_csv(dataset: Dataset, path):
    """Write ``k,u,y`` rows using shortest round-trip float formatting."""
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(CSV_HEADER) + "\n")
            for k, (u, y) in enumerate(zip(dataset.u.ravel(), dataset.y.ravel())):
                fh.write(f"{k},{float(u)!r},{float(y)!r}\n")
    except OSError as exc:
        raise IOFailureError(f"cannot write {path}: {exc}") from exc


def load_csv(path, sample_rate: float = 1.0, provenance: str = "external-csv") -> Dataset:
    """Read a ``k,u,y`` file. Extra columns are ignored; column order is free."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IOFailureError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise MalformedHeaderError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in CSV_HEADER if c not in header]
    if missing:
        raise MalformedHeaderError(f"{path}: missing column(s) {', '.join(missing)}")
    iu, iy = header.index("u"), header.index("y")
    u, y = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise LengthMismatchError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            u.append(float(row[iu]))
            y.append(float(row[iy]))
        except ValueError:
            raise NonNumericCellError(f"{path}:{lineno}: non-numeric cell", line=lineno) from None
    return Dataset(np.array(u), np.array(y), sample_rate, None, provenance)


def fit_bla(dataset: Dataset, n_x: int, config, seed: int = 0, init_kind: str = "oscillator", linear=None):
    """Best-linear-approximation baseline: an SS-KAN with both KANs absent, trained by the same trainer.

    ``dataset`` must already be normalized. Returns ``(LinearSS, rmse)``
    where the RMSE is measured on the test part (or the training data when
    the dataset has no split).
    """
    from dataclasses import replace

    from .ssmodel import SsKanModel, init_stable_linear, rollout
    from .trainer import rmse, train

    train_part = dataset.train
    test_part = dataset.test if dataset.split is not None else dataset.train
    n_u = 1 if train_part.u.ndim == 1 else train_part.u.shape[1]
    n_y = 1 if train_part.y.ndim == 1 else train_part.y.shape[1]
    if linear is None:
        linear = init_stable_linear(n_x, n_u, n_y, seed=seed, kind=init_kind)
    model = SsKanModel(linear)
    if np.all(train_part.y == 0):
        linear = replace(linear, C=np.zeros_like(linear.C), D=np.zeros_like(linear.D))
        model = SsKanModel(linear)
    else:
        model, _ = train(model, train_part, replace(config, lambda_l1=0.0))
    y_hat, _ = rollout(model, test_part.u)
    return model.linear, rmse(y_hat, test_part.y.reshape(y_hat.shape))
