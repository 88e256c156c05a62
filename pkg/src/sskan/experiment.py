"""Experiment presets and the generate / train / evaluate / slice pipeline.

An experiment config is a JSON document with four sections: ``data``
(which oracle or CSV files, lengths, excitation), ``model`` (structure and
initialisation), ``train`` (a :class:`TrainConfig`) and ``bla`` (the linear
baseline). Values resolve in this order, later winning: preset defaults,
config file, command-line flags.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import (
    Dataset,
    DuffingParams,
    WhOracleSpec,
    calibrate_alpha,
    default_wh_spec,
    filtered_gaussian_ramp,
    fit_bla,
    load_csv,
    multisine,
    simulate_duffing,
    simulate_wh,
)
from .errors import InvalidConfigError, IOFailureError
from .interp import affine_align, attach_fit, dominance, is_monotone, kan_slice, robustness_sweep
from .kan import init_network, network_forward
from .ssmodel import (
    CascadeModel,
    LinearSS,
    SsKanModel,
    _scale_io,
    cascade_rollout,
    init_cascade_from_filters,
    init_stable_linear,
    realize_filter,
    rollout,
    series_linear,
)
from .trainer import Normalization, TrainConfig, kan_inputs, normalize_fit, rmse, train

SCHEMA_VERSION = 1

_SILVERBOX_DATA = {
    "system": "duffing",
    "duffing": {"m": 1.0, "c": 0.3, "k": 1.0, "alpha": None},
    "samples_per_period": 40.0,
    "f_max_ratio": 3.0,
    "substeps": 4,
    "train_rms": 1.0,
    "odd_harmonics": True,
    "test_ramp": [0.1, 1.25],
    "noise_std": 0.0,
}
_SILVERBOX_MODEL = {
    "kind": "sskan",
    "n_x": 2,
    "kan_f_hidden": [2],
    "kan_g": False,
    "degree": 3,
    "grid_intervals": 5,
    "init": "oscillator",
    "angle": 0.15,
    "kan_w_b": 0.0,
    "kan_output_scale": 0.01,
}
_WH_DATA = {
    "system": "wh",
    "wh": {"knee": 0.4, "softness": 0.6, "noise_std": 0.0, "front": None, "back": None},
    "sample_rate": 1.0,
    "f_max": 0.2,
    "train_rms": 0.5,
    "test_ramp": [0.5, 0.5],
}
_WH_MODEL = {"kind": "cascade", "hidden": 15, "degree": 3, "grid_intervals": 5, "jitter": 0.01}

PRESETS: dict[str, dict] = {
    "silverbox-synthetic": {
        "data": {**_SILVERBOX_DATA, "n_train": 65536, "n_test": 40960},
        "model": _SILVERBOX_MODEL,
        "train": TrainConfig.silverbox().to_dict(),
        "bla": {"n_x": 2, "init": "oscillator"},
    },
    "silverbox-desk": {
        "data": {**_SILVERBOX_DATA, "n_train": 8192, "n_test": 4096},
        "model": _SILVERBOX_MODEL,
        "train": TrainConfig.silverbox().to_dict(),
        "bla": {"n_x": 2, "init": "oscillator"},
    },
    "wh-synthetic": {
        "data": {**_WH_DATA, "n_train": 65536, "n_test": 40960},
        "model": _WH_MODEL,
        "train": TrainConfig.wiener_hammerstein().to_dict(),
        "bla": {"n_x": 6, "init": "series"},
    },
    "wh-desk": {
        "data": {**_WH_DATA, "n_train": 16384, "n_test": 8192},
        "model": _WH_MODEL,
        "train": TrainConfig.wiener_hammerstein(epochs=150).to_dict(),
        "bla": {"n_x": 6, "init": "series"},
    },
    "external": {
        "data": {"system": "external", "train_csv": None, "test_csv": None, "sample_rate": 1.0},
        "model": _SILVERBOX_MODEL,
        "train": TrainConfig.silverbox().to_dict(),
        "bla": {"n_x": 2, "init": "oscillator"},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    preset: str
    seed: int = 1
    data: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    bla: dict = field(default_factory=dict)

    def train_config(self) -> TrainConfig:
        fields = dict(self.train)
        fields.setdefault("seed", self.seed)
        try:
            return TrainConfig(**fields)
        except TypeError as exc:
            raise InvalidConfigError(f"train: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "preset": self.preset,
            "seed": self.seed,
            "data": self.data,
            "model": self.model,
            "train": self.train,
            "bla": self.bla,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def resolve_config(preset: str | None = None, document: dict | None = None, seed: int | None = None) -> ExperimentConfig:
    """Merge preset defaults, a config document and flag overrides.

    Raises
    ------
    InvalidConfigError
        For an unknown preset, a wrong schema version or an unknown section.
    """
    document = dict(document or {})
    version = document.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise InvalidConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    name = preset or document.get("preset") or "silverbox-desk"
    if name not in PRESETS:
        raise InvalidConfigError(f"preset: unknown preset {name!r} (choose from {', '.join(PRESETS)})")
    document.pop("preset", None)
    unknown = set(document) - {"seed", "data", "model", "train", "bla"}
    if unknown:
        raise InvalidConfigError(f"{sorted(unknown)[0]}: unknown config section")
    merged = _merge(PRESETS[name], {k: v for k, v in document.items() if k != "seed"})
    final_seed = seed if seed is not None else document.get("seed", 1)
    if not isinstance(final_seed, int) or final_seed < 0:
        raise InvalidConfigError(f"seed: must be a nonnegative integer, got {final_seed!r}")
    cfg = ExperimentConfig(name, final_seed, merged["data"], merged["model"], merged["train"], merged["bla"])
    cfg.train_config().validate()
    return cfg


def load_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IOFailureError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidConfigError("config root must be a JSON object")
    return doc


# ---------------------------------------------------------------- data


def wh_spec(data: dict) -> WhOracleSpec:
    d = data.get("wh", {})
    spec = default_wh_spec()
    return WhOracleSpec(
        d.get("front") or spec.front,
        d.get("back") or spec.back,
        knee=float(d.get("knee", spec.knee)),
        softness=float(d.get("softness", spec.softness)),
        noise_std=float(d.get("noise_std", 0.0)),
    )


def _duffing(data: dict) -> tuple[DuffingParams, float, float]:
    d = data["duffing"]
    params = DuffingParams(d["m"], d["c"], d["k"], 1.0 if d.get("alpha") is None else d["alpha"])
    fs = data["samples_per_period"] * params.natural_frequency
    return params, fs, data["f_max_ratio"] * params.natural_frequency


def generate(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, dict]:
    """Synthesise (or load) the train and test records plus a manifest.

    The training excitation uses seed ``cfg.seed`` and the test excitation
    ``cfg.seed + 1``.
    """
    data = cfg.data
    system = data.get("system")
    manifest = {"preset": cfg.preset, "seed": cfg.seed, "system": system}
    if system == "duffing":
        params, fs, f_max = _duffing(data)
        u_tr = multisine(data["n_train"], fs, f_max, data["train_rms"], seed=cfg.seed, odd_only=data.get("odd_harmonics", False))
        u_te = filtered_gaussian_ramp(data["n_test"], fs, f_max, *data["test_ramp"], seed=cfg.seed + 1)
        if data["duffing"].get("alpha") is None:
            params.alpha = calibrate_alpha(params, u_tr, fs, data["substeps"])
        noise = float(data.get("noise_std", 0.0))
        tr = simulate_duffing(params, u_tr, fs, substeps=data["substeps"], noise_std=noise, seed=cfg.seed)
        te = simulate_duffing(params, u_te, fs, substeps=data["substeps"], noise_std=noise, seed=cfg.seed + 1)
        manifest["oracle"] = {"m": params.m, "c": params.c, "k": params.k, "alpha": params.alpha}
        manifest["sample_rate"] = fs
    elif system == "wh":
        spec = wh_spec(data)
        fs = data["sample_rate"]
        u_tr = filtered_gaussian_ramp(data["n_train"], fs, data["f_max"], data["train_rms"], data["train_rms"], seed=cfg.seed)
        u_te = filtered_gaussian_ramp(data["n_test"], fs, data["f_max"], *data["test_ramp"], seed=cfg.seed + 1)
        tr = simulate_wh(spec, u_tr, fs, seed=cfg.seed)
        te = simulate_wh(spec, u_te, fs, seed=cfg.seed + 1)
        manifest["oracle"] = spec.to_dict()
        manifest["sample_rate"] = fs
    elif system == "external":
        if not data.get("train_csv") or not data.get("test_csv"):
            raise InvalidConfigError("data.train_csv: external preset needs train_csv and test_csv")
        fs = float(data.get("sample_rate", 1.0))
        tr = load_csv(data["train_csv"], fs)
        te = load_csv(data["test_csv"], fs)
        manifest["oracle"] = None
        manifest["sample_rate"] = fs
        manifest["sources"] = {"train": str(data["train_csv"]), "test": str(data["test_csv"])}
    else:
        raise InvalidConfigError(f"data.system: unknown system {system!r}")
    manifest["n_train"], manifest["n_test"] = len(tr), len(te)
    return tr, te, manifest


def normalized(ds: Dataset, norm: Normalization) -> tuple[np.ndarray, np.ndarray]:
    return norm.apply_u(ds.u.reshape(len(ds), -1)), norm.apply_y(ds.y.reshape(len(ds), -1))


# ---------------------------------------------------------------- models


def _filters(cfg: ExperimentConfig, manifest: dict | None) -> tuple[dict, dict]:
    model = cfg.model
    if model.get("front") and model.get("back"):
        return model["front"], model["back"]
    if manifest and manifest.get("oracle") and "front" in manifest["oracle"]:
        return manifest["oracle"]["front"], manifest["oracle"]["back"]
    spec = wh_spec(cfg.data)
    return spec.front, spec.back


def build_model(cfg: ExperimentConfig, norm: Normalization, manifest: dict | None = None):
    """Initial model for ``cfg`` operating on data normalized by ``norm``."""
    m = cfg.model
    if m["kind"] == "cascade":
        front, back = _filters(cfg, manifest)
        return init_cascade_from_filters(
            front, back, hidden=m["hidden"], seed=cfg.seed, jitter=m.get("jitter", 0.0),
            degree=m["degree"], n_intervals=m["grid_intervals"], normalization=norm,
        )
    if m["kind"] != "sskan":
        raise InvalidConfigError(f"model.kind: unknown kind {m['kind']!r}")
    n_u, n_y = norm.u_scale.size, norm.y_scale.size
    n_x = int(m["n_x"])
    lin = init_stable_linear(n_x, n_u, n_y, seed=cfg.seed, kind=m.get("init", "oscillator"), angle=m.get("angle", 0.15))
    widths = [n_x + n_u, *m.get("kan_f_hidden", [2]), n_x]
    net_kw = dict(degree=m["degree"], n_intervals=m["grid_intervals"], w_b=m.get("kan_w_b", 1.0),
                  w_s=m.get("kan_w_s", 1.0), output_scale=m.get("kan_output_scale", 1.0))
    kan_f = init_network(widths, seed=cfg.seed, **net_kw)
    kan_g = None
    if m.get("kan_g"):
        kan_g = init_network([n_x + n_u, *m.get("kan_g_hidden", m.get("kan_f_hidden", [2])), n_y], seed=cfg.seed + 1, **net_kw)
    return SsKanModel(lin, kan_f, kan_g, normalization=norm)


def bla_initial(cfg: ExperimentConfig, norm: Normalization, manifest: dict | None = None) -> LinearSS:
    b = cfg.bla
    if b.get("init") == "series":
        front, back = _filters(cfg, manifest)
        f = _scale_io(realize_filter(front), u_gain=1.0 / float(norm.u_scale[0]))
        g = _scale_io(realize_filter(back), y_gain=float(norm.y_scale[0]))
        return series_linear(f, g)
    return init_stable_linear(int(b["n_x"]), norm.u_scale.size, norm.y_scale.size, seed=cfg.seed,
                              kind=b.get("init", "oscillator"), angle=cfg.model.get("angle", 0.15))


def predict(model, u_norm: np.ndarray) -> np.ndarray:
    """Free-run normalized outputs (T, n_y)."""
    if isinstance(model, CascadeModel):
        return cascade_rollout(model, u_norm[:, 0])[0][:, None]
    return rollout(model, u_norm)[0]


def train_model(cfg: ExperimentConfig, tr: Dataset, manifest: dict | None = None, progress=None):
    """Fit the normalization, build the initial model and train it."""
    norm = normalize_fit(tr.u, tr.y)
    model = build_model(cfg, norm, manifest)
    u, y = normalized(tr, norm)
    tc = cfg.train_config()
    model, report = train(model, (u, y), tc, progress=progress)
    model.meta.update(preset=cfg.preset, seed=cfg.seed, n_fit=len(tr) - int(round(tc.val_fraction * len(tr))))
    return model, report


def train_bla(cfg: ExperimentConfig, tr: Dataset, te: Dataset, manifest: dict | None = None):
    """Linear baseline trained like the main model; returns ``(SsKanModel, test rmse normalized)``."""
    norm = normalize_fit(tr.u, tr.y)
    u, y = normalized(tr, norm)
    ut, yt = normalized(te, norm)
    both = Dataset(np.concatenate([u, ut]), np.concatenate([y, yt]), tr.sample_rate, len(tr), "bla")
    lin, err = fit_bla(both, int(cfg.bla["n_x"]), cfg.train_config(), seed=cfg.seed, linear=bla_initial(cfg, norm, manifest))
    return SsKanModel(lin, normalization=norm, meta={"role": "bla"}), err


def evaluate(model, ds: Dataset) -> dict:
    """RMSE in normalized and physical units, plus the extrapolation region ``|u_normalized| > 1``."""
    norm = model.normalization
    u, y = normalized(ds, norm)
    y_hat = predict(model, u)
    out = {
        "n": len(ds),
        "rmse": rmse(y_hat, y),
        "rmse_physical": rmse(norm.invert_y(y_hat), ds.y.reshape(y_hat.shape)),
    }
    outside = np.any(np.abs(u) > 1.0, axis=1)
    out["n_extrapolation"] = int(outside.sum())
    out["rmse_extrapolation"] = rmse(y_hat[outside], y[outside]) if outside.any() else None
    return out, y_hat


# ---------------------------------------------------------------- slices


def slice_analysis(model, tr: Dataset, manifest: dict | None = None, varied: int = 0, degree: int = 3, channel: int | None = None):
    """Slice, polynomial fit and (where an oracle exists) shape comparison.

    For an SS-KAN the slice comes from ``kan_f`` and the fitted channel
    defaults to the last state (the velocity-like update). For a cascade it
    is the 1-D middle KAN, compared with the oracle nonlinearity.
    Returns ``(SliceReport, summary dict)``.
    """
    norm = model.normalization
    u, _ = normalized(tr, norm)
    inputs = kan_inputs(model, u)
    if isinstance(model, CascadeModel):
        net, z = model.mid_kan, inputs["mid_kan"]
        names = ["v"]
        channel = 0 if channel is None else channel
    else:
        net, z = model.kan_f, inputs["kan_f"]
        names = [f"x{i}" for i in range(model.n_x)] + [f"u{i}" for i in range(model.n_u)]
        channel = model.n_x - 1 if channel is None else channel
    report = attach_fit(kan_slice(net, varied, inputs=z, names=names), degree, channel)
    r = float(np.max(np.abs(report.grid)))
    summary = {
        "varied": report.varied_name,
        "channel": channel,
        "coefficients": [float(c) for c in report.fit_coeffs],
        "residual_rms": report.fit_rms,
        "half_width": r,
        "dominance": [float(s) for s in dominance(report.fit_coeffs, r)],
        "channel_ranges": [float(v) for v in np.ptp(report.responses, axis=0)],
        "monotone": is_monotone(report.channel(channel)),
    }
    if not isinstance(model, CascadeModel):
        summary["sweep_deviation"] = robustness_sweep(net, varied, z, channel)
    oracle = (manifest or {}).get("oracle")
    if isinstance(model, CascadeModel) and oracle and "knee" in oracle:
        spec = WhOracleSpec(oracle["front"], oracle["back"], oracle["knee"], oracle["softness"], oracle.get("noise_std", 0.0))
        v_true = simulate_wh(spec, tr.u, tr.sample_rate).hidden["v"]
        x = np.linspace(v_true.min(), v_true.max(), report.n_samples)
        s0, t0 = np.polyfit(v_true, z[:, 0], 1)
        al = affine_align(x, spec.nonlinearity(x), lambda q: network_forward(net, np.asarray(q)[:, None])[:, 0], start=(s0, t0))
        report.oracle = al._asdict()
        summary["alignment"] = al._asdict()
    report.meta = {"summary": summary}
    return report, summary
