"""JSON checkpoints with bit-exact floats.

Every float is stored as a hex string (``float.hex``), so loading a
checkpoint reproduces the saved parameters exactly on any platform. KAN
layers keep their per-input knot vectors, so grid updates survive a round
trip.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import InvalidConfigError, IOFailureError
from .kan import KanLayer, KanNetwork
from .spline import basis_from_knots
from .ssmodel import CascadeModel, LinearSS, SsKanModel
from .trainer import Normalization

SCHEMA_VERSION = 1


def hexify(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(v).hex() for v in a.ravel()]}


def unhexify(d: dict) -> np.ndarray:
    return np.array([float.fromhex(v) for v in d["data"]], dtype=float).reshape(d["shape"])


def config_hash(config: dict | None) -> str:
    """SHA-256 of the canonical JSON form of ``config``."""
    text = json.dumps(config or {}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _linear(lin: LinearSS) -> dict:
    return {k: hexify(getattr(lin, k)) for k in "ABCD"}


def _linear_back(d: dict) -> LinearSS:
    return LinearSS(*(unhexify(d[k]) for k in "ABCD"))


def _net(net: KanNetwork | None):
    if net is None:
        return None
    return {
        "degree": net.degree,
        "layers": [
            {
                "knots": hexify(layer.knots),
                "coeffs": hexify(layer.coeffs),
                "w_b": hexify(layer.w_b),
                "w_s": hexify(layer.w_s),
            }
            for layer in net.layers
        ],
    }


def _net_back(d):
    if d is None:
        return None
    layers = []
    for ld in d["layers"]:
        bases = [basis_from_knots(row, d["degree"]) for row in unhexify(ld["knots"])]
        layers.append(KanLayer(bases, unhexify(ld["coeffs"]), unhexify(ld["w_b"]), unhexify(ld["w_s"])))
    return KanNetwork(layers)


def _norm(norm: Normalization | None):
    if norm is None:
        return None
    return {k: hexify(getattr(norm, k)) for k in ("u_scale", "u_offset", "y_scale", "y_offset")}


def _norm_back(d):
    if d is None:
        return None
    return Normalization(*(unhexify(d[k]) for k in ("u_scale", "u_offset", "y_scale", "y_offset")))


def to_dict(model, config: dict | None = None, seed: int | None = None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
        "normalization": _norm(model.normalization),
        "meta": model.meta,
    }
    if isinstance(model, CascadeModel):
        doc.update(kind="cascade", front=_linear(model.front), back=_linear(model.back), mid_kan=_net(model.mid_kan))
    else:
        doc.update(kind="sskan", linear=_linear(model.linear), kan_f=_net(model.kan_f), kan_g=_net(model.kan_g))
    return doc


def from_dict(doc: dict):
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InvalidConfigError(f"unsupported checkpoint schema_version {doc.get('schema_version')!r}")
    norm = _norm_back(doc.get("normalization"))
    meta = doc.get("meta") or {}
    if doc.get("kind") == "cascade":
        return CascadeModel(_linear_back(doc["front"]), _net_back(doc["mid_kan"]), _linear_back(doc["back"]), norm, meta)
    if doc.get("kind") == "sskan":
        return SsKanModel(_linear_back(doc["linear"]), _net_back(doc["kan_f"]), _net_back(doc["kan_g"]), norm, meta)
    raise InvalidConfigError(f"unknown checkpoint kind {doc.get('kind')!r}")


def save(model, path, config: dict | None = None, seed: int | None = None) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(to_dict(model, config, seed), indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise IOFailureError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load(path):
    """Return ``(model, document)``; the document carries config, seed and hash."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IOFailureError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    return from_dict(doc), doc
