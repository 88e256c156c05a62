"""Preset resolution, data generation and evaluation plumbing."""

import json

import numpy as np
import pytest

from sskan.datagen import Dataset, save_csv
from sskan.errors import InvalidConfigError, IOFailureError
from sskan.experiment import PRESETS, build_model, evaluate, generate, load_config_file, resolve_config
from sskan.ssmodel import CascadeModel, SsKanModel
from sskan.trainer import normalize_fit

SMALL = {"data": {"n_train": 512, "n_test": 256}}


class TestResolveConfig:
    def test_default_preset(self):
        cfg = resolve_config()
        assert cfg.preset == "silverbox-desk" and cfg.seed == 1

    def test_precedence(self):
        doc = {"preset": "wh-desk", "seed": 4, "train": {"epochs": 7}}
        cfg = resolve_config(None, doc, None)
        assert (cfg.preset, cfg.seed, cfg.train["epochs"]) == ("wh-desk", 4, 7)
        assert cfg.train["batch_size"] == 2048
        flags = resolve_config("silverbox-desk", doc, 9)
        assert (flags.preset, flags.seed, flags.train["epochs"]) == ("silverbox-desk", 9, 7)

    def test_preset_lengths(self):
        assert (PRESETS["silverbox-synthetic"]["data"]["n_train"], PRESETS["silverbox-synthetic"]["data"]["n_test"]) == (65536, 40960)
        assert (PRESETS["silverbox-desk"]["data"]["n_train"], PRESETS["silverbox-desk"]["data"]["n_test"]) == (8192, 4096)
        assert (PRESETS["wh-desk"]["data"]["n_train"], PRESETS["wh-desk"]["data"]["n_test"]) == (16384, 8192)
        assert PRESETS["wh-desk"]["train"]["epochs"] == 150

    def test_published_regularization(self):
        for name in PRESETS:
            t = PRESETS[name]["train"]
            assert t["lambda_l1"] == t["lambda_l2"] == 1e-4

    @pytest.mark.parametrize(
        "doc, field",
        [
            ({"schema_version": 2}, "schema_version"),
            ({"preset": "nope"}, "preset"),
            ({"bogus": {}}, "bogus"),
            ({"seed": -1}, "seed"),
            ({"train": {"lr_decay": 3.0}}, "lr_decay"),
            ({"train": {"unknown_field": 1}}, "train"),
        ],
    )
    def test_invalid(self, doc, field):
        with pytest.raises(InvalidConfigError, match=field):
            resolve_config(None, doc, None)

    def test_round_trip_through_dict(self):
        cfg = resolve_config("wh-desk", {"train": {"epochs": 3}}, 2)
        again = resolve_config(None, json.loads(cfg.dumps()), None)
        assert again.to_dict() == cfg.to_dict()

    def test_config_file_errors(self, tmp_path):
        with pytest.raises(IOFailureError):
            load_config_file(tmp_path / "missing.json")
        (tmp_path / "bad.json").write_text("[1, 2]")
        with pytest.raises(InvalidConfigError):
            load_config_file(tmp_path / "bad.json")


class TestGenerate:
    def test_duffing_deterministic(self):
        cfg = resolve_config("silverbox-desk", SMALL, 3)
        a, b = generate(cfg), generate(cfg)
        assert a[0].y.tobytes() == b[0].y.tobytes() and a[1].u.tobytes() == b[1].u.tobytes()
        assert a[2] == b[2]
        assert (len(a[0]), len(a[1])) == (512, 256)

    def test_test_ramp_extrapolates(self):
        tr, te, _ = generate(resolve_config("silverbox-desk", {"data": {"n_train": 4096, "n_test": 4096}}, 1))
        rms = lambda z: np.sqrt(np.mean(z**2))
        assert rms(te.u[-1000:]) > rms(tr.u) > rms(te.u[:1000])
        norm = normalize_fit(tr.u, tr.y)
        assert np.max(np.abs(norm.apply_u(te.u))) > 1.0

    def test_calibrated_alpha_recorded(self):
        _, _, manifest = generate(resolve_config("silverbox-desk", SMALL, 1))
        assert manifest["oracle"]["alpha"] > 0

    def test_wh_hidden_signals(self):
        tr, _, manifest = generate(resolve_config("wh-desk", SMALL, 1))
        assert set(tr.hidden) == {"v", "w"} and manifest["oracle"]["softness"] == 0.6

    def test_seeds_differ(self):
        a = generate(resolve_config("wh-desk", SMALL, 1))[0]
        b = generate(resolve_config("wh-desk", SMALL, 2))[0]
        assert not np.array_equal(a.u, b.u)

    def test_external(self, tmp_path, rng):
        for name in ("tr", "te"):
            save_csv(Dataset(rng.normal(size=50), rng.normal(size=50)), tmp_path / f"{name}.csv")
        cfg = resolve_config("external", {"data": {"train_csv": str(tmp_path / "tr.csv"), "test_csv": str(tmp_path / "te.csv")}}, 1)
        tr, te, manifest = generate(cfg)
        assert len(tr) == len(te) == 50 and manifest["oracle"] is None

    def test_external_needs_files(self):
        with pytest.raises(InvalidConfigError, match="train_csv"):
            generate(resolve_config("external", {}, 1))


class TestModelsAndMetrics:
    def test_build_models(self):
        tr, _, manifest = generate(resolve_config("wh-desk", SMALL, 1))
        norm = normalize_fit(tr.u, tr.y)
        assert isinstance(build_model(resolve_config("wh-desk", {}, 1), norm, manifest), CascadeModel)
        model = build_model(resolve_config("silverbox-desk", {}, 1), norm, manifest)
        assert isinstance(model, SsKanModel) and model.kan_g is None

    def test_evaluate_reports_extrapolation(self):
        cfg = resolve_config("silverbox-desk", {"data": {"n_train": 2048, "n_test": 2048}}, 1)
        tr, te, manifest = generate(cfg)
        model = build_model(cfg, normalize_fit(tr.u, tr.y), manifest)
        metrics, y_hat = evaluate(model, te)
        assert metrics["n"] == 2048 and y_hat.shape == (2048, 1)
        assert metrics["n_extrapolation"] > 0 and metrics["rmse_extrapolation"] is not None
        assert metrics["rmse_physical"] == pytest.approx(metrics["rmse"] / model.normalization.y_scale[0], rel=1e-9)
