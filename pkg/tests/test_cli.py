import json

import numpy as np
import pytest

from pdrlab.main import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, apply_overrides, main
from pdrlab.reports import MetricsReport, ProbeReport, read_jsonl, schema_documents
from pdrlab.scene import SceneParams

TINY = {
    "image_size": 16,
    "feature_dim": 8,
    "model": {"enc_channels": [4], "dec_channels": [4], "mlp_hidden": 8},
    "loocc": {"batch_size": 8, "patience": 2},
    "train": {"max_epochs": 1},
    "probe": {"epochs": 2, "n_train": 20},
    "dataset": {"n": 40},
}


@pytest.fixture
def cli(tmp_path, monkeypatch):
    """Run pdrlab with a tiny config and an isolated output directory."""
    monkeypatch.chdir(tmp_path)
    config = tmp_path / "tiny.json"
    config.write_text(json.dumps(TINY))

    def run(*args):
        return main(["--config", str(config), "--output-dir", str(tmp_path / "out"), "--no-progress", *args])

    return run


@pytest.fixture
def generated(cli, tmp_path):
    assert cli("generate") == EXIT_OK
    return tmp_path / "out"


def test_print_config(cli, capsys):
    assert cli("--print-config") == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed["image_size"] == 16
    assert printed["loocc"]["mode"] == "none"


def test_print_schema(capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["--print-schema"]) == EXIT_OK
    assert "loocc" in json.loads(capsys.readouterr().out)["properties"]


def test_bad_flag_exits_with_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--bogus"])
    assert info.value.code == EXIT_USAGE
    assert "unrecognized arguments" in capsys.readouterr().err


def test_bad_block_name_is_a_usage_error(cli):
    with pytest.raises(SystemExit) as info:
        cli("eval", "--task", "cluster", "--blocks", "geom,shadow")
    assert info.value.code == EXIT_USAGE


def test_missing_command(cli, capsys):
    assert cli() == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"loocc": {"temperature": 1}}))
    assert main(["--config", str(path), "runs"]) == EXIT_USAGE
    assert "loocc.temperature" in capsys.readouterr().err


def test_invalid_config_values(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"image_size": 20}))
    assert main(["--config", str(path), "runs"]) == EXIT_USAGE
    assert "image_size" in capsys.readouterr().err


def test_generate_prints_a_summary(cli, tmp_path, capsys):
    assert cli("generate", "--n", "20", "--seed", "3") == EXIT_OK
    out = capsys.readouterr().out
    assert "Scenes: 20 (16x16)" in out
    assert "train" in out and "shape:" in out
    manifest = json.loads((tmp_path / "out" / "dataset" / "manifest.json").read_text())
    assert len(manifest["examples"]) == 20
    assert (tmp_path / "out" / "pdrlab.log").exists()


def test_generate_with_negative_seed(cli, tmp_path, capsys):
    assert cli("generate", "--n", "20", "--seed", "-3") == EXIT_OK
    assert "Scenes: 20" in capsys.readouterr().out
    manifest = json.loads((tmp_path / "out" / "dataset" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == -3


def test_generate_rejects_tiny_datasets(cli, capsys):
    assert cli("generate", "--n", "5") == EXIT_RUNTIME
    assert "at least 10" in capsys.readouterr().err


def test_pixel_cluster_eval_writes_a_report(cli, generated, capsys):
    assert cli("eval", "--task", "cluster", "--baseline", "pixels", "--label", "shape") == EXIT_OK
    report = MetricsReport.model_validate_json((generated / "eval" / "cluster.json").read_text())
    assert report.features == "pixels" and report.label == "shape"
    capsys.readouterr()
    assert cli("runs", "--evaluations") == EXIT_OK
    assert "cluster" in capsys.readouterr().out


def test_eval_needs_a_checkpoint(cli, generated, capsys):
    assert cli("eval", "--task", "probe") == EXIT_USAGE
    assert "--checkpoint" in capsys.readouterr().err


def test_eval_on_missing_dataset(cli, tmp_path):
    assert cli("eval", "--task", "cluster", "--baseline", "pixels", "--dataset", str(tmp_path / "nowhere")) == EXIT_RUNTIME


def test_train_then_evaluate(cli, generated, capsys):
    assert cli("train", "--mode", "loocc-lv", "--epochs", "1") == EXIT_OK
    run_dir = generated / "run-loocc-lv"
    assert [m.epoch for m in read_jsonl(run_dir / "metrics.jsonl")] == [0, 1]
    assert (run_dir / "best" / "manifest.json").exists()

    capsys.readouterr()
    assert cli("runs") == EXIT_OK
    listing = capsys.readouterr().out
    assert "loocc-lv" in listing and "completed" in listing

    checkpoint = str(run_dir / "best")
    assert cli("eval", "--task", "probe", "--checkpoint", checkpoint, "--label", "albedo") == EXIT_OK
    report = ProbeReport.model_validate_json((run_dir / "eval" / "probe.json").read_text())
    assert report.n_train == 20 and report.checkpoint == checkpoint
    assert cli("eval", "--task", "disentangle", "--checkpoint", checkpoint, "--split", "train") == EXIT_OK
    assert cli("eval", "--task", "invariance", "--checkpoint", checkpoint, "--perturb", "loocc-l") == EXIT_OK


def test_train_resume(cli, generated):
    assert cli("train", "--epochs", "1") == EXIT_OK
    assert cli("train", "--epochs", "2", "--resume") == EXIT_OK
    assert [m.epoch for m in read_jsonl(generated / "run-none" / "metrics.jsonl")] == [0, 1, 2]


def test_train_without_dataset(cli, capsys):
    assert cli("train") == EXIT_RUNTIME
    assert "manifest.json" in capsys.readouterr().err


def test_runs_before_any_training(cli, capsys):
    assert cli("runs") == EXIT_OK
    assert "No runs recorded yet" in capsys.readouterr().out


def test_render_preview_without_overrides(cli, generated):
    assert cli("render-preview", "--dataset", str(generated / "dataset"), "--index", "2") == EXIT_OK
    preview = generated / "preview"
    assert (preview / "canonical.pdrt").read_bytes() == (preview / "override.pdrt").read_bytes()
    assert (preview / "canonical.png").exists()


def test_render_preview_clamps_overrides(cli, generated, capsys):
    args = ("render-preview", "--dataset", str(generated / "dataset"), "--yaw", "100", "--ambient", "0.2")
    assert cli(*args) == EXIT_OK
    err = capsys.readouterr().err
    assert "yaw=100 outside [-60, 60], clamped to 60" in err
    assert "ambient" not in err
    preview = generated / "preview"
    assert (preview / "canonical.pdrt").read_bytes() != (preview / "override.pdrt").read_bytes()


def test_render_preview_from_params_file(cli, tmp_path):
    params = {
        "depth": np.ones((8, 8)).tolist(),
        "albedo": np.full((8, 8, 3), 0.5).tolist(),
        "light": [0.5, 0.5, 0.0, 0.0],
        "camera": [0.0] * 6,
    }
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(params))
    assert cli("render-preview", "--params", str(path), "--pitch", "10", "--out", str(tmp_path / "pv")) == EXIT_OK
    assert (tmp_path / "pv" / "override.png").exists()


def test_render_preview_index_out_of_range(cli, generated, capsys):
    assert cli("render-preview", "--dataset", str(generated / "dataset"), "--index", "400") == EXIT_RUNTIME
    assert "out of range" in capsys.readouterr().err


def test_apply_overrides():
    params = SceneParams(np.ones((2, 2)), np.zeros((2, 2, 3)), np.array([0.5, 0.5, 0.0, 0.0]), np.zeros(6))
    out, warnings = apply_overrides(params, {"tx": 0.1, "light_pitch": -120.0})
    assert out.camera[3] == 0.1
    assert out.light[2] == -90.0
    assert len(warnings) == 1 and "light_pitch" in warnings[0]
    assert params.light[2] == 0.0
    with pytest.raises(ValueError, match="unknown override"):
        apply_overrides(params, {"zoom": 2.0})


def test_shipped_schemas_are_current(tmp_path, monkeypatch):
    from pathlib import Path

    shipped = Path(__file__).parent.parent / "schemas"
    for name, doc in schema_documents().items():
        on_disk = json.loads((shipped / name).read_text())
        assert set(on_disk["properties"]) == set(doc["properties"]), name
        assert set(on_disk.get("required", [])) == set(doc.get("required", [])), name

    monkeypatch.chdir(tmp_path)
    assert main(["--write-schemas", str(tmp_path / "schemas")]) == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "schemas").iterdir()) == sorted(schema_documents())
