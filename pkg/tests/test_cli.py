import csv
import json
import subprocess

import pytest

from pdefit.cli import main
from pdefit.storage import MANIFEST_NAME, read_json


BASE_CONFIG = {
    "grid": {"dim": 1, "n": 16, "c_t": 2e-4, "t_slices": 3,
             "steps_per_slice": 5},
    "terms": {"diffusion": {"active": True}},
    "truth": {"diffusion": [{"mean": 4.8, "amplitude": 2.4,
                             "wavevector": [1], "phase": 0.0}]},
    "spectrum": {"max_mode": 2},
    "data": {"samples": 10, "fine_factor": 2, "normalize": True},
    "train": {"epochs": 3, "batch_size": 4, "lr": 0.05},
}


def write_config(path, override=None):
    cfg = json.loads(json.dumps(BASE_CONFIG))
    for key, value in (override or {}).items():
        cfg[key] = value
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One gen + train run shared by the read-only CLI assertions."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "config.json")
    data = root / "data"
    model = root / "model"
    assert main(["gen", "--config", str(cfg), "--out", str(data),
                 "--seed", "7"]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(data),
                 "--out", str(model), "--seed", "3"]) == 0
    return {"root": root, "cfg": cfg, "data": data, "model": model}


def test_gen_writes_dataset_artifacts(pipeline):
    data = pipeline["data"]
    doc = read_json(data / MANIFEST_NAME)
    assert doc["kind"] == "dataset"
    assert len(doc["blobs"]) == 10
    assert (data / "sample_00000.f64").exists()
    resolved = json.loads((data / "config.resolved.json").read_text())
    assert resolved["_resolved"]["command"] == "gen"
    assert resolved["_resolved"]["seed"] == 7


def test_train_writes_model_history_and_plots(pipeline):
    model = pipeline["model"]
    doc = read_json(model / MANIFEST_NAME)
    assert doc["kind"] == "model"
    assert doc["meta"]["stop_reason"]
    assert doc["meta"]["parameter_count"] == 16
    with open(model / "history.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "train_loss", "val_loss"]
    assert len(rows) == 1 + doc["meta"]["epochs_run"]
    with open(model / "timing.csv", newline="") as fh:
        trows = list(csv.reader(fh))
    assert trows[0] == ["epoch", "seconds"]
    assert (model / "loss_curves.png").exists()
    # training history improves on this easy problem
    assert float(rows[-1][1]) < float(rows[1][1])


def test_eval_writes_report_bundle(pipeline):
    out = pipeline["root"] / "report"
    assert main(["eval", "--model", str(pipeline["model"]),
                 "--data", str(pipeline["data"]), "--out", str(out),
                 "--ood-levels", "0.0,0.3", "--ood-samples", "4"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["eval_split"] == "test"
    assert report["parameter_count"] == 16
    assert len(report["ood"]) == 2
    assert (out / "ood_curve.csv").exists()
    assert (out / "ood_curve.png").exists()
    assert (out / "recovery.csv").exists()
    assert (out / "coeff_diffusion_0.png").exists()


def test_eval_no_ood_and_no_plots(pipeline):
    out = pipeline["root"] / "report_plain"
    assert main(["eval", "--model", str(pipeline["model"]),
                 "--data", str(pipeline["data"]), "--out", str(out),
                 "--no-ood", "--no-plots"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert "ood" not in report
    assert not list(out.glob("*.png"))


def test_verify_accepts_both_artifacts(pipeline, capsys):
    assert main(["verify", "--path", str(pipeline["data"])]) == 0
    assert main(["verify", "--path", str(pipeline["model"])]) == 0
    out = capsys.readouterr().out
    assert "ok" in out


def test_verify_reports_corruption_with_exit_4(pipeline, tmp_path):
    src = pipeline["data"]
    dst = tmp_path / "broken"
    dst.mkdir()
    for p in src.iterdir():
        (dst / p.name).write_bytes(p.read_bytes())
    blob = dst / "sample_00003.f64"
    raw = bytearray(blob.read_bytes())
    raw[11] ^= 0x10
    blob.write_bytes(bytes(raw))
    assert main(["verify", "--path", str(dst)]) == 4


def test_gen_is_bitwise_reproducible(tmp_path):
    cfg = write_config(tmp_path / "config.json")
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["gen", "--config", str(cfg), "--out", str(a), "--seed", "5"]) == 0
    assert main(["gen", "--config", str(cfg), "--out", str(b), "--seed", "5"]) == 0
    for name in sorted(p.name for p in a.iterdir()):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_train_is_bitwise_reproducible(tmp_path):
    cfg = write_config(tmp_path / "config.json")
    data = tmp_path / "data"
    assert main(["gen", "--config", str(cfg), "--out", str(data), "--seed", "5"]) == 0
    models = []
    for tag in ("m1", "m2"):
        out = tmp_path / tag
        assert main(["train", "--config", str(cfg), "--data", str(data),
                     "--out", str(out), "--seed", "2", "--no-plots"]) == 0
        models.append(out)
    a, b = models
    # wall-clock timings live apart so everything else must match exactly
    for name in ("manifest.json", "history.csv", "theta_diffusion_0.f64",
                 "config.resolved.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_gen_refuses_overwrite_without_force(tmp_path, capsys):
    cfg = write_config(tmp_path / "config.json")
    out = tmp_path / "data"
    assert main(["gen", "--config", str(cfg), "--out", str(out), "--seed", "1"]) == 0
    assert main(["gen", "--config", str(cfg), "--out", str(out), "--seed", "1"]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["gen", "--config", str(cfg), "--out", str(out), "--seed", "1",
                 "--force"]) == 0


def test_seed_is_required(tmp_path, capsys):
    cfg = write_config(tmp_path / "config.json")
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--config", str(cfg), "--out", str(tmp_path / "d")])
    assert exc.value.code == 2


def test_set_overrides_reach_the_manifest(tmp_path):
    cfg = write_config(tmp_path / "config.json")
    out = tmp_path / "data"
    assert main(["gen", "--config", str(cfg), "--out", str(out), "--seed", "1",
                 "--samples", "8", "--set", "data.fine_factor=4"]) == 0
    doc = read_json(out / MANIFEST_NAME)
    assert doc["manifest"]["samples"] == 8
    assert doc["manifest"]["fine_factor"] == 4


def test_validation_failures_exit_2(tmp_path, capsys):
    # truth outside the default bounds is caught before any solve
    cfg = write_config(tmp_path / "config.json",
                       {"truth": {"diffusion": [{"mean": 1e8}]}})
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "d"),
                 "--seed", "1"]) == 2
    assert "error:" in capsys.readouterr().err


def test_train_instability_exits_3(tmp_path, capsys):
    # bounds admit a burgers velocity far past the transport budget
    over = {
        "terms": {"diffusion": {"active": True, "lo": 1.0, "hi": 4.8828125},
                  "burgers": {"active": True, "lo": 0.0, "hi": 1e7}},
        "truth": {"diffusion": [{"mean": 2.0}], "burgers": [{"mean": 1.0}]},
        "train": {"epochs": 1, "batch_size": 8, "lr": 0.05},
    }
    cfg = write_config(tmp_path / "config.json", over)
    data = tmp_path / "data"
    assert main(["gen", "--config", str(cfg), "--out", str(data), "--seed", "4"]) == 0
    rc = main(["train", "--config", str(cfg), "--data", str(data),
               "--out", str(tmp_path / "m"), "--seed", "2", "--no-plots"])
    assert rc == 3
    assert "burgers" in capsys.readouterr().err


def test_eval_grid_mismatch_exits_2(pipeline, tmp_path, capsys):
    other_cfg = write_config(tmp_path / "config.json",
                             {"grid": {"dim": 1, "n": 8, "c_t": 2e-4,
                                       "t_slices": 3, "steps_per_slice": 5},
                              "truth": {"diffusion": [{"mean": 1.2,
                                                       "amplitude": 0.6,
                                                       "wavevector": [1]}]}})
    other = tmp_path / "data8"
    assert main(["gen", "--config", str(other_cfg), "--out", str(other),
                 "--seed", "1"]) == 0
    rc = main(["eval", "--model", str(pipeline["model"]), "--data", str(other),
               "--out", str(tmp_path / "r"), "--no-ood", "--no-plots"])
    assert rc == 2


def test_sweep_variance_writes_curve(tmp_path):
    cfg = write_config(tmp_path / "config.json",
                       {"data": {"samples": 8, "fine_factor": 2,
                                 "normalize": True},
                        "train": {"epochs": 2, "batch_size": 4, "lr": 0.05}})
    out = tmp_path / "sweep"
    assert main(["sweep-variance", "--config", str(cfg), "--out", str(out),
                 "--seed", "6", "--amplitudes", "0.0,2.4"]) == 0
    with open(out / "sweep.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "amplitude"
    assert len(rows) == 3
    assert (out / "sweep.png").exists()


def test_console_script_entry_point():
    proc = subprocess.run(["pdefit", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "gen" in proc.stdout and "verify" in proc.stdout
