"""End-to-end command-line runs over temporary workspaces."""

import json
import subprocess
import sys

import numpy as np
import pytest

from gsalign.cli import main
from gsalign.ply import read_ply


def _run(tmp_path, *argv):
    return main(["--out-dir", str(tmp_path), *argv])


def _synth(tmp_path, name="model.ply", count=300, seed=4, *extra):
    rc = _run(tmp_path, "--seed", str(seed), "synth",
              "--count", str(count), "--out", name, *extra)
    assert rc == 0
    return tmp_path / name


def test_synth_writes_model_and_manifest(tmp_path):
    path = _synth(tmp_path)
    manifest = json.loads((tmp_path / "model.ply.manifest.json").read_text())
    assert manifest["gaussians"] == 300
    assert manifest["config"]["command"] == "synth"
    assert manifest["params"]["seed"] == 4
    model = read_ply(path)
    assert len(model) == 300
    assert model.features is not None


def test_pipeline_recovers_perturbation(tmp_path, capsys):
    model = _synth(tmp_path, count=400)
    rc = _run(tmp_path, "--seed", "9", "perturb", "--model", str(model),
              "--max-rotation-deg", "60", "--scale-range", "0.5,2.0",
              "--translation-radius", "1.0")
    assert rc == 0

    rc = _run(tmp_path, "register",
              "--source", str(tmp_path / "perturbed.ply"),
              "--target", str(model),
              "--stage", "coarse", "--tau-f", "0.05",
              "--report", "rep.json")
    assert rc == 0
    # report plus trace table plus figure land next to each other
    for suffix in ("", ".trace.csv", ".png"):
        assert (tmp_path / f"rep.json{suffix}").exists(), suffix

    rc = _run(tmp_path, "eval", "--report", str(tmp_path / "rep.json"),
              "--ground-truth", str(tmp_path / "transform.json"))
    assert rc == 0
    assert "rre_deg=" in capsys.readouterr().out
    metrics = json.loads((tmp_path / "metrics.json").read_text())["metrics"]
    # same sampling on both sides, so coarse alone nails the transform
    assert metrics["rre_deg"] < 0.01
    assert metrics["scale_error_pct"] < 0.01


def test_register_both_stages_writes_fine_trace(tmp_path):
    model = _synth(tmp_path, count=250)
    rc = _run(tmp_path, "--seed", "2", "perturb", "--model", str(model),
              "--max-rotation-deg", "30", "--scale-range", "0.8,1.2",
              "--translation-radius", "0.5")
    assert rc == 0
    rc = _run(tmp_path, "register",
              "--source", str(tmp_path / "perturbed.ply"),
              "--target", str(model),
              "--stage", "both", "--tau-f", "0.05",
              "--fine-iterations", "4", "--fine-views", "2",
              "--fine-resolution", "32x32", "--no-figures",
              "--report", "rep.json")
    assert rc == 0
    assert not (tmp_path / "rep.json.png").exists()
    report = json.loads((tmp_path / "rep.json").read_text())
    assert report["config"]["stage"] == "both"
    assert "fine" in report["wall_time_ms"]
    csv_text = (tmp_path / "rep.json.trace.csv").read_text()
    assert "coarse," in csv_text
    assert "fine," in csv_text


def test_emit_aligned_feeds_merge(tmp_path):
    model = _synth(tmp_path, count=250)
    rc = _run(tmp_path, "--seed", "7", "perturb", "--model", str(model))
    assert rc == 0
    rc = _run(tmp_path, "register",
              "--source", str(tmp_path / "perturbed.ply"),
              "--target", str(model), "--stage", "coarse",
              "--tau-f", "0.05", "--emit-aligned", "aligned.ply",
              "--no-figures")
    assert rc == 0
    rc = _run(tmp_path, "merge", "--target-scene", str(model),
              "--aligned-source", str(tmp_path / "aligned.ply"))
    assert rc == 0
    assert len(read_ply(tmp_path / "merged.ply")) == 500
    # aligned copy should sit on top of the target
    aligned = read_ply(tmp_path / "aligned.ply")
    target = read_ply(model)
    gap = np.linalg.norm(aligned.positions - target.positions, axis=1)
    assert np.max(gap) < 1e-3


def test_rmbg_filters_and_reports_count(tmp_path, capsys):
    model = _synth(tmp_path, count=200)
    rc = _run(tmp_path, "rmbg", "--model", str(model),
              "--bg-color", "0.0,0.0,0.0", "--color-threshold", "0.02",
              "--opacity-floor", "0.0")
    assert rc == 0
    assert "removed" in capsys.readouterr().out
    assert len(read_ply(tmp_path / "filtered.ply")) <= 200


def test_render_writes_requested_formats(tmp_path):
    model = _synth(tmp_path, count=150)
    rc = _run(tmp_path, "render", "--model", str(model),
              "--resolution", "48x32", "--format", "both")
    assert rc == 0
    assert (tmp_path / "render.png").exists()
    arr = np.load(tmp_path / "render.npy")
    assert arr.shape == (4, 32, 48)
    assert np.all(np.isfinite(arr))


def test_lift_cli_roundtrip(tmp_path):
    from gsalign.cameras import fibonacci_sphere_views

    model_path = _synth(tmp_path, count=200)
    model = read_ply(model_path)
    cams = fibonacci_sphere_views(model.centroid(),
                                  2.5 * model.bounding_radius(), 2,
                                  width=32, height=32)
    entries = []
    for i, cam in enumerate(cams):
        pose_path = tmp_path / f"pose{i}.json"
        pose_path.write_text(json.dumps(cam.to_dict()))
        rc = _run(tmp_path, "render", "--model", str(model_path),
                  "--pose", str(pose_path), "--resolution", "32x32",
                  "--format", "npy", "--out", f"view{i}")
        assert rc == 0
        entries.append({"map": str(tmp_path / f"view{i}.npy"),
                        "pose": cam.to_dict()})
    views_path = tmp_path / "views.json"
    views_path.write_text(json.dumps(entries))

    rc = _run(tmp_path, "lift", "--model", str(model_path),
              "--views", str(views_path), "--iters", "15", "--step", "0.3",
              "--out", "featured.ply")
    assert rc == 0
    lifted = read_ply(tmp_path / "featured.ply")
    assert len(lifted) == 200
    assert lifted.features is not None
    assert np.all(np.isfinite(lifted.features))


def test_bench_cli_runs_suite(tmp_path, capsys):
    suite = {"trials": 1, "methods": ["coarse"],
             "coarse": {"tau_f": 0.05},
             "scenarios": [{"id": "tiny", "kind": "same_object",
                            "params": {"gaussian_count": 250},
                            "bounds": {"translation_radius": 1.0}}]}
    suite_path = tmp_path / "suite.json"
    suite_path.write_text(json.dumps(suite))
    rc = _run(tmp_path, "--seed", "3", "bench", "--suite", str(suite_path))
    assert rc == 0
    assert "1/1 trials ok" in capsys.readouterr().out
    report = json.loads((tmp_path / "bench_report.json").read_text())
    # suite manifest had no seed of its own, so the global flag fills it
    assert report["suite"]["seed"] == 3
    assert len(report["rows"]) == 1


def test_gsa_seed_env_overrides_flag(tmp_path, monkeypatch):
    monkeypatch.setenv("GSA_SEED", "77")
    _synth(tmp_path, name="a.ply", seed=3)
    manifest = json.loads((tmp_path / "a.ply.manifest.json").read_text())
    assert manifest["config"]["seed"] == 77
    monkeypatch.delenv("GSA_SEED")
    _synth(tmp_path, name="b.ply", seed=77)
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()


def test_threads_flag_pins_blas_env(tmp_path, monkeypatch):
    # pre-seed so monkeypatch restores the originals afterwards
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        monkeypatch.setenv(var, "sentinel")
    rc = main(["--out-dir", str(tmp_path), "--threads", "2",
               "synth", "--count", "50", "--out", "m.ply"])
    assert rc == 0
    import os
    assert os.environ["OMP_NUM_THREADS"] == "2"
    assert os.environ["OPENBLAS_NUM_THREADS"] == "2"


def test_missing_inputs_exit_2(tmp_path, capsys):
    rc = _run(tmp_path, "register", "--source", str(tmp_path / "no.ply"),
              "--target", str(tmp_path / "also_no.ply"))
    assert rc == 2
    assert "not found" in capsys.readouterr().err
    model = _synth(tmp_path, count=50)
    assert _run(tmp_path, "render", "--model", str(model),
                "--pose", str(tmp_path / "no_pose.json")) == 2


def test_malformed_tuple_flag_exits_2(tmp_path, capsys):
    rc = _run(tmp_path, "synth", "--exponents", "1.0")
    assert rc == 2
    assert "comma-separated" in capsys.readouterr().err


def test_domain_error_exits_1(tmp_path, capsys):
    rc = _run(tmp_path, "synth", "--exponents", "9.0,9.0")
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_unknown_subcommand_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        _run(tmp_path, "bogus")
    assert exc.value.code == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gsalign.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "synth" in proc.stdout
