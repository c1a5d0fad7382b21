import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from roofkit.buildsim import BuildingModel, Rect, Section, rasterize_ideal
from roofkit.cli import main
from roofkit.core import read_mesh_obj, write_grid, write_label_grid
from roofkit.mesh import SceneModel, scene_from_building
from roofkit.pipeline import ConfigError, PipelineConfig
from roofkit.primitives import PrimitiveType, RoofSpec

FIXTURE = Path(__file__).parent / "fixtures" / "golden_sample"
SAMPLE_FILES = {"ideal.asc", "noisy.asc", "mask.asc", "labels.asc", "model.json"}
METRICS = ["completeness_2d", "correctness_2d", "jaccard_2d",
           "completeness_3d", "correctness_3d", "jaccard_3d"]


def _small(*extra):
    # small region keeps CLI tests quick
    return ["--set", "simulation.region_size=[30.0, 30.0]", *extra]


def _write_truth(d: Path, model: BuildingModel):
    grid, mask, labels = rasterize_ideal(model, 0.5, 3.0)
    d.mkdir(parents=True)
    write_grid(grid, d / "ideal.asc")
    write_grid(grid, d / "noisy.asc")
    write_label_grid(mask.astype(np.int64), d / "mask.asc", grid.cell_size, grid.origin)
    write_label_grid(labels, d / "labels.asc", grid.cell_size, grid.origin)
    model.save(d / "model.json")


def _flat(rect, h):
    return BuildingModel((Section(rect, RoofSpec(PrimitiveType.FLAT, h, h)),), 0.0, 0.0)


# -- config ------------------------------------------------------------------

def test_config_round_trip_and_overrides(tmp_path):
    cfg = PipelineConfig().with_overrides(["seed=7", "stereo.sigma_height=0.2", "voxel=1.0"])
    assert (cfg.seed, cfg.stereo.sigma_height, cfg.voxel) == (7, 0.2, 1.0)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert PipelineConfig.load(path) == cfg


@pytest.mark.parametrize("bad", [["nonsense=1"], ["stereo.nope=2"], ["stereo=3"], ["seed"],
                                 ["voxel=0"], ["stereo.sigma_height=-1"]])
def test_bad_overrides_rejected(bad):
    with pytest.raises(ConfigError):
        PipelineConfig().with_overrides(bad)


def test_unknown_file_keys_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 1, "decompose": {"bogus": 1}}))
    with pytest.raises(ConfigError, match="decompose.bogus"):
        PipelineConfig.load(path)
    assert main(["simulate", "--out", str(tmp_path / "o"), "--config", str(path)]) == 2


def test_invalid_arguments_exit_two(tmp_path):
    assert main(["simulate", "--out", str(tmp_path), "--count", "0"]) == 2
    assert main(["simulate", "--out", str(tmp_path), "--jobs", "0"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["reconstruct", str(tmp_path / "missing")]) == 2


# -- simulate ----------------------------------------------------------------

def test_simulate_writes_five_deterministic_files(tmp_path):
    for run in ("a", "b"):
        assert main(["simulate", "--count", "1", "--out", str(tmp_path / run), *_small()]) == 0
    a, b = tmp_path / "a" / "sample_0000", tmp_path / "b" / "sample_0000"
    assert {p.name for p in a.iterdir()} == SAMPLE_FILES
    for name in SAMPLE_FILES:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_simulate_count_and_self_check(tmp_path, capsys):
    assert main(["simulate", "--count", "10", "--out", str(tmp_path), "--self-check", "--jobs", "2",
                 *_small()]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == [f"sample_{i:04d}" for i in range(10)]
    assert "10/10 samples passed" in capsys.readouterr().out


def test_seed_changes_output(tmp_path):
    main(["simulate", "--out", str(tmp_path / "a"), *_small()])
    main(["simulate", "--out", str(tmp_path / "b"), *_small("--set", "seed=1")])
    assert ((tmp_path / "a/sample_0000/noisy.asc").read_bytes()
            != (tmp_path / "b/sample_0000/noisy.asc").read_bytes())


# -- reconstruct -------------------------------------------------------------

def test_reconstruct_flat_box(tmp_path):
    d = tmp_path / "box"
    _write_truth(d, _flat(Rect(0, 0, 12, 9), 7.0))
    assert main(["reconstruct", str(d), "--set", "reconstruct_from=ideal"]) == 0
    dec = json.loads((d / "decomposition.json").read_text())
    fits = json.loads((d / "fits.json").read_text())
    assert len(dec["sections"]) == 1
    assert [f["primitive_type"] for f in fits["sections"]] == ["flat"]
    mesh = read_mesh_obj(d / "scene.obj")
    assert (mesh.n_vertices, mesh.n_faces) == (8, 12)
    counts = json.loads((d / "scene.json").read_text())["counts"]
    assert counts["faces"] == 12 and counts["face_ratio"] < 0.01


def test_golden_fixture_section_count(tmp_path):
    truth = json.loads((FIXTURE / "model.json").read_text())
    for source in ("ideal", "noisy"):
        out = tmp_path / source
        assert main(["reconstruct", str(FIXTURE), "--out", str(out),
                     "--set", f"reconstruct_from={source}"]) == 0
        scene = SceneModel.load(out / "scene.json")
        assert len(scene.sections) == len(truth["sections"])


def test_reconstruct_is_deterministic(tmp_path):
    for run in ("a", "b"):
        assert main(["reconstruct", str(FIXTURE), "--out", str(tmp_path / run)]) == 0
    for name in ("decomposition.json", "assignment.asc", "fits.json", "scene.obj", "scene.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_corrupt_grid_exit_two(tmp_path):
    d = tmp_path / "bad"
    d.mkdir()
    (d / "noisy.asc").write_text("ncols 3\nnrows 2\ncellsize 0.5\n1 2 3\n4 5\n")
    assert main(["reconstruct", str(d)]) == 2
    doc = json.loads((d / "scene.json").read_text())
    assert doc["sections"] == [] and "GridFormatError" in doc["error"]
    assert (d / "scene.obj").read_text() == ""


def test_decompose_then_fit_matches_reconstruct(tmp_path):
    a, b = tmp_path / "staged", tmp_path / "direct"
    assert main(["decompose", str(FIXTURE), "--out", str(a)]) == 0
    assert (a / "decomposition.json").exists() and not (a / "scene.obj").exists()
    assert main(["fit", str(FIXTURE), "--out", str(a)]) == 0
    assert main(["reconstruct", str(FIXTURE), "--out", str(b)]) == 0
    assert (a / "scene.json").read_text() == (b / "scene.json").read_text()


# -- evaluate ----------------------------------------------------------------

def test_evaluate_truth_against_itself(tmp_path, capsys):
    assert main(["simulate", "--count", "2", "--out", str(tmp_path), *_small()]) == 0
    assert main(["evaluate", "--pred", str(tmp_path), "--truth", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["samples"]) == 2
    for s in report["samples"]:
        assert list(s["scores"]) == METRICS
        assert all(v == pytest.approx(1.0, abs=1e-12) for v in s["scores"].values())
    assert json.loads(capsys.readouterr().out) == report["aggregate"]


def test_aggregate_is_area_weighted(tmp_path):
    # (truth rect, truth height, predicted height): 3D completeness = pred / truth height
    cases = [(Rect(0, 0, 10, 8), 10.0, 8.0), (Rect(0, 0, 4, 4), 6.0, 6.0), (Rect(0, 0, 6, 5), 5.0, 2.5)]
    for i, (rect, h, hp) in enumerate(cases):
        name = f"sample_{i:04d}"
        _write_truth(tmp_path / "truth" / name, _flat(rect, h))
        (tmp_path / "pred" / name).mkdir(parents=True)
        scene_from_building(_flat(rect, hp)).save(tmp_path / "pred" / name / "scene.json")
    assert main(["evaluate", "--pred", str(tmp_path / "pred"), "--truth", str(tmp_path / "truth")]) == 0
    agg = json.loads((tmp_path / "pred" / "report.json").read_text())["aggregate"]
    # areas 80, 16, 30 m^2; 3D Jaccard 0.8, 1, 0.5
    assert agg["jaccard_3d"] == pytest.approx((80 * 0.8 + 16 * 1.0 + 30 * 0.5) / 126, abs=1e-12)
    assert agg["completeness_3d"] == pytest.approx(95 / 126, abs=1e-12)
    assert agg["correctness_3d"] == pytest.approx(1.0, abs=1e-12)
    assert agg["jaccard_2d"] == pytest.approx(1.0, abs=1e-12)


def test_evaluate_lists_missing_ids(tmp_path, caplog):
    main(["simulate", "--count", "3", "--out", str(tmp_path / "t"), *_small()])
    (tmp_path / "p" / "sample_0000").mkdir(parents=True)
    assert main(["evaluate", "--pred", str(tmp_path / "p"), "--truth", str(tmp_path / "t")]) == 2
    assert "sample_0001, sample_0002" in caplog.text


# -- pipeline ----------------------------------------------------------------

def test_pipeline_small_run(tmp_path):
    assert main(["pipeline", "--count", "3", "--out", str(tmp_path), "--jobs", "2", *_small()]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["samples"]) == 3 and report["errors"] == []
    assert report["aggregate"]["jaccard_2d"] > 0.7
    for i in range(3):
        names = {p.name for p in (tmp_path / f"sample_{i:04d}").iterdir()}
        assert SAMPLE_FILES | {"decomposition.json", "assignment.asc", "fits.json",
                               "scene.obj", "scene.json"} <= names


def test_pipeline_reports_failed_reconstruction(tmp_path, monkeypatch):
    import roofkit.pipeline as pl

    def boom(grid, config):
        raise RuntimeError("forced failure")

    monkeypatch.setattr(pl, "reconstruct_grid", boom)
    assert main(["pipeline", "--count", "1", "--out", str(tmp_path), *_small()]) == 1
    report = json.loads((tmp_path / "report.json").read_text())
    assert "forced failure" in report["errors"][0]["error"]
    # the failed sample is scored as an empty prediction, never as the truth
    assert report["samples"][0]["scores"]["jaccard_2d"] == 0.0


def test_console_script_version():
    out = subprocess.run([sys.executable, "-m", "roofkit.cli", "--version"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.startswith("roofkit ")
