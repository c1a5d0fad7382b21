"""Configuration and per-sample stages: simulate, reconstruct, evaluate."""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .buildsim import (
    BuildingModel, Rect, SimulationParams, check_trace, rasterize_ideal, simulation_trace,
)
from .core import (
    EmptyCloudError, HeightGrid, grid_to_points, read_grid, read_label_grid, write_grid,
    write_label_grid, write_mesh_obj,
)
from .decompose import DecomposeParams, Decomposition, decompose_building
from .evaluate import EvalScores, evaluate_scene
from .fit import CpdParams, SectionFit, fit_section
from .mesh import (
    CHORD_TOL, DEFAULT_SEGMENTS, SceneModel, SceneSection, assemble_scene, dense_face_count,
    scene_from_building,
)
from .primitives import PrototypeLibrary
from .stereo import StereoNoiseParams, simulate_stereo

# fixed artifact names inside <out>/<sample_id>/
IDEAL, NOISY, MASK, LABELS, MODEL = "ideal.asc", "noisy.asc", "mask.asc", "labels.asc", "model.json"
DECOMPOSITION, ASSIGNMENT, FITS = "decomposition.json", "assignment.asc", "fits.json"
SCENE_OBJ, SCENE_JSON, REPORT = "scene.obj", "scene.json", "report.json"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FitOptions:
    top_k: int = 3
    trim_cells: float = 2.0
    flat_margin: float = 0.01
    max_points: int = 512
    prototype_points: int = 1024
    prototype_seed: int = 0
    classify_points: int = 384

    def __post_init__(self):
        if self.top_k < 0 or self.trim_cells < 0 or self.flat_margin < 0:
            raise ValueError("top_k, trim_cells and flat_margin must be >= 0")
        if min(self.max_points, self.prototype_points, self.classify_points) < 3:
            raise ValueError("point budgets must be >= 3")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    simulation: SimulationParams = field(default_factory=SimulationParams)
    stereo: StereoNoiseParams = field(default_factory=StereoNoiseParams)
    decompose: DecomposeParams = field(default_factory=DecomposeParams)
    cpd: CpdParams = field(default_factory=lambda: CpdParams(rotation="z"))
    fit: FitOptions = field(default_factory=FitOptions)
    mesh_segments: int = DEFAULT_SEGMENTS
    mesh_chord_tol: float = CHORD_TOL
    voxel: float = 0.5
    reconstruct_from: str = "noisy"

    def __post_init__(self):
        if self.mesh_segments < 2:
            raise ValueError("mesh_segments must be >= 2")
        if self.mesh_chord_tol < 0:
            raise ValueError("mesh_chord_tol must be >= 0")
        if not self.voxel > 0:
            raise ValueError("voxel must be > 0")
        if self.reconstruct_from not in ("noisy", "ideal"):
            raise ValueError("reconstruct_from must be 'noisy' or 'ideal'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return _build(cls, d, "")

    def with_overrides(self, assignments: list[str]) -> "PipelineConfig":
        d = self.to_dict()
        for item in assignments:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not key=value")
            node, parts = d, key.strip().split(".")
            for p in parts[:-1]:
                if not isinstance(node.get(p), dict):
                    raise ConfigError(f"unknown config key {key!r}")
                node = node[p]
            if parts[-1] not in node or isinstance(node[parts[-1]], dict):
                raise ConfigError(f"unknown config key {key!r}")
            try:
                node[parts[-1]] = json.loads(raw)
            except json.JSONDecodeError:
                node[parts[-1]] = raw
        return PipelineConfig.from_dict(d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d)


def _build(cls, d, prefix: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in d.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{prefix}{name}.")
        elif typing.get_origin(hint) is tuple:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{prefix}{name} must be a list")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {prefix.rstrip('.') or 'config'}: {exc}") from None


def sample_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


def sample_id(index: int) -> str:
    return f"sample_{index:04d}"


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def simulate_sample(config: PipelineConfig, index: int, out_dir, self_check: bool = False) -> dict:
    seed = sample_seed(config.seed, index)
    trace = simulation_trace(config.simulation, seed)
    problems = check_trace(trace, Rect(0.0, 0.0, *config.simulation.region_size)) if self_check else []
    model = trace.model
    ideal, mask, labels = rasterize_ideal(model, config.simulation.cell_size, config.simulation.padding)
    noisy = simulate_stereo(ideal, labels, dataclasses.replace(config.stereo, seed=seed))
    d = Path(out_dir) / sample_id(index)
    d.mkdir(parents=True, exist_ok=True)
    write_grid(ideal, d / IDEAL)
    write_grid(noisy, d / NOISY)
    write_label_grid(mask.astype(np.int64), d / MASK, ideal.cell_size, ideal.origin)
    write_label_grid(labels, d / LABELS, ideal.cell_size, ideal.origin)
    model.save(d / MODEL)
    return {"sample": sample_id(index), "seed": seed, "sections": len(model.sections),
            "problems": problems}


# --------------------------------------------------------------------------
# reconstruct
# --------------------------------------------------------------------------

_LIBRARIES: dict[tuple, PrototypeLibrary] = {}


def prototype_library(opts: FitOptions) -> PrototypeLibrary:
    key = (opts.prototype_points, opts.prototype_seed, opts.classify_points)
    if key not in _LIBRARIES:
        _LIBRARIES[key] = PrototypeLibrary(opts.prototype_points, opts.prototype_seed,
                                           opts.classify_points)
    return _LIBRARIES[key]


@dataclass(frozen=True)
class Reconstruction:
    decomposition: Decomposition
    mask: np.ndarray
    fits: tuple[SectionFit | None, ...]
    scene: SceneModel
    failures: tuple[dict, ...] = ()


def fit_sections(grid: HeightGrid, decomp: Decomposition, config: PipelineConfig):
    lib = prototype_library(config.fit)
    fits, failures = [], []
    for k, sec in enumerate(decomp.sections):
        sel = decomp.assignment == k
        try:
            cloud = grid_to_points(grid, sel)
            f = fit_section(cloud, decomp.datum, lib, config.cpd, footprint=sec.rect,
                            cell_size=grid.cell_size, max_points=config.fit.max_points,
                            seed=sample_seed(config.seed, k), trim=config.fit.trim_cells * grid.cell_size,
                            top_k=config.fit.top_k, flat_margin=config.fit.flat_margin)
        except (EmptyCloudError, ValueError, RuntimeError) as exc:
            failures.append({"section": k, "error": f"{type(exc).__name__}: {exc}"})
            f = None
        fits.append(f)
    return fits, failures


def reconstruct_grid(grid: HeightGrid, config: PipelineConfig) -> Reconstruction:
    decomp, mask = decompose_building(grid, config.decompose)
    fits, failures = fit_sections(grid, decomp, config)
    scene = SceneModel(tuple(SceneSection.from_fit(f) for f in fits if f is not None), decomp.datum)
    return Reconstruction(decomp, mask, tuple(fits), scene, tuple(failures))


def fits_document(fits, failures) -> dict:
    return {"sections": [None if f is None else f.to_dict() for f in fits],
            "failures": list(failures)}


def write_reconstruction(rec: Reconstruction, grid: HeightGrid, out_dir, config: PipelineConfig) -> dict:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / DECOMPOSITION).write_text(rec.decomposition.to_json())
    write_label_grid(rec.decomposition.assignment, d / ASSIGNMENT, grid.cell_size, grid.origin)
    (d / FITS).write_text(json.dumps(fits_document(rec.fits, rec.failures), indent=2))
    mesh = assemble_scene(rec.scene, config.mesh_segments, chord_tol=config.mesh_chord_tol)
    nv, nf = write_mesh_obj(mesh, d / SCENE_OBJ)
    counts = {"vertices": nv, "faces": nf, "dense_faces": dense_face_count(grid),
              "face_ratio": nf / dense_face_count(grid)}
    doc = rec.scene.to_dict()
    doc["counts"] = counts
    (d / SCENE_JSON).write_text(json.dumps(doc, indent=2))
    return counts


def write_failed_reconstruction(out_dir, error: str) -> None:
    """Empty prediction in place of a failed reconstruction.

    Evaluation then scores the sample as a complete miss; without it a
    stale or ground-truth fallback could be scored instead.
    """
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    for name in (DECOMPOSITION, ASSIGNMENT, FITS):
        (d / name).unlink(missing_ok=True)
    (d / SCENE_OBJ).write_text("")
    doc = SceneModel(()).to_dict()
    doc["error"] = error
    (d / SCENE_JSON).write_text(json.dumps(doc, indent=2))


def reconstruct_sample(sample_dir, config: PipelineConfig, out_dir=None) -> dict:
    sample_dir = Path(sample_dir)
    out_dir = out_dir or sample_dir
    try:
        grid = read_grid(sample_dir / (NOISY if config.reconstruct_from == "noisy" else IDEAL))
        rec = reconstruct_grid(grid, config)
    except Exception as exc:
        write_failed_reconstruction(out_dir, f"{type(exc).__name__}: {exc}")
        raise
    counts = write_reconstruction(rec, grid, out_dir, config)
    return {"sample": sample_dir.name, "sections": len(rec.decomposition.sections),
            "fitted": len(rec.scene.sections), "failures": list(rec.failures), "counts": counts}


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------

def load_prediction(d: Path) -> SceneModel:
    if (d / SCENE_JSON).exists():
        return SceneModel.from_dict(json.loads((d / SCENE_JSON).read_text()))
    if (d / MODEL).exists():  # a ground-truth directory scores against itself
        return scene_from_building(BuildingModel.load(d / MODEL))
    raise FileNotFoundError(f"{d}: neither {SCENE_JSON} nor {MODEL} found")


def evaluate_sample(pred_dir, truth_dir, config: PipelineConfig) -> dict:
    pred_dir, truth_dir = Path(pred_dir), Path(truth_dir)
    truth = read_grid(truth_dir / IDEAL)
    mask = read_label_grid(truth_dir / MASK) > 0
    datum = BuildingModel.load(truth_dir / MODEL).datum
    scene = load_prediction(pred_dir)
    scores = evaluate_scene(scene, truth, mask, datum, config.voxel, config.mesh_segments,
                            config.mesh_chord_tol)
    area = float(mask.sum()) * truth.cell_size ** 2
    return {"sample": truth_dir.name, "scores": scores.to_dict(), "truth_area": area,
            "sections": len(scene.sections),
            "truth_sections": len(BuildingModel.load(truth_dir / MODEL).sections)}


def aggregate(reports: list[dict]) -> dict:
    """Area-weighted mean of each metric."""
    keys = [f.name for f in dataclasses.fields(EvalScores)]
    w = np.array([r["truth_area"] for r in reports], dtype=np.float64)
    if not len(reports) or w.sum() <= 0:
        return {k: float("nan") for k in keys}
    return {k: float(np.dot(w, [r["scores"][k] for r in reports]) / w.sum()) for k in keys}


def sample_dirs(root) -> dict[str, Path]:
    root = Path(root)
    return {p.name: p for p in sorted(root.iterdir()) if p.is_dir() and p.name.startswith("sample_")}
