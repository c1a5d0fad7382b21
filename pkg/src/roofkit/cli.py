"""Command-line interface: ``roofkit <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .core import GridFormatError, MeshError, read_grid, read_label_grid, write_label_grid
from .decompose import Decomposition, decompose_building
from .fit import SectionFit
from .mesh import SceneModel, SceneSection
from .pipeline import (
    ASSIGNMENT, DECOMPOSITION, FITS, IDEAL, NOISY, REPORT, ConfigError, PipelineConfig,
    Reconstruction, aggregate, evaluate_sample, fit_sections, reconstruct_sample,
    sample_dirs, simulate_sample, write_reconstruction,
)

log = logging.getLogger("roofkit")

EXIT_OK, EXIT_FAILURE, EXIT_INPUT = 0, 1, 2

# errors caused by bad inputs or configuration rather than processing
INPUT_ERRORS = (ConfigError, GridFormatError, FileNotFoundError, json.JSONDecodeError, KeyError)


class InputError(Exception):
    pass


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    return cfg.with_overrides(args.set or [])


def _run_all(fn, items, jobs: int):
    """``fn(item)`` for each item, in order; a process pool when jobs > 1."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _safe(fn, item):
    """Run one sample, turning exceptions into an error record."""
    try:
        return fn(item)
    except INPUT_ERRORS as exc:
        return {"error": f"{type(exc).__name__}: {exc}", "kind": "input", "item": str(item)}
    except Exception as exc:  # noqa: BLE001 - reported per sample, run continues
        return {"error": f"{type(exc).__name__}: {exc}", "kind": "processing", "item": str(item)}


class _Task:
    """Picklable per-sample callable for the process pool."""

    def __init__(self, kind: str, config: PipelineConfig, **kw):
        self.kind, self.config, self.kw = kind, config, kw

    def __call__(self, item):
        return _safe(self._run, item)

    def _run(self, item):
        if self.kind == "simulate":
            return simulate_sample(self.config, item, self.kw["out"], self.kw["self_check"])
        if self.kind == "reconstruct":
            src, out = item
            return reconstruct_sample(src, self.config, out)
        if self.kind == "evaluate":
            pred, truth = item
            return evaluate_sample(pred, truth, self.config)
        if self.kind == "decompose":
            src, out = item
            return _decompose_one(Path(src), Path(out), self.config)
        if self.kind == "fit":
            src, out = item
            return _fit_one(Path(src), Path(out), self.config)
        raise ValueError(self.kind)


def _exit_code(records: list[dict]) -> int:
    errors = [r for r in records if "error" in r]
    for r in errors:
        log.error("%s: %s", r["item"], r["error"])
    if any(r["kind"] == "input" for r in errors):
        return EXIT_INPUT
    return EXIT_FAILURE if errors else EXIT_OK


def _inputs(root: Path) -> list[Path]:
    """Sample directories under ``root``, or ``root`` itself if it holds a grid."""
    if not root.is_dir():
        raise InputError(f"{root} is not a directory")
    if (root / NOISY).exists() or (root / IDEAL).exists():
        return [root]
    dirs = list(sample_dirs(root).values())
    if not dirs:
        raise InputError(f"no sample directories under {root}")
    return dirs


def _input_grid(src: Path, config: PipelineConfig):
    return read_grid(src / (NOISY if config.reconstruct_from == "noisy" else IDEAL))


def _decompose_one(src: Path, out: Path, config: PipelineConfig) -> dict:
    grid = _input_grid(src, config)
    decomp, _ = decompose_building(grid, config.decompose)
    out.mkdir(parents=True, exist_ok=True)
    (out / DECOMPOSITION).write_text(decomp.to_json())
    write_label_grid(decomp.assignment, out / ASSIGNMENT, grid.cell_size, grid.origin)
    return {"sample": src.name, "sections": len(decomp.sections)}


def _fit_one(src: Path, out: Path, config: PipelineConfig) -> dict:
    grid = _input_grid(src, config)
    dsrc = out if (out / DECOMPOSITION).exists() else src
    assignment = read_label_grid(dsrc / ASSIGNMENT)
    decomp = Decomposition.from_dict(json.loads((dsrc / DECOMPOSITION).read_text()), assignment)
    if assignment.shape != grid.shape:
        raise GridFormatError(f"{dsrc / ASSIGNMENT}: shape {assignment.shape} != grid {grid.shape}")
    fits, failures = fit_sections(grid, decomp, config)
    scene = SceneModel(tuple(_scene_sections(fits)), decomp.datum)
    rec = Reconstruction(decomp, np.zeros(grid.shape, bool), tuple(fits), scene, tuple(failures))
    counts = write_reconstruction(rec, grid, out, config)
    return {"sample": src.name, "fitted": len(scene.sections), "failures": failures,
            "counts": counts}


def _scene_sections(fits: list[SectionFit | None]):
    return [SceneSection.from_fit(f) for f in fits if f is not None]


def _pairs(inp: Path, out: Path) -> list[tuple[Path, Path]]:
    srcs = _inputs(inp)
    if srcs == [inp]:
        return [(inp, out)]
    return [(s, out / s.name) for s in srcs]


def cmd_simulate(args, config) -> int:
    if args.count < 1:
        raise InputError("--count must be >= 1")
    task = _Task("simulate", config, out=args.out, self_check=args.self_check)
    records = _run_all(task, list(range(args.count)), args.jobs)
    code = _exit_code(records)
    bad = [r for r in records if r.get("problems")]
    for r in bad:
        for p in r["problems"]:
            log.error("%s self-check: %s", r["sample"], p)
    if args.self_check:
        print(f"self-check: {len(records) - len(bad)}/{len(records)} samples passed")
    if bad and code == EXIT_OK:
        code = EXIT_FAILURE
    return code


def _stage(kind: str):
    def run(args, config) -> int:
        pairs = _pairs(Path(args.input), Path(args.out or args.input))
        records = _run_all(_Task(kind, config), pairs, args.jobs)
        for r in records:
            if "error" not in r:
                log.info("%s", json.dumps(r))
        return _exit_code(records)
    return run


def _match(pred_root: Path, truth_root: Path) -> list[tuple[Path, Path]]:
    if (truth_root / "model.json").exists():
        return [(pred_root, truth_root)]
    preds, truths = sample_dirs(pred_root), sample_dirs(truth_root)
    if not truths:
        raise InputError(f"no sample directories under {truth_root}")
    missing_pred = sorted(set(truths) - set(preds))
    missing_truth = sorted(set(preds) - set(truths))
    if missing_pred or missing_truth:
        msg = []
        if missing_pred:
            msg.append("no prediction for: " + ", ".join(missing_pred))
        if missing_truth:
            msg.append("no ground truth for: " + ", ".join(missing_truth))
        raise InputError("; ".join(msg))
    return [(preds[k], truths[k]) for k in sorted(truths)]


def _write_report(records: list[dict], path: Path) -> dict:
    ok = [r for r in records if "error" not in r]
    report = {"samples": ok, "aggregate": aggregate(ok),
              "errors": [r for r in records if "error" in r]}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2))
    return report


def cmd_evaluate(args, config) -> int:
    pred_root, truth_root = Path(args.pred), Path(args.truth)
    for p in (pred_root, truth_root):
        if not p.is_dir():
            raise InputError(f"{p} is not a directory")
    records = _run_all(_Task("evaluate", config), _match(pred_root, truth_root), args.jobs)
    out = Path(args.out) if args.out else pred_root
    report = _write_report(records, out / REPORT)
    print(json.dumps(report["aggregate"], indent=2))
    return _exit_code(records)


def cmd_pipeline(args, config) -> int:
    out = Path(args.out)
    t0 = time.perf_counter()
    code = cmd_simulate(argparse.Namespace(count=args.count, out=out, self_check=False,
                                           jobs=args.jobs), config)
    if code != EXIT_OK:
        return code
    ids = [out / f"sample_{i:04d}" for i in range(args.count)]
    rec = _run_all(_Task("reconstruct", config), [(d, d) for d in ids], args.jobs)
    ev = _run_all(_Task("evaluate", config), [(d, d) for d in ids], args.jobs)
    report = _write_report(ev, out / REPORT)
    # failed reconstructions are scored as empty predictions and listed here
    report["errors"] = [r for r in rec if "error" in r] + report["errors"]
    report["runtime_s"] = time.perf_counter() - t0
    (out / REPORT).write_text(json.dumps(report, indent=2))
    print(json.dumps(report["aggregate"], indent=2))
    return max(_exit_code(rec), _exit_code(ev))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value (dotted key, JSON value); repeatable")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="roofkit", description=__doc__)
    p.add_argument("--version", action="version", version=f"roofkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate buildings and stereo DSMs")
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--self-check", action="store_true",
                   help="verify partition and merge invariants of every sample")
    s.set_defaults(func=cmd_simulate)

    for name, help_ in (("decompose", "split building masks into rectangular sections"),
                        ("fit", "fit roof primitives to decomposed sections"),
                        ("reconstruct", "decompose, fit and mesh in one step")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("input", help="sample directory or a directory of samples")
        s.add_argument("--out", help="output root (default: alongside the input)")
        s.set_defaults(func=_stage(name))

    s = sub.add_parser("evaluate", parents=[common], help="score reconstructions against truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--out", help=f"directory for {REPORT} (default: --pred)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("pipeline", parents=[common], help="simulate, reconstruct and evaluate")
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.jobs < 1:
            raise InputError("--jobs must be >= 1")
        config = _config(args)
        return args.func(args, config)
    except (InputError, *INPUT_ERRORS) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (MeshError, RuntimeError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
