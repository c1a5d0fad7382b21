"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel is called once before timing so numba compilation is excluded.
The script also reports the largest disagreement between the two versions.
With ROOFKIT_NO_NUMBA=1 the ``*_nb`` functions run as plain Python, which is
far too slow to time, so the script refuses to run in that mode.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from roofkit import kernels
from roofkit._accel import USE_NUMBA
from roofkit.mesh import assemble_scene, scene_from_building
from roofkit.buildsim import SimulationParams, rasterize_ideal, simulate_building


def _cases(rng):
    a = rng.normal(size=(2048, 3))
    b = rng.normal(size=(2048, 3))
    protos = rng.normal(size=(15, 384, 3))
    y = rng.normal(size=(2048, 3))
    x = np.vstack([y @ np.diag([1.1, 0.9, 1.0]) + 0.05, rng.uniform(-3, 3, size=(205, 3))])

    model = simulate_building(SimulationParams(), 3)
    grid, _, _ = rasterize_ideal(model, 0.5, 6)
    mesh = assemble_scene(scene_from_building(model))
    tris = np.ascontiguousarray(mesh.vertices[mesh.faces])
    raster = (tris, grid.origin[0], grid.origin[1], grid.cell_size, grid.width, grid.height)

    return {
        "nearest_sqdist 2048x2048": ("nearest_sqdist", (a, b)),
        "chamfer_many 384 vs 15x384": ("chamfer_many", (a[:384], protos)),
        "cpd_estep 2253x2048": ("cpd_estep", (x, y, 0.5, 0.1)),
        f"raster_max_height {grid.width}x{grid.height}": ("raster_max_height", raster),
    }


def _max_diff(r1, r2) -> float:
    if isinstance(r1, tuple):
        return max(_max_diff(a, b) for a, b in zip(r1, r2))
    a, b = np.asarray(r1, float), np.asarray(r2, float)
    both = np.isnan(a) & np.isnan(b)
    scale = max(1.0, float(np.nanmax(np.abs(a))) if a.size else 1.0)
    return float(np.nanmax(np.where(both, 0.0, np.abs(a - b))) / scale) if a.size else 0.0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    if not USE_NUMBA:
        print("numba is disabled (ROOFKIT_NO_NUMBA); nothing to compare", file=sys.stderr)
        return 2

    rows = []
    print(f"{'kernel':38s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'rel diff':>9s}")
    for label, (name, a) in _cases(np.random.default_rng(args.seed)).items():
        nb, npf = getattr(kernels, name + "_nb"), getattr(kernels, name + "_np")
        diff = _max_diff(nb(*a), npf(*a))  # also triggers compilation
        t_nb = min(timeit.repeat(lambda: nb(*a), number=1, repeat=args.repeat)) * 1e3
        t_np = min(timeit.repeat(lambda: npf(*a), number=1, repeat=args.repeat)) * 1e3
        rows.append({"kernel": label, "numba_ms": t_nb, "numpy_ms": t_np,
                     "speedup": t_np / t_nb, "max_rel_diff": diff})
        print(f"{label:38s} {t_nb:10.2f} {t_np:10.2f} {t_np / t_nb:7.1f}x {diff:9.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
