"""Completeness, correctness and Jaccard scores in 2D (cells) and 3D (voxels)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import ConvexHull

from . import kernels
from .core import HeightGrid, Mesh, MeshError, RotatedRect
from .mesh import CHORD_TOL, DEFAULT_SEGMENTS, SceneModel, assemble_scene, parts_watertight


class Scores(NamedTuple):
    completeness: float
    correctness: float
    jaccard: float


def scores_from_counts(tp: int, fp: int, fn: int) -> Scores:
    """TP/(TP+FN), TP/(TP+FP), TP/(TP+FP+FN); every 0/0 counts as 1."""
    def ratio(num, den):
        return 1.0 if den == 0 else num / den

    return Scores(ratio(tp, tp + fn), ratio(tp, tp + fp), ratio(tp, tp + fp + fn))


def scores_2d(pred, truth) -> Scores:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return scores_from_counts(tp, fp, fn)


def _section_polygon(section) -> np.ndarray | None:
    """xy outline of a transformed footprint, or None when the transform
    keeps the vertical (the footprint stays an exact rectangle)."""
    r = section.transform.rotation
    if abs(r[2, 2] - 1.0) < 1e-12:
        return None
    corners = np.column_stack([section.footprint.corners(),
                               np.full(4, section.base_elevation)])
    xy = section.transform.apply(corners)[:, :2]
    return xy[ConvexHull(xy).vertices]


def _moved_rect(section) -> RotatedRect:
    tf = section.transform
    c = tf.apply(np.array([[*section.footprint.center, 0.0]]))[0]
    yaw = math.degrees(math.atan2(tf.rotation[1, 0], tf.rotation[0, 0]))
    a, b = section.footprint.half_extents
    return RotatedRect((c[0], c[1]), (a * tf.scale, b * tf.scale),
                       section.footprint.angle_deg + yaw)


def _in_convex(poly: np.ndarray, x, y) -> np.ndarray:
    inside = np.ones(np.shape(x), dtype=bool)
    for i in range(len(poly)):
        (x0, y0), (x1, y1) = poly[i], poly[(i + 1) % len(poly)]
        inside &= (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) >= -1e-12
    return inside


def project_to_2d(model: SceneModel, template: HeightGrid) -> np.ndarray:
    """Cells whose centre lies in any (transformed) section footprint."""
    xs, ys = template.cell_centers()
    out = np.zeros(template.shape, dtype=bool)
    for s in model.sections:
        poly = _section_polygon(s)
        out |= _moved_rect(s).contains(xs, ys) if poly is None else _in_convex(poly, xs, ys)
    return out


def _column_voxels(height: np.ndarray, datum: float, voxel: float) -> np.ndarray:
    """Voxels (centres at datum + (k + 1/2) voxel) lying below each height."""
    h = np.nan_to_num(np.asarray(height, dtype=np.float64) - datum, nan=0.0)
    return np.maximum(np.ceil(h / voxel - 0.5 - 1e-9), 0.0).astype(np.int64)


def surface_heights(mesh: Mesh, template: HeightGrid) -> np.ndarray:
    """Highest mesh surface above each cell centre (NaN where none)."""
    if not mesh.n_faces:
        return np.full(template.shape, np.nan)
    tris = np.ascontiguousarray(mesh.vertices[mesh.faces])
    return kernels.raster_max_height(tris, template.origin[0], template.origin[1],
                                     template.cell_size, template.width, template.height)


def _lattice(template: HeightGrid, voxel: float) -> HeightGrid:
    if math.isclose(voxel, template.cell_size, rel_tol=1e-12):
        return template
    ox = template.origin[0] - template.cell_size / 2 + voxel / 2
    oy = template.origin[1] - template.cell_size / 2 + voxel / 2
    w = max(1, int(round(template.width * template.cell_size / voxel)))
    h = max(1, int(round(template.height * template.cell_size / voxel)))
    return HeightGrid(np.zeros((h, w)), voxel, (ox, oy))


def _sample_nearest(grid: HeightGrid, values: np.ndarray, lattice: HeightGrid) -> np.ndarray:
    if lattice is grid:
        return values
    xs, ys = lattice.cell_centers()
    r, c = grid.world_to_cell(xs, ys)
    r = np.clip(np.floor(r + 0.5).astype(int), 0, grid.height - 1)
    c = np.clip(np.floor(c + 0.5).astype(int), 0, grid.width - 1)
    return values[r, c]


def scores_3d(pred, truth: HeightGrid, truth_mask, datum: float, voxel: float = 0.5,
              segments: int = DEFAULT_SEGMENTS, chord_tol: float = CHORD_TOL) -> Scores:
    """Column-voxel scores of a predicted scene (or mesh) against a height map.

    Columns sit on an xy lattice of pitch ``voxel`` (the truth grid itself
    when the pitch matches); each is filled from the datum up to the surface
    height: the highest mesh triangle above the column centre for the
    prediction, the masked grid value for the truth.
    """
    if not voxel > 0:
        raise ValueError("voxel must be > 0")
    if isinstance(pred, SceneModel):
        mesh = assemble_scene(pred, segments, chord_tol=chord_tol)
    else:
        mesh = pred
    if not parts_watertight(mesh):
        raise MeshError("predicted mesh is not watertight")
    truth_mask = np.asarray(truth_mask, dtype=bool)
    if truth_mask.shape != truth.shape:
        raise ValueError("truth mask and grid differ in shape")
    lattice = _lattice(truth, voxel)
    t_h = np.where(truth_mask & truth.valid(), truth.values, np.nan)
    n_true = _column_voxels(_sample_nearest(truth, t_h, lattice), datum, voxel)
    n_pred = _column_voxels(surface_heights(mesh, lattice), datum, voxel)
    tp = np.minimum(n_true, n_pred)
    return scores_from_counts(int(tp.sum()), int((n_pred - tp).sum()), int((n_true - tp).sum()))


@dataclass(frozen=True)
class EvalScores:
    completeness_2d: float
    correctness_2d: float
    jaccard_2d: float
    completeness_3d: float
    correctness_3d: float
    jaccard_3d: float

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_scene(model: SceneModel, truth: HeightGrid, truth_mask, datum: float | None = None,
                   voxel: float = 0.5, segments: int = DEFAULT_SEGMENTS,
                   chord_tol: float = CHORD_TOL) -> EvalScores:
    datum = model.datum if datum is None else datum
    s2 = scores_2d(project_to_2d(model, truth), truth_mask)
    s3 = scores_3d(model, truth, truth_mask, datum, voxel, segments, chord_tol)
    return EvalScores(*s2, *s3)
