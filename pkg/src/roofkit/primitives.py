"""Roof primitive catalog, synthetic point clouds, canonical rectification
and nearest-prototype (Chamfer) classification.

Roof surfaces are written in footprint-normalised coordinates
``(u, v) in [0, 1]^2``. A primitive's normalised height is

    h(u, v) = e + (1 - e) * shape(u, v),      e = eave_height / ridge_height

so ``h == 1`` on the ridge and ``h == e`` along the eaves. The unit primitive
occupies ``[0, 1]^3`` with its walls standing on ``z = 0``.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from . import kernels
from .core import as_points, read_ply, write_ply

DEFAULT_EAVE_FRACTION = 0.5
TRAINING_POINTS = 2048
TRAINING_PER_TYPE = 500
MAX_ROTATION_NOISE_DEG = 45.0
HEIGHT_NOISE = 0.1
DENOISE_RADIUS = 0.05

_HIP_RUN = 0.25       # hip length as a fraction of footprint length
_MANSARD_RUN = 0.2    # steep band width of the mansard
_GAMBREL_BREAK = 0.125  # horizontal position of the gambrel slope break
_GAMBREL_RISE = 0.9   # fraction of the rise reached at the break
_VAULT_ARC = 0.82     # vault spans this fraction of the ellipse's half-width (eave slope stays finite)
_AREA_WEIGHT_CAP = 20.0


class DegenerateCloudError(ValueError):
    pass


class PrimitiveType(str, enum.Enum):
    """The 15 roof primitives. ``_x``/``_y`` give the ridge (or vault) axis;
    shed suffixes give the direction in which the roof rises."""

    FLAT = "flat"
    SHED_PX = "shed_px"
    SHED_NX = "shed_nx"
    SHED_PY = "shed_py"
    SHED_NY = "shed_ny"
    GABLE_X = "gable_x"
    GABLE_Y = "gable_y"
    HIP_X = "hip_x"
    HIP_Y = "hip_y"
    PYRAMID = "pyramid"
    MANSARD = "mansard"
    GAMBREL_X = "gambrel_x"
    GAMBREL_Y = "gambrel_y"
    VAULT_X = "vault_x"
    VAULT_Y = "vault_y"

    @property
    def family(self) -> str:
        return self.value.split("_")[0]

    @property
    def directional(self) -> bool:
        return "_" in self.value

    @property
    def direction(self) -> str | None:
        if not self.directional:
            return None
        return {"px": "+x", "nx": "-x", "py": "+y", "ny": "-y", "x": "x", "y": "y"}[
            self.value.split("_")[1]]

    @property
    def pitched(self) -> bool:
        return self is not PrimitiveType.FLAT

    def rotated(self, quarter_turns: int) -> "PrimitiveType":
        """Type seen after rotating the primitive by ``quarter_turns`` x 90 deg CCW."""
        k = quarter_turns % 4
        if not self.directional or k == 0:
            return self
        fam, suffix = self.value.split("_")
        if fam == "shed":
            ring = ["px", "py", "nx", "ny"]
            return PrimitiveType(f"shed_{ring[(ring.index(suffix) + k) % 4]}")
        if k % 2 == 0:
            return self
        return PrimitiveType(f"{fam}_{'y' if suffix == 'x' else 'x'}")


def type_in_frame(ptype, from_angle_deg: float, to_angle_deg: float) -> PrimitiveType:
    """Re-express a type defined in axes at ``from_angle_deg`` in axes at
    ``to_angle_deg`` (the two frames must differ by whole quarter turns)."""
    q = round((to_angle_deg - from_angle_deg) / 90.0)
    return PrimitiveType(ptype).rotated(-q)


CATALOG: tuple[PrimitiveType, ...] = tuple(PrimitiveType)
assert len(CATALOG) == 15


@dataclass(frozen=True)
class RoofSpec:
    primitive_type: PrimitiveType
    eave_height: float
    ridge_height: float

    def __post_init__(self):
        object.__setattr__(self, "primitive_type", PrimitiveType(self.primitive_type))
        if not (0.0 <= self.eave_height <= self.ridge_height):
            raise ValueError(f"need 0 <= eave <= ridge, got {self.eave_height}, {self.ridge_height}")

    @property
    def direction(self) -> str | None:
        return self.primitive_type.direction

    @property
    def eave_fraction(self) -> float:
        if self.primitive_type is PrimitiveType.FLAT or self.ridge_height <= 0:
            return 1.0
        return self.eave_height / self.ridge_height

    @classmethod
    def unit(cls, ptype, eave_fraction: float = DEFAULT_EAVE_FRACTION) -> "RoofSpec":
        ptype = PrimitiveType(ptype)
        e = 1.0 if ptype is PrimitiveType.FLAT else eave_fraction
        return cls(ptype, e, 1.0)

    def to_dict(self) -> dict:
        return {"primitive_type": self.primitive_type.value, "direction": self.direction,
                "eave_height": self.eave_height, "ridge_height": self.ridge_height}

    @classmethod
    def from_dict(cls, d: dict) -> "RoofSpec":
        return cls(PrimitiveType(d["primitive_type"]), d["eave_height"], d["ridge_height"])


# --------------------------------------------------------------------------
# Surfaces
# --------------------------------------------------------------------------

def roof_shape(ptype, u, v) -> np.ndarray:
    """Normalised relief in ``[0, 1]``: 0 at the eaves, 1 on the ridge."""
    ptype = PrimitiveType(ptype)
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    tent_u = 1.0 - np.abs(2.0 * u - 1.0)
    tent_v = 1.0 - np.abs(2.0 * v - 1.0)
    fam = ptype.family
    if fam == "flat":
        return np.ones(np.broadcast(u, v).shape)
    if fam == "shed":
        return {"shed_px": u, "shed_nx": 1.0 - u, "shed_py": v, "shed_ny": 1.0 - v}[ptype.value] + 0.0 * v
    along_v = ptype.value.endswith("_x")  # ridge parallel to x => relief varies with v
    tent_a, tent_b = (tent_v, tent_u) if along_v else (tent_u, tent_v)
    if fam == "gable":
        return tent_a + 0.0 * tent_b
    if fam == "hip":
        return np.minimum(tent_a, tent_b / (2.0 * _HIP_RUN))
    if fam == "pyramid":
        return np.minimum(tent_u, tent_v)
    if fam == "mansard":
        return np.minimum(1.0, np.minimum(tent_u, tent_v) / (2.0 * _MANSARD_RUN))
    if fam == "gambrel":
        d = tent_a / 2.0
        low = _GAMBREL_RISE * d / _GAMBREL_BREAK
        high = _GAMBREL_RISE + (1.0 - _GAMBREL_RISE) * (d - _GAMBREL_BREAK) / (0.5 - _GAMBREL_BREAK)
        return np.where(d <= _GAMBREL_BREAK, low, high) + 0.0 * tent_b
    if fam == "vault":
        w = _VAULT_ARC * (1.0 - tent_a)
        foot = math.sqrt(1.0 - _VAULT_ARC * _VAULT_ARC)
        return (np.sqrt(1.0 - w * w) - foot) / (1.0 - foot) + 0.0 * tent_b
    raise ValueError(f"unknown primitive type {ptype!r}")


def surface_height(ptype, params: RoofSpec, u, v):
    """Normalised roof height (fraction of ridge height) at ``(u, v)``."""
    ptype = PrimitiveType(ptype)
    e = params.eave_fraction if ptype is not PrimitiveType.FLAT else 1.0
    h = e + (1.0 - e) * roof_shape(ptype, u, v)
    return float(h) if np.ndim(h) == 0 else h


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------

def _area_weight(ptype, e, u, v, step=1e-6):
    scale = 1.0 - e
    hu = (roof_shape(ptype, np.clip(u + step, 0, 1), v) - roof_shape(ptype, np.clip(u - step, 0, 1), v))
    hu /= (np.clip(u + step, 0, 1) - np.clip(u - step, 0, 1))
    hv = (roof_shape(ptype, u, np.clip(v + step, 0, 1)) - roof_shape(ptype, u, np.clip(v - step, 0, 1)))
    hv /= (np.clip(v + step, 0, 1) - np.clip(v - step, 0, 1))
    return np.minimum(np.sqrt(1.0 + (scale * hu) ** 2 + (scale * hv) ** 2), _AREA_WEIGHT_CAP)


@lru_cache(maxsize=256)
def _surface_areas(ptype: PrimitiveType, e: float) -> tuple[float, float, float, float]:
    g = (np.arange(400) + 0.5) / 400
    uu, vv = np.meshgrid(g, g)
    w = _area_weight(ptype, e, uu, vv)
    roof = float(w.mean())
    spec = RoofSpec(ptype, e if ptype.pitched else 1.0, 1.0)
    t = (np.arange(2000) + 0.5) / 2000
    walls = sum(float(np.mean(surface_height(ptype, spec, a, b)))
                for a, b in ((t, 0 * t), (t, 0 * t + 1), (0 * t, t), (0 * t + 1, t)))
    return roof, walls, 1.0, float(w.max())


def _sample_roof(ptype, e, n, rng):
    *_, wmax = _surface_areas(ptype, e)
    out_u, out_v, got = [], [], 0
    while got < n:
        m = max(64, 2 * (n - got))
        u, v = rng.random(m), rng.random(m)
        keep = rng.random(m) * wmax <= _area_weight(ptype, e, u, v)
        out_u.append(u[keep])
        out_v.append(v[keep])
        got += int(keep.sum())
    u = np.concatenate(out_u)[:n]
    v = np.concatenate(out_v)[:n]
    spec = RoofSpec(ptype, e if ptype.pitched else 1.0, 1.0)
    return np.column_stack([u, v, surface_height(ptype, spec, u, v)])


def _sample_walls(ptype, e, n, rng):
    spec = RoofSpec(ptype, e if ptype.pitched else 1.0, 1.0)
    pts, got = [], 0
    while got < n:
        m = max(64, 2 * (n - got))
        t = rng.random(m) * 4.0
        z = rng.random(m)
        side = np.minimum(t.astype(int), 3)
        s = t - side
        x = np.select([side == 0, side == 1, side == 2], [s, np.ones_like(s), 1.0 - s], 0.0 * s)
        y = np.select([side == 0, side == 1, side == 2], [0.0 * s, s, np.ones_like(s)], 1.0 - s)
        keep = z <= surface_height(ptype, spec, x, y)
        pts.append(np.column_stack([x, y, z])[keep])
        got += int(keep.sum())
    return np.concatenate(pts)[:n]


def sample_primitive(ptype, n: int = TRAINING_POINTS, seed: int = 0,
                     eave_fraction: float = DEFAULT_EAVE_FRACTION,
                     surfaces: str = "all") -> np.ndarray:
    """Sample ``n`` points uniformly by area over the unit primitive.

    ``surfaces="all"`` covers roof, walls and bottom; ``"roof"`` mimics what
    an overhead height model observes.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ptype = PrimitiveType(ptype)
    e = 1.0 if ptype is PrimitiveType.FLAT else eave_fraction
    rng = np.random.default_rng(seed)
    if surfaces == "roof":
        return _sample_roof(ptype, e, n, rng)
    if surfaces != "all":
        raise ValueError(f"surfaces must be 'all' or 'roof', got {surfaces!r}")
    roof_a, wall_a, bottom_a, _ = _surface_areas(ptype, e)
    total = roof_a + wall_a + bottom_a
    n_roof, n_wall, n_bottom = rng.multinomial(n, [roof_a / total, wall_a / total, bottom_a / total])
    parts = [_sample_roof(ptype, e, n_roof, rng), _sample_walls(ptype, e, n_wall, rng)]
    b = rng.random((n_bottom, 2))
    parts.append(np.column_stack([b, np.zeros(n_bottom)]))
    return np.concatenate(parts)


def perturb_training(cloud: np.ndarray, seed: int, return_angle: bool = False):
    """Random z-rotation in [-45, 45] deg about the footprint centre plus
    independent uniform [-0.1, 0.1] height noise per point."""
    cloud = as_points(cloud)
    rng = np.random.default_rng(seed)
    angle = rng.uniform(-MAX_ROTATION_NOISE_DEG, MAX_ROTATION_NOISE_DEG)
    dz = rng.uniform(-HEIGHT_NOISE, HEIGHT_NOISE, len(cloud))
    cx, cy = (cloud[:, :2].min(0) + cloud[:, :2].max(0)) / 2
    a = math.radians(angle)
    c, s = math.cos(a), math.sin(a)
    x, y = cloud[:, 0] - cx, cloud[:, 1] - cy
    out = np.column_stack([cx + c * x - s * y, cy + s * x + c * y, cloud[:, 2] + dz])
    return (out, angle) if return_angle else out


def generate_training_set(per_type: int = TRAINING_PER_TYPE, seed: int = 0,
                          n: int = TRAINING_POINTS,
                          eave_fraction: float = DEFAULT_EAVE_FRACTION):
    """``per_type`` perturbed roof clouds for every catalog type, as
    ``[(points, type), ...]`` ordered type-major."""
    if per_type < 1:
        raise ValueError("per_type must be >= 1")
    seeds = np.random.SeedSequence(seed).spawn(len(CATALOG) * per_type)
    out = []
    for ti, ptype in enumerate(CATALOG):
        for k in range(per_type):
            ss = seeds[ti * per_type + k].generate_state(2)
            pts = sample_primitive(ptype, n, int(ss[0]), eave_fraction, surfaces="roof")
            out.append((perturb_training(pts, int(ss[1])), ptype))
    return out


# --------------------------------------------------------------------------
# Canonical pose
# --------------------------------------------------------------------------

def min_area_rect(xy: np.ndarray) -> tuple[float, float, float]:
    """Minimum-area enclosing rectangle of 2-D points.

    Returns ``(angle_deg, extent_along, extent_across)`` with the angle of
    one side in ``[0, 90)``.
    """
    try:
        hull = xy[ConvexHull(xy).vertices]
    except (QhullError, ValueError):
        raise DegenerateCloudError("footprint points are collinear") from None
    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.mod(np.arctan2(edges[:, 1], edges[:, 0]), np.pi / 2)
    best = None
    for a in np.unique(np.round(angles, 12)):
        c, s = math.cos(a), math.sin(a)
        pu = hull @ np.array([c, s])
        pv = hull @ np.array([-s, c])
        eu, ev = pu.max() - pu.min(), pv.max() - pv.min()
        area = eu * ev
        if best is None or area < best[0] * (1 - 1e-12):
            best = (area, a, eu, ev)
    _, a, eu, ev = best
    if min(eu, ev) <= 1e-9 * max(1.0, eu, ev):
        raise DegenerateCloudError("footprint has zero width")
    deg = math.degrees(a)
    if deg >= 90.0 - 1e-9:
        deg, eu, ev = 0.0, ev, eu
    return deg, eu, ev


def canonical_angle(angle_deg: float, extent_along: float, extent_across: float,
                    square_tol: float = 0.05) -> float:
    """Pick the rotation that puts the major axis on +x.

    Elongated footprints keep the angle in ``[-90, 90)``; near-square ones
    (sides within ``square_tol``) in ``[-45, 45)``.
    """
    a = angle_deg if extent_along >= extent_across else angle_deg + 90.0
    if abs(extent_along - extent_across) <= square_tol * max(extent_along, extent_across):
        return (angle_deg + 45.0) % 90.0 - 45.0
    return (a + 90.0) % 180.0 - 90.0


@dataclass(frozen=True, eq=False)
class CanonicalCloud:
    """Cloud normalised into ``[0, 1]^3``.

    ``points[:n_roof]`` are the input points; the rest are the synthetic wall
    and bottom fill. World coordinates are recovered by rotating by
    ``angle_deg`` about z after undoing the per-axis scaling.
    """

    points: np.ndarray
    n_roof: int
    angle_deg: float
    offset: tuple[float, float]
    extents: tuple[float, float, float]
    base_z: float

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        ex, ey, ez = self.extents
        x = pts[:, 0] * ex + self.offset[0]
        y = pts[:, 1] * ey + self.offset[1]
        a = math.radians(self.angle_deg)
        c, s = math.cos(a), math.sin(a)
        return np.column_stack([c * x - s * y, s * x + c * y, pts[:, 2] * ez + self.base_z])

    def from_world(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        a = math.radians(self.angle_deg)
        c, s = math.cos(a), math.sin(a)
        x = c * pts[:, 0] + s * pts[:, 1]
        y = -s * pts[:, 0] + c * pts[:, 1]
        ex, ey, ez = self.extents
        return np.column_stack([(x - self.offset[0]) / ex, (y - self.offset[1]) / ey,
                                (pts[:, 2] - self.base_z) / ez])

    @property
    def roof(self) -> np.ndarray:
        return self.points[:self.n_roof]

    def footprint(self) -> tuple[tuple[float, float], tuple[float, float], float]:
        """World footprint as ``(center, half_extents, angle_deg)``."""
        c = self.to_world(np.array([[0.5, 0.5, 0.0]]))[0]
        return (float(c[0]), float(c[1])), (self.extents[0] / 2, self.extents[1] / 2), self.angle_deg

    def subsample(self, n: int, roof_fraction: float = 0.8, seed: int = 0) -> np.ndarray:
        """Fixed-size subset mixing roof and fill points."""
        rng = np.random.default_rng(seed)
        roof, fill = self.points[:self.n_roof], self.points[self.n_roof:]
        n_roof = min(len(roof), int(round(n * roof_fraction))) if len(fill) else min(len(roof), n)
        n_fill = min(len(fill), n - n_roof)
        n_roof = min(len(roof), n - n_fill)
        parts = [roof[rng.choice(len(roof), n_roof, replace=False)] if n_roof < len(roof) else roof]
        if n_fill:
            parts.append(fill[rng.choice(len(fill), n_fill, replace=False)] if n_fill < len(fill) else fill)
        out = np.concatenate(parts)
        if len(out) < n:  # tiny clouds: pad by repetition so batches stay rectangular
            out = out[np.arange(n) % len(out)]
        return out


def _lattice(n_a: int, n_b: int) -> tuple[np.ndarray, np.ndarray]:
    a = (np.arange(n_a) + 0.5) / n_a
    b = (np.arange(n_b) + 0.5) / n_b
    aa, bb = np.meshgrid(a, b)
    return aa.ravel(), bb.ravel()


def denoise_heights(points: np.ndarray, radius: float, area: float) -> np.ndarray:
    """Replace each z by the mean z of the xy neighbours expected within
    ``radius`` given ``area`` of footprint (a density-scaled k-NN mean)."""
    k = min(len(points), int(round(math.pi * radius * radius * len(points) / area)))
    if k <= 1:
        return points
    _, idx = cKDTree(points[:, :2]).query(points[:, :2], k=k)
    out = points.copy()
    out[:, 2] = points[idx, 2].mean(axis=1)
    return out


def rectify_canonical(cloud: np.ndarray, base_z: float | None = None, pad: float = 0.0,
                      angle_deg: float | None = None, fill: bool = True,
                      denoise: float = 0.0) -> CanonicalCloud:
    """Rotate the footprint's major axis onto +x, move the min corner to the
    origin, fill walls and bottom, and scale each axis into ``[0, 1]``.

    ``base_z`` is the wall foot (defaults to the lowest point); ``pad``
    widens the footprint on every side, e.g. by half a raster cell when the
    points are cell centres. ``angle_deg`` overrides the footprint angle
    estimate (the major-axis choice still applies). ``denoise > 0`` averages
    heights over xy neighbourhoods of that radius (as a fraction of the
    footprint), which gives up the exact world round trip of the input.
    """
    pts = as_points(cloud)
    xy = pts[:, :2]
    if angle_deg is None:
        a0, ea, eb = min_area_rect(xy)
    else:
        a0 = angle_deg
        r = math.radians(a0)
        pu = xy @ np.array([math.cos(r), math.sin(r)])
        pv = xy @ np.array([-math.sin(r), math.cos(r)])
        ea, eb = np.ptp(pu), np.ptp(pv)
        if min(ea, eb) <= 1e-9 * max(1.0, ea, eb):
            raise DegenerateCloudError("footprint has zero width")
    phi = canonical_angle(a0, ea, eb)
    r = math.radians(phi)
    c, s = math.cos(r), math.sin(r)
    x = c * xy[:, 0] + s * xy[:, 1]
    y = -s * xy[:, 0] + c * xy[:, 1]
    x0, y0 = x.min() - pad, y.min() - pad
    ex, ey = x.max() + pad - x0, y.max() + pad - y0
    return _canonicalize(pts, phi, x0, y0, ex, ey, base_z, fill, denoise)


def rectify_in_frame(cloud: np.ndarray, center, half_extents, angle_deg: float,
                     base_z: float | None = None, fill: bool = True,
                     denoise: float = 0.0) -> CanonicalCloud:
    """Like :func:`rectify_canonical` but with a given footprint rectangle.

    The longer side becomes +x. Points outside the footprint are clamped
    onto it by the unit-cube normalisation.
    """
    pts = as_points(cloud)
    a, b = float(half_extents[0]), float(half_extents[1])
    if min(a, b) <= 0:
        raise DegenerateCloudError("footprint has zero width")
    phi = canonical_angle(angle_deg, 2 * a, 2 * b)
    if round((phi - angle_deg) / 90.0) % 2:  # a quarter turn swaps the sides
        a, b = b, a
    r = math.radians(phi)
    c, s = math.cos(r), math.sin(r)
    cx = c * center[0] + s * center[1]
    cy = -s * center[0] + c * center[1]
    return _canonicalize(pts, phi, cx - a, cy - b, 2 * a, 2 * b, base_z, fill, denoise)


def _canonicalize(pts, phi, x0, y0, ex, ey, base_z, fill, denoise) -> CanonicalCloud:
    r = math.radians(phi)
    c, s = math.cos(r), math.sin(r)
    xy = pts[:, :2]
    x = c * xy[:, 0] + s * xy[:, 1]
    y = -s * xy[:, 0] + c * xy[:, 1]
    if denoise > 0:
        z = denoise_heights(np.column_stack([(x - x0) / ex, (y - y0) / ey, pts[:, 2]]),
                            denoise, 1.0)[:, 2]
        pts = np.column_stack([xy, z])
    if base_z is None:
        base_z = float(pts[:, 2].min())
    top = float(pts[:, 2].max())
    ez = max(top - base_z, 1e-9 * max(1.0, ex, ey))
    local = np.column_stack([x - x0, y - y0, pts[:, 2] - base_z])

    parts = [local]
    if fill:
        inside = np.clip(local, [0.0, 0.0, -np.inf], [ex, ey, np.inf])
        parts.extend(_fill_walls_bottom(inside, ex, ey))
    allpts = np.concatenate(parts)
    norm = allpts / np.array([ex, ey, ez])
    np.clip(norm, 0.0, 1.0, out=norm)
    return CanonicalCloud(norm, len(pts), phi, (float(x0), float(y0)), (float(ex), float(ey), float(ez)),
                          float(base_z))


def _fill_walls_bottom(local: np.ndarray, ex: float, ey: float):
    """Lattice points on the four walls and the bottom of the bounding
    prism at the roof's areal density (points per footprint area)."""
    spacing = math.sqrt(ex * ey / len(local))
    tree = cKDTree(local[:, :2])
    out = []
    for (p0, p1) in (((0, 0), (ex, 0)), ((ex, 0), (ex, ey)), ((ex, ey), (0, ey)), ((0, ey), (0, 0))):
        p0, p1 = np.array(p0, float), np.array(p1, float)
        length = float(np.hypot(*(p1 - p0)))
        n_t = max(1, int(round(length / spacing)))
        t = (np.arange(n_t) + 0.5) / n_t
        along = p0 + t[:, None] * (p1 - p0)
        _, idx = tree.query(along)
        tops = np.maximum(local[idx, 2], 0.0)
        for xy_pt, top in zip(along, tops):
            n_z = int(round(top / spacing))
            if n_z <= 0:
                continue
            z = (np.arange(n_z) + 0.5) / n_z * top
            out.append(np.column_stack([np.full(n_z, xy_pt[0]), np.full(n_z, xy_pt[1]), z]))
    n_a = max(1, int(round(ex / spacing)))
    n_b = max(1, int(round(ey / spacing)))
    a, b = _lattice(n_a, n_b)
    out.append(np.column_stack([a * ex, b * ey, np.zeros_like(a)]))
    return out


# --------------------------------------------------------------------------
# Classification
# --------------------------------------------------------------------------

def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Chamfer distance: mean of the two mean nearest-neighbour distances."""
    return float(kernels.chamfer_many(np.ascontiguousarray(a, dtype=np.float64),
                                      np.ascontiguousarray(b, dtype=np.float64)[None])[0])


def _rotate_unit(points: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Rotate canonical points by k x 90 deg CCW about the square's centre."""
    p = points.copy()
    for _ in range(quarter_turns % 4):
        p[:, 0], p[:, 1] = 1.0 - p[:, 1], p[:, 0].copy()
    return p


class PrototypeSet:
    """One canonical prototype cloud per catalog type, pre-rotated by the
    four quarter turns and subsampled to a fixed size for batched Chamfer."""

    def __init__(self, clouds: dict, n_classify: int = 384, eave_fraction: float | None = None,
                 denoise: float = DENOISE_RADIUS):
        missing = set(CATALOG) - set(clouds)
        if missing:
            raise ValueError(f"prototypes missing types: {sorted(m.value for m in missing)}")
        self.clouds = {PrimitiveType(k): v for k, v in clouds.items()}
        self.n_classify = n_classify
        self.eave_fraction = eave_fraction
        self.denoise = denoise
        stack, labels = [], []
        for ptype in CATALOG:
            base = self.clouds[ptype].subsample(n_classify)
            for k in range(4):
                stack.append(_rotate_unit(base, k))
                labels.append(ptype.rotated(k))
        self._stack = np.ascontiguousarray(np.stack(stack))
        self._labels = labels

    @classmethod
    def build(cls, eave_fraction: float = DEFAULT_EAVE_FRACTION, n: int = 1024, seed: int = 0,
              n_classify: int = 384, denoise: float = DENOISE_RADIUS) -> "PrototypeSet":
        clouds = {}
        for i, ptype in enumerate(CATALOG):
            pts = sample_primitive(ptype, n, seed + i, eave_fraction, surfaces="roof")
            clouds[ptype] = rectify_canonical(pts, base_z=0.0, angle_deg=0.0, denoise=denoise)
        return cls(clouds, n_classify, eave_fraction, denoise)

    def scores(self, cloud: CanonicalCloud) -> dict:
        """Best Chamfer score per (rotation-resolved) type."""
        q = np.ascontiguousarray(cloud.subsample(self.n_classify))
        d = kernels.chamfer_many(q, self._stack)
        best: dict = {}
        for label, score in zip(self._labels, d.tolist()):
            if label not in best or score < best[label]:
                best[label] = score
        return best

    def save(self, directory) -> None:
        """PLY per type (roof points) plus a JSON catalog."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for ptype in CATALOG:
            write_ply(self.clouds[ptype].roof, directory / f"{ptype.value}.ply")
            entries.append({"id": ptype.value, "family": ptype.family,
                            "directional": ptype.directional, "direction": ptype.direction,
                            "file": f"{ptype.value}.ply"})
        meta = {"eave_fraction": self.eave_fraction, "n_classify": self.n_classify,
                "denoise": self.denoise, "types": entries}
        (directory / "catalog.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, directory) -> "PrototypeSet":
        directory = Path(directory)
        meta = json.loads((directory / "catalog.json").read_text())
        clouds = {}
        for entry in meta["types"]:
            roof = read_ply(directory / entry["file"])
            clouds[PrimitiveType(entry["id"])] = rectify_canonical(roof, base_z=0.0, angle_deg=0.0)
        return cls(clouds, meta["n_classify"], meta["eave_fraction"], meta["denoise"])


def classify(cloud: CanonicalCloud, prototypes: PrototypeSet) -> tuple[PrimitiveType, float]:
    """Nearest prototype by symmetric Chamfer distance, minimised over the
    four quarter-turn rotations. Ties resolve to catalog order."""
    best = prototypes.scores(cloud)
    ptype = min(CATALOG, key=lambda t: (best[t], CATALOG.index(t)))
    return ptype, best[ptype]


class PrototypeLibrary:
    """Lazily built prototype sets keyed by quantised eave fraction."""

    def __init__(self, n: int = 1024, seed: int = 0, n_classify: int = 384, step: float = 0.05):
        self.n, self.seed, self.n_classify, self.step = n, seed, n_classify, step
        self._cache: dict[float, PrototypeSet] = {}

    def for_eave_fraction(self, e: float) -> PrototypeSet:
        key = round(min(0.95, max(0.0, round(e / self.step) * self.step)), 6)
        if key not in self._cache:
            self._cache[key] = PrototypeSet.build(key, self.n, self.seed, self.n_classify)
        return self._cache[key]


def catalog_json() -> str:
    return json.dumps([{"id": t.value, "family": t.family, "directional": t.directional,
                        "direction": t.direction} for t in CATALOG], indent=2)
