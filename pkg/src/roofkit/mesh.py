"""Watertight prism meshes for roof primitives and scene assembly."""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import HeightGrid, Mesh, MeshError, RotatedRect, SimTransform
from .primitives import (
    _GAMBREL_BREAK, _HIP_RUN, _MANSARD_RUN, _VAULT_ARC, PrimitiveType, RoofSpec, roof_shape,
)

DEFAULT_SEGMENTS = 16
MERGE_TOL = 1e-6
MIN_WALL = 1e-3  # metres; keeps zero-height eaves from collapsing wall triangles
CHORD_TOL = 0.1  # metres; a fifth of a 0.5 m cell and well under stereo height noise


def _extruded(axis: str, ts) -> tuple[np.ndarray, np.ndarray]:
    """Profile breakpoints ``ts`` along ``axis`` swept across the other axis."""
    ts = np.asarray(ts, dtype=np.float64)
    k = len(ts)
    a = np.concatenate([ts, ts])
    b = np.concatenate([np.zeros(k), np.ones(k)])
    uv = np.column_stack([b, a]) if axis == "v" else np.column_stack([a, b])
    tris = []
    for i in range(k - 1):
        tris += [(i, i + 1, k + i + 1), (i, k + i + 1, k + i)]
    return uv, np.array(tris, dtype=np.int64)


def _swap(uv: np.ndarray, tris: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return uv[:, ::-1].copy(), tris


def _roof_layout(ptype: PrimitiveType, segments: int) -> tuple[np.ndarray, np.ndarray]:
    """Roof vertices in the unit square and a triangulation on which the
    roof relief is exactly piecewise linear (cylinders: ``segments`` facets)."""
    fam = ptype.family
    if fam == "flat":
        return _extruded("u", [0.0, 1.0])
    if fam == "shed":
        return _extruded("u" if ptype.value.endswith("x") else "v", [0.0, 1.0])
    along_x = ptype.value.endswith("_x")
    across = "v" if along_x else "u"  # relief varies across the ridge
    if fam == "gable":
        return _extruded(across, [0.0, 0.5, 1.0])
    if fam == "gambrel":
        g = _GAMBREL_BREAK
        return _extruded(across, [0.0, g, 0.5, 1.0 - g, 1.0])
    if fam == "vault":
        if segments < 2:
            raise MeshError("vault needs at least 2 arc segments")
        return _extruded(across, _arc_stations(segments))
    corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    if fam == "pyramid":
        uv = np.array(corners + [(0.5, 0.5)])
        return uv, np.array([(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)], dtype=np.int64)
    if fam == "hip":
        r = _HIP_RUN
        uv = np.array(corners + [(r, 0.5), (1.0 - r, 0.5)])
        tris = np.array([(0, 1, 5), (0, 5, 4), (2, 3, 4), (2, 4, 5), (3, 0, 4), (1, 2, 5)],
                        dtype=np.int64)
        return (uv, tris) if along_x else _swap(uv, tris)
    if fam == "mansard":
        m = _MANSARD_RUN
        uv = np.array(corners + [(m, m), (1 - m, m), (1 - m, 1 - m), (m, 1 - m)])
        tris = [(4, 5, 6), (4, 6, 7)]
        for i in range(4):
            j = (i + 1) % 4
            tris += [(i, j, 4 + j), (i, 4 + j, 4 + i)]
        return uv, np.array(tris, dtype=np.int64)
    raise MeshError(f"unknown primitive type {ptype!r}")


def _arc_stations(segments: int) -> np.ndarray:
    """Cross-ridge positions of the vault facet edges: equal angular steps
    along the arc."""
    phi = np.linspace(-1.0, 1.0, segments + 1) * math.asin(_VAULT_ARC)
    ts = 0.5 + 0.5 * np.sin(phi) / _VAULT_ARC
    ts[0], ts[-1] = 0.0, 1.0
    if segments % 2 == 0:
        ts[segments // 2] = 0.5
    return ts


@functools.lru_cache(maxsize=None)
def _chord_error(segments: int) -> float:
    """Largest gap between the faceted and the true vault, per metre of rise."""
    ts = _arc_stations(segments)
    u = np.linspace(0.0, 1.0, 4001)
    exact = roof_shape(PrimitiveType.VAULT_X, 0.5, u)
    faceted = np.interp(u, ts, roof_shape(PrimitiveType.VAULT_X, 0.5, ts))
    return float(np.abs(faceted - exact).max())


def arc_segments(rise: float, max_segments: int = DEFAULT_SEGMENTS, tol: float = CHORD_TOL) -> int:
    """Fewest arc segments (even, at most ``max_segments``) keeping a vault
    of the given rise within ``tol`` metres of its faceted mesh."""
    for k in range(2, max_segments, 2):
        if rise * _chord_error(k) <= tol:
            return k
    return max_segments


def _ccw(uv, tri) -> tuple:
    (x0, y0), (x1, y1), (x2, y2) = uv[list(tri)]
    return tri if (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0) > 0 else (tri[0], tri[2], tri[1])


def _prism(uv: np.ndarray, roof_tris: np.ndarray, top: np.ndarray, bottom: float) -> tuple:
    """Close a roof over the unit square into a prism: walls plus a bottom.

    Returns ``(local_vertices, faces)`` with x, y in the unit square,
    outward-oriented faces and shared vertices.
    """
    n = len(uv)
    verts = np.column_stack([uv, top])
    base = np.array([[0.0, 0.0, bottom], [1.0, 0.0, bottom], [1.0, 1.0, bottom], [0.0, 1.0, bottom]])
    verts = np.vstack([verts, base])
    faces = [_ccw(uv, tuple(t)) for t in roof_tris.tolist()]
    b = [n, n + 1, n + 2, n + 3]
    faces += [(b[0], b[2], b[1]), (b[0], b[3], b[2])]  # faces down
    u, v = uv[:, 0], uv[:, 1]
    sides = [  # (selector, sort key, outward normal) walking the square CCW
        (np.isclose(v, 0.0), u, (0.0, -1.0)),
        (np.isclose(u, 1.0), v, (1.0, 0.0)),
        (np.isclose(v, 1.0), -u, (0.0, 1.0)),
        (np.isclose(u, 0.0), -v, (-1.0, 0.0)),
    ]
    for k, (sel, key, normal) in enumerate(sides):
        idx = np.nonzero(sel)[0]
        idx = idx[np.argsort(key[idx], kind="stable")]
        a, c = b[k], b[(k + 1) % 4]
        ring = [a, c] + idx[::-1].tolist()  # bottom edge, then the roof edge back
        for i in range(1, len(ring) - 1):
            tri = (a, ring[i], ring[i + 1])
            p = verts[list(tri)]
            nrm = np.cross(p[1] - p[0], p[2] - p[0])
            if nrm[0] * normal[0] + nrm[1] * normal[1] < 0:
                tri = (tri[0], tri[2], tri[1])
            faces.append(tri)
    return verts, np.array(faces, dtype=np.int64)


def primitive_mesh(ptype, spec: RoofSpec, segments: int = DEFAULT_SEGMENTS) -> Mesh:
    """Closed, outward-oriented mesh of a primitive over the unit footprint.

    x and y span ``[0, 1]``; the bottom sits at z = 0 and the roof at the
    heights of ``spec`` (eave and ridge, metres).
    """
    ptype = PrimitiveType(ptype)
    if spec.primitive_type is not ptype:
        spec = RoofSpec(ptype, spec.eave_height, spec.ridge_height)
    uv, tris = _roof_layout(ptype, segments)
    top = _roof_heights(spec, uv, 0.0, 0.0)
    verts, faces = _prism(uv, tris, top, 0.0)
    return Mesh(verts, faces)


def _roof_heights(spec: RoofSpec, uv, base: float, datum: float) -> np.ndarray:
    shape = roof_shape(spec.primitive_type, uv[:, 0], uv[:, 1])
    top = base + spec.eave_height + (spec.ridge_height - spec.eave_height) * shape
    return np.maximum(top, datum + MIN_WALL)


@dataclass(frozen=True)
class SceneSection:
    """One placed primitive: the unit primitive is stretched over
    ``footprint``, lifted to ``base_elevation`` (roof heights are relative
    to it), closed down to the scene datum and finally moved by
    ``transform``."""

    footprint: RotatedRect
    base_elevation: float
    roof: RoofSpec
    transform: SimTransform = field(default_factory=SimTransform.identity)

    @property
    def primitive_type(self) -> PrimitiveType:
        return self.roof.primitive_type

    def to_dict(self) -> dict:
        return {"footprint": self.footprint.to_dict(), "base_elevation": self.base_elevation,
                "roof": self.roof.to_dict(), "transform": self.transform.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSection":
        return cls(RotatedRect.from_dict(d["footprint"]), float(d["base_elevation"]),
                   RoofSpec.from_dict(d["roof"]), SimTransform.from_dict(d["transform"]))

    @classmethod
    def from_fit(cls, fit) -> "SceneSection":
        """From a :class:`roofkit.fit.SectionFit`."""
        return cls(fit.footprint, fit.base_elevation, fit.roof, fit.transform)


@dataclass(frozen=True)
class SceneModel:
    sections: tuple[SceneSection, ...]
    datum: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "sections", tuple(self.sections))
        for i, s in enumerate(self.sections):
            if s.base_elevation < self.datum - 0.5:
                raise ValueError(f"section {i}: base elevation {s.base_elevation} is more than "
                                 f"0.5 m below the datum {self.datum}")

    def to_dict(self) -> dict:
        return {"datum": self.datum, "sections": [s.to_dict() for s in self.sections]}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneModel":
        return cls(tuple(SceneSection.from_dict(s) for s in d["sections"]), float(d["datum"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "SceneModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def section_mesh(section: SceneSection, datum: float, segments: int = DEFAULT_SEGMENTS,
                 section_id: int = 0, chord_tol: float = CHORD_TOL) -> Mesh:
    """World mesh of one section. Vaults use up to ``segments`` arc facets,
    only as many as needed to stay within ``chord_tol`` of the arc (0 forces
    the full count)."""
    if section.primitive_type.family == "vault":
        segments = arc_segments(section.roof.ridge_height - section.roof.eave_height, segments, chord_tol)
    uv, tris = _roof_layout(section.primitive_type, segments)
    top = _roof_heights(section.roof, uv, section.base_elevation, datum)
    verts, faces = _prism(uv, tris, top, datum)
    fp = section.footprint
    a, b = fp.half_extents
    lx, ly = (verts[:, 0] - 0.5) * 2 * a, (verts[:, 1] - 0.5) * 2 * b
    t = math.radians(fp.angle_deg)
    c, s = math.cos(t), math.sin(t)
    world = np.column_stack([fp.center[0] + c * lx - s * ly, fp.center[1] + s * lx + c * ly,
                             verts[:, 2]])
    return Mesh(section.transform.apply(world), faces, np.full(len(faces), section_id))


def assemble_scene(model: SceneModel, segments: int = DEFAULT_SEGMENTS,
                   tol: float = MERGE_TOL, chord_tol: float = CHORD_TOL) -> Mesh:
    """All section meshes, concatenated, with coincident vertices welded.

    ``section_ids`` on the result records which section each face came from.
    """
    parts = [section_mesh(s, model.datum, segments, i, chord_tol)
             for i, s in enumerate(model.sections)]
    return Mesh.concatenate(parts).merged(tol)


def parts_watertight(mesh: Mesh) -> bool:
    """Watertightness of each section's faces on their own.

    Welding makes neighbouring sections share vertices (and edges along
    common walls), so the check runs per section component.
    """
    for sid in np.unique(mesh.section_ids):
        if not Mesh(mesh.vertices, mesh.faces[mesh.section_ids == sid]).is_watertight():
            return False
    return True


def dense_face_count(grid: HeightGrid) -> int:
    """Faces of a 2-triangles-per-cell triangulation of ``grid``."""
    return 2 * grid.width * grid.height


def scene_from_building(building) -> SceneModel:
    """Ground-truth scene of a simulated :class:`roofkit.buildsim.BuildingModel`."""
    from .buildsim import section_rect

    sections = [SceneSection(section_rect(building, i), building.datum + s.base_elevation, s.roof)
                for i, s in enumerate(building.sections)]
    return SceneModel(tuple(sections), building.datum)
