"""Shared containers (height grids, similarity transforms, triangle meshes)
and their file formats: ESRI ASCII grids, ASCII PLY point clouds and
Wavefront OBJ meshes.

Point clouds are plain ``(n, 3)`` float64 arrays and binary masks are
boolean arrays shaped like the grid they annotate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_NODATA = -9999.0


class GridFormatError(ValueError):
    """Malformed ASCII grid. ``line`` is the 1-based offending line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyCloudError(ValueError):
    pass


class MeshError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# Height grid
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HeightGrid:
    """Regular raster of elevations (meters).

    ``values[r, c]`` is the elevation of the cell centred at
    ``(origin[0] + c * cell_size, origin[1] + r * cell_size)``; row index
    grows with y.
    """

    values: np.ndarray
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"grid values must be 2-D, got shape {v.shape}")
        if not (self.cell_size > 0 and math.isfinite(self.cell_size)):
            raise ValueError(f"cell_size must be > 0, got {self.cell_size}")
        bad = ~np.isfinite(v) & (v != self.nodata)
        if bad.any():
            raise ValueError("grid contains non-finite values that are not nodata")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "cell_size", float(self.cell_size))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "nodata", float(self.nodata))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def valid(self) -> np.ndarray:
        return self.values != self.nodata

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """``(x, y)`` arrays of cell-centre coordinates, each shaped like the grid."""
        xs = self.origin[0] + np.arange(self.width) * self.cell_size
        ys = self.origin[1] + np.arange(self.height) * self.cell_size
        return np.meshgrid(xs, ys)

    def world_to_cell(self, x, y):
        """Fractional (row, col) of world coordinates."""
        return ((np.asarray(y) - self.origin[1]) / self.cell_size,
                (np.asarray(x) - self.origin[0]) / self.cell_size)

    def with_values(self, values: np.ndarray) -> "HeightGrid":
        return HeightGrid(values, self.cell_size, self.origin, self.nodata)

    def __eq__(self, other):
        if not isinstance(other, HeightGrid):
            return NotImplemented
        return (self.cell_size == other.cell_size and self.origin == other.origin
                and self.nodata == other.nodata
                and np.array_equal(self.values, other.values))

    __hash__ = None


def _fmt(v: float) -> str:
    s = f"{v:.6f}".rstrip("0")
    if s.endswith("."):
        s += "0"
    if s == "-0.0":
        s = "0.0"
    return s


def write_grid(grid: HeightGrid, path) -> None:
    """Write an ESRI ASCII grid with 6-decimal values.

    Cell-centre registration (``xllcenter``/``yllcenter``) is used so the
    origin round-trips exactly. The first data row is the highest y row.
    """
    lines = [
        f"ncols {grid.width}",
        f"nrows {grid.height}",
        f"xllcenter {grid.origin[0]!r}",
        f"yllcenter {grid.origin[1]!r}",
        f"cellsize {grid.cell_size!r}",
        f"NODATA_value {_fmt(grid.nodata)}",
    ]
    for row in grid.values[::-1]:
        lines.append(" ".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


_HEADER_KEYS = {"ncols", "nrows", "xllcorner", "yllcorner", "xllcenter",
                "yllcenter", "cellsize", "nodata_value"}


def read_grid(path) -> HeightGrid:
    text = Path(path).read_text()
    lines = text.splitlines()
    header: dict[str, float] = {}
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        key = parts[0].lower()
        if key not in _HEADER_KEYS:
            break
        if len(parts) != 2:
            raise GridFormatError(f"bad header record {lines[i]!r}", i + 1)
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise GridFormatError(f"non-numeric header value {parts[1]!r}", i + 1) from None
        i += 1
    for key in ("ncols", "nrows", "cellsize"):
        if key not in header:
            raise GridFormatError(f"missing header field {key!r}", i + 1)
    ncols, nrows = header["ncols"], header["nrows"]
    if ncols != int(ncols) or nrows != int(nrows) or ncols < 1 or nrows < 1:
        raise GridFormatError("ncols/nrows must be positive integers", 1)
    ncols, nrows = int(ncols), int(nrows)
    cs = header["cellsize"]
    if not cs > 0:
        raise GridFormatError("cellsize must be positive", 1)
    if "xllcenter" in header:
        ox = header["xllcenter"]
    elif "xllcorner" in header:
        ox = header["xllcorner"] + cs / 2
    else:
        raise GridFormatError("missing xllcorner/xllcenter", i + 1)
    if "yllcenter" in header:
        oy = header["yllcenter"]
    elif "yllcorner" in header:
        oy = header["yllcorner"] + cs / 2
    else:
        raise GridFormatError("missing yllcorner/yllcenter", i + 1)
    nodata = header.get("nodata_value", DEFAULT_NODATA)

    rows = []
    for j in range(i, len(lines)):
        parts = lines[j].split()
        if not parts:
            continue
        if len(parts) != ncols:
            raise GridFormatError(f"expected {ncols} values, found {len(parts)}", j + 1)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            bad = next(p for p in parts if not _is_float(p))
            raise GridFormatError(f"non-numeric cell {bad!r}", j + 1) from None
        if len(rows) > nrows:
            raise GridFormatError(f"more than {nrows} data rows", j + 1)
    if len(rows) != nrows:
        raise GridFormatError(f"expected {nrows} data rows, found {len(rows)}", len(lines))
    values = np.array(rows[::-1], dtype=np.float64)
    try:
        return HeightGrid(values, cs, (ox, oy), nodata)
    except ValueError as e:
        raise GridFormatError(str(e)) from None


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_label_grid(labels: np.ndarray, path, cell_size: float, origin=(0.0, 0.0)) -> None:
    """Integer label rasters (masks, section ids) share the grid format."""
    write_grid(HeightGrid(labels.astype(np.float64), cell_size, origin), path)


def read_label_grid(path) -> np.ndarray:
    g = read_grid(path)
    return np.rint(g.values).astype(np.int64)


# --------------------------------------------------------------------------
# Point clouds
# --------------------------------------------------------------------------

def as_points(points, require_nonempty: bool = True) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"point cloud must be (n, 3), got {p.shape}")
    if require_nonempty and len(p) == 0:
        raise EmptyCloudError("point cloud is empty")
    if not np.isfinite(p).all():
        raise ValueError("point cloud contains non-finite coordinates")
    return p


def grid_to_points(grid: HeightGrid, mask: np.ndarray, require_nonempty: bool = True) -> np.ndarray:
    """One point per masked, valid cell at its centre and elevation."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.shape:
        raise ValueError(f"mask shape {mask.shape} != grid shape {grid.shape}")
    sel = mask & grid.valid()
    if require_nonempty and not sel.any():
        raise EmptyCloudError("mask selects no valid cells")
    r, c = np.nonzero(sel)
    return np.column_stack([
        grid.origin[0] + c * grid.cell_size,
        grid.origin[1] + r * grid.cell_size,
        grid.values[r, c],
    ])


def write_ply(points: np.ndarray, path) -> None:
    points = as_points(points, require_nonempty=False)
    head = ["ply", "format ascii 1.0", f"element vertex {len(points)}",
            "property double x", "property double y", "property double z", "end_header"]
    body = [f"{x!r} {y!r} {z!r}" for x, y, z in points.tolist()]
    Path(path).write_text("\n".join(head + body) + "\n")


def read_ply(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n = None
    for i, line in enumerate(lines):
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        if line.strip() == "end_header":
            break
    else:
        raise ValueError(f"{path}: missing end_header")
    if n is None:
        raise ValueError(f"{path}: missing vertex element")
    data = [list(map(float, ln.split()[:3])) for ln in lines[i + 1:i + 1 + n]]
    return np.array(data, dtype=np.float64).reshape(n, 3)


# --------------------------------------------------------------------------
# Similarity transform
# --------------------------------------------------------------------------

def rot_z(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class SimTransform:
    """``p -> scale * rotation @ p + translation``."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not self.scale > 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1) > 1e-9:
            raise ValueError("rotation is not in SO(3)")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls) -> "SimTransform":
        return cls()

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation

    def compose(self, other: "SimTransform") -> "SimTransform":
        """``self ∘ other`` (apply ``other`` first)."""
        return SimTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "SimTransform":
        rt = self.rotation.T
        return SimTransform(1.0 / self.scale, rt, -(rt @ self.translation) / self.scale)

    def rotation_angle_deg(self) -> float:
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return math.degrees(math.acos(min(1.0, max(-1.0, c))))

    def to_dict(self) -> dict:
        return {"scale": self.scale, "rotation": self.rotation.tolist(),
                "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SimTransform":
        return cls(d["scale"], np.array(d["rotation"]), np.array(d["translation"]))


# --------------------------------------------------------------------------
# Mesh
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    section_ids: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        sid = (np.zeros(len(f), dtype=np.int64) if self.section_ids is None
               else np.asarray(self.section_ids, dtype=np.int64).reshape(-1))
        if len(sid) != len(f):
            raise MeshError("section_ids length must equal face count")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))
        object.__setattr__(self, "section_ids", _frozen(sid))

    @classmethod
    def empty(cls) -> "Mesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def validate(self) -> None:
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise MeshError("face index out of range")

    def edges(self) -> np.ndarray:
        """Undirected unique edges as sorted index pairs."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def euler_characteristic(self) -> int:
        used = np.unique(self.faces) if len(self.faces) else np.zeros(0)
        return len(used) - len(self.edges()) + self.n_faces

    def is_watertight(self) -> bool:
        """Every directed edge is matched by exactly one opposite edge."""
        if not len(self.faces):
            return True
        f = self.faces
        d = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        if (d[:, 0] == d[:, 1]).any():
            return False
        und, counts = np.unique(np.sort(d, axis=1), axis=0, return_counts=True)
        if (counts != 2).any():
            return False
        fwd = {tuple(e) for e in d.tolist()}
        return len(fwd) == len(d) and all((b, a) in fwd for a, b in fwd)

    def face_areas(self) -> np.ndarray:
        t = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def signed_volume(self) -> float:
        t = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    def transformed(self, tf: SimTransform) -> "Mesh":
        return Mesh(tf.apply(self.vertices), self.faces, self.section_ids)

    def merged(self, tol: float = 1e-6) -> "Mesh":
        """Weld vertices that coincide within ``tol`` and drop collapsed faces."""
        if not len(self.vertices):
            return self
        key = np.round(self.vertices / tol).astype(np.int64)
        _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
        inverse = inverse.reshape(-1)
        # keep first-seen vertex order so output is deterministic and stable
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        verts = self.vertices[first[order]]
        faces = rank[inverse[self.faces]]
        keep = ((faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
                & (faces[:, 2] != faces[:, 0]))
        return Mesh(verts, faces[keep], self.section_ids[keep])

    @staticmethod
    def concatenate(meshes) -> "Mesh":
        meshes = list(meshes)
        if not meshes:
            return Mesh.empty()
        verts, faces, sids, off = [], [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            faces.append(m.faces + off)
            sids.append(m.section_ids)
            off += len(m.vertices)
        return Mesh(np.concatenate(verts), np.concatenate(faces), np.concatenate(sids))


def write_mesh_obj(mesh: Mesh, path) -> tuple[int, int]:
    """Write ``v``/``f`` records (1-based) and return ``(vertex_count, face_count)``.

    Faces are grouped by section with ``g section_<id>`` records.
    """
    mesh.validate()
    out = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices.tolist()]
    current = None
    for (a, b, c), sid in zip(mesh.faces.tolist(), mesh.section_ids.tolist()):
        if sid != current:
            out.append(f"g section_{sid}")
            current = sid
        out.append(f"f {a + 1} {b + 1} {c + 1}")
    Path(path).write_text("\n".join(out) + ("\n" if out else ""))
    return mesh.n_vertices, mesh.n_faces


def read_mesh_obj(path) -> Mesh:
    verts, faces, sids = [], [], []
    sid = 0
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
                sids.append(sid)
        elif parts[0] == "g" and len(parts) > 1 and parts[1].startswith("section_"):
            sid = int(parts[1].split("_", 1)[1])
    mesh = Mesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3),
                np.array(sids, dtype=np.int64))
    mesh.validate()
    return mesh


# --------------------------------------------------------------------------
# Rotated rectangle
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RotatedRect:
    """Rectangle of half-extents ``(a, b)`` rotated by ``angle_deg`` about its centre."""

    center: tuple[float, float]
    half_extents: tuple[float, float]
    angle_deg: float = 0.0

    def __post_init__(self):
        if not (self.half_extents[0] > 0 and self.half_extents[1] > 0):
            raise ValueError(f"half extents must be positive, got {self.half_extents}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "half_extents",
                           (float(self.half_extents[0]), float(self.half_extents[1])))
        object.__setattr__(self, "angle_deg", float(self.angle_deg))

    @property
    def area(self) -> float:
        return 4.0 * self.half_extents[0] * self.half_extents[1]

    def to_local(self, x, y):
        a = math.radians(self.angle_deg)
        c, s = math.cos(a), math.sin(a)
        dx, dy = np.asarray(x) - self.center[0], np.asarray(y) - self.center[1]
        return c * dx + s * dy, -s * dx + c * dy

    def contains(self, x, y, eps: float = 1e-9):
        """Half-open containment, so rectangles sharing an edge never both
        claim a cell centre lying on it."""
        lx, ly = self.to_local(x, y)
        a, b = self.half_extents
        return (lx >= -a - eps) & (lx < a - eps) & (ly >= -b - eps) & (ly < b - eps)

    def distance(self, x, y):
        """Euclidean distance to the rectangle (0 inside)."""
        lx, ly = self.to_local(x, y)
        a, b = self.half_extents
        dx = np.maximum(np.abs(lx) - a, 0.0)
        dy = np.maximum(np.abs(ly) - b, 0.0)
        return np.hypot(dx, dy)

    def corners(self) -> np.ndarray:
        """Counter-clockwise corners, starting at local ``(-a, -b)``."""
        a, b = self.half_extents
        loc = np.array([[-a, -b], [a, -b], [a, b], [-a, b]])
        t = math.radians(self.angle_deg)
        r = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        return loc @ r.T + np.array(self.center)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "half_extents": list(self.half_extents),
                "angle_deg": self.angle_deg}

    @classmethod
    def from_dict(cls, d: dict) -> "RotatedRect":
        return cls(tuple(d["center"]), tuple(d["half_extents"]), d["angle_deg"])
