"""Ground-truth building synthesis.

A region is cut quadtree-style into random rectangles, a connected subset is
kept as the footprint, rectangles sharing a full edge are merged, and each
surviving section gets a random height and roof primitive.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import HeightGrid, RotatedRect
from .primitives import CATALOG, PrimitiveType, RoofSpec, surface_height

EDGE_TOL = 1e-9
GROUND_LABEL = -1


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def aspect(self) -> float:
        return max(self.width, self.height) / min(self.width, self.height)

    def overlap_area(self, other: "Rect") -> float:
        w = min(self.xmax, other.xmax) - max(self.xmin, other.xmin)
        h = min(self.ymax, other.ymax) - max(self.ymin, other.ymin)
        return max(w, 0.0) * max(h, 0.0)

    def touches(self, other: "Rect") -> bool:
        """Share a boundary segment of positive length."""
        ov_y = min(self.ymax, other.ymax) - max(self.ymin, other.ymin)
        ov_x = min(self.xmax, other.xmax) - max(self.xmin, other.xmin)
        vertical = (abs(self.xmax - other.xmin) <= EDGE_TOL or abs(other.xmax - self.xmin) <= EDGE_TOL)
        horizontal = (abs(self.ymax - other.ymin) <= EDGE_TOL or abs(other.ymax - self.ymin) <= EDGE_TOL)
        return (vertical and ov_y > EDGE_TOL) or (horizontal and ov_x > EDGE_TOL)

    def shares_full_edge(self, other: "Rect") -> bool:
        same_y = abs(self.ymin - other.ymin) <= EDGE_TOL and abs(self.ymax - other.ymax) <= EDGE_TOL
        same_x = abs(self.xmin - other.xmin) <= EDGE_TOL and abs(self.xmax - other.xmax) <= EDGE_TOL
        if same_y and (abs(self.xmax - other.xmin) <= EDGE_TOL or abs(other.xmax - self.xmin) <= EDGE_TOL):
            return True
        return same_x and (abs(self.ymax - other.ymin) <= EDGE_TOL or abs(other.ymax - self.ymin) <= EDGE_TOL)

    def union_bbox(self, other: "Rect") -> "Rect":
        return Rect(min(self.xmin, other.xmin), min(self.ymin, other.ymin),
                    max(self.xmax, other.xmax), max(self.ymax, other.ymax))

    def to_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]


@dataclass(frozen=True)
class Section:
    footprint: Rect
    roof: RoofSpec
    base_elevation: float = 0.0

    def to_dict(self) -> dict:
        return {"footprint": self.footprint.to_list(), "base_elevation": self.base_elevation,
                "roof": self.roof.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Section":
        return cls(Rect(*d["footprint"]), RoofSpec.from_dict(d["roof"]), d.get("base_elevation", 0.0))


@dataclass(frozen=True)
class BuildingModel:
    """Sections in the building's local frame; ``global_rotation`` (degrees,
    about the local origin) is applied only when rasterizing."""

    sections: tuple[Section, ...]
    global_rotation: float = 0.0
    datum: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "sections", tuple(self.sections))
        if not 0.0 <= self.global_rotation <= 45.0:
            raise ValueError(f"global_rotation must be in [0, 45], got {self.global_rotation}")
        fps = [s.footprint for s in self.sections]
        for i in range(len(fps)):
            for j in range(i + 1, len(fps)):
                if fps[i].overlap_area(fps[j]) > 1e-12:
                    raise ValueError(f"sections {i} and {j} overlap")

    def to_dict(self) -> dict:
        return {"global_rotation": self.global_rotation, "datum": self.datum,
                "sections": [s.to_dict() for s in self.sections]}

    @classmethod
    def from_dict(cls, d: dict) -> "BuildingModel":
        return cls(tuple(Section.from_dict(s) for s in d["sections"]), d["global_rotation"], d["datum"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "BuildingModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# Footprint synthesis
# --------------------------------------------------------------------------

def partition_region(region: Rect, min_side: float, max_depth: int, seed: int) -> list[Rect]:
    """Random quadtree tiling of ``region``.

    The root is split at a point drawn uniformly from the middle 60% of each
    axis (kept at least ``min_side`` from the borders); each child recurses
    with probability 0.5 until ``max_depth`` or a side drops below
    ``2 * min_side``.
    """
    if min_side <= 0:
        raise ValueError("min_side must be > 0")
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    rng = np.random.default_rng(seed)

    def split(r: Rect, depth: int) -> list[Rect]:
        if depth >= max_depth or r.width < 2 * min_side or r.height < 2 * min_side:
            return [r]
        mx = max(0.2 * r.width, min_side)
        my = max(0.2 * r.height, min_side)
        sx = rng.uniform(r.xmin + mx, r.xmax - mx)
        sy = rng.uniform(r.ymin + my, r.ymax - my)
        children = [Rect(r.xmin, r.ymin, sx, sy), Rect(sx, r.ymin, r.xmax, sy),
                    Rect(r.xmin, sy, sx, r.ymax), Rect(sx, sy, r.xmax, r.ymax)]
        out = []
        for ch in children:
            if rng.random() < 0.5:
                out.extend(split(ch, depth + 1))
            else:
                out.append(ch)
        return out

    return split(region, 0)


def select_building_rects(tiles: list[Rect], keep_fraction: float, seed: int) -> list[Rect]:
    """Grow an edge-connected subset of ``max(1, round(keep_fraction * n))``
    tiles from a random seed tile, adding a uniformly chosen frontier tile
    at each step. Returned in input order."""
    if not tiles:
        raise ValueError("tiles must be non-empty")
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must be in (0, 1]")
    n = len(tiles)
    target = max(1, int(round(keep_fraction * n)))
    rng = np.random.default_rng(seed)
    adj = [[j for j in range(n) if j != i and tiles[i].touches(tiles[j])] for i in range(n)]
    chosen = {int(rng.integers(n))}
    while len(chosen) < target:
        frontier = sorted({j for i in chosen for j in adj[i]} - chosen)
        if not frontier:
            break
        chosen.add(frontier[int(rng.integers(len(frontier)))])
    return [tiles[i] for i in sorted(chosen)]


def merge_rects(rects: list[Rect]) -> list[Rect]:
    """Merge pairs that share an identical full edge until none remain.
    Output sorted by (xmin, ymin)."""
    rects = list(rects)
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            if rects[i].overlap_area(rects[j]) > 1e-12:
                raise ValueError(f"rectangles {i} and {j} overlap")
    merged = True
    while merged:
        merged = False
        rects.sort(key=lambda r: (r.xmin, r.ymin, r.xmax, r.ymax))
        for i in range(len(rects)):
            for j in range(i + 1, len(rects)):
                if rects[i].shares_full_edge(rects[j]):
                    new = rects[i].union_bbox(rects[j])
                    rects = [r for k, r in enumerate(rects) if k not in (i, j)] + [new]
                    merged = True
                    break
            if merged:
                break
    return sorted(rects, key=lambda r: (r.xmin, r.ymin, r.xmax, r.ymax))


def compatible_types(rect: Rect) -> list[PrimitiveType]:
    """Catalog types plausible on this footprint (aspect-ratio limits)."""
    aspect = rect.aspect
    out = []
    for t in CATALOG:
        fam = t.family
        if fam in ("vault", "pyramid") and aspect > 2.0:
            continue
        if fam in ("gable", "hip", "shed", "gambrel", "mansard") and aspect > 6.0:
            continue
        out.append(t)
    return out


def assign_roofs(rects: list[Rect], height_range: tuple[float, float], seed: int,
                 datum: float = 0.0, rise_range: tuple[float, float] = (0.0, 0.5)) -> BuildingModel:
    """Random eave height, compatible primitive type and ridge rise per
    rectangle, plus a global rotation in [0, 45] degrees.

    Pitched roofs rise ``uniform(*rise_range) * eave_height`` above the eaves.
    """
    if not rects:
        raise ValueError("rects must be non-empty")
    lo, hi = height_range
    if not 0 < lo < hi:
        raise ValueError("height_range must satisfy 0 < min < max")
    rng = np.random.default_rng(seed)
    sections = []
    for r in rects:
        types = compatible_types(r)
        ptype = types[int(rng.integers(len(types)))]
        eave = float(rng.uniform(lo, hi))
        rise = float(rng.uniform(*rise_range))
        ridge = eave if ptype is PrimitiveType.FLAT else eave * (1.0 + rise)
        sections.append(Section(r, RoofSpec(ptype, eave, ridge)))
    rotation = float(rng.uniform(0.0, 45.0))
    return BuildingModel(tuple(sections), rotation, datum)


@dataclass(frozen=True)
class SimulationParams:
    region_size: tuple[float, float] = (40.0, 40.0)
    min_side: float = 5.0
    max_depth: int = 3
    keep_fraction: float = 0.5
    height_range: tuple[float, float] = (4.0, 16.0)
    rise_range: tuple[float, float] = (0.0, 0.5)
    cell_size: float = 0.5
    padding: float = 6.0
    max_sections: int = 5
    datum: float = 0.0

    def __post_init__(self):
        if self.min_side <= 0 or self.cell_size <= 0 or self.padding < 0:
            raise ValueError("min_side and cell_size must be > 0, padding >= 0")
        if not 0 < self.keep_fraction <= 1:
            raise ValueError("keep_fraction must be in (0, 1]")
        if self.max_sections < 1 or self.max_depth < 0:
            raise ValueError("max_sections >= 1 and max_depth >= 0 required")
        if not 0 < self.height_range[0] < self.height_range[1]:
            raise ValueError("height_range must satisfy 0 < min < max")


@dataclass(frozen=True)
class SimulationTrace:
    """Intermediate stages of one simulated building."""

    tiles: tuple[Rect, ...]
    selected: tuple[Rect, ...]
    merged: tuple[Rect, ...]
    model: BuildingModel


def simulation_trace(params: SimulationParams, seed: int, max_tries: int = 100) -> SimulationTrace:
    """Partition, select, merge and assign roofs; retry with derived seeds
    until the building has at most ``params.max_sections`` sections."""
    region = Rect(0.0, 0.0, *params.region_size)
    ss = np.random.SeedSequence(seed)
    for child in ss.spawn(max_tries):
        s = [int(v) for v in child.generate_state(3)]
        tiles = partition_region(region, params.min_side, params.max_depth, s[0])
        selected = select_building_rects(tiles, params.keep_fraction, s[1])
        rects = merge_rects(selected)
        if len(rects) <= params.max_sections:
            model = assign_roofs(rects, params.height_range, s[2], params.datum, params.rise_range)
            return SimulationTrace(tuple(tiles), tuple(selected), tuple(rects), model)
    raise RuntimeError(f"no building with <= {params.max_sections} sections in {max_tries} tries")


def simulate_building(params: SimulationParams, seed: int, max_tries: int = 100) -> BuildingModel:
    return simulation_trace(params, seed, max_tries).model


def check_trace(trace: SimulationTrace, region: Rect, tol: float = 1e-9) -> list[str]:
    """Invariant violations of a simulation trace (empty when all hold)."""
    problems = []
    tiles = list(trace.tiles)
    if abs(sum(t.area for t in tiles) - region.area) > tol * max(1.0, region.area):
        problems.append("tiles do not sum to the region area")
    for i, t in enumerate(tiles):
        if (t.xmin < region.xmin - tol or t.ymin < region.ymin - tol
                or t.xmax > region.xmax + tol or t.ymax > region.ymax + tol):
            problems.append(f"tile {i} leaves the region")
        for j in range(i + 1, len(tiles)):
            if t.overlap_area(tiles[j]) > tol:
                problems.append(f"tiles {i} and {j} overlap")
    if list(merge_rects(list(trace.merged))) != list(trace.merged):
        problems.append("merge is not idempotent")
    if abs(sum(r.area for r in trace.merged) - sum(r.area for r in trace.selected)) > tol * region.area:
        problems.append("merge changed the total area")
    return problems


# --------------------------------------------------------------------------
# Ideal rasterization
# --------------------------------------------------------------------------

def _rotate(x, y, deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return c * x - s * y, s * x + c * y


def model_extent(model: BuildingModel) -> tuple[float, float, float, float]:
    corners = []
    for s in model.sections:
        f = s.footprint
        for x, y in ((f.xmin, f.ymin), (f.xmax, f.ymin), (f.xmax, f.ymax), (f.xmin, f.ymax)):
            corners.append(_rotate(x, y, model.global_rotation))
    c = np.array(corners)
    return c[:, 0].min(), c[:, 1].min(), c[:, 0].max(), c[:, 1].max()


def section_rect(model: BuildingModel, index: int) -> RotatedRect:
    """World footprint of one section."""
    f = model.sections[index].footprint
    cx, cy = _rotate((f.xmin + f.xmax) / 2, (f.ymin + f.ymax) / 2, model.global_rotation)
    return RotatedRect((cx, cy), (f.width / 2, f.height / 2), model.global_rotation)


def grid_for_model(model: BuildingModel, cell_size: float, padding: float) -> HeightGrid:
    """Empty (datum-valued) grid covering the rotated model plus padding."""
    x0, y0, x1, y1 = model_extent(model)
    ox = (math.floor((x0 - padding) / cell_size) + 0.5) * cell_size
    oy = (math.floor((y0 - padding) / cell_size) + 0.5) * cell_size
    w = int(math.ceil((x1 + padding - ox) / cell_size)) + 1
    h = int(math.ceil((y1 + padding - oy) / cell_size)) + 1
    return HeightGrid(np.full((h, w), model.datum), cell_size, (ox, oy))


def rasterize_ideal(model: BuildingModel, cell_size: float = 0.5, padding: float = 6.0,
                    template: HeightGrid | None = None):
    """Analytic height map of ``model``.

    Returns ``(grid, mask, labels)``: elevations (datum outside), the
    building mask and the per-cell section index (``-1`` on the ground).
    Sections claim cell centres half-open (``min <= p < max``).
    """
    grid = template if template is not None else grid_for_model(model, cell_size, padding)
    xs, ys = grid.cell_centers()
    lx, ly = _rotate(xs, ys, -model.global_rotation)
    z = np.full(grid.shape, model.datum, dtype=np.float64)
    labels = np.full(grid.shape, GROUND_LABEL, dtype=np.int64)
    for i, s in enumerate(model.sections):
        f = s.footprint
        inside = ((lx >= f.xmin - EDGE_TOL) & (lx < f.xmax - EDGE_TOL)
                  & (ly >= f.ymin - EDGE_TOL) & (ly < f.ymax - EDGE_TOL) & (labels == GROUND_LABEL))
        if not inside.any():
            continue
        u = (lx[inside] - f.xmin) / f.width
        v = (ly[inside] - f.ymin) / f.height
        h = surface_height(s.roof.primitive_type, s.roof, u, v)
        z[inside] = model.datum + s.base_elevation + s.roof.ridge_height * h
        labels[inside] = i
    return grid.with_values(z), labels >= 0, labels
