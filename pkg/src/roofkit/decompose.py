"""Greedy cascaded decomposition of a building height map into rotated
rectangular sections.

The building orientation is estimated once from the outline gradients. The
map is resampled into that frame, where candidate rectangle sides are
restricted to an arrangement of cut lines (outline transitions and height
step edges). Each cascade step picks the arrangement rectangle of maximum
IoU against the residual mask, subject to two plausibility rules: every
arrangement cell it spans is at least half residual, and no detected step
wall runs through it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import HeightGrid, RotatedRect

DEFAULT_ANGLE_SET = (0.0, 5.0, -5.0, 10.0, -10.0, 15.0, -15.0)


class DecompositionError(RuntimeError):
    pass


@dataclass(frozen=True)
class DecomposeParams:
    percentile: float = 10.0
    mask_threshold: float = 2.0
    mask_edge_fraction: float = 0.7
    stop_residual: float = 0.01
    min_section_cells: int = 25
    min_side_cells: int = 8
    step_threshold: float = 0.3
    min_line_evidence: int = 4
    line_nms: int = 2
    wall_fraction: float = 0.5
    min_wall_pixels: int = 3
    cell_fill: float = 0.5
    angle_set: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        if not 0 < self.stop_residual < 1:
            raise ValueError("stop_residual must be in (0, 1)")
        if not 0 <= self.percentile <= 100:
            raise ValueError("percentile must be in [0, 100]")
        if self.min_section_cells < 1 or self.min_side_cells < 1:
            raise ValueError("min_section_cells and min_side_cells must be >= 1")
        if not (0 < self.wall_fraction <= 1 and 0 < self.cell_fill <= 1):
            raise ValueError("wall_fraction and cell_fill must be in (0, 1]")
        object.__setattr__(self, "angle_set", tuple(float(a) for a in self.angle_set))


@dataclass(frozen=True)
class SectionProposal:
    rect: RotatedRect
    iou: float
    mean_height: float

    def __post_init__(self):
        if not -1e-12 <= self.iou <= 1 + 1e-12:
            raise ValueError(f"iou out of range: {self.iou}")

    def to_dict(self) -> dict:
        return {"rect": self.rect.to_dict(), "iou": self.iou, "mean_height": self.mean_height}

    @classmethod
    def from_dict(cls, d: dict) -> "SectionProposal":
        return cls(RotatedRect.from_dict(d["rect"]), d["iou"], d["mean_height"])


@dataclass(frozen=True)
class Decomposition:
    sections: tuple[SectionProposal, ...]
    residual_fraction: float
    assignment: np.ndarray  # section index per cell, -1 off the building / unassigned
    angle_deg: float = 0.0
    datum: float = 0.0
    residual_history: tuple[int, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "sections", tuple(self.sections))
        a = np.array(self.assignment, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    def to_dict(self) -> dict:
        return {"angle_deg": self.angle_deg, "datum": self.datum,
                "residual_fraction": self.residual_fraction,
                "residual_history": list(self.residual_history),
                "sections": [s.to_dict() for s in self.sections]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict, assignment: np.ndarray) -> "Decomposition":
        return cls(tuple(SectionProposal.from_dict(s) for s in d["sections"]),
                   d["residual_fraction"], assignment, d.get("angle_deg", 0.0),
                   d.get("datum", 0.0), tuple(d.get("residual_history", ())))


# --------------------------------------------------------------------------
# Datum and mask
# --------------------------------------------------------------------------

def estimate_datum(grid: HeightGrid, percentile: float = 10.0) -> float:
    vals = grid.values[grid.valid()]
    if vals.size == 0:
        raise DecompositionError("grid has no valid cells")
    return float(np.percentile(vals, percentile))


def building_mask(grid: HeightGrid, datum: float, threshold: float = 2.0,
                  edge_fraction: float = 0.7) -> np.ndarray:
    """Cells above ``datum + threshold``, cleaned by a 3x3 opening then closing.

    Within two cells of the outline a cell must also reach ``edge_fraction``
    of the local (5x5) maximum height above datum. Blurred and dilated
    stereo edges otherwise push the outline one to two cells outward.
    """
    valid = grid.valid()
    z = np.where(valid, grid.values - datum, 0.0)
    raw = valid & (z > threshold)
    if edge_fraction > 0:
        near = raw & ~ndimage.binary_erosion(raw, np.ones((5, 5), dtype=bool), border_value=0)
        ref = ndimage.maximum_filter(z, size=5)
        raw &= ~(near & (z < edge_fraction * ref))
    k = np.ones((3, 3), dtype=bool)
    opened = ndimage.binary_opening(raw, structure=k)
    return ndimage.binary_closing(opened, structure=k, border_value=0) & valid


# --------------------------------------------------------------------------
# Orientation and aligned frame
# --------------------------------------------------------------------------

def estimate_orientation(mask: np.ndarray) -> float:
    """Dominant outline direction modulo 90 degrees, in [-45, 45).

    Closed-form maximiser of sum w * cos(4 (phi - theta)) over gradient
    directions phi of the blurred mask, weighted by gradient magnitude.
    """
    f = ndimage.gaussian_filter(np.asarray(mask, dtype=np.float64), 1.0)
    gy = ndimage.sobel(f, 0)
    gx = ndimage.sobel(f, 1)
    w = np.hypot(gx, gy)
    z = (w * np.exp(4j * np.arctan2(gy, gx))).sum()
    if abs(z) < 1e-12:
        return 0.0
    th = math.degrees(np.angle(z)) / 4.0
    return (th + 45.0) % 90.0 - 45.0


def refine_orientation(mask: np.ndarray, grid: HeightGrid, angle_deg: float,
                       iterations: int = 2, max_dev_deg: float = 20.0, min_points: int = 8) -> float:
    """Sub-cell refinement of ``angle_deg`` by straight-line fits to the outline.

    Outline cells are grouped by outward normal (four families in the
    current frame) and by position along the normal; each group gets a least
    squares line. The correction is the mean line tilt weighted by each
    fit's tangential spread.
    """
    mask = np.asarray(mask, dtype=bool)
    f = ndimage.gaussian_filter(mask.astype(np.float64), 1.0)
    gy = ndimage.sobel(f, 0)
    gx = ndimage.sobel(f, 1)
    edge = mask & ~ndimage.binary_erosion(mask)
    if edge.sum() < min_points:
        return angle_deg
    xs, ys = grid.cell_centers()
    phi = np.arctan2(gy, gx)[edge]
    x, y = xs[edge], ys[edge]
    gap = 1.5 * grid.cell_size
    th = math.radians(angle_deg)
    for _ in range(iterations):
        c, s = math.cos(th), math.sin(th)
        lx, ly = c * x + s * y, -s * x + c * y
        dev = (phi - th + math.pi / 4) % (math.pi / 2) - math.pi / 4
        near = np.abs(dev) < math.radians(max_dev_deg)
        fam = np.rint(((phi - th) % (2 * math.pi)) / (math.pi / 2)).astype(np.int64) % 4
        num = den = 0.0
        for k in range(4):
            sel = near & (fam == k)
            if sel.sum() < min_points:
                continue
            n, t = (lx[sel], ly[sel]) if k % 2 == 0 else (ly[sel], lx[sel])
            order = np.argsort(n, kind="stable")
            n, t = n[order], t[order]
            cuts = np.flatnonzero(np.diff(n) > gap) + 1
            for nn, tt in zip(np.split(n, cuts), np.split(t, cuts)):
                if len(nn) < min_points:
                    continue
                tc = tt - tt.mean()
                sxx = float((tc * tc).sum())
                if sxx <= 0:
                    continue
                slope = float((tc * (nn - nn.mean())).sum()) / sxx
                num += math.atan(slope) * (-1.0 if k % 2 == 0 else 1.0) * sxx
                den += sxx
        if den == 0:
            break
        th += num / den
    return (math.degrees(th) + 45.0) % 90.0 - 45.0


@dataclass(frozen=True)
class AlignedFrame:
    """Raster aligned with a rotated local frame at the source cell size.

    Pixel ``(r, c)`` is centred at local ``(lx0 + c * cs, ly0 + r * cs)``;
    world = R(angle) @ local.
    """

    angle_deg: float
    lx0: float
    ly0: float
    cell_size: float
    shape: tuple[int, int]

    def _rot(self):
        t = math.radians(self.angle_deg)
        return math.cos(t), math.sin(t)

    def to_world(self, lx, ly):
        c, s = self._rot()
        return c * lx - s * ly, s * lx + c * ly

    def to_local(self, x, y):
        c, s = self._rot()
        return c * x + s * y, -s * x + c * y

    def pixel_rect(self, r0: int, r1: int, c0: int, c1: int) -> RotatedRect:
        """World rectangle covering pixels ``[r0, r1) x [c0, c1)``."""
        cs = self.cell_size
        xa, xb = self.lx0 + (c0 - 0.5) * cs, self.lx0 + (c1 - 0.5) * cs
        ya, yb = self.ly0 + (r0 - 0.5) * cs, self.ly0 + (r1 - 0.5) * cs
        cx, cy = self.to_world(0.5 * (xa + xb), 0.5 * (ya + yb))
        return RotatedRect((cx, cy), (0.5 * (xb - xa), 0.5 * (yb - ya)), self.angle_deg)

    @classmethod
    def covering(cls, grid: HeightGrid, mask: np.ndarray, angle_deg: float, pad: int = 3):
        xs, ys = grid.cell_centers()
        t = math.radians(angle_deg)
        c, s = math.cos(t), math.sin(t)
        x, y = xs[mask], ys[mask]
        lx, ly = c * x + s * y, -s * x + c * y
        cs = grid.cell_size
        lx0 = lx.min() - pad * cs
        ly0 = ly.min() - pad * cs
        w = int(math.ceil((lx.max() - lx0) / cs)) + pad + 1
        h = int(math.ceil((ly.max() - ly0) / cs)) + pad + 1
        return cls(float(angle_deg), float(lx0), float(ly0), cs, (h, w))

    def sample_coords(self, grid: HeightGrid):
        """Fractional source (row, col) of every aligned pixel centre."""
        h, w = self.shape
        lx = self.lx0 + np.arange(w) * self.cell_size
        ly = self.ly0 + np.arange(h) * self.cell_size
        LX, LY = np.meshgrid(lx, ly)
        X, Y = self.to_world(LX, LY)
        return grid.world_to_cell(X, Y)

    def sample_index(self, grid: HeightGrid):
        """Nearest source (row, col) for every aligned pixel and an in-bounds flag."""
        rr, cc = self.sample_coords(grid)
        rr = np.rint(rr).astype(np.int64)
        cc = np.rint(cc).astype(np.int64)
        ok = (rr >= 0) & (rr < grid.height) & (cc >= 0) & (cc < grid.width)
        return np.where(ok, rr, 0), np.where(ok, cc, 0), ok


# --------------------------------------------------------------------------
# Cut-line arrangement
# --------------------------------------------------------------------------

def step_edges(z: np.ndarray, threshold: float) -> np.ndarray:
    """Step evidence between horizontally adjacent pixels.

    ``out[r, x]`` refers to the boundary between columns ``x`` and ``x+1``.
    A boundary is a step when its height jump exceeds the larger of the jumps
    two pixels away on either side by ``threshold``, so constant slopes and
    slope breaks never fire while blurred discontinuities still do. Only the
    row-wise local maximum of a blurred step is reported.
    NaN marks pixels off the building.
    """
    d = np.abs(np.diff(z, axis=1))
    fin = np.isfinite(d)
    d0 = np.where(fin, d, 0.0)
    # comparisons off the building count as infinitely steep (no evidence)
    prev = np.full_like(d0, np.inf)
    nxt = np.full_like(d0, np.inf)
    prev[:, 2:] = np.where(fin[:, :-2], d0[:, :-2], np.inf)
    nxt[:, :-2] = np.where(fin[:, 2:], d0[:, 2:], np.inf)
    left = np.zeros_like(d0)
    right = np.zeros_like(d0)
    left[:, 1:] = d0[:, :-1]
    right[:, :-1] = d0[:, 1:]
    # one boundary per blurred step: the local maximum along the row
    peak = (d0 >= left) & (d0 > right)
    return fin & peak & (d0 - np.maximum(prev, nxt) > threshold)


def _pick_lines(raw: np.ndarray, min_evidence: int, nms: int) -> list[int]:
    win = np.convolve(raw, np.ones(3), mode="same")
    order = sorted(range(len(raw)), key=lambda i: (-win[i], -raw[i], i))
    chosen: list[int] = []
    for i in order:
        if win[i] < min_evidence:
            break
        if any(abs(i - j) <= nms for j in chosen):
            continue
        lo, hi = max(i - 1, 0), min(i + 2, len(raw))
        chosen.append(lo + int(np.argmax(raw[lo:hi])))
    return sorted(set(chosen))


class RectangleProposer:
    """Arrangement-restricted maximum-IoU rectangle search for one building.

    The arrangement (cut lines and step walls) is computed once from the
    full building mask and heights; :meth:`propose` is then called on
    successive residual masks, all in the aligned frame.
    """

    def __init__(self, mask: np.ndarray, z: np.ndarray, params: DecomposeParams):
        self.params = params
        self.mask = np.asarray(mask, dtype=bool)
        self.z = np.where(self.mask, z, np.nan)
        h, w = self.mask.shape
        p = params

        steps_v = step_edges(self.z, p.step_threshold)        # (h, w-1)
        steps_h = step_edges(self.z.T, p.step_threshold).T    # (h-1, w)
        # line x lies between columns x-1 and x (0..w); line y between rows
        pad = np.pad(self.mask, 1).astype(np.int8)
        out_x = np.abs(np.diff(pad, axis=1))[1:-1].sum(0)
        out_y = np.abs(np.diff(pad, axis=0))[:, 1:-1].sum(1)
        ev_x = out_x.astype(np.float64)
        ev_y = out_y.astype(np.float64)
        ev_x[1:-1] += steps_v.sum(0)
        ev_y[1:-1] += steps_h.sum(1)
        xs = _pick_lines(ev_x, p.min_line_evidence, p.line_nms)
        ys = _pick_lines(ev_y, p.min_line_evidence, p.line_nms)
        self.xs = np.array(sorted(set(xs) | {0, w}), dtype=np.int64)
        self.ys = np.array(sorted(set(ys) | {0, h}), dtype=np.int64)

        # walls: fraction of jointly-built rows/cols whose step evidence is
        # attributed (nearest line within line_nms) to the cut line
        own_v = _attribute(steps_v, self.xs, p.line_nms, axis=1)
        own_h = _attribute(steps_h, self.ys, p.line_nms, axis=0)
        ny, nx = len(self.ys) - 1, len(self.xs) - 1
        self.vwall = np.zeros((ny, nx + 1), dtype=bool)
        self.hwall = np.zeros((ny + 1, nx), dtype=bool)
        for j in range(1, nx):
            x = self.xs[j]
            both = self.mask[:, x - 1] & self.mask[:, x]
            hit = own_v[:, j] & both
            for i in range(ny):
                sl = slice(self.ys[i], self.ys[i + 1])
                n = both[sl].sum()
                self.vwall[i, j] = _is_wall(hit[sl].sum(), n, p)
        for i in range(1, ny):
            y = self.ys[i]
            both = self.mask[y - 1, :] & self.mask[y, :]
            hit = own_h[i, :] & both
            for j in range(nx):
                sl = slice(self.xs[j], self.xs[j + 1])
                n = both[sl].sum()
                self.hwall[i, j] = _is_wall(hit[sl].sum(), n, p)

        # every (i0 <= i1) x (j0 <= j1) cell range
        ti0, ti1 = np.triu_indices(ny)
        tj0, tj1 = np.triu_indices(nx)
        self._I0 = np.repeat(ti0, len(tj0))
        self._I1 = np.repeat(ti1, len(tj0))
        self._J0 = np.tile(tj0, len(ti0))
        self._J1 = np.tile(tj1, len(ti0))
        Y0, Y1 = self.ys[self._I0], self.ys[self._I1 + 1]
        X0, X1 = self.xs[self._J0], self.xs[self._J1 + 1]
        self._box = (Y0, Y1, X0, X1)
        self._area = (Y1 - Y0) * (X1 - X0)
        # walls strictly inside each candidate
        pv = _prefix(self.vwall.astype(np.int64))
        ph = _prefix(self.hwall.astype(np.int64))
        inner_v = _box_sum(pv, self._I0, self._I1 + 1, self._J0 + 1, self._J1 + 1)
        inner_h = _box_sum(ph, self._I0 + 1, self._I1 + 1, self._J0, self._J1 + 1)
        size_ok = ((Y1 - Y0) >= p.min_side_cells) & ((X1 - X0) >= p.min_side_cells)
        self._static_ok = (inner_v == 0) & (inner_h == 0) & size_ok

    def propose(self, residual: np.ndarray):
        """Best ``(r0, r1, c0, c1, iou, covered)`` on ``residual`` or None."""
        residual = np.asarray(residual, dtype=bool)
        total = int(residual.sum())
        if total < self.params.min_section_cells:
            return None
        pr = _prefix(residual.astype(np.int64))
        ys, xs = self.ys, self.xs
        cell_cnt = _box_sum(pr, ys[:-1, None], ys[1:, None], xs[None, :-1], xs[None, 1:])
        cell_area = (ys[1:] - ys[:-1])[:, None] * (xs[1:] - xs[:-1])[None, :]
        bad = (cell_cnt < self.params.cell_fill * cell_area).astype(np.int64)
        n_bad = _box_sum(_prefix(bad), self._I0, self._I1 + 1, self._J0, self._J1 + 1)
        Y0, Y1, X0, X1 = self._box
        inter = _box_sum(pr, Y0, Y1, X0, X1)
        ok = self._static_ok & (n_bad == 0) & (inter >= self.params.min_section_cells)
        if not ok.any():
            return None
        iou = np.where(ok, inter / (self._area + total - inter), -1.0)
        best = np.flatnonzero(iou == iou.max())
        k = best[np.argmax(inter[best])]
        return int(Y0[k]), int(Y1[k]), int(X0[k]), int(X1[k]), float(iou[k]), int(inter[k])


def _is_wall(hits: int, n: int, p: DecomposeParams) -> bool:
    return n > 0 and hits >= max(p.wall_fraction * n, p.min_wall_pixels)


def _attribute(steps: np.ndarray, lines: np.ndarray, nms: int, axis: int) -> np.ndarray:
    """Per line, whether each row (axis=1) or column (axis=0) has a step
    whose nearest cut line it is, within ``nms`` pixels.

    ``steps`` index ``b`` is the boundary at line position ``b + 1``.
    """
    st = steps if axis == 1 else steps.T
    pos = np.arange(st.shape[1]) + 1
    k = np.clip(np.searchsorted(lines, pos), 1, len(lines) - 1)
    left, right = lines[k - 1], lines[k]
    nearest = np.where(pos - left <= right - pos, k - 1, k)
    close = np.abs(lines[nearest] - pos) <= nms
    out = np.zeros((st.shape[0], len(lines)), dtype=bool)
    rows, cols = np.nonzero(st & close[None, :])
    out[rows, nearest[cols]] = True
    return out if axis == 1 else out.T


def _prefix(a: np.ndarray) -> np.ndarray:
    p = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=a.dtype)
    p[1:, 1:] = a.cumsum(0).cumsum(1)
    return p


def _box_sum(p, r0, r1, c0, c1):
    return p[r1, c1] - p[r0, c1] - p[r1, c0] + p[r0, c0]


# --------------------------------------------------------------------------
# Public operations
# --------------------------------------------------------------------------

def _aligned(grid: HeightGrid, mask: np.ndarray, angle: float):
    """Aligned mask (nearest neighbour) and heights (bilinear, NaN unless the
    whole interpolation stencil lies on the building)."""
    frame = AlignedFrame.covering(grid, mask, angle)
    rr, cc, ok = frame.sample_index(grid)
    amask = ok & mask[rr, cc]
    fr, fc = frame.sample_coords(grid)
    z = np.where(mask, grid.values, 0.0)
    az = ndimage.map_coordinates(z, [fr, fc], order=1, mode="constant", cval=0.0)
    full = ndimage.map_coordinates(mask.astype(np.float64), [fr, fc], order=1,
                                   mode="constant", cval=0.0)
    az = np.where(amask & (full > 1.0 - 1e-9), az, np.nan)
    return frame, amask, az, (rr, cc, ok)


def _proposal(frame, grid, mask, box, iou, covered_mask):
    r0, r1, c0, c1 = box
    rect = frame.pixel_rect(r0, r1, c0, c1)
    xs, ys = grid.cell_centers()
    inside = rect.contains(xs, ys) & covered_mask
    mean_h = float(grid.values[inside].mean()) if inside.any() else float("nan")
    return SectionProposal(rect, min(max(iou, 0.0), 1.0), mean_h)


def propose_section(mask: np.ndarray, grid: HeightGrid, angle_set=DEFAULT_ANGLE_SET,
                    params: DecomposeParams | None = None):
    """Maximum-IoU rotated rectangle for ``mask`` or None (too small).

    Orientations tried: the outline orientation plus each offset in
    ``angle_set``; the best proposal over all of them is returned.
    """
    params = params or DecomposeParams()
    mask = np.asarray(mask, dtype=bool) & grid.valid()
    if mask.sum() < params.min_section_cells:
        return None
    base = refine_orientation(mask, grid, estimate_orientation(mask))
    best = None
    for off in angle_set:
        frame, amask, az, _ = _aligned(grid, mask, base + off)
        found = RectangleProposer(amask, az, params).propose(amask)
        if found is None:
            continue
        if best is None or found[4] > best[2] + 1e-12:
            best = (frame, found[:4], found[4])
    if best is None:
        return None
    return _proposal(best[0], grid, mask, best[1], best[2], mask)


def cascade_decompose(grid: HeightGrid, mask: np.ndarray, datum: float,
                      params: DecomposeParams | None = None) -> Decomposition:
    """Greedy max-IoU extraction until the residual fraction drops below
    ``params.stop_residual`` or no proposal remains."""
    params = params or DecomposeParams()
    mask = np.asarray(mask, dtype=bool) & grid.valid()
    if mask.shape != grid.shape:
        raise ValueError("mask shape does not match grid")
    if not mask.any():
        raise DecompositionError("empty building mask")
    base = refine_orientation(mask, grid, estimate_orientation(mask))

    best_run = None
    for off in params.angle_set:
        frame, amask, az, _ = _aligned(grid, mask, base + off)
        proposer = RectangleProposer(amask, az, params)
        residual = amask.copy()
        total = int(amask.sum())
        boxes, ious, history = [], [], [int(residual.sum())]
        while residual.sum() / total >= params.stop_residual:
            found = proposer.propose(residual)
            if found is None:
                break
            r0, r1, c0, c1, iou, _ = found
            boxes.append((r0, r1, c0, c1))
            ious.append(iou)
            residual[r0:r1, c0:c1] = False
            history.append(int(residual.sum()))
        score = (len(boxes) > 0, -history[-1], sum(ious))
        if best_run is None or score > best_run[0]:
            best_run = (score, frame, boxes, ious, history)
    _, frame, boxes, ious, history = best_run
    if not boxes:
        raise DecompositionError("no section proposal on the building mask (building too small)")

    sections, covered = [], np.zeros(grid.shape, dtype=bool)
    xs, ys = grid.cell_centers()
    assignment = np.full(grid.shape, -1, dtype=np.int64)
    for k, (box, iou) in enumerate(zip(boxes, ious)):
        prop = _proposal(frame, grid, mask, box, iou, mask)
        inside = prop.rect.contains(xs, ys) & mask
        assignment[inside & (assignment < 0)] = k
        covered |= inside
        sections.append(prop)
    residual_fraction = float((mask & ~covered).sum() / mask.sum())
    return Decomposition(tuple(sections), residual_fraction, assignment, frame.angle_deg,
                         float(datum), tuple(history))


def fill_gaps(decomp: Decomposition, mask: np.ndarray, grid: HeightGrid) -> Decomposition:
    """Assign every unassigned building cell to the section whose rectangle
    is nearest (Euclidean; ties go to the lower section index)."""
    mask = np.asarray(mask, dtype=bool)
    assignment = np.array(decomp.assignment)
    gaps = mask & (assignment < 0)
    if not gaps.any() or not decomp.sections:
        return decomp
    xs, ys = grid.cell_centers()
    gx, gy = xs[gaps], ys[gaps]
    dist = np.stack([s.rect.distance(gx, gy) for s in decomp.sections])
    assignment[gaps] = np.argmin(dist, axis=0)
    return Decomposition(decomp.sections, decomp.residual_fraction, assignment,
                         decomp.angle_deg, decomp.datum, decomp.residual_history)


def decompose_building(grid: HeightGrid, params: DecomposeParams | None = None,
                       mask: np.ndarray | None = None) -> tuple[Decomposition, np.ndarray]:
    """Datum, building mask, cascade and gap filling in one call."""
    params = params or DecomposeParams()
    datum = estimate_datum(grid, params.percentile)
    if mask is None:
        mask = building_mask(grid, datum, params.mask_threshold, params.mask_edge_fraction)
    dec = cascade_decompose(grid, mask, datum, params)
    return fill_gaps(dec, mask, grid), mask
