"""Stereo-like corruption of ideal height maps: Gaussian height noise,
random boundary dilation and correlated smoothing."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .core import HeightGrid

# 4-neighbour offsets (drow, dcol)
_NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class StereoNoiseParams:
    sigma_height: float = 0.3
    dilation_prob: float = 0.5
    dilation_radius: int = 2
    smooth_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_height, self.dilation_prob, self.dilation_radius, self.smooth_sigma) < 0:
            raise ValueError("stereo noise parameters must be >= 0")
        if self.dilation_prob > 1:
            raise ValueError("dilation_prob must be <= 1")

    @classmethod
    def zero(cls, seed: int = 0) -> "StereoNoiseParams":
        return cls(0.0, 0.0, 0, 0.0, seed)

    def to_dict(self) -> dict:
        return asdict(self)


def _rng(params: StereoNoiseParams, stage: int) -> np.random.Generator:
    # independent streams per stage so toggling one stage leaves the others fixed
    return np.random.default_rng([params.seed, stage])


def add_height_noise(grid: HeightGrid, params: StereoNoiseParams) -> HeightGrid:
    if params.sigma_height == 0:
        return grid
    noise = _rng(params, 0).normal(0.0, params.sigma_height, grid.shape)
    valid = grid.valid()
    return grid.with_values(np.where(valid, grid.values + noise, grid.values))


def boundary_cells(labels: np.ndarray) -> np.ndarray:
    """Cells with at least one 4-neighbour carrying a different label."""
    labels = np.asarray(labels)
    out = np.zeros(labels.shape, dtype=bool)
    diff_v = labels[1:, :] != labels[:-1, :]
    diff_h = labels[:, 1:] != labels[:, :-1]
    out[1:, :] |= diff_v
    out[:-1, :] |= diff_v
    out[:, 1:] |= diff_h
    out[:, :-1] |= diff_h
    return out


def perturb_boundaries(grid: HeightGrid, labels: np.ndarray, params: StereoNoiseParams) -> HeightGrid:
    """Randomly smear the higher side of label boundaries outward.

    Each boundary cell that is higher than some differently-labelled
    4-neighbour is selected with probability ``dilation_prob``; its value is
    then pushed up to ``dilation_radius`` cells along each such neighbour
    direction (the boundary normal) with max semantics. Only cells within
    ``dilation_radius`` of a boundary can change.
    """
    labels = np.asarray(labels)
    if labels.shape != grid.shape:
        raise ValueError(f"labels shape {labels.shape} != grid shape {grid.shape}")
    r = int(params.dilation_radius)
    if params.dilation_prob == 0 or r == 0:
        return grid
    z = np.array(grid.values, dtype=np.float64)
    valid = grid.valid()
    h, w = z.shape
    src = z.copy()
    pick = _rng(params, 1).random(z.shape) < params.dilation_prob
    pick &= boundary_cells(labels) & valid
    out = z.copy()
    rows, cols = np.nonzero(pick)
    for dr, dc in _NEIGHBOURS:
        nr, nc = rows + dr, cols + dc
        ok = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
        rr, cc, nrr, ncc = rows[ok], cols[ok], nr[ok], nc[ok]
        normal = (labels[nrr, ncc] != labels[rr, cc]) & (src[rr, cc] > src[nrr, ncc]) & valid[nrr, ncc]
        rr, cc = rr[normal], cc[normal]
        vals = src[rr, cc]
        for step in range(1, r + 1):
            tr, tc = rr + step * dr, cc + step * dc
            inb = (tr >= 0) & (tr < h) & (tc >= 0) & (tc < w)
            tr, tc, v = tr[inb], tc[inb], vals[inb]
            keep = valid[tr, tc]
            np.maximum.at(out, (tr[keep], tc[keep]), v[keep])
    return grid.with_values(out)


def smooth(grid: HeightGrid, params: StereoNoiseParams) -> HeightGrid:
    """Normalized Gaussian blur over valid cells (kernel truncated at 3 sigma).

    Dividing by the blurred validity mask renormalizes the kernel at grid
    borders and next to nodata, so constants are preserved exactly.
    """
    s = params.smooth_sigma
    if s == 0:
        return grid
    valid = grid.valid()
    vals = np.where(valid, grid.values, 0.0)
    num = ndimage.gaussian_filter(vals, s, mode="constant", cval=0.0, truncate=3.0)
    den = ndimage.gaussian_filter(valid.astype(np.float64), s, mode="constant", cval=0.0, truncate=3.0)
    out = np.where(valid, num / np.where(den > 0, den, 1.0), grid.values)
    return grid.with_values(out)


def simulate_stereo(grid: HeightGrid, labels: np.ndarray, params: StereoNoiseParams) -> HeightGrid:
    """add_height_noise -> perturb_boundaries -> smooth."""
    return smooth(perturb_boundaries(add_height_noise(grid, params), labels, params), params)
