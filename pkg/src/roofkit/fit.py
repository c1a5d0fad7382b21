"""Rigid-plus-scale Coherent Point Drift and per-section primitive fitting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .core import EmptyCloudError, RotatedRect, SimTransform, as_points
from .primitives import (
    CATALOG, DENOISE_RADIUS, CanonicalCloud, PrimitiveType, PrototypeLibrary, RoofSpec,
    rectify_canonical, rectify_in_frame, roof_shape,
)


class DegenerateFitError(ValueError):
    pass


class FitFailedError(RuntimeError):
    def __init__(self, message: str, diagnostics: list):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class CpdParams:
    w: float = 0.1
    max_iterations: int = 100
    tolerance: float = 1e-6
    allow_scale: bool = True
    rotation: str = "full"  # or "z": rotation about the z axis only

    def __post_init__(self):
        if not 0 <= self.w < 1:
            raise ValueError("w must be in [0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.rotation not in ("full", "z"):
            raise ValueError("rotation must be 'full' or 'z'")


@dataclass(frozen=True)
class FitResult:
    transform: SimTransform
    sigma2: float
    fit_error: float
    iterations: int
    converged: bool
    objective: tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {"transform": self.transform.to_dict(), "sigma2": self.sigma2,
                "fit_error": self.fit_error, "iterations": self.iterations,
                "converged": self.converged}


def rms_nn(target: np.ndarray, model: np.ndarray) -> float:
    """RMS of target-to-model nearest-neighbour distances."""
    d, _ = cKDTree(model).query(target)
    return float(np.sqrt(np.mean(d * d)))


def _procrustes(a: np.ndarray, z_only: bool) -> np.ndarray:
    """Rotation maximising tr(A^T R), det-corrected into SO(D)."""
    if z_only:
        r = np.eye(3)
        r[:2, :2] = _procrustes(a[:2, :2], False)
        return r
    u, _, vt = np.linalg.svd(a)
    c = np.eye(a.shape[0])
    c[-1, -1] = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ c @ vt


def cpd_rigid(source, target, params: CpdParams | None = None,
              callback: Callable | None = None) -> FitResult:
    """Register ``source`` (mixture centroids) onto ``target``.

    Returns the transform T with ``T(source) ~ target``. ``callback`` is
    called after every M-step with ``(iteration, transform, sigma2, nll)``
    where ``nll`` is the objective evaluated in the preceding E-step.
    """
    params = params or CpdParams()
    y = as_points(source)
    x = as_points(target)
    if len(y) < 3 or len(x) < 3:
        raise DegenerateFitError("cpd_rigid needs at least 3 points in each set")
    dim = x.shape[1]
    if np.linalg.matrix_rank(y - y.mean(0), tol=1e-10 * max(1.0, np.abs(y).max())) < 2:
        raise DegenerateFitError("source points are collinear")
    if np.linalg.matrix_rank(x - x.mean(0), tol=1e-10 * max(1.0, np.abs(x).max())) < 2:
        raise DegenerateFitError("target points are collinear")
    n, m = len(x), len(y)
    z_only = params.rotation == "z"

    r = np.eye(dim)
    s = 1.0
    t = np.zeros(dim)
    sigma2 = float((n * (y * y).sum() + m * (x * x).sum() - 2.0 * x.sum(0) @ y.sum(0)) / (dim * m * n))
    floor = 1e-12 * max(sigma2, 1e-300)
    prev = None
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, params.max_iterations + 1):
        ty = s * y @ r.T + t
        p1, pt1, px, nll = kernels.cpd_estep(x, np.ascontiguousarray(ty), sigma2, params.w)
        history.append(float(nll))
        np_sum = float(p1.sum())
        if np_sum <= 1e-12:
            break
        mu_x = pt1 @ x / np_sum
        mu_y = p1 @ y / np_sum
        yh = y - mu_y
        a = px.T @ yh - np.outer(mu_x, p1 @ yh)
        r = _procrustes(a, z_only)
        tr_ar = float(np.trace(a.T @ r))
        yy = float(p1 @ (yh * yh).sum(1))
        if params.allow_scale:
            s = tr_ar / yy
            if s <= 0:
                raise DegenerateFitError("non-positive scale estimate")
        t = mu_x - s * r @ mu_y
        xx = float(pt1 @ ((x - mu_x) ** 2).sum(1))
        # equals xx - s * tr_ar when s is the free optimum tr_ar / yy
        sigma2 = max((xx - 2.0 * s * tr_ar + s * s * yy) / (np_sum * dim), floor)
        if callback is not None:
            callback(it, SimTransform(s, r, t), sigma2, float(nll))
        if sigma2 <= floor:
            converged = True
            break
        if prev is not None and abs(prev - nll) <= params.tolerance * abs(prev):
            converged = True
            break
        prev = nll
    tf = SimTransform(s, r, t)
    return FitResult(tf, sigma2, rms_nn(x, tf.apply(y)), it, converged, tuple(history))


# --------------------------------------------------------------------------
# Section fitting
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SectionFit:
    """Fitted primitive in its canonical footprint frame.

    Roof heights in ``roof`` are metres above ``base_elevation``; walls of
    the meshed section run down to ``datum``. ``transform`` maps the model
    onto the observed points.
    """

    roof: RoofSpec
    footprint: RotatedRect
    base_elevation: float
    datum: float
    transform: SimTransform
    result: FitResult
    diagnostics: tuple = ()

    @property
    def primitive_type(self) -> PrimitiveType:
        return self.roof.primitive_type

    @property
    def fit_error(self) -> float:
        return self.result.fit_error

    def to_dict(self) -> dict:
        return {"primitive_type": self.roof.primitive_type.value, "roof": self.roof.to_dict(),
                "footprint": self.footprint.to_dict(), "base_elevation": self.base_elevation,
                "datum": self.datum, "fit": self.result.to_dict(),
                "diagnostics": list(self.diagnostics)}


def height_hypotheses(z: np.ndarray, datum: float, bin_size: float = 0.5,
                      prominence: float = 0.1, cap: int = 4) -> list[float]:
    """Candidate base elevations: the datum, the lowest point and the lower
    edges of prominent height-histogram modes, deduplicated within one bin."""
    z = np.asarray(z, dtype=np.float64)
    cands = [float(datum), float(z.min())]
    lo = math.floor((z.min() - datum) / bin_size)
    hi = math.floor((z.max() - datum) / bin_size) + 1
    counts, edges = np.histogram(z - datum, bins=np.arange(lo, hi + 1) * bin_size)
    padded = np.concatenate([[0], counts, [0]])
    for i in np.argsort(-counts, kind="stable"):
        if counts[i] <= prominence * len(z):
            break
        if counts[i] >= padded[i] and counts[i] >= padded[i + 2]:
            cands.append(float(datum + edges[i]))
    out: list[float] = []
    top = float(z.max())
    for c in cands:
        if c < top - bin_size and all(abs(c - o) >= bin_size for o in out):
            out.append(c)
        if len(out) == cap:
            break
    return out or [float(datum)]


def fit_heights(ptype: PrimitiveType, u, v, z, min_level: float = -math.inf) -> tuple[float, float]:
    """Least-squares ``z ~ level + rise * shape(u, v)`` with ``rise >= 0``
    and ``level >= min_level``.

    Returns ``(level, rise)``; ``level`` is the eave elevation.
    """
    z = np.asarray(z, dtype=np.float64)
    if ptype is PrimitiveType.FLAT:
        return max(float(z.mean()), min_level), 0.0
    f = roof_shape(ptype, u, v)
    a_mat = np.column_stack([np.ones_like(f), f])
    (level, rise), *_ = np.linalg.lstsq(a_mat, z, rcond=None)
    if level < min_level:
        # bound active: refit the rise with the eave pinned
        level = min_level
        ff = float(f @ f)
        rise = float(f @ (z - level)) / ff if ff > 0 else 0.0
    if not rise > 0:
        return max(float(z.mean()), min_level), 0.0
    return float(level), float(rise)


def _frame_points(canon: CanonicalCloud, u, v) -> np.ndarray:
    return canon.to_world(np.column_stack([u, v, np.zeros_like(u)]))[:, :2]


def model_points(canon: CanonicalCloud, roof: RoofSpec, base: float, spacing: float) -> np.ndarray:
    """Regular world-space lattice over a fitted roof surface."""
    ex, ey, _ = canon.extents
    nu = max(2, int(math.ceil(ex / spacing)) + 1)
    nv = max(2, int(math.ceil(ey / spacing)) + 1)
    uu, vv = np.meshgrid(np.linspace(0, 1, nu), np.linspace(0, 1, nv))
    u, v = uu.ravel(), vv.ravel()
    rel = roof.eave_height + (roof.ridge_height - roof.eave_height) * roof_shape(roof.primitive_type, u, v)
    return np.column_stack([_frame_points(canon, u, v), base + rel])


def _subsample(points: np.ndarray, n: int, seed: int) -> np.ndarray:
    if len(points) <= n:
        return points
    idx = np.random.default_rng(seed).choice(len(points), n, replace=False)
    return points[np.sort(idx)]


def core_points(canon: CanonicalCloud, trim: float, min_fraction: float = 0.25,
                min_points: int = 12) -> np.ndarray:
    """Boolean selector of roof points at least ``trim`` metres inside the
    footprint, halving ``trim`` until enough points survive."""
    ex, ey, _ = canon.extents
    u, v = canon.roof[:, 0], canon.roof[:, 1]
    inner = np.minimum.reduce([u * ex, (1 - u) * ex, v * ey, (1 - v) * ey])
    need = min(len(u), max(min_points, int(math.ceil(min_fraction * len(u)))))
    while trim > 1e-9:
        keep = inner >= trim
        if keep.sum() >= need:
            return keep
        trim /= 2.0
    return np.ones(len(u), dtype=bool)


def fit_section(section_cloud, datum: float, prototypes: PrototypeLibrary,
                params: CpdParams | None = None, footprint: RotatedRect | None = None,
                cell_size: float = 0.5, max_points: int = 512, seed: int = 0,
                trim: float | None = None, top_k: int = 3,
                flat_margin: float = 0.01) -> SectionFit:
    """Classify and fit a roof primitive to one section's points.

    Every base-height hypothesis is canonicalised and classified; the
    ``top_k`` nearest prototype types become candidate models (heights by
    least squares), each registered onto the points with :func:`cpd_rigid`.
    The ``top_k`` best least-squares types join them. The flat-roof baseline
    is always evaluated; the candidate with the smallest fit error wins, but
    a pitched roof must beat flat by ``flat_margin`` metres.

    ``footprint`` fixes the canonical frame; otherwise it is estimated from
    the points, padded by half a cell. Points closer than ``trim`` (default
    two cells) to the footprint edge are left out of height estimation and
    scoring, since stereo smearing corrupts that band.
    """
    # a free 3D rotation would let a flat model tilt onto a shed, so the
    # default registration only turns about the vertical
    params = params or CpdParams(rotation="z")
    pts = as_points(section_cloud)
    if len(pts) < 3:
        raise EmptyCloudError("section cloud needs at least 3 points")
    trim = 2.0 * cell_size if trim is None else float(trim)
    spacing = cell_size / 8.0  # dense enough that lattice gaps stay far below roof relief

    if footprint is not None:
        geo = rectify_in_frame(pts, footprint.center, footprint.half_extents,
                               footprint.angle_deg, base_z=float(datum), fill=False)
    else:
        geo = rectify_canonical(pts, base_z=float(datum), pad=cell_size / 2.0, fill=False)
    keep = core_points(geo, trim)
    core = pts[keep]
    u, v, z = geo.roof[keep, 0], geo.roof[keep, 1], core[:, 2]
    center, half, angle = geo.footprint()
    target = _subsample(core, max_points, seed)

    candidates: list[tuple[PrimitiveType, float]] = [(PrimitiveType.FLAT, float(datum))]
    diagnostics: list[dict] = []
    lo, hi = np.percentile(z, [2.0, 98.0])
    for base in height_hypotheses(z, datum):
        if hi - base <= 1e-6:
            continue
        e_hat = float(np.clip((lo - base) / (hi - base), 0.0, 1.0))
        try:
            canon = rectify_in_frame(core, center, half, angle, base_z=base, denoise=DENOISE_RADIUS)
        except ValueError as exc:
            diagnostics.append({"base": base, "error": str(exc)})
            continue
        scores = prototypes.for_eave_fraction(e_hat).scores(canon)
        ranked = sorted(CATALOG, key=lambda t: (scores[t], CATALOG.index(t)))[:max(1, top_k)]
        diagnostics.append({"base": base, "eave_fraction": e_hat,
                            "classified": [t.value for t in ranked],
                            "chamfer": [scores[t] for t in ranked]})
        candidates.extend((t, base) for t in ranked)

    # least-squares shortlist: cheap, and catches subtle roofs the
    # prototype classifier misses
    lsq = {}
    for t in CATALOG:
        level, rise = fit_heights(t, u, v, z, min_level=float(datum))
        lsq[t] = (level, rise, float(np.mean((level + rise * roof_shape(t, u, v) - z) ** 2)))
    shortlist = sorted(CATALOG, key=lambda t: (lsq[t][2], CATALOG.index(t)))[:max(0, top_k)]
    diagnostics.append({"least_squares": [t.value for t in shortlist]})
    candidates.extend((t, float(datum)) for t in shortlist)

    fits: dict[PrimitiveType, tuple] = {}
    best = None
    for ptype, base in candidates:
        if ptype in fits:
            continue
        level, rise, _ = lsq[ptype]
        base = max(min(base, level), float(datum))  # the hypothesis only steers classification
        roof = RoofSpec(ptype, level - base, level - base + rise)
        eave, ridge = roof.eave_height, roof.ridge_height
        tree = cKDTree(model_points(geo, roof, base, spacing))

        def score(tf: SimTransform) -> float:
            # distance to T(model) == s * distance of T^-1(point) to model
            d, _ = tree.query(tf.inverse().apply(core))
            return float(tf.scale * np.sqrt(np.mean(d * d)))

        identity_err = score(SimTransform.identity())
        src = _subsample(model_points(geo, roof, base, cell_size), max_points, seed)
        try:
            res = cpd_rigid(src, target, params)
            cpd_err = score(res.transform)
        except (DegenerateFitError, np.linalg.LinAlgError) as exc:
            res, cpd_err = None, math.inf
            diagnostics.append({"type": ptype.value, "cpd_error": str(exc)})
        if res is not None and cpd_err < identity_err:
            result = FitResult(res.transform, res.sigma2, cpd_err, res.iterations, res.converged,
                               res.objective)
        else:
            result = FitResult(SimTransform.identity(), res.sigma2 if res is not None else 1.0,
                               identity_err, res.iterations if res is not None else 0,
                               res.converged if res is not None else False)
        fits[ptype] = (roof, base, result)
        diagnostics.append({"type": ptype.value, "base": base, "eave": eave, "ridge": ridge,
                            "fit_error": result.fit_error, "identity_error": identity_err,
                            "cpd_fit_error": cpd_err, "iterations": result.iterations})
        margin = flat_margin if best is not None and best[0].primitive_type is PrimitiveType.FLAT else 0.0
        if best is None or result.fit_error < best[2].fit_error - margin - 1e-12:
            best = (roof, base, result)
    if best is None:
        raise FitFailedError("no hypothesis could be fitted", diagnostics)
    roof, base, result = best
    return SectionFit(roof, RotatedRect(center, half, angle), float(base), float(datum),
                      result.transform, result, tuple(diagnostics))
