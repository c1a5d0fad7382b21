import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roofkit.primitives import (
    CATALOG, DegenerateCloudError, PrimitiveType, PrototypeSet, RoofSpec, catalog_json,
    chamfer_distance, classify, generate_training_set, perturb_training, rectify_canonical,
    roof_shape, sample_primitive, surface_height, type_in_frame,
)

seeds = st.integers(0, 2**32 - 1)
T = PrimitiveType


@pytest.fixture(scope="module")
def protos():
    return PrototypeSet.build()


def test_catalog_has_fifteen_types():
    assert len(CATALOG) == 15
    assert sum(t.family == "shed" for t in CATALOG) == 4
    assert {t for t in CATALOG if not t.directional} == {T.FLAT, T.PYRAMID, T.MANSARD}


def test_rotation_algebra():
    assert T.SHED_PX.rotated(1) is T.SHED_PY
    assert T.SHED_PX.rotated(2) is T.SHED_NX
    assert T.GABLE_X.rotated(1) is T.GABLE_Y
    assert T.GABLE_X.rotated(2) is T.GABLE_X
    for t in CATALOG:
        assert t.rotated(4) is t
        assert t.rotated(1).rotated(3) is t
    assert type_in_frame(T.SHED_PX, 0.0, 90.0) is T.SHED_NY


def test_roofspec_validation():
    with pytest.raises(ValueError):
        RoofSpec(T.GABLE_X, 5.0, 4.0)
    with pytest.raises(ValueError):
        T("dome")


def test_flat_surface_is_eave_level():
    spec = RoofSpec(T.FLAT, 7.0, 7.0)
    u = np.random.default_rng(0).random(50)
    assert np.all(surface_height(T.FLAT, spec, u, u[::-1]) == 1.0)


def test_gable_ridge_and_eave():
    spec = RoofSpec.unit(T.GABLE_Y, 0.4)
    assert surface_height(T.GABLE_Y, spec, 0.5, 0.3) == pytest.approx(1.0)
    assert surface_height(T.GABLE_Y, spec, 0.0, 0.3) == pytest.approx(0.4)
    assert surface_height(T.GABLE_X, spec, 0.3, 0.5) == pytest.approx(1.0)


def test_pyramid_peak_and_radial_decrease():
    g = np.linspace(0, 1, 101)
    uu, vv = np.meshgrid(g, g)
    h = roof_shape(T.PYRAMID, uu, vv)
    assert h[50, 50] == h.max()
    for ang in np.linspace(0, 2 * math.pi, 72, endpoint=False):
        t = np.linspace(0, 0.5, 60)
        vals = roof_shape(T.PYRAMID, 0.5 + t * math.cos(ang), 0.5 + t * math.sin(ang))
        assert np.all(np.diff(vals) <= 1e-12)


@pytest.mark.parametrize("ptype", CATALOG)
def test_surface_bounded_and_continuous(ptype):
    g = np.linspace(0, 1, 1001)
    uu, vv = np.meshgrid(g, g)
    h = surface_height(ptype, RoofSpec.unit(ptype, 0.0), uu, vv)
    assert h.min() >= 0.0 and h.max() <= 1.0 + 1e-12
    step = g[1] - g[0]
    assert np.abs(np.diff(h, axis=0)).max() <= 10 * step
    assert np.abs(np.diff(h, axis=1)).max() <= 10 * step


def test_sample_count_and_flat_roof():
    assert len(sample_primitive(T.GABLE_X, 2048, 0)) == 2048
    roof = sample_primitive(T.FLAT, 500, 1, surfaces="roof")
    assert np.all(roof[:, 2] == roof[0, 2])


def test_gable_facet_counts_binomial():
    n, e = 20000, 0.5
    pts = sample_primitive(T.GABLE_X, n, 3, eave_fraction=e)
    x, y, z = pts.T
    bottom = z == 0
    on_wall = ~bottom & ((x == 0) | (x == 1) | (y == 0) | (y == 1))
    roof = ~bottom & ~on_wall
    slope = math.hypot(0.5, 1 - e)
    areas = {"bottom": 1.0, "side_walls": 2 * e, "end_walls": 2 * (e + 0.5 * (1 - e)),
             "facet_low": slope, "facet_high": slope}
    total = sum(areas.values())
    counts = {"bottom": bottom.sum(), "side_walls": (on_wall & ((y == 0) | (y == 1))).sum(),
              "end_walls": (on_wall & ((x == 0) | (x == 1))).sum(),
              "facet_low": (roof & (y < 0.5)).sum(), "facet_high": (roof & (y >= 0.5)).sum()}
    for k, a in areas.items():
        p = a / total
        assert abs(counts[k] - n * p) <= 3 * math.sqrt(n * p * (1 - p)), k


def test_perturbation_bounds_and_reproducibility():
    base = sample_primitive(T.HIP_X, 1000, 2, surfaces="roof")
    out, ang = perturb_training(base, 9, return_angle=True)
    assert -45 <= ang <= 45
    assert np.abs(out[:, 2] - base[:, 2]).max() <= 0.1
    np.testing.assert_array_equal(out, perturb_training(base, 9))
    # pure z-rotation about the footprint centre: xy distances preserved
    d0 = np.linalg.norm(base[:50, :2] - base[50:100, :2], axis=1)
    d1 = np.linalg.norm(out[:50, :2] - out[50:100, :2], axis=1)
    np.testing.assert_allclose(d0, d1, atol=1e-12)


def test_training_set_shape():
    one = generate_training_set(1)
    assert len(one) == 15 and [t for _, t in one] == list(CATALOG)
    two = generate_training_set(2, n=64)
    labels = [t for _, t in two]
    assert all(labels.count(t) == 2 for t in CATALOG)


def _box_cloud(w=6.0, h=3.0, n=400, seed=0):
    # lattice footprint so the hull is exactly the w x h rectangle
    k = max(2, int(math.sqrt(n)))
    gx, gy = np.meshgrid(np.linspace(0, w, k), np.linspace(0, h, k))
    z = 2.0 + np.random.default_rng(seed).random(gx.size)
    return np.column_stack([gx.ravel(), gy.ravel(), z])


def test_canonical_cloud_identity_and_bounds():
    pts = _box_cloud()
    c = rectify_canonical(pts)
    assert abs(c.angle_deg) < 1e-9
    assert np.allclose(c.offset, pts[:, :2].min(0), atol=1e-9)
    assert c.points.min() >= -1e-9 and c.points.max() <= 1 + 1e-9
    np.testing.assert_allclose(c.to_world(c.roof), pts, atol=1e-9)


def test_rotated_cloud_rectifies_to_same_canonical():
    pts = _box_cloud(seed=1)
    a = math.radians(30)
    r = np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])
    c0 = rectify_canonical(pts)
    c1 = rectify_canonical(pts @ r.T)
    np.testing.assert_allclose(c1.roof, c0.roof, atol=1e-6)


@given(seeds, st.floats(-180, 180), st.floats(0.2, 5.0))
def test_rectify_equivariance(seed, deg, scale):
    pts = _box_cloud(8.0, 3.0, 300, seed % 1000)
    a = math.radians(deg)
    r = np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])
    moved = scale * pts @ r.T + np.array([13.0, -7.0, 4.0])
    c0, c1 = rectify_canonical(pts).roof, rectify_canonical(moved).roof
    flipped = np.column_stack([1 - c1[:, 0], 1 - c1[:, 1], c1[:, 2]])
    # elongated footprints are defined up to a half turn
    assert min(np.abs(c1 - c0).max(), np.abs(flipped - c0).max()) < 1e-6


def test_degenerate_cloud_rejected():
    line = np.column_stack([np.arange(10.0), 2 * np.arange(10.0), np.ones(10)])
    with pytest.raises(DegenerateCloudError):
        rectify_canonical(line)


@given(seeds)
def test_chamfer_symmetric_and_zero_on_self(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((30, 3)), rng.random((45, 3))
    assert chamfer_distance(a, b) == pytest.approx(chamfer_distance(b, a), rel=1e-12)
    assert chamfer_distance(a, a) == 0.0
    assert chamfer_distance(a, a + 1e-3) > 0


@pytest.mark.parametrize("ptype", CATALOG)
def test_prototype_classifies_as_itself(protos, ptype):
    got, score = classify(protos.clouds[ptype], protos)
    assert got is ptype and score < 1e-9


def test_flat_closer_to_flat_than_gable(protos):
    flat = rectify_canonical(sample_primitive(T.FLAT, 1500, 7, surfaces="roof"), base_z=0.0)
    s = protos.scores(flat)
    assert s[T.FLAT] < s[T.GABLE_X] and s[T.FLAT] < s[T.GABLE_Y]


@pytest.mark.parametrize("ptype", [T.SHED_PX, T.GABLE_X, T.HIP_Y, T.MANSARD, T.VAULT_X])
def test_classify_quarter_turn_covariance(protos, ptype):
    base = protos.clouds[ptype]
    got0, s0 = classify(base, protos)
    pts = base.points.copy()
    for k in range(1, 4):
        pts[:, 0], pts[:, 1] = 1.0 - pts[:, 1], pts[:, 0].copy()
        turned = type(base)(pts.copy(), base.n_roof, 0.0, (0.0, 0.0), (1.0, 1.0, 1.0), 0.0)
        got, s = classify(turned, protos)
        assert got is got0.rotated(k)
        assert s == pytest.approx(s0, abs=1e-9)


def test_prototype_cache_round_trip(tmp_path, protos):
    protos.save(tmp_path)
    meta = json.loads((tmp_path / "catalog.json").read_text())
    assert len(meta["types"]) == 15
    back = PrototypeSet.load(tmp_path)
    for t in CATALOG:
        np.testing.assert_allclose(back.clouds[t].roof, protos.clouds[t].roof, atol=1e-12)


def test_catalog_json():
    entries = json.loads(catalog_json())
    assert [e["id"] for e in entries] == [t.value for t in CATALOG]
    assert sum(e["directional"] for e in entries) == 12
