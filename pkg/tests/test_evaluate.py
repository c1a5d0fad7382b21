import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roofkit.buildsim import (
    BuildingModel, Rect, Section, SimulationParams, rasterize_ideal, simulate_building,
)
from roofkit.core import HeightGrid, Mesh, MeshError, RotatedRect
from roofkit.evaluate import evaluate_scene, project_to_2d, scores_2d, scores_3d
from roofkit.mesh import SceneModel, SceneSection, assemble_scene, scene_from_building
from roofkit.primitives import PrimitiveType, RoofSpec
from oracles import (
    analytic_scene_heights, brute_counts, brute_voxel_counts, mesh_top_at, point_in_polygon,
    random_linear_scene, ratios, rect_polygon,
)

seeds = st.integers(0, 2**32 - 1)


def _box_model(height, rect=Rect(0, 0, 10, 8), rot=0.0):
    return BuildingModel((Section(rect, RoofSpec(PrimitiveType.FLAT, height, height)),), rot, 0.0)


def _assert_scores(got, want, tol=1e-12):
    assert np.allclose(tuple(got), tuple(want), rtol=0, atol=tol), (got, want)


# -- 2D ----------------------------------------------------------------------

def test_identical_masks_score_one():
    m = np.zeros((5, 6), bool)
    m[1:4, 2:5] = True
    assert scores_2d(m, m) == (1.0, 1.0, 1.0)


def test_formula_example():
    truth = np.zeros(20, bool)
    truth[:10] = True
    pred = truth.copy()
    pred[9] = False        # TP 9, FN 1, FP 0
    _assert_scores(scores_2d(pred, truth), (0.9, 1.0, 0.9))


def test_empty_cases():
    z = np.zeros((3, 3), bool)
    assert scores_2d(z, z) == (1.0, 1.0, 1.0)
    t = z.copy()
    t[1, 1] = True
    assert scores_2d(z, t) == (0.0, 1.0, 0.0)
    assert scores_2d(t, z) == (1.0, 0.0, 0.0)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        scores_2d(np.zeros((3, 3), bool), np.zeros((3, 4), bool))


def test_two_hundred_random_pairs_match_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        shape = tuple(rng.integers(1, 40, 2))
        p, t = rng.random(shape) < rng.random(), rng.random(shape) < rng.random()
        _assert_scores(scores_2d(p, t), ratios(*brute_counts(p, t)))


@given(seeds)
def test_jaccard_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((12, 9)) < 0.4, rng.random((12, 9)) < 0.6
    s_ab, s_ba = scores_2d(a, b), scores_2d(b, a)
    assert s_ab.jaccard == s_ba.jaccard
    assert s_ab.completeness == s_ba.correctness
    assert s_ab.jaccard <= min(s_ab.completeness, s_ab.correctness)


@given(seeds)
def test_growing_inside_truth_is_monotone(seed):
    rng = np.random.default_rng(seed)
    truth = rng.random((15, 15)) < 0.5
    pred = rng.random((15, 15)) < 0.3
    grown = pred | (truth & (rng.random((15, 15)) < 0.5))
    before, after = scores_2d(pred, truth), scores_2d(grown, truth)
    assert after.completeness >= before.completeness
    assert after.jaccard >= before.jaccard


# -- projection --------------------------------------------------------------

def test_empty_model_projects_to_nothing():
    grid = HeightGrid(np.zeros((10, 12)), 0.5)
    assert not project_to_2d(SceneModel(()), grid).any()


def test_axis_aligned_projection_matches_raster():
    model = _box_model(6.0, Rect(1.3, -2.2, 9.7, 6.4))
    grid, mask, _ = rasterize_ideal(model, 0.5, 3.0)
    np.testing.assert_array_equal(project_to_2d(scene_from_building(model), grid), mask)


@pytest.mark.parametrize("angle", [7.0, 23.5, 45.0, 61.0])
def test_rotated_projection_area(angle):
    fp = RotatedRect((0.31, -0.17), (6.0, 3.5), angle)
    model = SceneModel((SceneSection(fp, 0.0, RoofSpec(PrimitiveType.FLAT, 5.0, 5.0)),))
    grid = HeightGrid(np.zeros((80, 80)), 0.25, (-9.875, -9.875))
    area = project_to_2d(model, grid).sum() * 0.25 ** 2
    assert area == pytest.approx(fp.area, rel=0.02)


@settings(max_examples=20)
@given(seeds)
def test_projection_matches_point_in_polygon(seed):
    rng = np.random.default_rng(seed)
    secs = tuple(SceneSection(RotatedRect(tuple(rng.uniform(-4, 4, 2)), tuple(rng.uniform(1, 5, 2)),
                                          rng.uniform(-90, 90)), 0.0, RoofSpec(PrimitiveType.FLAT, 4, 4))
                 for _ in range(rng.integers(1, 4)))
    grid = HeightGrid(np.zeros((30, 30)), 0.5, (-7.37, -7.41))
    got = project_to_2d(SceneModel(secs), grid)
    xs, ys = grid.cell_centers()
    polys = [rect_polygon(s.footprint.center, s.footprint.half_extents, s.footprint.angle_deg)
             for s in secs]
    want = np.array([[any(point_in_polygon(p, x, y) for p in polys) for x, y in zip(rx, ry)]
                     for rx, ry in zip(xs, ys)])
    np.testing.assert_array_equal(got, want)


# -- 3D ----------------------------------------------------------------------

@pytest.mark.parametrize("voxel", [0.25, 0.5, 1.0])
def test_identical_solids(voxel):
    model = _box_model(10.0)
    grid, mask, _ = rasterize_ideal(model, 0.5, 3.0)
    assert scores_3d(scene_from_building(model), grid, mask, 0.0, voxel) == (1.0, 1.0, 1.0)


@pytest.mark.parametrize("voxel", [0.25, 0.5, 1.0])
def test_lower_box(voxel):
    grid, mask, _ = rasterize_ideal(_box_model(10.0), 0.5, 3.0)
    pred = scene_from_building(_box_model(8.0))
    _assert_scores(scores_3d(pred, grid, mask, 0.0, voxel), (0.8, 1.0, 0.8))


def test_open_mesh_rejected():
    grid, mask, _ = rasterize_ideal(_box_model(4.0), 0.5, 3.0)
    tri = Mesh(np.array([[0, 0, 1.0], [5, 0, 1.0], [0, 5, 1.0]]), np.array([[0, 1, 2]]))
    with pytest.raises(MeshError):
        scores_3d(tri, grid, mask, 0.0)
    with pytest.raises(ValueError):
        scores_3d(scene_from_building(_box_model(4.0)), grid, mask, 0.0, voxel=0.0)


def test_empty_prediction():
    grid, mask, _ = rasterize_ideal(_box_model(4.0), 0.5, 3.0)
    assert scores_3d(SceneModel(()), grid, mask, 0.0) == (0.0, 1.0, 0.0)


def test_flat_scene_2d_3d_consistency():
    truth = _box_model(6.0, Rect(0, 0, 12, 8))
    grid, mask, _ = rasterize_ideal(truth, 0.5, 4.0)
    pred = scene_from_building(_box_model(6.0, Rect(1.5, -1.0, 13.5, 7.0)))
    s = evaluate_scene(pred, grid, mask, 0.0)
    # equal heights everywhere: every column contributes the same voxel count
    assert s.jaccard_3d == pytest.approx(s.jaccard_2d, abs=1e-12)
    assert s.completeness_3d == pytest.approx(s.completeness_2d, abs=1e-12)


def test_two_hundred_scenes_match_voxel_oracle():
    rng = np.random.default_rng(77)
    for _ in range(200):
        model, kinds = random_linear_scene(rng)
        grid = HeightGrid(np.zeros((36, 36)), 0.5, (-8.63, -8.71))
        truth_h = model.datum + rng.uniform(0, 14, grid.shape)
        truth_mask = rng.random(grid.shape) < 0.6
        truth = grid.with_values(truth_h)
        pred_h = analytic_scene_heights(model, kinds, grid)
        want = ratios(*brute_voxel_counts(pred_h, np.where(truth_mask, truth_h, np.nan),
                                          model.datum, 0.5))
        _assert_scores(scores_3d(model, truth, truth_mask, model.datum, 0.5), want)


@pytest.mark.parametrize("seed", [3, 11, 29])
def test_simulated_scene_matches_mesh_oracle(seed):
    # any roof type: the oracle reads heights off the mesh triangles one by one
    building = simulate_building(SimulationParams(), seed)
    grid, mask, _ = rasterize_ideal(building, 1.0, 2.0)
    model = scene_from_building(building)
    mesh = assemble_scene(model)
    xs, ys = grid.cell_centers()
    pred_h = np.array([[mesh_top_at(mesh.vertices, mesh.faces, x, y) or np.nan
                        for x, y in zip(rx, ry)] for rx, ry in zip(xs, ys)], dtype=float)
    want = ratios(*brute_voxel_counts(pred_h, np.where(mask, grid.values, np.nan),
                                      building.datum, 1.0))
    _assert_scores(scores_3d(mesh, grid, mask, building.datum, 1.0), want)


def test_evaluate_scene_fields():
    building = simulate_building(SimulationParams(), 5)
    grid, mask, _ = rasterize_ideal(building)
    s = evaluate_scene(scene_from_building(building), grid, mask)
    assert list(s.to_dict()) == ["completeness_2d", "correctness_2d", "jaccard_2d",
                                 "completeness_3d", "correctness_3d", "jaccard_3d"]
    assert s.jaccard_2d > 0.97 and s.jaccard_3d > 0.9
