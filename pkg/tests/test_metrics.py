import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapeprior.metrics import (
    MetricsReport,
    MetricsRow,
    UndefinedMetric,
    asd,
    boundary_voxels,
    dsc,
    evaluate,
    hausdorff_2d,
    hausdorff_max,
    volumetric_error_pct,
)
from shapeprior.volume import LabelVolume, StructuralError


def vol_from_mask(mask, spacing=(1.0, 1.0, 1.0), shape_id=""):
    return LabelVolume(mask.astype(np.uint8), spacing, 2, shape_id)


def vol_from_points(points, dims=(6, 6, 6), spacing=(1.0, 1.0, 1.0)):
    labels = np.zeros(dims, dtype=np.uint8)
    for p in points:
        labels[tuple(p)] = 1
    return LabelVolume(labels, spacing, 2)


def random_pair(seed, dims=(8, 8, 8)):
    rng = np.random.default_rng(seed)
    a = rng.random(dims) < 0.2
    b = rng.random(dims) < 0.2
    if not a.any():
        a[tuple(rng.integers(0, d) for d in dims)] = True
    if not b.any():
        b[tuple(rng.integers(0, d) for d in dims)] = True
    return vol_from_mask(a), vol_from_mask(b)


# ------------------------------------------------------------------------ dsc

def test_dsc_identical_masks():
    vol = vol_from_points([(1, 1, 1), (1, 1, 2)])
    assert dsc(vol, vol.copy(), 1) == 1.0


def test_dsc_disjoint_masks():
    a = vol_from_points([(0, 0, 0)])
    b = vol_from_points([(5, 5, 5)])
    assert dsc(a, b, 1) == 0.0


def test_dsc_hand_count_on_2x2x2():
    # |P| = |G| = 4 with overlap 2 -> 2*2/8 = 0.5
    p = np.zeros((2, 2, 2), dtype=np.uint8)
    g = np.zeros((2, 2, 2), dtype=np.uint8)
    p[0, :, :] = 1          # 4 voxels
    g[:, 0, :] = 1          # 4 voxels, overlap {(0,0,0),(0,0,1)}
    assert dsc(vol_from_mask(p), vol_from_mask(g), 1) == 0.5


def test_dsc_empty_conventions():
    empty = vol_from_points([])
    full = vol_from_points([(2, 2, 2)])
    assert dsc(empty, empty.copy(), 1) == 1.0
    assert dsc(empty, full, 1) == 0.0
    assert dsc(full, empty, 1) == 0.0


def test_dsc_rejects_dim_mismatch():
    a = vol_from_mask(np.zeros((2, 2, 2), dtype=bool))
    b = vol_from_mask(np.zeros((2, 2, 3), dtype=bool))
    with pytest.raises(StructuralError):
        dsc(a, b, 1)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_dsc_symmetric_and_bounded(seed):
    a, b = random_pair(seed, dims=(5, 5, 5))
    d = dsc(a, b, 1)
    assert 0.0 <= d <= 1.0
    assert d == dsc(b, a, 1)


# ------------------------------------------------------------------- boundary

def test_boundary_of_solid_cube_is_26_voxels():
    labels = np.zeros((5, 5, 5), dtype=np.uint8)
    labels[1:4, 1:4, 1:4] = 1
    pts = boundary_voxels(LabelVolume(labels, (1, 1, 1), 2), 1)
    assert pts.shape == (26, 3)
    assert not any((p == [2, 2, 2]).all() for p in pts)  # center is interior


def test_boundary_single_voxel_is_itself():
    pts = boundary_voxels(vol_from_points([(3, 2, 1)]), 1)
    np.testing.assert_array_equal(pts, [[3.0, 2.0, 1.0]])


def test_boundary_empty_class_is_empty():
    assert boundary_voxels(vol_from_points([]), 1).shape == (0, 3)


def test_boundary_volume_border_counts_as_outside():
    # a mask filling the whole grid still has a boundary shell
    labels = np.ones((3, 3, 3), dtype=np.uint8)
    pts = boundary_voxels(LabelVolume(labels, (1, 1, 1), 2), 1)
    assert pts.shape == (26, 3)


def test_boundary_scales_with_spacing():
    pts = boundary_voxels(vol_from_points([(1, 2, 3)], spacing=(0.5, 2.0, 3.0)), 1)
    np.testing.assert_allclose(pts, [[0.5, 4.0, 9.0]])


# ------------------------------------------------------------------ distances

def test_asd_identical_is_zero():
    vol = vol_from_points([(2, 2, 2), (2, 2, 3)])
    assert asd(vol, vol.copy(), 1) == 0.0


def test_asd_two_voxels_3mm_apart():
    a = vol_from_points([(0, 0, 0)])
    b = vol_from_points([(0, 0, 3)])
    assert asd(a, b, 1) == pytest.approx(3.0)


def test_asd_hand_case_four_thirds():
    # d(P->G) = 1; d(G->P) = {1, 2}  ->  (1 + 1 + 2) / 3
    p = vol_from_points([(0, 0, 0)])
    g = vol_from_points([(0, 0, 1), (0, 0, 2)])
    assert asd(p, g, 1) == pytest.approx(4.0 / 3.0, rel=1e-12)


def test_asd_empty_boundary_is_undefined():
    with pytest.raises(UndefinedMetric):
        asd(vol_from_points([]), vol_from_points([(1, 1, 1)]), 1)


def test_hausdorff_directed_asymmetry_resolved_by_max():
    # P sits inside G, so only the G->P direction carries the 5 mm gap
    p = vol_from_points([(0, 0, 0)], spacing=(1, 1, 5))
    g = vol_from_points([(0, 0, 0), (0, 0, 1)], spacing=(1, 1, 5))
    assert hausdorff_max(p, g, 1) == pytest.approx(5.0)
    assert hausdorff_max(g, p, 1) == pytest.approx(5.0)


def test_hausdorff_identical_is_zero():
    vol = vol_from_points([(1, 2, 3), (1, 2, 4)])
    assert hausdorff_max(vol, vol.copy(), 1) == 0.0


def test_hausdorff_at_least_asd():
    for seed in range(5):
        a, b = random_pair(seed)
        assert hausdorff_max(a, b, 1) >= asd(a, b, 1) >= 0.0


def test_distances_scale_linearly_with_spacing():
    a, b = random_pair(3)
    a2 = LabelVolume(a.labels, (2, 2, 2), 2)
    b2 = LabelVolume(b.labels, (2, 2, 2), 2)
    assert asd(a2, b2, 1) == 2.0 * asd(a, b, 1)
    assert hausdorff_max(a2, b2, 1) == 2.0 * hausdorff_max(a, b, 1)


def _brute_directed(a_pts, b_pts):
    d2 = ((a_pts[:, None, :] - b_pts[None, :, :]) ** 2).sum(axis=2)
    return np.sqrt(d2.min(axis=1))


@pytest.mark.parametrize("seed", range(8))
def test_brute_force_equivalence(seed):
    # all-pairs recomputation must match bit for bit, not just approximately
    a, b = random_pair(seed)
    pa = boundary_voxels(a, 1)
    pb = boundary_voxels(b, 1)
    d_ab = _brute_directed(pa, pb)
    d_ba = _brute_directed(pb, pa)
    assert asd(a, b, 1) == float((d_ab.sum() + d_ba.sum()) / (d_ab.size + d_ba.size))
    assert hausdorff_max(a, b, 1) == float(max(d_ab.max(), d_ba.max()))


# ------------------------------------------------------------------------- 2d

def test_hausdorff_2d_identical_and_unit_gap():
    sl = np.zeros((6, 6), dtype=np.uint8)
    sl[2, 2] = 1
    assert hausdorff_2d(sl, sl.copy(), 1) == 0.0
    other = np.zeros((6, 6), dtype=np.uint8)
    other[2, 3] = 1
    assert hausdorff_2d(sl, other, 1) == pytest.approx(1.0)


def test_hausdorff_2d_ring_vs_dilated_ring():
    ring = np.zeros((9, 9), dtype=np.uint8)
    ring[2:7, 2:7] = 1
    ring[3:6, 3:6] = 0
    fat = np.zeros((9, 9), dtype=np.uint8)
    fat[1:8, 1:8] = 1
    fat[4, 4] = 0  # keep a hole so it stays a ring
    got = hausdorff_2d(ring, fat, 1)
    pa = np.argwhere(_bmask2(ring)).astype(float)
    pb = np.argwhere(_bmask2(fat)).astype(float)
    brute = max(_brute_directed(pa, pb).max(), _brute_directed(pb, pa).max())
    assert got == pytest.approx(brute)
    assert got <= np.sqrt(2.0) + 1e-12


def _bmask2(slice_labels):
    mask = slice_labels == 1
    padded = np.pad(mask, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return mask & ~interior


def test_hausdorff_2d_respects_spacing():
    a = np.zeros((4, 4), dtype=np.uint8)
    b = np.zeros((4, 4), dtype=np.uint8)
    a[0, 0] = 1
    b[0, 2] = 1
    assert hausdorff_2d(a, b, 1, spacing2=(1.0, 2.5)) == pytest.approx(5.0)


def test_hausdorff_2d_empty_is_undefined():
    with pytest.raises(UndefinedMetric):
        hausdorff_2d(np.zeros((4, 4), dtype=np.uint8),
                     np.ones((4, 4), dtype=np.uint8), 1)


# --------------------------------------------------------------- volume error

def test_volumetric_error_cases():
    gt = vol_from_points([(0, 0, 0), (0, 0, 1)])
    same = vol_from_points([(3, 3, 3), (3, 3, 4)])  # equal count elsewhere
    assert volumetric_error_pct(same, gt, 1) == 0.0
    double = vol_from_points([(0, 0, 0), (0, 0, 1), (1, 0, 0), (1, 0, 1)])
    assert volumetric_error_pct(double, gt, 1) == pytest.approx(100.0)


def test_volumetric_error_110_vs_100():
    gt_mask = np.zeros((10, 10, 10), dtype=bool)
    gt_mask.flat[:100] = True
    pred_mask = np.zeros((10, 10, 10), dtype=bool)
    pred_mask.flat[:110] = True
    assert volumetric_error_pct(vol_from_mask(pred_mask), vol_from_mask(gt_mask),
                                1) == pytest.approx(10.0)


def test_volumetric_error_empty_gt_undefined():
    with pytest.raises(UndefinedMetric):
        volumetric_error_pct(vol_from_points([(0, 0, 0)]), vol_from_points([]), 1)


def test_volumetric_error_empty_pred_is_100():
    assert volumetric_error_pct(vol_from_points([]), vol_from_points([(0, 0, 0)]),
                                1) == pytest.approx(100.0)


# ------------------------------------------------------------------- evaluate

def test_evaluate_perfect_predictions():
    gts = [vol_from_points([(1, 1, 1), (1, 1, 2)]), vol_from_points([(4, 4, 4)])]
    report = evaluate([g.copy() for g in gts], gts)
    assert len(report.rows) == 2
    for row in report.rows:
        assert row.dsc == 1.0
        assert row.asd_mm == 0.0
        assert row.hd_max_mm == 0.0
        assert row.vol_err_pct == 0.0


def test_evaluate_row_count_subjects_times_classes():
    labels = np.zeros((4, 4, 4), dtype=np.uint8)
    labels[0, 0, 0] = 1
    labels[1, 1, 1] = 2
    gts = [LabelVolume(labels, (1, 1, 1), 3, f"s{i}") for i in range(3)]
    report = evaluate([g.copy() for g in gts], gts)
    assert len(report.rows) == 3 * 2


def test_evaluate_undefined_entries_become_none():
    gt = vol_from_points([(1, 1, 1)])
    pred = vol_from_points([])  # empty prediction: distances undefined
    row = evaluate([pred], [gt]).rows[0]
    assert row.dsc == 0.0
    assert row.asd_mm is None
    assert row.hd_max_mm is None
    assert row.vol_err_pct == pytest.approx(100.0)


def test_evaluate_meta_carries_through():
    gt = vol_from_points([(1, 1, 1)])
    report = evaluate([gt.copy()], [gt],
                      meta={"strategy": "equidistant", "n_slices": 3,
                            "subject_ids": ["sub-9"]})
    row = report.rows[0]
    assert (row.subject_id, row.strategy, row.n_slices) == ("sub-9", "equidistant", 3)


def test_report_aggregates_match_hand_recomputation():
    rows = [
        MetricsRow("a", "s", 2, 1, 0.9, 1.0, 2.0, 5.0),
        MetricsRow("b", "s", 2, 1, 0.8, 3.0, 4.0, None),
        MetricsRow("c", "s", 2, 1, 0.7, None, None, 15.0),
    ]
    stats = MetricsReport(rows).aggregates()[("s", 2, 1)]
    assert stats["n"] == 3
    np.testing.assert_allclose(stats["dsc_mean"], np.mean([0.9, 0.8, 0.7]))
    np.testing.assert_allclose(stats["dsc_std"], np.std([0.9, 0.8, 0.7]))
    np.testing.assert_allclose(stats["asd_mm_mean"], 2.0)   # undefined skipped
    np.testing.assert_allclose(stats["vol_err_pct_mean"], 10.0)


def test_report_mean_requires_defined_values():
    report = MetricsReport([MetricsRow("a", "s", 1, 1, 0.5, None, None, None)])
    assert report.mean("dsc") == 0.5
    with pytest.raises(UndefinedMetric):
        report.mean("asd_mm")
