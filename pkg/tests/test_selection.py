import numpy as np
import pytest

from shapeprior.inference import InferConfig, infer_volume, oracle_annotate
from shapeprior.selection import (
    ErrorCurve,
    ErrorMap,
    SlicePlan,
    SliceSpecifier,
    absolute,
    build_error_map,
    equidistant_plan,
    normalize_length,
    percent,
    percent_to_index,
    resolve_plan,
    round_half_down,
    uc1_build_plan,
    uc1_minimal_plan,
    uc1_select_next,
    uc2_error_curve,
    uc2_select_next,
)
from shapeprior.volume import LabelVolume, StructuralError


def organ_volume(spans, nz=32, n_class=None, shape_id=""):
    """spans: {class_id: (first, last)} along the axial direction."""
    n_class = n_class or (max(spans) + 1)
    labels = np.zeros((6, 6, nz), dtype=np.uint8)
    for c, (first, last) in spans.items():
        labels[2:4, 2:4, first:last + 1] = c
    return LabelVolume(labels, (1.0, 1.0, 1.0), n_class, shape_id)


# ----------------------------------------------------------------- specifiers

def test_specifier_validation():
    with pytest.raises(StructuralError):
        SliceSpecifier("relative", 3)
    with pytest.raises(StructuralError):
        absolute(-1)
    with pytest.raises(StructuralError):
        absolute(2.5)
    with pytest.raises(StructuralError):
        percent(101.0)


def test_specifier_round_trip():
    for spec in (absolute(7), percent(62.5)):
        assert SliceSpecifier.from_dict(spec.to_dict()) == spec
    with pytest.raises(StructuralError):
        SliceSpecifier.from_dict({"kind": "absolute"})


def test_plan_rejects_duplicates():
    with pytest.raises(StructuralError):
        SlicePlan([absolute(3), absolute(3)])
    plan = SlicePlan([absolute(3)])
    with pytest.raises(StructuralError):
        plan.append(absolute(3))


def test_plan_prefix_preserves_order():
    plan = SlicePlan([absolute(9), absolute(1), percent(50.0)], "manual")
    pre = plan.prefix(2)
    assert [s.value for s in pre] == [9, 1]
    with pytest.raises(StructuralError):
        plan.prefix(0)
    with pytest.raises(StructuralError):
        plan.prefix(4)


# ---------------------------------------------------------------- equidistant

def test_equidistant_center_of_eleven():
    assert [s.value for s in equidistant_plan(1, 11)] == [5]


def test_equidistant_two_of_ten():
    assert [s.value for s in equidistant_plan(2, 10)] == [2, 7]


def test_equidistant_k_equals_nz_enumerates_all():
    assert [s.value for s in equidistant_plan(9, 9)] == list(range(9))


def test_equidistant_strictly_increasing_in_range():
    for k, nz in [(3, 17), (5, 48), (7, 33)]:
        vals = [s.value for s in equidistant_plan(k, nz)]
        assert vals == sorted(set(vals))
        assert all(0 <= v < nz for v in vals)


def test_equidistant_rejects_bad_k():
    with pytest.raises(StructuralError):
        equidistant_plan(11, 10)
    with pytest.raises(StructuralError):
        equidistant_plan(0, 10)


# ---------------------------------------------------------------- uc1 minimal

def test_round_half_down():
    assert round_half_down(23.5) == 23
    assert round_half_down(23.51) == 24
    assert round_half_down(17.0) == 17
    assert round_half_down(16.5) == 16


def test_uc1_minimal_single_organ_midslice():
    vols = [organ_volume({1: (10, 20)}, shape_id=f"s{i}") for i in range(3)]
    plan = uc1_minimal_plan(vols)
    assert [s.value for s in plan] == [15]
    assert plan.strategy == "uc1"


def test_uc1_minimal_averages_midpoints():
    # mids 15 and 19 -> mean 17
    a = organ_volume({1: (10, 20)}, shape_id="a")
    b = organ_volume({1: (12, 26)}, shape_id="b")
    assert [s.value for s in uc1_minimal_plan([a, b])] == [17]


def test_uc1_minimal_half_mid_rounds_down():
    # span 10..21 -> midpoint 15.5 -> 15
    vol = organ_volume({1: (10, 21)})
    assert [s.value for s in uc1_minimal_plan([vol])] == [15]


def test_uc1_minimal_dedups_and_orders_by_class():
    vol = organ_volume({1: (8, 24), 2: (10, 22), 3: (14, 18)}, nz=32)
    # mids: 16, 16, 16 -> one specifier
    assert [s.value for s in uc1_minimal_plan([vol])] == [16]
    vol2 = organ_volume({1: (20, 28), 2: (2, 6)}, nz=32)
    assert [s.value for s in uc1_minimal_plan([vol2])] == [24, 4]


def test_uc1_minimal_warns_on_absent_class():
    vol = organ_volume({1: (4, 8)}, n_class=3)
    with pytest.warns(UserWarning, match="class 2"):
        plan = uc1_minimal_plan([vol])
    assert [s.value for s in plan] == [6]


# ------------------------------------------------------------------ error map

def test_error_map_validation():
    with pytest.raises(StructuralError):
        ErrorMap(np.zeros((3, 3)))
    with pytest.raises(StructuralError):
        ErrorMap(np.full((2, 2, 2), -0.1))
    with pytest.raises(StructuralError):
        ErrorMap(np.full((2, 2, 2), np.nan))


def test_error_map_slice_scores():
    values = np.zeros((2, 2, 3))
    values[:, :, 1] = 1.0
    values[0, 0, 2] = 1.0
    np.testing.assert_allclose(ErrorMap(values).slice_scores(), [0.0, 1.0, 0.25])


def test_build_error_map_matches_direct_recomputation(tiny_world):
    params = tiny_world["params"]
    dataset = tiny_world["dataset"]
    plan = SlicePlan([absolute(4), absolute(7)])
    cfg = InferConfig(epochs=40, seed=5)
    emap = build_error_map(params, dataset, plan, cfg)
    assert emap.values.min() >= 0.0 and emap.values.max() <= 1.0
    total = np.zeros(dataset[0].dims)
    for v in dataset:
        pred, _, _ = infer_volume(params, oracle_annotate(v, plan), cfg)
        total += pred.labels != v.labels
    np.testing.assert_array_equal(emap.values, total / len(dataset))


# ------------------------------------------------------------ uc1 next / plan

def scores_to_map(scores):
    return ErrorMap(np.asarray(scores, dtype=np.float64).reshape(1, 1, -1))


def test_uc1_select_next_argmax():
    assert uc1_select_next(scores_to_map([0.1, 0.9, 0.3]), []).value == 1


def test_uc1_select_next_tie_breaks_low():
    assert uc1_select_next(scores_to_map([0.5, 0.5, 0.2]), []).value == 0


def test_uc1_select_next_masks_taken():
    emap = scores_to_map([0.1, 0.9, 0.3])
    assert uc1_select_next(emap, [1]).value == 2
    assert uc1_select_next(emap, SlicePlan([absolute(1), absolute(2)])).value == 0


def test_uc1_select_next_exhausted():
    with pytest.raises(StructuralError):
        uc1_select_next(scores_to_map([0.1, 0.2]), [0, 1])


def test_uc1_select_next_enumerates_all_slices():
    emap = scores_to_map([0.4, 0.1, 0.4, 0.2])
    taken = []
    for _ in range(4):
        taken.append(uc1_select_next(emap, taken).value)
    assert sorted(taken) == [0, 1, 2, 3]
    assert taken == [0, 2, 3, 1]  # score order with tie-break


def test_uc1_build_plan_minimal_budget_is_identity(tiny_world):
    dataset = tiny_world["dataset"]
    minimal = uc1_minimal_plan(dataset)
    built = uc1_build_plan(tiny_world["params"], dataset, len(minimal),
                           InferConfig(epochs=10))
    assert [s.value for s in built] == [s.value for s in minimal]


def test_uc1_build_plan_prefix_property(tiny_world):
    # growing the budget only appends: plan(k) == plan(k+2)[:k]
    params, dataset = tiny_world["params"], tiny_world["dataset"]
    cfg = InferConfig(epochs=30, seed=9)
    small = uc1_build_plan(params, dataset, 2, cfg)
    large = uc1_build_plan(params, dataset, 4, cfg)
    assert [s.value for s in large.prefix(2)] == [s.value for s in small]
    vals = [s.value for s in large]
    assert len(set(vals)) == len(vals)


def test_uc1_build_plan_reproducible(tiny_world):
    params, dataset = tiny_world["params"], tiny_world["dataset"]
    cfg = InferConfig(epochs=25, seed=3)
    a = uc1_build_plan(params, dataset, 3, cfg)
    b = uc1_build_plan(params, dataset, 3, cfg)
    assert [s.value for s in a] == [s.value for s in b]


def test_uc1_build_plan_rejects_budget_below_minimal(tiny_world):
    with pytest.raises(StructuralError):
        uc1_build_plan(tiny_world["params"], tiny_world["dataset"], 0,
                       InferConfig(epochs=1))


# ----------------------------------------------------- length normalization

def test_normalize_length_and_percent_mapping():
    vol = organ_volume({1: (10, 50)}, nz=64)
    assert normalize_length(vol) == (10, 50)
    assert percent_to_index(10, 50, 0.0) == 10
    assert percent_to_index(10, 50, 50.0) == 30
    assert percent_to_index(10, 50, 100.0) == 50
    assert percent_to_index(0, 100, 37.0) == 37


def test_percent_on_single_slice_object():
    vol = organ_volume({1: (7, 7)}, nz=16)
    for p in (0.0, 33.0, 100.0):
        assert percent_to_index(*normalize_length(vol), p) == 7


def test_resolve_plan_absolute_passthrough_sorted():
    vol = organ_volume({1: (2, 9)}, nz=16)
    plan = SlicePlan([absolute(9), absolute(1), absolute(4)])
    assert resolve_plan(plan, vol) == [1, 4, 9]


def test_resolve_plan_percent_mapping():
    vol = organ_volume({1: (10, 50)}, nz=64)
    plan = SlicePlan([percent(0.0), percent(50.0), percent(100.0)])
    assert resolve_plan(plan, vol) == [10, 30, 50]


def test_resolve_plan_dedups_nearby_percents():
    vol = organ_volume({1: (0, 10)}, nz=16)
    # 49% -> 4.9+0.5 -> 5, 50% -> 5.5 -> 5 (round half up)
    plan = SlicePlan([percent(49.0), percent(50.0)])
    assert resolve_plan(plan, vol) == [5]


def test_resolve_plan_rejects_out_of_volume():
    vol = organ_volume({1: (2, 9)}, nz=16)
    with pytest.raises(StructuralError):
        resolve_plan(SlicePlan([absolute(16)]), vol)


# ---------------------------------------------------------------- error curve

def muscle_pair(corrupt_low=False, nz=64):
    gt = organ_volume({1: (8, 56)}, nz=nz, shape_id="gt")
    pred_labels = gt.labels.copy()
    if corrupt_low:
        # shift the mask sideways on the distal fifth of the span
        for k in range(8, 18):
            sl = np.zeros((6, 6), dtype=np.uint8)
            sl[0:2, 0:2] = 1
            pred_labels[:, :, k] = sl
    pred = LabelVolume(pred_labels, gt.spacing_mm, 2, "pred")
    return pred, gt


def test_error_curve_perfect_prediction_is_zero():
    pred, gt = muscle_pair()
    curve = uc2_error_curve([pred], [gt])
    assert curve.values.shape == (101,)
    np.testing.assert_array_equal(curve.values, 0.0)


def test_error_curve_peaks_where_corrupted():
    pred, gt = muscle_pair(corrupt_low=True)
    curve = uc2_error_curve([pred], [gt])
    assert 0.0 <= curve.values.min() and curve.values.max() <= 1.0
    assert int(np.argmax(curve.values)) <= 33


def test_error_curve_rejects_empty_and_misaligned():
    pred, gt = muscle_pair()
    with pytest.raises(StructuralError):
        uc2_error_curve([], [])
    with pytest.raises(StructuralError):
        uc2_error_curve([pred], [organ_volume({1: (2, 5)}, nz=32)])


def test_error_curve_all_empty_pred_is_undefined():
    _, gt = muscle_pair()
    empty = LabelVolume(np.zeros_like(gt.labels), gt.spacing_mm, 2, "empty")
    with pytest.raises(StructuralError):
        uc2_error_curve([empty], [gt])


def test_error_curve_validation():
    with pytest.raises(StructuralError):
        ErrorCurve(np.zeros(100))
    with pytest.raises(StructuralError):
        ErrorCurve(np.full(101, np.inf))


# ------------------------------------------------------------------ uc2 picks

def full_span_volume(nz=101, shape_id=""):
    labels = np.ones((2, 2, nz), dtype=np.uint8)
    return LabelVolume(labels, (1, 1, 1), 2, shape_id)


def test_uc2_select_next_hand_built_peaks():
    # curve peaking at 10% and 90%: zone 1 picks 10, then zone 3 picks 90
    values = np.zeros(101)
    values[10] = 1.0
    values[90] = 0.9
    curve = ErrorCurve(values)
    adaptation = [full_span_volume(shape_id=f"m{i}") for i in range(3)]
    plan = SlicePlan([percent(0.0), percent(100.0), percent(50.0)])

    spec, zone, relaxed = uc2_select_next(curve, plan, 1, adaptation)
    assert (spec.kind, spec.value, zone, relaxed) == ("percent", 10.0, 1, None)
    plan.append(spec)
    spec, zone, relaxed = uc2_select_next(curve, plan, 3, adaptation)
    assert (spec.kind, spec.value, zone, relaxed) == ("percent", 90.0, 3, None)


def test_uc2_select_next_tie_breaks_to_lower_percent():
    curve = ErrorCurve(np.zeros(101))
    adaptation = [full_span_volume() for _ in range(3)]
    plan = SlicePlan([percent(0.0), percent(100.0), percent(50.0)])
    spec, _, _ = uc2_select_next(curve, plan, 1, adaptation)
    assert spec.value == 5.0  # lowest feasible percent in zone 1


def test_uc2_select_next_respects_spacing_in_every_volume():
    curve = ErrorCurve(np.linspace(1.0, 0.0, 101))  # favors low percents
    # second volume has a short span, shrinking the feasible window
    adaptation = [full_span_volume(), full_span_volume(),
                  organ_volume({1: (0, 20)}, nz=32)]
    plan = SlicePlan([percent(0.0), percent(100.0), percent(50.0)])
    spec, zone, relaxed = uc2_select_next(curve, plan, 1, adaptation)
    assert relaxed is None and zone == 1
    for vol in adaptation:
        resolved = resolve_plan(SlicePlan([spec]), vol)[0]
        for taken in resolve_plan(plan, vol):
            assert abs(resolved - taken) >= 5


def test_uc2_select_next_falls_back_then_relaxes():
    curve = ErrorCurve(np.linspace(1.0, 0.0, 101))
    short = organ_volume({1: (0, 8)}, nz=16)
    adaptation = [short, short.copy(), short.copy()]
    plan = SlicePlan([percent(0.0), percent(100.0), percent(50.0)])
    with pytest.warns(UserWarning, match="relaxed"):
        spec, zone, relaxed = uc2_select_next(curve, plan, 1, adaptation)
    assert relaxed is not None and relaxed < 5


def test_uc2_select_next_rejects_bad_zone():
    with pytest.raises(StructuralError):
        uc2_select_next(ErrorCurve(np.zeros(101)), SlicePlan([percent(0.0)]),
                        2, [full_span_volume()] * 3)
