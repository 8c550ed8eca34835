"""Slice-plan construction: equidistant baseline, error-map-driven selection
for aligned multi-organ scenes, and length-normalized zone-based selection
for elongated shapes.

Plans keep their selection order, so the first k specifiers of a larger plan
are exactly the plan that selection would have produced with budget k.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .inference import InferConfig, infer_volume, oracle_annotate
from .metrics import hausdorff_2d
from .model import ModelParams
from .volume import LabelVolume, StructuralError, class_span, foreground_span

PERCENT_GRID = np.arange(101)
# zone boundaries at thirds of normalized length; integer-percent candidates
ZONE_PERCENTS = {1: range(0, 34), 3: range(67, 101)}
MIN_SLICE_SPACING = 5


@dataclass(frozen=True)
class SliceSpecifier:
    """A slice request: absolute axial index or percent of object length."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("absolute", "percent"):
            raise StructuralError(f"unknown specifier kind {self.kind!r}")
        if self.kind == "absolute":
            if self.value < 0 or self.value != int(self.value):
                raise StructuralError(
                    f"absolute specifier must be a nonnegative integer, got {self.value}")
            object.__setattr__(self, "value", int(self.value))
        elif not 0.0 <= self.value <= 100.0:
            raise StructuralError(f"percent {self.value} outside [0, 100]")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_dict(cls, d: dict) -> "SliceSpecifier":
        if not isinstance(d, dict) or set(d) != {"kind", "value"}:
            raise StructuralError(f"bad specifier record {d!r}")
        return cls(d["kind"], d["value"])


def absolute(index: int) -> SliceSpecifier:
    return SliceSpecifier("absolute", index)


def percent(p: float) -> SliceSpecifier:
    return SliceSpecifier("percent", p)


@dataclass
class SlicePlan:
    """Ordered, duplicate-free slice specifiers plus provenance."""

    specifiers: list[SliceSpecifier] = field(default_factory=list)
    strategy: str = "manual"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for spec in self.specifiers:
            key = (spec.kind, spec.value)
            if key in seen:
                raise StructuralError(f"duplicate specifier {spec}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.specifiers)

    def __iter__(self):
        return iter(self.specifiers)

    def append(self, spec: SliceSpecifier) -> None:
        if any((s.kind, s.value) == (spec.kind, spec.value)
               for s in self.specifiers):
            raise StructuralError(f"duplicate specifier {spec}")
        self.specifiers.append(spec)

    def prefix(self, k: int) -> "SlicePlan":
        """First k specifiers — the plan selection would have produced with
        budget k, since plan order is selection order."""
        if not 1 <= k <= len(self.specifiers):
            raise StructuralError(f"prefix length {k} outside 1..{len(self)}")
        return SlicePlan(list(self.specifiers[:k]), self.strategy,
                         dict(self.provenance))


@dataclass
class ErrorMap:
    """Mean per-voxel misclassification rate over a subject set."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise StructuralError(f"error map must be 3-D, got {values.shape}")
        if not np.all(np.isfinite(values)) or values.min() < 0:
            raise StructuralError("error map entries must be finite and >= 0")
        self.values = values

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    def slice_scores(self) -> np.ndarray:
        """Mean error per axial slice (fair across in-plane sizes)."""
        return self.values.mean(axis=(0, 1))


@dataclass
class ErrorCurve:
    """Combined error vs. percent position, indexed by integer percent 0..100."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (101,):
            raise StructuralError(f"error curve must have 101 entries, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise StructuralError("error curve entries must be finite")
        self.values = values

    def __getitem__(self, p: int) -> float:
        return float(self.values[p])


def equidistant_plan(k: int, nz: int) -> SlicePlan:
    """Centers of k equal bins over the full axial extent: ⌊(2j+1)·nz/(2k)⌋.

    Bins cover the whole volume, so planned slices may land on background-only
    levels — that is the baseline's known failure mode, kept on purpose.
    """
    if k < 1:
        raise StructuralError("k must be >= 1")
    if k > nz:
        raise StructuralError(f"k={k} exceeds {nz} slices")
    indices = [((2 * j + 1) * nz) // (2 * k) for j in range(k)]
    return SlicePlan([absolute(i) for i in indices], "equidistant",
                     {"nz": nz, "k": k})


def round_half_down(x: float) -> int:
    """Round to nearest integer, .5 going down (23.5 -> 23)."""
    return int(math.ceil(x - 0.5))


def uc1_minimal_plan(train_set: list[LabelVolume]) -> SlicePlan:
    """One slice per organ: the mean mid-slice of its occupied axial range.

    Midpoints are averaged over the subjects where the class occurs, then
    rounded half-down. Duplicates collapse; order follows ascending class id.
    """
    if not train_set:
        raise StructuralError("empty training set")
    n_class = train_set[0].n_class
    plan = SlicePlan([], "uc1", {"n_train": len(train_set)})
    for c in range(1, n_class):
        mids = []
        for v in train_set:
            span = class_span(v, c)
            if span is not None:
                mids.append((span[0] + span[1]) / 2.0)
        if not mids:
            warnings.warn(f"class {c} absent from every subject; skipped")
            continue
        idx = round_half_down(float(np.mean(mids)))
        spec = absolute(idx)
        if all((s.kind, s.value) != (spec.kind, spec.value) for s in plan):
            plan.append(spec)
    if len(plan) == 0:
        raise StructuralError("no foreground class present in any subject")
    return plan


def build_error_map(params: ModelParams, train_set: list[LabelVolume],
                    plan: SlicePlan, infer_config: InferConfig) -> ErrorMap:
    """Mean misclassification indicator after inferring each subject from
    its own oracle-annotated planned slices."""
    if len(plan) == 0:
        raise StructuralError("empty plan")
    if not train_set:
        raise StructuralError("empty training set")
    dims = train_set[0].dims
    total = np.zeros(dims, dtype=np.float64)
    for v in train_set:
        if v.dims != dims:
            raise StructuralError("error map requires aligned volumes")
        pred, _, _ = infer_volume(params, oracle_annotate(v, plan), infer_config)
        total += pred.labels != v.labels
    return ErrorMap(total / len(train_set))


def uc1_select_next(error_map: ErrorMap, existing) -> SliceSpecifier:
    """Unselected slice with the highest mean error; ties -> lowest index.

    No minimum-distance constraint: consecutive picks may be adjacent.
    """
    scores = error_map.slice_scores().copy()
    if isinstance(existing, SlicePlan):
        taken = [s.value for s in existing if s.kind == "absolute"]
    else:
        taken = [int(i) for i in existing]
    for i in taken:
        if 0 <= i < scores.size:
            scores[i] = -np.inf
    if not np.any(np.isfinite(scores)):
        raise StructuralError("every slice already selected")
    return absolute(int(np.argmax(scores)))


def uc1_build_plan(params: ModelParams, train_set: list[LabelVolume],
                   max_slices: int, infer_config: InferConfig) -> SlicePlan:
    """Organ mid-slices, then greedy error-map augmentation to max_slices."""
    plan = uc1_minimal_plan(train_set)
    if max_slices < len(plan):
        raise StructuralError(
            f"max_slices={max_slices} below the {len(plan)}-slice minimal plan")
    plan.provenance.update({
        "dataset": [v.shape_id for v in train_set],
        "seed": infer_config.seed,
        "max_slices": max_slices,
    })
    while len(plan) < max_slices:
        emap = build_error_map(params, train_set, plan, infer_config)
        plan.append(uc1_select_next(emap, plan))
    return plan


def normalize_length(volume: LabelVolume) -> tuple[int, int]:
    """First/last axial indices with any foreground: the 0% and 100% marks."""
    return foreground_span(volume)


def percent_to_index(first: int, last: int, p: float) -> int:
    """Percent of object length -> absolute index (round half up)."""
    return int(math.floor(first + (p / 100.0) * (last - first) + 0.5))


def resolve_plan(plan: SlicePlan, volume: LabelVolume) -> list[int]:
    """Absolute indices of a plan against one volume: percents resolved over
    the foreground span, duplicates removed, sorted ascending."""
    if len(plan) == 0:
        raise StructuralError("empty plan")
    out = set()
    span = None
    for spec in plan:
        if spec.kind == "absolute":
            if spec.value >= volume.nz:
                raise StructuralError(
                    f"planned index {spec.value} outside volume of {volume.nz} slices")
            out.add(int(spec.value))
        else:
            if span is None:
                span = normalize_length(volume)
            out.add(percent_to_index(span[0], span[1], spec.value))
    return sorted(out)


def _slice_hausdorff_or_nan(pred_sl, gt_sl, class_id, spacing2) -> float:
    pm = pred_sl == class_id
    gm = gt_sl == class_id
    if not pm.any() or not gm.any():
        return np.nan
    return hausdorff_2d(pred_sl, gt_sl, class_id, spacing2)


def _fill_gaps(values: np.ndarray) -> np.ndarray:
    """Linear interpolation over NaN holes; edges take the nearest value."""
    valid = np.isfinite(values)
    if not valid.any():
        raise StructuralError("metric undefined on every slice of the span")
    if valid.all():
        return values
    x = np.arange(values.size)
    return np.interp(x, x[valid], values[valid])


def uc2_error_curve(preds: list[LabelVolume], gts: list[LabelVolume],
                    spacing=None, class_id: int = 1) -> ErrorCurve:
    """Slice-wise 2D Hausdorff + area error vs. percent of object length.

    Per subject, metrics are computed on every slice of the GT foreground
    span, mapped to 0..100% of that span, and linearly resampled to the
    integer percent grid. Curves average over subjects; each metric is then
    min-max normalized (a constant curve maps to all zeros) and the two are
    averaged into one combined curve.
    """
    if len(preds) != len(gts) or not gts:
        raise StructuralError("preds and gts must be nonempty aligned lists")
    hd_sum = np.zeros(101)
    area_sum = np.zeros(101)
    for pred, gt in zip(preds, gts):
        if pred.dims != gt.dims:
            raise StructuralError("pred/gt dims differ")
        sp = tuple(gt.spacing_mm[:2]) if spacing is None else tuple(spacing[:2])
        first, last = normalize_length(gt)
        ks = np.arange(first, last + 1)
        if last > first:
            pcts = 100.0 * (ks - first) / (last - first)
        else:
            pcts = np.array([0.0])
        hd_vals = np.array([
            _slice_hausdorff_or_nan(pred.labels[:, :, k], gt.labels[:, :, k],
                                    class_id, sp)
            for k in ks])
        area_vals = np.array([
            abs(int((pred.labels[:, :, k] == class_id).sum())
                - int((gt.labels[:, :, k] == class_id).sum()))
            / max(int((gt.labels[:, :, k] == class_id).sum()), 1)
            for k in ks])
        hd_vals = _fill_gaps(hd_vals)
        hd_sum += np.interp(PERCENT_GRID, pcts, hd_vals)
        area_sum += np.interp(PERCENT_GRID, pcts, area_vals)

    def _minmax(curve):
        lo, hi = curve.min(), curve.max()
        if hi - lo <= 0:
            return np.zeros_like(curve)
        return (curve - lo) / (hi - lo)

    hd_curve = _minmax(hd_sum / len(gts))
    area_curve = _minmax(area_sum / len(gts))
    return ErrorCurve((hd_curve + area_curve) / 2.0)


def _feasible_percents(zone: int, plan: SlicePlan,
                       adaptation_set: list[LabelVolume],
                       min_spacing: int) -> list[int]:
    """Zone candidates whose resolved index keeps >= min_spacing slices from
    every already-selected index in EVERY adaptation volume."""
    taken_values = {(s.kind, s.value) for s in plan}
    spans = [normalize_length(v) for v in adaptation_set]
    selected = [resolve_plan(plan, v) for v in adaptation_set]
    out = []
    for p in ZONE_PERCENTS[zone]:
        if ("percent", float(p)) in taken_values or ("percent", p) in taken_values:
            continue
        ok = True
        for (first, last), sel in zip(spans, selected):
            r = percent_to_index(first, last, p)
            if any(abs(r - s) < min_spacing for s in sel):
                ok = False
                break
        if ok:
            out.append(p)
    return out


def uc2_select_next(curve: ErrorCurve, plan: SlicePlan, zone: int,
                    adaptation_set: list[LabelVolume],
                    min_spacing: int = MIN_SLICE_SPACING):
    """Highest-scoring feasible percent in the active zone.

    Falls back to the other zone when the active one has no feasible
    candidate, then relaxes the spacing constraint to the largest feasible
    distance (logged via the returned relaxation value). Ties break toward
    the lower percent. Returns (specifier, used_zone, relaxed_spacing|None).
    """
    if zone not in ZONE_PERCENTS:
        raise StructuralError(f"zone must be 1 or 3, got {zone}")
    other = 3 if zone == 1 else 1

    def _best(cands):
        best_p, best_s = None, -np.inf
        for p in cands:
            if curve[p] > best_s:
                best_p, best_s = p, curve[p]
        return best_p

    for use_zone in (zone, other):
        cands = _feasible_percents(use_zone, plan, adaptation_set, min_spacing)
        if cands:
            return percent(float(_best(cands))), use_zone, None
    for d in range(min_spacing - 1, -1, -1):
        for use_zone in (zone, other):
            cands = _feasible_percents(use_zone, plan, adaptation_set, d)
            if cands:
                warnings.warn(
                    f"slice spacing relaxed to {d} (no candidate at {min_spacing})")
                return percent(float(_best(cands))), use_zone, d
    raise StructuralError("no unselected percent candidate remains")


def uc2_build_plan(params: ModelParams, adaptation_set: list[LabelVolume],
                   max_slices: int, infer_config: InferConfig) -> SlicePlan:
    """Insertions + midsection, then zone-alternating error-curve picks.

    The minimal subset is {0%, 100%, 50%} of object length. Each further
    slice comes from the error curve measured on the three adaptation
    subjects, alternating between the distal third (zone 1) and proximal
    third (zone 3), subject to the minimum-spacing constraint.
    """
    if len(adaptation_set) != 3:
        raise StructuralError(
            f"adaptation set must contain exactly 3 volumes, got {len(adaptation_set)}")
    if max_slices < 3:
        raise StructuralError("max_slices must be >= 3")
    plan = SlicePlan([percent(0.0), percent(100.0), percent(50.0)], "uc2",
                     {"dataset": [v.shape_id for v in adaptation_set],
                      "seed": infer_config.seed, "max_slices": max_slices,
                      "relaxations": []})
    while len(plan) < max_slices:
        preds = [infer_volume(params, oracle_annotate(v, plan), infer_config)[0]
                 for v in adaptation_set]
        curve = uc2_error_curve(preds, adaptation_set)
        zone = 1 if (len(plan) - 3) % 2 == 0 else 3
        spec, used_zone, relaxed = uc2_select_next(curve, plan, zone,
                                                   adaptation_set)
        if used_zone != zone or relaxed is not None:
            plan.provenance["relaxations"].append(
                {"position": len(plan), "target_zone": zone,
                 "used_zone": used_zone, "spacing": relaxed})
        plan.append(spec)
    return plan
