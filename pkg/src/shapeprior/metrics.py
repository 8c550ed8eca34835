"""Segmentation metrics: DSC, average surface distance, exact maximum
Hausdorff distance (3D and slice-wise 2D), and volumetric error.

Surfaces are voxel-center point sets: a voxel belongs to the boundary when
at least one of its face neighbors (6 in 3D, 4 in 2D) lies outside the
class; the volume border counts as outside. Distances are Euclidean in mm.
All-pairs evaluation is exact and affordable at the scales used here; there
is deliberately no approximate fast path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .volume import LabelVolume, StructuralError


class UndefinedMetric(ValueError):
    """A distance/volume metric with no defined value (an empty operand).

    Reports carry these as explicit NA cells, never as silent zeros.
    """


def _check_aligned(pred: LabelVolume, gt: LabelVolume):
    if pred.dims != gt.dims:
        raise StructuralError(f"dims differ: {pred.dims} vs {gt.dims}")


def dsc(pred: LabelVolume, gt: LabelVolume, class_id: int) -> float:
    """2|P∩G| / (|P|+|G|); 1 when both empty, 0 when exactly one is."""
    _check_aligned(pred, gt)
    p = pred.labels == class_id
    g = gt.labels == class_id
    np_, ng = int(p.sum()), int(g.sum())
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    inter = int(np.logical_and(p, g).sum())
    return 2.0 * inter / (np_ + ng)


def _boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Face-neighborhood boundary of a boolean grid (2-D or 3-D)."""
    if mask.ndim not in (2, 3):
        raise StructuralError(f"mask must be 2-D or 3-D, got {mask.ndim}-D")
    # padding with False makes the volume border count as outside
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    interior = np.ones_like(mask)
    for axis in range(mask.ndim):
        lo = [slice(1, -1)] * mask.ndim
        hi = [slice(1, -1)] * mask.ndim
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        interior &= padded[tuple(lo)] & padded[tuple(hi)]
    return mask & ~interior


def boundary_voxels(volume: LabelVolume, class_id: int) -> np.ndarray:
    """(K, 3) physical-mm centers of the class's boundary voxels."""
    border = _boundary_mask(volume.labels == class_id)
    pts = np.argwhere(border).astype(np.float64)
    return pts * np.asarray(volume.spacing_mm, dtype=np.float64)


def _boundary_points_2d(slice_labels: np.ndarray, class_id: int,
                        spacing2) -> np.ndarray:
    border = _boundary_mask(np.asarray(slice_labels) == class_id)
    pts = np.argwhere(border).astype(np.float64)
    return pts * np.asarray(spacing2, dtype=np.float64)


_PAIR_CHUNK = 256


def _nearest_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-point squared distance from each row of a to its nearest row of b.

    Plain chunked broadcasting: identical arithmetic to the all-pairs brute
    force ((dx²+dy²)+dz², then min), so results are bit-exact against it.
    """
    out = np.empty(a.shape[0])
    for start in range(0, a.shape[0], _PAIR_CHUNK):
        block = a[start:start + _PAIR_CHUNK]
        d2 = ((block[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        out[start:start + _PAIR_CHUNK] = d2.min(axis=1)
    return out


def _surface_distances(pred_pts: np.ndarray, gt_pts: np.ndarray):
    if pred_pts.shape[0] == 0 or gt_pts.shape[0] == 0:
        raise UndefinedMetric("empty boundary: surface distance undefined")
    return (np.sqrt(_nearest_sq(pred_pts, gt_pts)),
            np.sqrt(_nearest_sq(gt_pts, pred_pts)))


def asd(pred: LabelVolume, gt: LabelVolume, class_id: int,
        spacing=None) -> float:
    """Symmetric average surface distance in mm."""
    _check_aligned(pred, gt)
    sp = gt.spacing_mm if spacing is None else spacing
    d_pg, d_gp = _surface_distances(
        _scaled_boundary(pred, class_id, sp), _scaled_boundary(gt, class_id, sp))
    return float((d_pg.sum() + d_gp.sum()) / (d_pg.size + d_gp.size))


def hausdorff_max(pred: LabelVolume, gt: LabelVolume, class_id: int,
                  spacing=None) -> float:
    """Exact maximum Hausdorff distance in mm (no percentile)."""
    _check_aligned(pred, gt)
    sp = gt.spacing_mm if spacing is None else spacing
    d_pg, d_gp = _surface_distances(
        _scaled_boundary(pred, class_id, sp), _scaled_boundary(gt, class_id, sp))
    return float(max(d_pg.max(), d_gp.max()))


def _scaled_boundary(volume: LabelVolume, class_id: int, spacing) -> np.ndarray:
    border = _boundary_mask(volume.labels == class_id)
    pts = np.argwhere(border).astype(np.float64)
    return pts * np.asarray(spacing, dtype=np.float64)


def hausdorff_2d(pred_slice: np.ndarray, gt_slice: np.ndarray, class_id: int,
                 spacing2=(1.0, 1.0)) -> float:
    """Slice-wise exact Hausdorff with 4-neighborhood boundaries (mm)."""
    pred_slice = np.asarray(pred_slice)
    gt_slice = np.asarray(gt_slice)
    if pred_slice.shape != gt_slice.shape:
        raise StructuralError(
            f"slice shapes differ: {pred_slice.shape} vs {gt_slice.shape}")
    d_pg, d_gp = _surface_distances(
        _boundary_points_2d(pred_slice, class_id, spacing2),
        _boundary_points_2d(gt_slice, class_id, spacing2))
    return float(max(d_pg.max(), d_gp.max()))


def volumetric_error_pct(pred: LabelVolume, gt: LabelVolume, class_id: int,
                         spacing=None) -> float:
    """100·|V_pred − V_gt| / V_gt, volumes in mm³."""
    _check_aligned(pred, gt)
    sp = gt.spacing_mm if spacing is None else spacing
    voxel = float(np.prod(np.asarray(sp, dtype=np.float64)))
    v_pred = int((pred.labels == class_id).sum()) * voxel
    v_gt = int((gt.labels == class_id).sum()) * voxel
    if v_gt == 0:
        raise UndefinedMetric("empty ground-truth class: volume error undefined")
    return 100.0 * abs(v_pred - v_gt) / v_gt


@dataclass
class MetricsRow:
    subject_id: str
    strategy: str
    n_slices: int
    class_id: int
    dsc: float
    asd_mm: Optional[float]
    hd_max_mm: Optional[float]
    vol_err_pct: Optional[float]


@dataclass
class MetricsReport:
    rows: list[MetricsRow]

    def values(self, metric: str, class_id: int | None = None) -> list[float]:
        """Defined values of one metric, optionally for a single class."""
        out = []
        for r in self.rows:
            if class_id is not None and r.class_id != class_id:
                continue
            v = getattr(r, metric)
            if v is not None:
                out.append(v)
        return out

    def mean(self, metric: str, class_id: int | None = None) -> float:
        vals = self.values(metric, class_id)
        if not vals:
            raise UndefinedMetric(f"no defined {metric} entries")
        return float(np.mean(vals))

    def aggregates(self) -> dict:
        """mean ± std per (strategy, n_slices, class_id), undefined skipped."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault((r.strategy, r.n_slices, r.class_id), []).append(r)
        out = {}
        for key, rows in sorted(groups.items()):
            stats = {"n": len(rows)}
            for metric in ("dsc", "asd_mm", "hd_max_mm", "vol_err_pct"):
                vals = [getattr(r, metric) for r in rows
                        if getattr(r, metric) is not None]
                if vals:
                    stats[f"{metric}_mean"] = float(np.mean(vals))
                    stats[f"{metric}_std"] = float(np.std(vals))
                else:
                    stats[f"{metric}_mean"] = None
                    stats[f"{metric}_std"] = None
            out[key] = stats
        return out


def evaluate(preds: list[LabelVolume], gts: list[LabelVolume],
             meta: dict | None = None) -> MetricsReport:
    """All metrics for every foreground class of every subject.

    ``meta`` may carry strategy, n_slices and subject_ids; undefined metric
    entries become None (NA in the CSV), never zeros.
    """
    if len(preds) != len(gts):
        raise StructuralError("preds and gts must be aligned")
    meta = meta or {}
    strategy = meta.get("strategy", "")
    n_slices = int(meta.get("n_slices", 0))
    subject_ids = meta.get("subject_ids")
    rows = []
    for i, (pred, gt) in enumerate(zip(preds, gts)):
        _check_aligned(pred, gt)
        sid = subject_ids[i] if subject_ids else (gt.shape_id or f"subject_{i:03d}")
        for c in range(1, gt.n_class):
            try:
                a = asd(pred, gt, c)
                h = hausdorff_max(pred, gt, c)
            except UndefinedMetric:
                a, h = None, None
            try:
                ve = volumetric_error_pct(pred, gt, c)
            except UndefinedMetric:
                ve = None
            rows.append(MetricsRow(sid, strategy, n_slices, c,
                                   dsc(pred, gt, c), a, h, ve))
    return MetricsReport(rows)
