"""Few-shot prediction of an unseen shape from a handful of annotated slices.

The decoder weights stay frozen; only a fresh latent code is optimized, and
the objective is evaluated over every voxel of the annotated slices (a 2D
expert mask defines all pixels on its slice, background included).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import LossConfig, objective_from_logits
from .model import (LatentCode, ModelParams, normalize_indices, predict_volume,
                    seeded_rng, slice_index_grid)
from .numerics import AdamState, NumericsError, adam_step, backward, forward
from .volume import LabelVolume, StructuralError


@dataclass(frozen=True)
class SliceAnnotation:
    """One fully-labelled axial slice: index plus an (nx, ny) label grid."""

    axial_index: int
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise StructuralError(
                f"slice labels must be 2-D, got shape {labels.shape}")
        if self.axial_index < 0:
            raise StructuralError("axial_index must be >= 0")
        object.__setattr__(self, "labels", labels.astype(np.uint8))


@dataclass
class SliceAnnotationSet:
    """Annotations for distinct slices of one target volume."""

    dims: tuple[int, int, int]
    spacing_mm: tuple[float, float, float]
    n_class: int
    annotations: list[SliceAnnotation] = field(default_factory=list)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise StructuralError(f"bad dims {self.dims}")
        if self.n_class < 2:
            raise StructuralError("n_class must be >= 2")
        if not self.annotations:
            raise StructuralError("annotation set is empty")
        nx, ny, nz = self.dims
        seen = set()
        for ann in self.annotations:
            if ann.axial_index >= nz:
                raise StructuralError(
                    f"annotated index {ann.axial_index} outside volume of {nz} slices")
            if ann.axial_index in seen:
                raise StructuralError(
                    f"duplicate annotation at index {ann.axial_index}")
            seen.add(ann.axial_index)
            if ann.labels.shape != (nx, ny):
                raise StructuralError(
                    f"slice grid {ann.labels.shape} != volume cross-section {(nx, ny)}")
            if ann.labels.max(initial=0) >= self.n_class:
                raise StructuralError("annotation label out of range")
        self.annotations = sorted(self.annotations, key=lambda a: a.axial_index)

    @property
    def indices(self) -> list[int]:
        return [a.axial_index for a in self.annotations]

    def __len__(self) -> int:
        return len(self.annotations)


@dataclass(frozen=True)
class InferConfig:
    """Latent-only optimization settings.

    300 epochs suit compact multi-organ scenes; elongated or shifted shapes
    need longer (1500) to settle.
    """

    epochs: int = 300
    lr_latent: float = 1e-3
    seed: int = 0
    n_latent_restarts: int = 1
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise StructuralError("epochs must be >= 1")
        if self.lr_latent <= 0:
            raise StructuralError("lr_latent must be > 0")
        if self.n_latent_restarts < 1:
            raise StructuralError("n_latent_restarts must be >= 1")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "lr_latent": self.lr_latent,
                "seed": self.seed, "n_latent_restarts": self.n_latent_restarts,
                "loss": self.loss.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "InferConfig":
        d = dict(d)
        loss = LossConfig.from_dict(d.pop("loss", {}))
        known = {f for f in cls.__dataclass_fields__ if f != "loss"}
        unknown = set(d) - known
        if unknown:
            raise StructuralError(f"unknown infer config keys: {sorted(unknown)}")
        return cls(loss=loss, **d)


def oracle_annotate(gt: LabelVolume, plan) -> SliceAnnotationSet:
    """Simulated expert: copy the ground-truth label grids at planned slices.

    ``plan`` is either a SlicePlan (resolved against the volume) or a plain
    iterable of axial indices. Duplicate resolved indices collapse.
    """
    if hasattr(plan, "specifiers"):
        from .selection import resolve_plan  # local import, keeps modules acyclic
        indices = resolve_plan(plan, gt)
    else:
        indices = sorted({int(k) for k in plan})
    if not indices:
        raise StructuralError("empty slice plan")
    nz = gt.nz
    for k in indices:
        if not 0 <= k < nz:
            raise StructuralError(f"planned index {k} outside volume of {nz} slices")
    anns = [SliceAnnotation(k, gt.labels[:, :, k]) for k in indices]
    return SliceAnnotationSet(gt.dims, gt.spacing_mm, gt.n_class, anns)


def _annotation_batch(annotations: SliceAnnotationSet):
    """Stack every voxel of every annotated slice: (coords, labels)."""
    idx_parts, label_parts = [], []
    for ann in annotations.annotations:
        idx_parts.append(slice_index_grid(annotations.dims, ann.axial_index))
        label_parts.append(ann.labels.ravel().astype(np.int64))
    idx = np.concatenate(idx_parts, axis=0)
    return normalize_indices(idx, annotations.dims), np.concatenate(label_parts)


def annotation_objective(params: ModelParams, annotations: SliceAnnotationSet,
                         z, loss: LossConfig | None = None) -> float:
    """Objective of latent ``z`` over all annotated voxels (diagnostic)."""
    loss = loss or LossConfig()
    coords, labels = _annotation_batch(annotations)
    values = z.values if isinstance(z, LatentCode) else np.asarray(z, dtype=np.float64)
    record = forward(params.layers, params.descriptor.skip_layer, coords, values)
    return objective_from_logits(record.logits, labels, values, loss).value


def infer_latent(params: ModelParams, annotations: SliceAnnotationSet,
                 config: InferConfig) -> LatentCode:
    """Optimize a fresh latent against the annotated slices; weights frozen.

    Full-batch Adam over all annotated voxels for config.epochs steps. With
    several restarts, each starts from its own N(0, 0.1^2) draw and the one
    with the lowest final objective wins.
    """
    if annotations.n_class != params.descriptor.n_class:
        raise StructuralError(
            f"annotation n_class {annotations.n_class} != model n_class "
            f"{params.descriptor.n_class}")
    coords, labels = _annotation_batch(annotations)
    d = params.descriptor.latent_dim
    skip = params.descriptor.skip_layer

    best_z, best_obj = None, np.inf
    for restart in range(config.n_latent_restarts):
        rng = seeded_rng(config.seed, "infer-init", restart)
        z = rng.normal(0.0, 0.1, size=d)
        state = AdamState.for_params(z, label=f"latent.restart{restart}")
        value = np.inf
        for epoch in range(config.epochs):
            record = forward(params.layers, skip, coords, z)
            result = objective_from_logits(record.logits, labels, z, config.loss)
            value = result.value
            if not np.isfinite(value):
                raise NumericsError(
                    f"non-finite inference objective at epoch {epoch}")
            grads = backward(params.layers, record, result.dlogits,
                             need_layer_grads=False)
            z, state = adam_step(z, state, grads.latent + result.dlatent_reg,
                                 config.lr_latent)
        # score the final iterate, not the pre-step value
        record = forward(params.layers, skip, coords, z)
        value = objective_from_logits(record.logits, labels, z, config.loss).value
        if value < best_obj:
            best_obj, best_z = value, z
    return LatentCode(best_z, shape_id="inferred")


def infer_volume(params: ModelParams, annotations: SliceAnnotationSet,
                 config: InferConfig, dims=None):
    """infer_latent + dense prediction. Returns (LabelVolume, probs, z).

    ``probs`` is the (nx, ny, nz, n_class) probability grid. ``dims``
    defaults to the annotation set's target dims and must match if given.
    """
    if dims is not None and tuple(int(x) for x in dims) != annotations.dims:
        raise StructuralError(
            f"dims {tuple(dims)} != annotation target dims {annotations.dims}")
    z = infer_latent(params, annotations, config)
    volume, probs = predict_volume(params, z, annotations.dims,
                                   annotations.spacing_mm, return_probs=True)
    return volume, probs, z
