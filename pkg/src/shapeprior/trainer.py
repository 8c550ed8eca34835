"""Joint optimization of decoder weights and per-shape latent codes.

Training walks the population once per epoch in ascending shape-id order;
each visit draws a fresh voxel batch, evaluates the segmentation objective,
and applies one Adam step to the shared network and one to that shape's
latent code (separate optimizer states, separate learning rates).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .losses import LossConfig, objective_from_logits
from .model import (ArchitectureDescriptor, LatentTable, ModelParams,
                    init_latent, init_params, normalize_indices, seeded_rng)
from .numerics import AdamState, NumericsError, adam_step, backward, forward
from .volume import LabelVolume, StructuralError

# A per-shape objective above this is treated as optimizer blow-up rather
# than a slow fit; training aborts instead of producing garbage weights.
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2500
    lr_network: float = 1e-4
    lr_latent: float = 1e-3
    voxel_batch_per_shape: int = 8192
    slice_stride: int = 1
    class_balanced_sampling: bool = True
    deterministic: bool = True
    hidden_width: int = 256
    latent_dim: int | None = None  # None -> 128 * n_class
    n_layers: int = 8
    skip_layer: int = 4
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    log_every: int = 50

    def __post_init__(self):
        if self.epochs < 1:
            raise StructuralError("epochs must be >= 1")
        if self.lr_network <= 0 or self.lr_latent < 0:
            raise StructuralError("learning rates must be positive")
        if self.voxel_batch_per_shape < 1:
            raise StructuralError("voxel_batch_per_shape must be >= 1")
        if self.slice_stride < 1:
            raise StructuralError("slice_stride must be >= 1")
        if self.log_every < 1:
            raise StructuralError("log_every must be >= 1")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "lr_network": self.lr_network,
            "lr_latent": self.lr_latent,
            "voxel_batch_per_shape": self.voxel_batch_per_shape,
            "slice_stride": self.slice_stride,
            "class_balanced_sampling": self.class_balanced_sampling,
            "deterministic": self.deterministic,
            "hidden_width": self.hidden_width,
            "latent_dim": self.latent_dim,
            "n_layers": self.n_layers,
            "skip_layer": self.skip_layer,
            "seed": self.seed,
            "loss": self.loss.to_dict(),
            "log_every": self.log_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        loss = LossConfig.from_dict(d.pop("loss", {}))
        known = {f for f in cls.__dataclass_fields__ if f != "loss"}
        unknown = set(d) - known
        if unknown:
            raise StructuralError(
                f"unknown train config keys: {sorted(unknown)}")
        return cls(loss=loss, **d)


@dataclass
class TrainHistory:
    """One record per completed epoch; epoch indices are 0-based."""

    epochs: list[int] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    dice_loss: list[float] = field(default_factory=list)
    ce_loss: list[float] = field(default_factory=list)
    latent_norm_mean: list[float] = field(default_factory=list)

    def append(self, epoch, objective, dice_loss, ce_loss, latent_norm_mean):
        self.epochs.append(int(epoch))
        self.objective.append(float(objective))
        self.dice_loss.append(float(dice_loss))
        self.ce_loss.append(float(ce_loss))
        self.latent_norm_mean.append(float(latent_norm_mean))

    def final_objective(self) -> float:
        if not self.objective:
            raise StructuralError("empty history")
        return self.objective[-1]


def eligible_slices(nz: int, slice_stride: int) -> np.ndarray:
    """Axial indices available to the sampler: k == 0 (mod stride)."""
    if slice_stride < 1:
        raise StructuralError("slice_stride must be >= 1")
    return np.arange(0, nz, slice_stride)


def _class_quotas(budget: int, n_class: int, present: Sequence[int]) -> dict[int, int]:
    """Split a voxel budget across classes.

    Every class starts with floor(budget / n_class); quota belonging to
    classes absent from the shape, plus the division remainder, is spread
    uniformly over the present classes, extras going to the lowest ids.
    """
    present = sorted(present)
    if not present:
        raise StructuralError("no voxels available to sample")
    base = budget // n_class
    leftover = budget - base * len(present)
    quotas = {c: base for c in present}
    extra, rem = divmod(leftover, len(present))
    for i, c in enumerate(present):
        quotas[c] += extra + (1 if i < rem else 0)
    return quotas


def sample_voxels(volume: LabelVolume, budget: int, config: TrainConfig,
                  epoch: int = 0, shape_id: str | None = None):
    """Draw a training batch of voxel indices and labels (with replacement).

    Only slices whose axial index is divisible by ``config.slice_stride``
    are eligible. Class-balanced mode gives each class present on those
    slices an equal quota (see ``_class_quotas``); otherwise voxels are
    drawn uniformly. The stream is seeded by (seed, epoch, shape_id).
    Returns (indices (M, 3) int, labels (M,) int).
    """
    if budget < 1:
        raise StructuralError("budget must be >= 1")
    class_balanced = config.class_balanced_sampling
    if class_balanced and budget < volume.n_class:
        raise StructuralError(
            f"budget {budget} < n_class {volume.n_class} with balanced sampling")
    if shape_id is None:
        shape_id = volume.shape_id
    rng = seeded_rng(config.seed, "sample", epoch, shape_id)
    slices = eligible_slices(volume.nz, config.slice_stride)
    labels = volume.labels[:, :, slices]

    if class_balanced:
        present = np.unique(labels)
        quotas = _class_quotas(budget, volume.n_class, present.tolist())
        idx_parts = []
        for c in sorted(quotas):
            cand = np.argwhere(labels == c)
            pick = rng.integers(0, cand.shape[0], size=quotas[c])
            idx_parts.append(cand[pick])
        idx = np.concatenate(idx_parts, axis=0)
    else:
        nx, ny = volume.dims[0], volume.dims[1]
        flat = rng.integers(0, nx * ny * slices.size, size=budget)
        # unravel in C order over the (nx, ny, n_eligible) view
        idx = np.stack(np.unravel_index(flat, (nx, ny, slices.size)), axis=1)

    idx = idx.astype(np.int64)
    out_labels = labels[idx[:, 0], idx[:, 1], idx[:, 2]].astype(np.int64)
    idx[:, 2] = slices[idx[:, 2]]  # map back to absolute axial indices
    return idx, out_labels


def _shape_key(volume: LabelVolume, position: int) -> str:
    return volume.shape_id if volume.shape_id else f"shape_{position:03d}"


def train(dataset: Sequence[LabelVolume], config: TrainConfig,
          progress=None):
    """Fit decoder weights and one latent code per shape.

    Returns (ModelParams, LatentTable, TrainHistory); the history holds one
    record per epoch. ``progress`` may be a callable taking
    (epoch, mean_objective); it fires every ``log_every`` epochs and on the
    last one.
    """
    if len(dataset) == 0:
        raise StructuralError("empty training set")
    n_class = dataset[0].n_class
    for v in dataset:
        if v.n_class != n_class:
            raise StructuralError("all shapes must share n_class")

    keyed = sorted(((_shape_key(v, i), v) for i, v in enumerate(dataset)),
                   key=lambda kv: kv[0])
    ids = [k for k, _ in keyed]
    if len(set(ids)) != len(ids):
        raise StructuralError("duplicate shape ids in training set")

    descriptor = ArchitectureDescriptor(
        n_class=n_class,
        latent_dim=(128 * n_class if config.latent_dim is None
                    else config.latent_dim),
        n_layers=config.n_layers,
        skip_layer=config.skip_layer,
        hidden_width=config.hidden_width,
    )
    params = init_params(descriptor, config.seed)
    latents = LatentTable()
    for sid, _ in keyed:
        latents.add(init_latent(descriptor, sid, config.seed))

    layer_states = [
        (AdamState.for_params(l.weights, label=f"layer{li}.weights"),
         AdamState.for_params(l.biases, label=f"layer{li}.biases"))
        for li, l in enumerate(params.layers)
    ]
    latent_states = {sid: AdamState.for_params(latents[sid].values,
                                               label=f"latent.{sid}")
                     for sid, _ in keyed}

    history = TrainHistory()

    for epoch in range(config.epochs):
        epoch_obj, epoch_dice, epoch_ce = 0.0, 0.0, 0.0
        for sid, vol in keyed:
            idx, labels = sample_voxels(
                vol, config.voxel_batch_per_shape, config, epoch, sid)
            coords = normalize_indices(idx, vol.dims)
            z = latents[sid]
            record = forward(params.layers, descriptor.skip_layer, coords,
                             z.values)
            result = objective_from_logits(record.logits, labels, z.values,
                                           config.loss)
            if not np.isfinite(result.value):
                raise NumericsError(
                    f"non-finite objective at epoch {epoch}, shape {sid}")
            if result.value > DIVERGENCE_LIMIT:
                raise NumericsError(
                    f"objective diverged ({result.value:.3e}) at epoch "
                    f"{epoch}, shape {sid}")
            grads = backward(params.layers, record, result.dlogits)

            for li, layer in enumerate(params.layers):
                dw, db = grads.layers[li]
                sw, sb = layer_states[li]
                layer.weights, sw = adam_step(layer.weights, sw, dw,
                                              config.lr_network)
                layer.biases, sb = adam_step(layer.biases, sb, db,
                                             config.lr_network)
                layer_states[li] = (sw, sb)
            if config.lr_latent > 0:
                dz = grads.latent + result.dlatent_reg
                z.values, latent_states[sid] = adam_step(
                    z.values, latent_states[sid], dz, config.lr_latent)

            epoch_obj += result.value
            epoch_dice += result.dice
            epoch_ce += result.ce

        n = len(keyed)
        mean_obj = epoch_obj / n
        norms = [float(np.linalg.norm(latents[sid].values))
                 for sid, _ in keyed]
        history.append(epoch, mean_obj, epoch_dice / n, epoch_ce / n,
                       float(np.mean(norms)))
        if progress is not None and (epoch % config.log_every == 0
                                     or epoch == config.epochs - 1):
            progress(epoch, mean_obj)

    return params, latents, history
