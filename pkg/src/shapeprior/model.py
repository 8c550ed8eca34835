"""The conditioned implicit classifier f(x, z) and the per-shape latent table."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .numerics import DenseLayer, init_dense_layer, softmax
from .volume import LabelVolume, StructuralError

LATENT_INIT_STD = 0.1
_PREDICT_CHUNK = 16384


def _id_stream(*parts) -> list:
    """Stable integer seed stream from strings/ints (sha256, not hash())."""
    ints = []
    for p in parts:
        if isinstance(p, (int, np.integer)):
            ints.append(int(p) & 0xFFFFFFFF)
        else:
            digest = hashlib.sha256(str(p).encode("utf-8")).digest()
            ints.extend(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))
    return ints


def seeded_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(_id_stream(*parts))


@dataclass(frozen=True)
class ArchitectureDescriptor:
    """Shape of the coordinate MLP. Defaults follow the reference setup:
    8 layers, coordinates re-injected after layer 4, latent length 128 per class."""

    n_class: int
    latent_dim: int | None = None
    n_layers: int = 8
    skip_layer: int = 4
    hidden_width: int = 256

    def __post_init__(self):
        if self.n_class < 2:
            raise StructuralError("n_class must be >= 2 (background plus one organ)")
        if self.latent_dim is None:
            object.__setattr__(self, "latent_dim", 128 * self.n_class)
        if self.latent_dim < 1 or self.hidden_width < 1:
            raise StructuralError("latent_dim and hidden_width must be positive")
        if self.n_layers < 3:
            raise StructuralError("need at least 3 layers")
        if not 1 <= self.skip_layer <= self.n_layers - 2:
            raise StructuralError(
                f"skip_layer {self.skip_layer} must be in [1, {self.n_layers - 2}]"
            )

    def layer_dims(self) -> list[tuple[int, int]]:
        """(out, in) per layer; the skip re-injects only the 3 coordinates."""
        dims = []
        for li in range(self.n_layers):
            in_dim = self.hidden_width
            if li == 0:
                in_dim = 3 + self.latent_dim
            elif li == self.skip_layer:
                in_dim = self.hidden_width + 3
            out_dim = self.n_class if li == self.n_layers - 1 else self.hidden_width
            dims.append((out_dim, in_dim))
        return dims

    def to_dict(self) -> dict:
        return {
            "n_class": self.n_class,
            "latent_dim": self.latent_dim,
            "n_layers": self.n_layers,
            "skip_layer": self.skip_layer,
            "hidden_width": self.hidden_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureDescriptor":
        return cls(**{k: d[k] for k in ("n_class", "latent_dim", "n_layers",
                                        "skip_layer", "hidden_width")})


@dataclass
class ModelParams:
    """All layer weights/biases plus the architecture they realize."""

    descriptor: ArchitectureDescriptor
    layers: list

    def __post_init__(self):
        expected = self.descriptor.layer_dims()
        if len(self.layers) != len(expected):
            raise StructuralError(
                f"{len(self.layers)} layers, descriptor wants {len(expected)}"
            )
        for li, (layer, (out_dim, in_dim)) in enumerate(zip(self.layers, expected)):
            if layer.weights.shape != (out_dim, in_dim):
                raise StructuralError(
                    f"layer {li} shape {layer.weights.shape} != descriptor {(out_dim, in_dim)}"
                )

    def parameter_count(self) -> int:
        return sum(l.weights.size + l.biases.size for l in self.layers)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for layer in self.layers:
            h.update(np.ascontiguousarray(layer.weights).tobytes())
            h.update(np.ascontiguousarray(layer.biases).tobytes())
        return h.hexdigest()

    def copy(self) -> "ModelParams":
        return ModelParams(self.descriptor,
                           [DenseLayer(l.weights.copy(), l.biases.copy()) for l in self.layers])


@dataclass
class LatentCode:
    values: np.ndarray
    shape_id: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise StructuralError("latent must be a vector")
        if not np.isfinite(self.values).all():
            raise StructuralError("non-finite latent entries")


@dataclass
class LatentTable:
    """One latent code per training shape, all the same length."""

    codes: dict = field(default_factory=dict)

    def add(self, code: LatentCode):
        if self.codes:
            d = next(iter(self.codes.values())).values.shape[0]
            if code.values.shape[0] != d:
                raise StructuralError("latent length mismatch within table")
        self.codes[code.shape_id] = code

    def __getitem__(self, shape_id: str) -> LatentCode:
        return self.codes[shape_id]

    def __contains__(self, shape_id: str) -> bool:
        return shape_id in self.codes

    def __len__(self) -> int:
        return len(self.codes)

    def ids(self) -> list[str]:
        return sorted(self.codes)


def init_params(descriptor: ArchitectureDescriptor, seed: int) -> ModelParams:
    layers = []
    for li, (out_dim, in_dim) in enumerate(descriptor.layer_dims()):
        rng = seeded_rng(seed, "layer-init", li)
        layers.append(init_dense_layer(out_dim, in_dim, rng))
    return ModelParams(descriptor, layers)


def init_latent(descriptor: ArchitectureDescriptor, shape_id: str, seed: int) -> LatentCode:
    """Fresh latent ~ N(0, 0.1^2), reproducible per (seed, shape_id)."""
    rng = seeded_rng(seed, "latent-init", shape_id)
    return LatentCode(rng.normal(0.0, LATENT_INIT_STD, size=descriptor.latent_dim), shape_id)


def normalize_coord(voxel_index, dims) -> tuple[float, float, float]:
    """Map a voxel index to the [-1, 1] cube (component 0 when the dim is 1)."""
    out = []
    for i, n in zip(voxel_index, dims):
        if n < 1:
            raise StructuralError(f"dimension {n} < 1")
        if not 0 <= i < n:
            raise StructuralError(f"index {i} out of range [0, {n})")
        out.append(0.0 if n == 1 else 2.0 * i / (n - 1) - 1.0)
    return tuple(out)


def normalize_indices(indices: np.ndarray, dims) -> np.ndarray:
    """Vectorized normalize_coord for an (M, 3) integer index array."""
    indices = np.asarray(indices)
    dims = np.asarray(dims, dtype=np.float64)
    if np.any(indices < 0) or np.any(indices >= dims):
        raise StructuralError("voxel index out of range")
    denom = np.where(dims > 1, dims - 1.0, 1.0)
    coords = 2.0 * indices / denom - 1.0
    return np.where(dims > 1, coords, 0.0)


def slice_index_grid(dims, axial_index: int) -> np.ndarray:
    """(nx*ny, 3) integer indices of every voxel on one axial slice."""
    nx, ny, _ = dims
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    kk = np.full(nx * ny, axial_index)
    return np.column_stack([ii.ravel(), jj.ravel(), kk])


def forward_batch(params: ModelParams, coords: np.ndarray, latent: np.ndarray):
    """Forward record for a batch of normalized coordinates under latent z."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape != (params.descriptor.latent_dim,):
        raise StructuralError(
            f"latent length {latent.shape} != descriptor d={params.descriptor.latent_dim}"
        )
    return numerics.forward(params.layers, params.descriptor.skip_layer, coords, latent)


def predict_voxel(params: ModelParams, coord, z) -> np.ndarray:
    """Class probability vector for one normalized coordinate."""
    coord = np.asarray(coord, dtype=np.float64).reshape(1, 3)
    if np.any(np.abs(coord) > 1.0 + 1e-9):
        raise StructuralError(f"coordinate {coord.ravel()} outside [-1, 1]")
    values = z.values if isinstance(z, LatentCode) else z
    record = forward_batch(params, coord, values)
    return softmax(record.logits)[0]


def predict_volume(params: ModelParams, z, dims, spacing_mm=(1.0, 1.0, 1.0),
                   return_probs: bool = False):
    """Dense argmax prediction over a voxel grid (ties to the lowest class).

    Evaluates the classifier at every voxel center in chunks; optionally also
    returns the full per-voxel probability grid (nx, ny, nz, n_class).
    """
    values = z.values if isinstance(z, LatentCode) else np.asarray(z, dtype=np.float64)
    nx, ny, nz = (int(d) for d in dims)
    n_class = params.descriptor.n_class
    grid = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                indexing="ij"), axis=-1).reshape(-1, 3)
    coords = normalize_indices(grid, (nx, ny, nz))
    labels = np.empty(coords.shape[0], dtype=np.uint8)
    probs = np.empty((coords.shape[0], n_class)) if return_probs else None
    for start in range(0, coords.shape[0], _PREDICT_CHUNK):
        sl = slice(start, start + _PREDICT_CHUNK)
        record = forward_batch(params, coords[sl], values)
        p = softmax(record.logits)
        labels[sl] = np.argmax(p, axis=1).astype(np.uint8)
        if return_probs:
            probs[sl] = p
    volume = LabelVolume(labels.reshape(nx, ny, nz), spacing_mm, n_class)
    if return_probs:
        return volume, probs.reshape(nx, ny, nz, n_class)
    return volume
