"""Dense multi-class label volumes with physical spacing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class StructuralError(ValueError):
    """Raised when data violates a structural contract (shapes, ranges, labels)."""


@dataclass
class LabelVolume:
    """A voxel occupancy grid: one class label per voxel, plus spacing in mm.

    ``labels`` has shape (nx, ny, nz), dtype uint8, with the third axis axial.
    Every label must be < ``n_class`` (class 0 is background).
    """

    labels: np.ndarray
    spacing_mm: tuple[float, float, float]
    n_class: int
    shape_id: str = field(default="")

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 3:
            raise StructuralError(f"labels must be 3-D, got ndim={self.labels.ndim}")
        if self.labels.size == 0:
            raise StructuralError("empty volume")
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        if len(self.spacing_mm) != 3 or any(s <= 0 for s in self.spacing_mm):
            raise StructuralError(f"spacing must be 3 positive reals, got {self.spacing_mm}")
        self.n_class = int(self.n_class)
        if self.n_class < 1:
            raise StructuralError("n_class must be >= 1")
        if self.labels.max(initial=0) >= self.n_class:
            raise StructuralError(
                f"label out of range: max label {int(self.labels.max())} >= n_class {self.n_class}"
            )

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    @property
    def nz(self) -> int:
        return self.labels.shape[2]

    def class_mask(self, class_id: int) -> np.ndarray:
        return self.labels == class_id

    def foreground_mask(self) -> np.ndarray:
        return self.labels != 0

    def axial_slice(self, index: int) -> np.ndarray:
        """2-D label grid at an axial index (nx, ny)."""
        if not 0 <= index < self.nz:
            raise StructuralError(f"axial index {index} out of range [0, {self.nz})")
        return self.labels[:, :, index]

    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing_mm
        return sx * sy * sz

    def copy(self) -> "LabelVolume":
        return LabelVolume(self.labels.copy(), self.spacing_mm, self.n_class, self.shape_id)


def foreground_span(volume: LabelVolume) -> tuple[int, int]:
    """First and last axial indices containing any foreground voxel."""
    occupied = np.flatnonzero(volume.foreground_mask().any(axis=(0, 1)))
    if occupied.size == 0:
        raise StructuralError("volume has no foreground voxels")
    return int(occupied[0]), int(occupied[-1])


def class_span(volume: LabelVolume, class_id: int) -> tuple[int, int] | None:
    """Axial index range occupied by one class, or None if the class is absent."""
    occupied = np.flatnonzero(volume.class_mask(class_id).any(axis=(0, 1)))
    if occupied.size == 0:
        return None
    return int(occupied[0]), int(occupied[-1])
