"""Procedural phantom populations used as desk-scale ground truth.

Two families: aligned multi-organ head-like scenes (large, elongated, paired
small, and tiny structures with deliberately imbalanced volumes) and
elongated tapered muscles with an optional atrophy-like domain shift.
Everything is superellipsoids: analytic inside-tests, analytic volumes, no
geometry dependencies.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .model import seeded_rng
from .volume import LabelVolume, StructuralError

JITTER_CLIP_SIGMA = 3.0  # jitter draws are clipped to ±3σ so fit checks are hard bounds


@dataclass(frozen=True)
class OrganSpec:
    """One superellipsoid organ in normalized [-1, 1] coordinates."""

    class_id: int
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    exponent: float = 2.0
    center_jitter: float = 0.015
    radius_jitter: float = 0.01
    name: str = ""

    def __post_init__(self):
        if self.class_id < 1:
            raise StructuralError("organ class_id must be >= 1")
        if len(self.center) != 3 or len(self.radii) != 3:
            raise StructuralError("center and radii must have 3 components")
        if any(r <= 0 for r in self.radii):
            raise StructuralError("radii must be > 0")
        if self.exponent <= 0:
            raise StructuralError("exponent must be > 0")
        if self.center_jitter < 0 or self.radius_jitter < 0:
            raise StructuralError("jitter stds must be >= 0")

    def fits_in_unit_cube(self) -> bool:
        m = JITTER_CLIP_SIGMA * (self.center_jitter + self.radius_jitter)
        return all(abs(c) + r + m <= 1.0 for c, r in zip(self.center, self.radii))

    def to_dict(self) -> dict:
        return {"class_id": self.class_id, "center": list(self.center),
                "radii": list(self.radii), "exponent": self.exponent,
                "center_jitter": self.center_jitter,
                "radius_jitter": self.radius_jitter, "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> "OrganSpec":
        return cls(class_id=d["class_id"], center=tuple(d["center"]),
                   radii=tuple(d["radii"]), exponent=d.get("exponent", 2.0),
                   center_jitter=d.get("center_jitter", 0.015),
                   radius_jitter=d.get("radius_jitter", 0.01),
                   name=d.get("name", ""))


@dataclass(frozen=True)
class PhantomSpec:
    """A population recipe: geometry plus jitter, size, and seed."""

    dims: tuple[int, int, int] = (48, 48, 48)
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    organs: tuple[OrganSpec, ...] = ()
    n_subjects: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing_mm",
                           tuple(float(s) for s in self.spacing_mm))
        object.__setattr__(self, "organs", tuple(self.organs))
        if len(self.dims) != 3 or any(d < 2 for d in self.dims):
            raise StructuralError(f"bad dims {self.dims}")
        if any(s <= 0 for s in self.spacing_mm):
            raise StructuralError("spacing must be > 0")
        if not self.organs:
            raise StructuralError("at least one organ required")
        ids = sorted({o.class_id for o in self.organs})
        if ids != list(range(1, len(ids) + 1)):
            raise StructuralError(f"organ class ids must be dense 1..K, got {ids}")
        for o in self.organs:
            if not o.fits_in_unit_cube():
                raise StructuralError(
                    f"organ {o.name or o.class_id} can escape the volume under maximal jitter")
        if self.n_subjects < 1:
            raise StructuralError("n_subjects must be >= 1")

    @property
    def n_class(self) -> int:
        return 1 + max(o.class_id for o in self.organs)

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "spacing_mm": list(self.spacing_mm),
                "organs": [o.to_dict() for o in self.organs],
                "n_subjects": self.n_subjects, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        return cls(dims=tuple(d.get("dims", (48, 48, 48))),
                   spacing_mm=tuple(d.get("spacing_mm", (1.0, 1.0, 1.0))),
                   organs=tuple(OrganSpec.from_dict(o) for o in d.get("organs", [])),
                   n_subjects=d.get("n_subjects", 20), seed=d.get("seed", 0))


@dataclass(frozen=True)
class DomainShiftSpec:
    """Systematic deformation of a muscle population (atrophy-like)."""

    radius_scale: float = 0.65
    extra_center_jitter: float = 0.03
    boundary_noise: float = 0.04

    def __post_init__(self):
        if not 0.0 < self.radius_scale <= 1.0:
            raise StructuralError("radius_scale must be in (0, 1]")
        if self.extra_center_jitter < 0 or self.boundary_noise < 0:
            raise StructuralError("shift jitters must be >= 0")

    def to_dict(self) -> dict:
        return {"radius_scale": self.radius_scale,
                "extra_center_jitter": self.extra_center_jitter,
                "boundary_noise": self.boundary_noise}

    @classmethod
    def from_dict(cls, d: dict) -> "DomainShiftSpec":
        return cls(radius_scale=d.get("radius_scale", 0.65),
                   extra_center_jitter=d.get("extra_center_jitter", 0.03),
                   boundary_noise=d.get("boundary_noise", 0.04))


def _axis_coords(n: int) -> np.ndarray:
    # same mapping as coordinate normalization: i -> 2i/(n-1) - 1
    return 2.0 * np.arange(n) / (n - 1) - 1.0


def _clipped_normal(rng, sigma: float, size) -> np.ndarray:
    lim = JITTER_CLIP_SIGMA * sigma
    return np.clip(rng.normal(0.0, sigma, size=size), -lim, lim)


def _rasterize_superellipsoid(grid_axes, center, radii, exponent) -> np.ndarray:
    x, y, z = grid_axes
    m = exponent
    term = (np.abs((x[:, None, None] - center[0]) / radii[0]) ** m
            + np.abs((y[None, :, None] - center[1]) / radii[1]) ** m
            + np.abs((z[None, None, :] - center[2]) / radii[2]) ** m)
    return term <= 1.0


def generate_population(spec: PhantomSpec, seed: int | None = None,
                        id_prefix: str = "s") -> list[LabelVolume]:
    """Jittered multi-organ subjects; organs rasterize in list order, later
    entries overwriting earlier ones on overlap (nested structures)."""
    seed = spec.seed if seed is None else seed
    axes = tuple(_axis_coords(n) for n in spec.dims)
    out = []
    for i in range(spec.n_subjects):
        rng = seeded_rng(seed, "phantom", i)
        labels = np.zeros(spec.dims, dtype=np.uint8)
        for organ in spec.organs:
            center = np.asarray(organ.center) + _clipped_normal(
                rng, organ.center_jitter, 3)
            radii = np.asarray(organ.radii) + _clipped_normal(
                rng, organ.radius_jitter, 3)
            inside = _rasterize_superellipsoid(axes, center, radii,
                                               organ.exponent)
            labels[inside] = organ.class_id
        present = set(np.unique(labels).tolist())
        for organ in spec.organs:
            if organ.class_id not in present:
                raise StructuralError(
                    f"organ {organ.name or organ.class_id} fully overwritten "
                    f"in subject {i}")
        out.append(LabelVolume(labels, spec.spacing_mm, spec.n_class,
                               shape_id=f"{id_prefix}{i:03d}"))
    return out


# ---------------------------------------------------------------------------
# elongated tapered muscle population

MUSCLE_TAPER_FLOOR = 0.45     # end-slice radius fraction of the mid radius
MUSCLE_RADIUS_FLOOR = 0.08    # normalized; keeps every span slice nonempty
MUSCLE_END_MARGIN = (3, 9)    # minimal z margin range (slices) per end
MUSCLE_MARGIN_FRAC = 0.22     # tall stacks: margins grow to this fraction of nz


def _end_margin_range(nz: int) -> tuple[int, int]:
    """Per-end z-margin bounds: the muscle spans most of the stack, but where
    it starts and ends varies a lot relative to the image frame (equidistant
    image-based slice picks may land outside the muscle entirely)."""
    return MUSCLE_END_MARGIN[0], max(MUSCLE_END_MARGIN[1],
                                     int(round(MUSCLE_MARGIN_FRAC * nz)))


def _taper(t: np.ndarray) -> np.ndarray:
    return MUSCLE_TAPER_FLOOR + (1.0 - MUSCLE_TAPER_FLOOR) * np.sin(
        math.pi * t) ** 0.8


def generate_muscle_population(spec: PhantomSpec,
                               shift: DomainShiftSpec | None = None,
                               seed: int | None = None,
                               id_prefix: str = "m") -> list[LabelVolume]:
    """Single-class tapered tubes along z with per-subject length, girth and
    gentle bending; the optional shift shrinks radii and roughens the wall."""
    seed = spec.seed if seed is None else seed
    if len(spec.organs) != 1 or spec.organs[0].class_id != 1:
        raise StructuralError("muscle spec must declare exactly one class-1 organ")
    base = spec.organs[0]
    nx, ny, nz = spec.dims
    xs, ys = _axis_coords(nx), _axis_coords(ny)
    tag = "shifted" if shift is not None else "plain"
    out = []
    for i in range(spec.n_subjects):
        rng = seeded_rng(seed, "muscle", tag, i)
        margin = _end_margin_range(nz)
        z0 = int(round(rng.uniform(*margin)))
        z1 = nz - 1 - int(round(rng.uniform(*margin)))
        if z1 - z0 < 10:
            raise StructuralError("volume too short for a muscle span")
        girth = float(np.clip(rng.normal(1.0, 0.06), 0.82, 1.18))
        center = np.asarray(base.center[:2]) + _clipped_normal(
            rng, base.center_jitter, 2)
        bend_amp = rng.uniform(0.0, 0.06, size=2)
        bend_phase = rng.uniform(0.0, 2 * math.pi, size=2)
        mod_amp = rng.uniform(0.0, 0.06)
        mod_phase = rng.uniform(0.0, 2 * math.pi)
        scale = 1.0
        if shift is not None:
            scale = shift.radius_scale
            center = center + _clipped_normal(rng, shift.extra_center_jitter, 2)

        t = np.linspace(0.0, 1.0, z1 - z0 + 1)
        profile = _taper(t) * (1.0 + mod_amp * np.sin(
            2 * math.pi * t + mod_phase)) * girth * scale
        rx = base.radii[0] * profile
        ry = base.radii[1] * profile
        if shift is not None and shift.boundary_noise > 0:
            rx = rx * (1.0 + _clipped_normal(rng, shift.boundary_noise, rx.size))
            ry = ry * (1.0 + _clipped_normal(rng, shift.boundary_noise, ry.size))
        rx = np.maximum(rx, MUSCLE_RADIUS_FLOOR)
        ry = np.maximum(ry, MUSCLE_RADIUS_FLOOR)
        cx = center[0] + bend_amp[0] * np.sin(2 * math.pi * t + bend_phase[0])
        cy = center[1] + bend_amp[1] * np.sin(2 * math.pi * t + bend_phase[1])

        labels = np.zeros(spec.dims, dtype=np.uint8)
        m = base.exponent
        for j, k in enumerate(range(z0, z1 + 1)):
            inside = (np.abs((xs[:, None] - cx[j]) / rx[j]) ** m
                      + np.abs((ys[None, :] - cy[j]) / ry[j]) ** m) <= 1.0
            labels[:, :, k][inside] = 1
            if not inside.any():
                raise StructuralError(f"empty muscle slice {k} in subject {i}")
        out.append(LabelVolume(labels, spec.spacing_mm, 2,
                               shape_id=f"{id_prefix}{i:03d}"))
    return out


# ---------------------------------------------------------------------------
# shipped default recipes

def default_uc1_spec(n_subjects: int = 20, seed: int = 0,
                     dims=(48, 48, 48)) -> PhantomSpec:
    """Five organs echoing a head scene's volume spread: one >= 10% of the
    volume, one <= 1 per mille, a thin elongated structure, and a small pair.
    The four small organs share one axial mid-level; the large one sits well
    above it, so the per-organ mid-slice plan collapses to two slices."""
    low = -0.1489  # z of axial level 20 on a 48-slice grid
    # the speck stays under 1 voxel per mille even at maximal (3-sigma) jitter
    organs = (
        OrganSpec(1, (0.0, 0.15, 0.30), (0.70, 0.62, 0.50), 2.2, name="bulk"),
        OrganSpec(2, (0.0, -0.35, low), (0.13, 0.13, 0.52), 4.0, name="stem"),
        OrganSpec(3, (-0.42, -0.55, low), (0.20, 0.20, 0.19), 2.0, name="pair_l"),
        OrganSpec(4, (0.42, -0.55, low), (0.20, 0.20, 0.19), 2.0, name="pair_r"),
        OrganSpec(5, (0.0, -0.20, low), (0.12, 0.12, 0.09), 2.0,
                  radius_jitter=0.005, name="speck"),
    )
    return PhantomSpec(dims=dims, organs=organs, n_subjects=n_subjects,
                       seed=seed)


def default_uc2_spec(n_subjects: int = 10, seed: int = 0,
                     dims=(32, 32, 96)) -> PhantomSpec:
    # the z radius is unused by the muscle generator (span is drawn per
    # subject); it only has to pass the fit check
    organs = (OrganSpec(1, (0.0, 0.0, 0.0), (0.55, 0.42, 0.5), 2.0,
                        center_jitter=0.03, name="muscle"),)
    return PhantomSpec(dims=dims, organs=organs, n_subjects=n_subjects,
                       seed=seed)


def split_population(volumes: list[LabelVolume], sizes) -> tuple:
    """Cut a population into consecutive groups of the given sizes."""
    if sum(sizes) > len(volumes):
        raise StructuralError(
            f"split sizes {tuple(sizes)} exceed population of {len(volumes)}")
    out, at = [], 0
    for s in sizes:
        out.append(volumes[at:at + s])
        at += s
    return tuple(out)


def load_spec_json(text: str) -> dict:
    """Parse and validate a phantom recipe document.

    Schema: {"type": "multi-organ"|"muscle", "spec": {...}, "splits": {...},
    optional "shift": {...}, "shift_splits": {...}}.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise StructuralError(f"phantom spec is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or "type" not in doc:
        raise StructuralError("phantom spec must be an object with a 'type' field")
    if doc["type"] not in ("multi-organ", "muscle"):
        raise StructuralError(f"unknown phantom type {doc['type']!r}")
    doc.setdefault("spec", {})
    PhantomSpec.from_dict(doc["spec"])  # validation side effect
    if doc.get("shift") is not None:
        if doc["type"] != "muscle":
            raise StructuralError("domain shift applies to muscle populations only")
        DomainShiftSpec.from_dict(doc["shift"])
    return doc
