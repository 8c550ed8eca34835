"""File formats: SEGV1 label volumes, checkpoints, plans, reports, manifests.

Every format is a single UTF-8 JSON header line plus (where needed) a raw
binary payload, so round-trips are bit-exact and implementable anywhere.
Readers never crash on malformed input: each defect has its own diagnostic.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .metrics import MetricsReport, MetricsRow
from .model import (ArchitectureDescriptor, LatentCode, LatentTable,
                    ModelParams)
from .numerics import DenseLayer, NumericsError
from .selection import SlicePlan, SliceSpecifier
from .volume import LabelVolume, StructuralError

SEG_MAGIC = "SEGV1"
CKPT_MAGIC = "ADCKPT1"
REPORT_HEADER = "subject_id,strategy,n_slices,class_id,dsc,asd_mm,hd_max_mm,vol_err_pct"


class FormatError(StructuralError):
    """A file does not conform to its declared format."""


# ---------------------------------------------------------------------------
# SEGV1 label volumes

def write_volume(path, volume: LabelVolume) -> None:
    header = {"magic": SEG_MAGIC, "dims": list(volume.dims),
              "spacing_mm": list(volume.spacing_mm), "n_class": volume.n_class}
    with open(path, "wb") as f:
        f.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        f.write(b"\n")
        # x-fastest ordering == Fortran ravel of the (nx, ny, nz) grid
        f.write(volume.labels.tobytes(order="F"))


def _split_header(blob: bytes, what: str):
    nl = blob.find(b"\n")
    if nl < 0:
        raise FormatError(f"{what}: missing header newline terminator")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{what}: header is not valid JSON ({e})") from e
    if not isinstance(header, dict):
        raise FormatError(f"{what}: header must be a JSON object")
    return header, blob[nl + 1:]


def read_volume(path) -> LabelVolume:
    with open(path, "rb") as f:
        blob = f.read()
    header, payload = _split_header(blob, "volume")
    if header.get("magic") != SEG_MAGIC:
        raise FormatError(f"volume: bad magic {header.get('magic')!r}")
    extra = set(header) - {"magic", "dims", "spacing_mm", "n_class"}
    if extra:
        raise FormatError(f"volume: unexpected header fields {sorted(extra)}")
    for key in ("dims", "spacing_mm", "n_class"):
        if key not in header:
            raise FormatError(f"volume: header missing field {key!r}")
    dims = header["dims"]
    if (not isinstance(dims, list) or len(dims) != 3
            or any(not isinstance(d, int) or d < 1 for d in dims)):
        raise FormatError(f"volume: bad dims {dims!r}")
    spacing = header["spacing_mm"]
    if (not isinstance(spacing, list) or len(spacing) != 3
            or any(not isinstance(s, (int, float)) or s <= 0 for s in spacing)):
        raise FormatError(f"volume: bad spacing {spacing!r}")
    n_class = header["n_class"]
    if not isinstance(n_class, int) or not 1 <= n_class <= 256:
        raise FormatError(f"volume: n_class {n_class!r} out of range [1, 256]")
    nx, ny, nz = dims
    if len(payload) != nx * ny * nz:
        raise FormatError(
            f"volume: payload length mismatch (got {len(payload)}, "
            f"expected {nx * ny * nz})")
    labels = np.frombuffer(payload, dtype=np.uint8).reshape(dims, order="F")
    if labels.max(initial=0) >= n_class:
        raise FormatError(
            f"volume: label out of range (max {int(labels.max())} >= "
            f"n_class {n_class})")
    stem = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return LabelVolume(labels.copy(), tuple(spacing), n_class, shape_id=stem)


def write_population(directory, volumes: list[LabelVolume],
                     manifest: dict | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    for v in volumes:
        if not v.shape_id:
            raise StructuralError("population volumes need shape ids")
        write_volume(os.path.join(directory, f"{v.shape_id}.segv"), v)
    if manifest is not None:
        write_manifest(os.path.join(directory, "manifest.json"), manifest)


def read_population(directory) -> list[LabelVolume]:
    names = sorted(n for n in os.listdir(directory) if n.endswith(".segv"))
    if not names:
        raise FormatError(f"no .segv volumes in {directory}")
    return [read_volume(os.path.join(directory, n)) for n in names]


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    params: ModelParams
    latents: LatentTable
    manifest: dict = field(default_factory=dict)


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    arrays = []
    blobs = []
    for li, layer in enumerate(ckpt.params.layers):
        arrays.append({"name": f"layer{li}.weights",
                       "shape": list(layer.weights.shape)})
        blobs.append(np.ascontiguousarray(layer.weights, dtype="<f8"))
        arrays.append({"name": f"layer{li}.biases",
                       "shape": list(layer.biases.shape)})
        blobs.append(np.ascontiguousarray(layer.biases, dtype="<f8"))
    for sid in ckpt.latents.ids():
        arrays.append({"name": f"latent.{sid}",
                       "shape": list(ckpt.latents[sid].values.shape)})
        blobs.append(np.ascontiguousarray(ckpt.latents[sid].values, dtype="<f8"))
    header = {"magic": CKPT_MAGIC,
              "descriptor": ckpt.params.descriptor.to_dict(),
              "arrays": arrays, "dtype": "<f8", "order": "C",
              "manifest": ckpt.manifest}
    with open(path, "wb") as f:
        f.write(json.dumps(header, separators=(",", ":"), sort_keys=True)
                .encode("utf-8"))
        f.write(b"\n")
        for blob in blobs:
            f.write(blob.tobytes(order="C"))


def read_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    header, payload = _split_header(blob, "checkpoint")
    if header.get("magic") != CKPT_MAGIC:
        raise FormatError(f"checkpoint: bad magic {header.get('magic')!r}")
    for key in ("descriptor", "arrays", "dtype", "order"):
        if key not in header:
            raise FormatError(f"checkpoint: header missing field {key!r}")
    if header["dtype"] != "<f8" or header["order"] != "C":
        raise FormatError(
            f"checkpoint: unsupported encoding {header['dtype']}/{header['order']}")
    try:
        descriptor = ArchitectureDescriptor.from_dict(header["descriptor"])
    except (KeyError, TypeError, StructuralError) as e:
        raise FormatError(f"checkpoint: bad descriptor ({e})") from e

    declared = header["arrays"]
    if not isinstance(declared, list):
        raise FormatError("checkpoint: arrays must be a list")
    for a in declared:
        if (not isinstance(a, dict) or not isinstance(a.get("name"), str)
                or not isinstance(a.get("shape"), list)
                or any(not isinstance(s, int) or s < 0 for s in a["shape"])):
            raise FormatError(f"checkpoint: bad array record {a!r}")
    if len({a["name"] for a in declared}) != len(declared):
        raise FormatError("checkpoint: duplicate array names")
    total = sum(int(np.prod(a["shape"])) for a in declared)
    if len(payload) != total * 8:
        raise FormatError(
            f"checkpoint: payload length mismatch (got {len(payload)}, "
            f"expected {total * 8})")
    flat = np.frombuffer(payload, dtype="<f8")

    arrays = {}
    at = 0
    for a in declared:
        name, shape = a.get("name"), tuple(int(s) for s in a.get("shape", ()))
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = flat[at:at + n].reshape(shape).copy()
        at += n

    layer_dims = descriptor.layer_dims()
    layers = []
    for li, (out_dim, in_dim) in enumerate(layer_dims):
        wname, bname = f"layer{li}.weights", f"layer{li}.biases"
        if wname not in arrays or bname not in arrays:
            raise FormatError(f"checkpoint: missing arrays for layer {li}")
        if arrays[wname].shape != (out_dim, in_dim):
            raise FormatError(
                f"checkpoint: layer {li} shape {arrays[wname].shape} does not "
                f"match descriptor {(out_dim, in_dim)}")
        try:
            layers.append(DenseLayer(arrays[wname], arrays[bname]))
        except (StructuralError, NumericsError) as e:
            raise FormatError(f"checkpoint: layer {li} rejected ({e})") from e
    latents = LatentTable()
    for a in declared:
        name = a["name"]
        if name.startswith("latent."):
            sid = name[len("latent."):]
            if arrays[name].shape != (descriptor.latent_dim,):
                raise FormatError(
                    f"checkpoint: latent {sid!r} length {arrays[name].shape} "
                    f"does not match descriptor d={descriptor.latent_dim}")
            try:
                latents.add(LatentCode(arrays[name], sid))
            except StructuralError as e:
                raise FormatError(f"checkpoint: latent {sid!r} rejected ({e})") from e
    return Checkpoint(ModelParams(descriptor, layers), latents,
                      header.get("manifest", {}))


# ---------------------------------------------------------------------------
# slice plans

def write_plan(path, plan: SlicePlan) -> None:
    records = [s.to_dict() for s in plan]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(records, f, separators=(",", ":"))
        f.write("\n")


def read_plan(path) -> SlicePlan:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        records = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"plan: not valid JSON ({e})") from e
    if not isinstance(records, list) or not records:
        raise FormatError("plan: must be a nonempty JSON array")
    try:
        specs = [SliceSpecifier.from_dict(r) for r in records]
        # the wire format carries no strategy tag; provenance is not restored
        return SlicePlan(specs, strategy="manual", provenance={"file": str(path)})
    except StructuralError as e:
        raise FormatError(f"plan: {e}") from e


# ---------------------------------------------------------------------------
# metric reports

def _format_cell(v) -> str:
    if v is None:
        return "NA"
    return repr(float(v))


def write_report(path, report: MetricsReport) -> None:
    lines = [REPORT_HEADER]
    for r in report.rows:
        lines.append(",".join([
            r.subject_id, r.strategy, str(r.n_slices), str(r.class_id),
            _format_cell(r.dsc), _format_cell(r.asd_mm),
            _format_cell(r.hd_max_mm), _format_cell(r.vol_err_pct)]))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _parse_cell(s: str):
    if s == "NA":
        return None
    try:
        return float(s)
    except ValueError as e:
        raise FormatError(f"report: bad numeric cell {s!r}") from e


def _parse_int(s: str) -> int:
    try:
        return int(s)
    except ValueError as e:
        raise FormatError(f"report: bad integer cell {s!r}") from e


def read_report(path) -> MetricsReport:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln]
    if not lines or lines[0] != REPORT_HEADER:
        raise FormatError("report: bad header row")
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != 8:
            raise FormatError(f"report: bad row {ln!r}")
        dsc_v = _parse_cell(cells[4])
        if dsc_v is None:
            raise FormatError("report: dsc cell may not be NA")
        rows.append(MetricsRow(cells[0], cells[1], _parse_int(cells[2]),
                               _parse_int(cells[3]), dsc_v,
                               _parse_cell(cells[5]), _parse_cell(cells[6]),
                               _parse_cell(cells[7])))
    return MetricsReport(rows)


# ---------------------------------------------------------------------------
# manifests

def write_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"manifest: not valid JSON ({e})") from e


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
