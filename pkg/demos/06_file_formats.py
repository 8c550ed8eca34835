"""Tour of the on-disk formats: .segv volumes, checkpoints, plans, reports.

All four are deliberately dull: a one-line JSON header followed by raw
bytes where there is bulk data, plain JSON or CSV where there is not.
Every reader validates before touching the payload and raises FormatError
with a message naming what is wrong, and every writer is byte-stable so
artifact hashes can stand in for provenance.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from shapeprior.io import (FormatError, file_sha256, read_plan, read_report,
                           read_volume, write_checkpoint, read_checkpoint,
                           write_plan, write_report, write_volume)
from shapeprior.io import Checkpoint
from shapeprior.metrics import MetricsReport, MetricsRow
from shapeprior.model import (ArchitectureDescriptor, LatentTable, init_latent,
                              init_params)
from shapeprior.selection import SlicePlan, absolute, percent
from shapeprior.volume import LabelVolume

root = Path(tempfile.mkdtemp(prefix="formats_"))

# --- label volumes ---------------------------------------------------------
rng = np.random.default_rng(0)
vol = LabelVolume(rng.integers(0, 3, size=(4, 5, 6)).astype(np.uint8),
                  (0.5, 0.5, 2.0), 3, shape_id="demo")
path = root / "demo.segv"
write_volume(path, vol)
raw = path.read_bytes()
header = raw.split(b"\n", 1)[0]
print(f"volume header: {header.decode()}")
print(f"payload: {len(raw) - len(header) - 1} bytes, one per voxel, x fastest")

back = read_volume(path)
assert np.array_equal(back.labels, vol.labels) and back.spacing_mm == vol.spacing_mm
print(f"round trip ok, sha256 {file_sha256(path)[:16]}...")

# flip one header byte and watch the reader refuse politely
doc = json.loads(header)
doc["dims"] = [4, 5, 7]
(root / "bad.segv").write_bytes(json.dumps(doc).encode() + b"\n"
                                + raw.split(b"\n", 1)[1])
try:
    read_volume(root / "bad.segv")
except FormatError as e:
    print(f"tampered file rejected: {e}")

# --- checkpoints -----------------------------------------------------------
descriptor = ArchitectureDescriptor(n_class=3, latent_dim=6, hidden_width=8)
latents = LatentTable()
for sid in ("s000", "s001"):
    latents.add(init_latent(descriptor, sid, seed=0))
ckpt = Checkpoint(init_params(descriptor, seed=0), latents,
                  {"note": "format demo"})
write_checkpoint(root / "model.ckpt", ckpt)
again = read_checkpoint(root / "model.ckpt")
assert np.array_equal(again.params.layers[0].weights, ckpt.params.layers[0].weights)
print(f"checkpoint: {len(again.latents)} latents, "
      f"sha256 {file_sha256(root / 'model.ckpt')[:16]}...")

# --- slice plans -----------------------------------------------------------
plan = SlicePlan([absolute(4), percent(50.0)], strategy="manual")
write_plan(root / "plan.json", plan)
print(f"plan file: {(root / 'plan.json').read_text().strip()}")
print(f"read back: {[(s.kind, s.value) for s in read_plan(root / 'plan.json').specifiers]}")

# --- metric reports --------------------------------------------------------
report = MetricsReport([
    MetricsRow("s000", "uc1", 2, 1, 0.91, 0.4, 2.0, -3.2),
    MetricsRow("s000", "uc1", 2, 2, 0.88, None, None, None),
])
write_report(root / "report.csv", report)
print("report:")
print((root / "report.csv").read_text().rstrip())
assert read_report(root / "report.csv").rows[1].asd_mm is None
