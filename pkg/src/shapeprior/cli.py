"""Command-line pipeline: phantom -> train -> plan -> infer -> eval -> report.

Every subcommand writes its outputs plus a manifest holding the fully
resolved configuration, seeds, and input digests; reruns with the same
manifest are bit-identical. Errors come out as a single ``error: ...`` line
on stderr with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import __version__
from .inference import InferConfig, infer_volume, oracle_annotate
from .io import (Checkpoint, FormatError, file_sha256, read_checkpoint,
                 read_plan, read_population, read_report, read_volume,
                 write_checkpoint, write_manifest, write_plan,
                 write_population, write_report, write_volume)
from .metrics import UndefinedMetric, evaluate
from .numerics import NumericsError, UsageError
from .phantoms import (DomainShiftSpec, PhantomSpec, default_uc1_spec,
                       default_uc2_spec, generate_muscle_population,
                       generate_population, load_spec_json, split_population)
from .selection import equidistant_plan, resolve_plan, uc1_build_plan, uc2_build_plan
from .trainer import TrainConfig, train
from .volume import StructuralError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line, machine-parsable
        raise _UsageError(f"{self.prog}: {message}")


def _apply_threads(n: int) -> None:
    if n <= 0:
        return
    try:
        import threadpoolctl
        # hold the limiter for the rest of the process
        global _THREAD_LIMITS
        _THREAD_LIMITS = threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        print("note: threadpoolctl not installed; --threads ignored",
              file=sys.stderr)


def _arg_record(args) -> dict:
    rec = {}
    for k, v in sorted(vars(args).items()):
        if k == "func" or v is None:
            continue
        rec[k] = v
    return rec


def _manifest(command: str, args, inputs: dict | None = None,
              extra: dict | None = None) -> dict:
    m = {"command": command, "arguments": _arg_record(args),
         "package": {"name": "shapeprior", "version": __version__}}
    if inputs:
        m["inputs"] = {str(p): file_sha256(p) for p in inputs}
    if extra:
        m.update(extra)
    return m


def _infer_config(args) -> InferConfig:
    return InferConfig(epochs=args.infer_epochs, seed=args.seed,
                       n_latent_restarts=args.restarts)


# ---------------------------------------------------------------------------
# subcommands

_BUILTIN_SPECS = {
    "default-uc1": lambda: {
        "type": "multi-organ", "spec": default_uc1_spec().to_dict(),
        "splits": {"train": 8, "val": 2, "test": 10}},
    "default-uc2": lambda: {
        "type": "muscle", "spec": default_uc2_spec(n_subjects=10).to_dict(),
        "splits": {"train": 10},
        "shift": DomainShiftSpec().to_dict(),
        "shift_splits": {"adapt": 3, "test": 10}},
}


def cmd_phantom(args) -> int:
    if args.spec in _BUILTIN_SPECS:
        doc = _BUILTIN_SPECS[args.spec]()
        spec_input = None
    else:
        with open(args.spec, "r", encoding="utf-8") as f:
            doc = load_spec_json(f.read())
        spec_input = args.spec
    spec = PhantomSpec.from_dict(doc["spec"])
    seed = spec.seed if args.seed is None else args.seed
    splits = doc.get("splits", {"all": spec.n_subjects})
    if sum(splits.values()) != spec.n_subjects:
        raise StructuralError(
            f"splits {splits} do not sum to n_subjects={spec.n_subjects}")

    written = {}
    if doc["type"] == "multi-organ":
        population = generate_population(spec, seed)
    else:
        population = generate_muscle_population(spec, None, seed)
    for name, part in zip(splits, split_population(population,
                                                   list(splits.values()))):
        d = os.path.join(args.out, name)
        write_population(d, part)
        written[name] = [v.shape_id for v in part]

    if doc.get("shift") is not None:
        shift = DomainShiftSpec.from_dict(doc["shift"])
        shift_splits = doc.get("shift_splits", {"shifted": spec.n_subjects})
        shifted_spec = dataclasses.replace(
            spec, n_subjects=sum(shift_splits.values()))
        shifted = generate_muscle_population(shifted_spec, shift, seed,
                                             id_prefix="d")
        for name, part in zip(shift_splits,
                              split_population(shifted,
                                               list(shift_splits.values()))):
            d = os.path.join(args.out, f"shift_{name}")
            write_population(d, part)
            written[f"shift_{name}"] = [v.shape_id for v in part]

    write_manifest(os.path.join(args.out, "manifest.json"),
                   _manifest("phantom", args,
                             inputs=[spec_input] if spec_input else None,
                             extra={"recipe": doc, "seed": seed,
                                    "populations": written}))
    return 0


def cmd_train(args) -> int:
    data = read_population(args.data)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            try:
                config = TrainConfig.from_dict(json.load(f))
            except json.JSONDecodeError as e:
                raise FormatError(f"train config: not valid JSON ({e})") from e
    else:
        config = TrainConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)

    params, latents, history = train(data, config)

    manifest = _manifest(
        "train", args,
        inputs=[os.path.join(args.data, f"{v.shape_id}.segv") for v in data],
        extra={"config": config.to_dict(),
               "final_objective": history.final_objective(),
               "params_checksum": params.checksum()})
    write_checkpoint(args.out, Checkpoint(params, latents,
                                          {"config": config.to_dict()}))
    write_manifest(args.out + ".manifest.json", manifest)
    lines = ["epoch,objective,dice_loss,ce_loss,latent_norm_mean"]
    for i, e in enumerate(history.epochs):
        lines.append(f"{e},{history.objective[i]!r},{history.dice_loss[i]!r},"
                     f"{history.ce_loss[i]!r},{history.latent_norm_mean[i]!r}")
    with open(args.out + ".history.csv", "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return 0


def cmd_plan(args) -> int:
    data = read_population(args.data)
    inputs = [os.path.join(args.data, f"{v.shape_id}.segv") for v in data]
    if args.strategy == "equidistant":
        plan = equidistant_plan(args.max_slices, data[0].nz)
    else:
        if not args.ckpt:
            raise StructuralError(f"strategy {args.strategy} requires --ckpt")
        ckpt = read_checkpoint(args.ckpt)
        inputs.append(args.ckpt)
        cfg = _infer_config(args)
        if args.strategy == "uc1":
            plan = uc1_build_plan(ckpt.params, data, args.max_slices, cfg)
        else:
            plan = uc2_build_plan(ckpt.params, data, args.max_slices, cfg)
    write_plan(args.out, plan)
    write_manifest(args.out + ".manifest.json",
                   _manifest("plan", args, inputs=inputs,
                             extra={"strategy": plan.strategy,
                                    "provenance": plan.provenance}))
    return 0


def cmd_infer(args) -> int:
    if not args.slices_from_gt:
        raise StructuralError(
            "only oracle annotation is implemented; pass --slices-from-gt")
    ckpt = read_checkpoint(args.ckpt)
    plan = read_plan(args.plan)
    gt = read_volume(args.gt)
    annotations = oracle_annotate(gt, plan)
    pred, probs, _ = infer_volume(ckpt.params, annotations, _infer_config(args))
    pred.shape_id = gt.shape_id
    write_volume(args.out, pred)
    if args.probs_out:
        np.save(args.probs_out, probs)
    write_manifest(args.out + ".manifest.json",
                   _manifest("infer", args,
                             inputs=[args.ckpt, args.plan, args.gt],
                             extra={"resolved_slices": resolve_plan(plan, gt),
                                    "infer_config": _infer_config(args).to_dict()}))
    return 0


def _volumes_arg(path):
    if os.path.isdir(path):
        return read_population(path)
    return [read_volume(path)]


def cmd_eval(args) -> int:
    preds = _volumes_arg(args.pred)
    gts = _volumes_arg(args.gt)
    if len(preds) != len(gts):
        raise StructuralError(
            f"{len(preds)} predictions vs {len(gts)} ground truths")
    report = evaluate(preds, gts, {"strategy": args.strategy,
                                   "n_slices": args.n_slices})
    write_report(args.out, report)
    write_manifest(args.out + ".manifest.json", _manifest("eval", args))
    return 0


def _agg_cell(v) -> str:
    return "NA" if v is None else repr(float(v))


def cmd_report(args) -> int:
    rep = read_report(args.csv)
    os.makedirs(args.out, exist_ok=True)
    agg = rep.aggregates()
    metrics = ("dsc", "asd_mm", "hd_max_mm", "vol_err_pct")
    lines = ["strategy,n_slices,class_id,n,"
             + ",".join(f"{m}_mean,{m}_std" for m in metrics)]
    for (strategy, n_slices, class_id), stats in agg.items():
        cells = [strategy, str(n_slices), str(class_id), str(stats["n"])]
        for m in metrics:
            cells += [_agg_cell(stats[f"{m}_mean"]), _agg_cell(stats[f"{m}_std"])]
        lines.append(",".join(cells))
    with open(os.path.join(args.out, "aggregates.csv"), "w",
              encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")

    # plot-ready: one file per metric, mean +/- std vs n_slices
    for m in metrics:
        lines = ["strategy,class_id,n_slices,mean,std"]
        for (strategy, n_slices, class_id), stats in agg.items():
            lines.append(",".join([
                strategy, str(class_id), str(n_slices),
                _agg_cell(stats[f"{m}_mean"]), _agg_cell(stats[f"{m}_std"])]))
        with open(os.path.join(args.out, f"curve_{m}.csv"), "w",
                  encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
    write_manifest(os.path.join(args.out, "manifest.json"),
                   _manifest("report", args, inputs=[args.csv]))
    return 0


# ---------------------------------------------------------------------------

def _common(p):
    p.add_argument("--threads", type=int, default=0,
                   help="cap BLAS threads (needs threadpoolctl)")
    p.add_argument("--deterministic", action="store_true",
                   help="record deterministic mode in the manifest; all "
                        "pipeline stages are seeded either way")


def build_parser() -> _Parser:
    parser = _Parser(prog="shapeprior",
                     description="auto-decoder shape-prior segmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[], help="generate phantom populations")
    p.add_argument("--spec", required=True,
                   help="recipe JSON, or builtin: " + ", ".join(_BUILTIN_SPECS))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    _common(p)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="fit decoder weights + latent table")
    p.add_argument("--data", required=True, help="directory of .segv volumes")
    p.add_argument("--config", default=None, help="TrainConfig JSON")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, default=None)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("plan", help="build a slice plan")
    p.add_argument("--strategy", required=True,
                   choices=("equidistant", "uc1", "uc2"))
    p.add_argument("--ckpt", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--max-slices", type=int, required=True, dest="max_slices")
    p.add_argument("--out", required=True)
    p.add_argument("--infer-epochs", type=int, default=300, dest="infer_epochs")
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    _common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("infer", help="few-shot inference from planned slices")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--gt", required=True, help="ground-truth .segv volume")
    p.add_argument("--slices-from-gt", action="store_true",
                   dest="slices_from_gt",
                   help="answer the plan with ground-truth slices (oracle)")
    p.add_argument("--out", required=True)
    p.add_argument("--probs-out", default=None, dest="probs_out",
                   help="also save the probability grid (.npy)")
    p.add_argument("--infer-epochs", type=int, default=300, dest="infer_epochs")
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    _common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="metric report for predictions vs GT")
    p.add_argument("--pred", required=True, help=".segv file or directory")
    p.add_argument("--gt", required=True, help=".segv file or directory")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--strategy", default="")
    p.add_argument("--n-slices", type=int, default=0, dest="n_slices")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate a report CSV into tables")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _common(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    _apply_threads(args.threads)
    try:
        return args.func(args)
    except (StructuralError, NumericsError, UsageError, UndefinedMetric) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
