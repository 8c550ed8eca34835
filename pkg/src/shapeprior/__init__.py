"""Implicit shape-prior segmentation from sparse annotated slices.

A coordinate MLP is fit jointly with one latent code per training shape;
new shapes are segmented by optimizing a fresh latent against a handful of
annotated axial slices, chosen by one of three slice-plan strategies.
"""

__version__ = "0.1.0"

from .inference import (InferConfig, SliceAnnotation, SliceAnnotationSet,
                        infer_latent, infer_volume, oracle_annotate)
from .io import (Checkpoint, FormatError, read_checkpoint, read_plan,
                 read_population, read_report, read_volume, write_checkpoint,
                 write_plan, write_population, write_report, write_volume)
from .losses import LossConfig, cross_entropy_loss, soft_dice_loss, total_objective
from .metrics import (MetricsReport, UndefinedMetric, asd, dsc, evaluate,
                      hausdorff_2d, hausdorff_max, volumetric_error_pct)
from .model import (ArchitectureDescriptor, LatentCode, LatentTable,
                    ModelParams, init_latent, init_params, predict_volume)
from .numerics import NumericsError, UsageError, finite_diff_check
from .phantoms import (DomainShiftSpec, OrganSpec, PhantomSpec,
                       default_uc1_spec, default_uc2_spec,
                       generate_muscle_population, generate_population,
                       split_population)
from .selection import (ErrorCurve, ErrorMap, SlicePlan, SliceSpecifier,
                        build_error_map, equidistant_plan, resolve_plan,
                        uc1_build_plan, uc1_minimal_plan, uc1_select_next,
                        uc2_build_plan, uc2_error_curve, uc2_select_next)
from .trainer import TrainConfig, TrainHistory, sample_voxels, train
from .volume import LabelVolume, StructuralError, class_span, foreground_span

__all__ = [
    "ArchitectureDescriptor", "Checkpoint", "DomainShiftSpec", "ErrorCurve",
    "ErrorMap", "FormatError", "InferConfig", "LabelVolume", "LatentCode",
    "LatentTable", "LossConfig", "MetricsReport", "ModelParams",
    "NumericsError", "OrganSpec", "PhantomSpec", "SliceAnnotation",
    "SliceAnnotationSet", "SlicePlan", "SliceSpecifier", "StructuralError",
    "TrainConfig", "TrainHistory", "UndefinedMetric", "UsageError",
    "asd", "build_error_map", "class_span", "cross_entropy_loss",
    "default_uc1_spec", "default_uc2_spec", "dsc", "equidistant_plan",
    "evaluate", "finite_diff_check", "foreground_span",
    "generate_muscle_population", "generate_population", "hausdorff_2d",
    "hausdorff_max", "infer_latent", "infer_volume", "init_latent",
    "init_params", "oracle_annotate", "predict_volume", "read_checkpoint",
    "read_plan", "read_population", "read_report", "read_volume",
    "resolve_plan", "sample_voxels", "soft_dice_loss", "split_population",
    "total_objective", "train", "uc1_build_plan", "uc1_minimal_plan",
    "uc1_select_next", "uc2_build_plan", "uc2_error_curve", "uc2_select_next",
    "volumetric_error_pct", "write_checkpoint", "write_plan",
    "write_population", "write_report", "write_volume",
]
