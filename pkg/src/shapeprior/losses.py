"""Soft Dice + cross-entropy segmentation loss with latent L2 regularization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LatentCode
from .numerics import log_softmax, softmax
from .volume import StructuralError


@dataclass(frozen=True)
class LossConfig:
    """Objective weights. ``lambda_`` scales the latent L2 penalty."""

    lambda_: float = 1e-4
    dice_epsilon: float = 1e-6
    dice_weight: float = 1.0
    ce_weight: float = 1.0

    def __post_init__(self):
        if self.lambda_ < 0 or self.dice_weight < 0 or self.ce_weight < 0:
            raise StructuralError("loss weights must be >= 0")
        if self.dice_epsilon <= 0:
            raise StructuralError("dice_epsilon must be > 0")

    def to_dict(self) -> dict:
        return {"lambda": self.lambda_, "dice_epsilon": self.dice_epsilon,
                "dice_weight": self.dice_weight, "ce_weight": self.ce_weight}

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(lambda_=d.get("lambda", 1e-4),
                   dice_epsilon=d.get("dice_epsilon", 1e-6),
                   dice_weight=d.get("dice_weight", 1.0),
                   ce_weight=d.get("ce_weight", 1.0))


def one_hot(labels: np.ndarray, n_class: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and labels.max() >= n_class:
        raise StructuralError(f"label {int(labels.max())} >= n_class {n_class}")
    out = np.zeros((labels.shape[0], n_class))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _check_batch(probs: np.ndarray, targets: np.ndarray):
    if probs.ndim != 2 or probs.shape != targets.shape:
        raise StructuralError(f"shape mismatch: probs {probs.shape} vs targets {targets.shape}")
    if probs.shape[0] == 0:
        raise StructuralError("empty batch")


def soft_dice_loss(probs: np.ndarray, targets: np.ndarray, config: LossConfig = LossConfig()) -> float:
    """1 - mean-over-classes soft Dice; epsilon keeps absent classes harmless."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    _check_batch(probs, targets)
    eps = config.dice_epsilon
    num = 2.0 * (probs * targets).sum(axis=0) + eps
    den = probs.sum(axis=0) + targets.sum(axis=0) + eps
    return float(1.0 - (num / den).mean())


def _soft_dice_with_prob_grad(probs, targets, config):
    eps = config.dice_epsilon
    n_class = probs.shape[1]
    num = 2.0 * (probs * targets).sum(axis=0) + eps
    den = probs.sum(axis=0) + targets.sum(axis=0) + eps
    value = float(1.0 - (num / den).mean())
    # d/dp of -(1/C) * num_c/den_c
    dprobs = -(2.0 * targets * den - num) / (den * den) / n_class
    return value, dprobs


def cross_entropy_loss(probs: np.ndarray, target_labels: np.ndarray) -> float:
    """Mean negative log-probability of the target class."""
    probs = np.asarray(probs, dtype=np.float64)
    target_labels = np.asarray(target_labels)
    if probs.ndim != 2 or probs.shape[0] != target_labels.shape[0]:
        raise StructuralError("probs/labels batch size mismatch")
    if target_labels.size and target_labels.max() >= probs.shape[1]:
        raise StructuralError(
            f"label {int(target_labels.max())} >= n_class {probs.shape[1]}")
    picked = probs[np.arange(probs.shape[0]), target_labels]
    return float(-np.log(picked).mean())


def cross_entropy_from_logits(logits: np.ndarray, target_labels: np.ndarray) -> float:
    """Same loss computed from logits via log-sum-exp (no underflow)."""
    target_labels = np.asarray(target_labels)
    if target_labels.size and target_labels.max() >= logits.shape[1]:
        raise StructuralError(
            f"label {int(target_labels.max())} >= n_class {logits.shape[1]}")
    logp = log_softmax(logits)
    return float(-logp[np.arange(logits.shape[0]), target_labels].mean())


def latent_penalty(z, lambda_: float) -> float:
    values = z.values if isinstance(z, LatentCode) else np.asarray(z, dtype=np.float64)
    return float(lambda_ * (values * values).sum())


def total_objective(probs: np.ndarray, targets: np.ndarray, z,
                    config: LossConfig = LossConfig()) -> float:
    """dice_weight * soft_dice + ce_weight * cross_entropy + lambda * ||z||^2.

    ``targets`` is the one-hot batch; the cross-entropy term reads the class
    index off its argmax.
    """
    labels = np.argmax(np.asarray(targets), axis=1)
    return (config.dice_weight * soft_dice_loss(probs, targets, config)
            + config.ce_weight * cross_entropy_loss(probs, labels)
            + latent_penalty(z, config.lambda_))


@dataclass
class ObjectiveResult:
    """Objective value, its terms, and gradients w.r.t. logits and latent."""

    value: float
    dice: float
    ce: float
    reg: float
    dlogits: np.ndarray
    dlatent_reg: np.ndarray


def objective_from_logits(logits: np.ndarray, labels: np.ndarray, z,
                          config: LossConfig) -> ObjectiveResult:
    """Objective value plus exact gradients w.r.t. logits and latent.

    This is the differentiable path used by training and inference: the
    cross-entropy term goes through log-sum-exp and the Dice term chains
    through the softmax Jacobian.
    """
    labels = np.asarray(labels)
    m = logits.shape[0]
    if m == 0:
        raise StructuralError("empty batch")
    probs = softmax(logits)
    targets = one_hot(labels, logits.shape[1])

    dice, dice_dprobs = _soft_dice_with_prob_grad(probs, targets, config)
    ce = cross_entropy_from_logits(logits, labels)

    # softmax Jacobian: dL/dlogit_k = p_k * (g_k - sum_c g_c p_c)
    inner = (dice_dprobs * probs).sum(axis=1, keepdims=True)
    dice_dlogits = probs * (dice_dprobs - inner)
    ce_dlogits = (probs - targets) / m

    dlogits = config.dice_weight * dice_dlogits + config.ce_weight * ce_dlogits

    zvals = z.values if isinstance(z, LatentCode) else np.asarray(z, dtype=np.float64)
    reg = latent_penalty(zvals, config.lambda_)
    value = config.dice_weight * dice + config.ce_weight * ce + reg
    dlatent_reg = 2.0 * config.lambda_ * zvals
    return ObjectiveResult(value, dice, ce, reg, dlogits, dlatent_reg)
