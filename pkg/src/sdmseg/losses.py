"""Training objectives and their analytic gradients.

Every loss takes class-first arrays ``(N, nx, ny, nz)`` (a bare 3-D array is
treated as one class) and returns ``(value, grad)`` where ``grad`` has the
shape of the prediction. Background is never a channel here.

* ``dice_loss``    N - sum_t 2 (sum y p + eps) / (sum y + sum p + eps)
* ``product_loss`` -y p / (y p + p^2 + y^2), averaged over voxels
* ``l1_loss``      |p - y|, averaged over voxels
* ``sdm_loss``     product + L1
* ``joint_loss``   dice(Heaviside(pred)) + lambda * sdm_loss
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .heaviside import HeavisideConfig, seg_from_sdm, seg_from_sdm_grad

__all__ = [
    "LossConfig",
    "dice_loss",
    "product_loss",
    "product_terms",
    "l1_loss",
    "sdm_loss",
    "joint_loss",
    "one_hot_channels",
]

# substitutes for the denominator only where y = p = 0 (its single zero)
PRODUCT_GUARD = 1e-12

REDUCTIONS = ("mean-per-class", "sum-per-class")


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 1e-5
    reduction: str = "mean-per-class"
    lam: float = 10.0
    conventional_dice: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if not self.lam >= 0:
            raise DomainError(f"lambda must be non-negative, got {self.lam}")
        if self.reduction not in REDUCTIONS:
            raise DomainError(f"unknown reduction {self.reduction!r}")


def _pair(pred, target):
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if p.shape != y.shape:
        raise DomainError(f"shape mismatch: prediction {p.shape} vs target {y.shape}")
    squeeze = p.ndim == 3
    if squeeze:
        p, y = p[None], y[None]
    return p, y, squeeze


def _out(grad, squeeze):
    return grad[0] if squeeze else grad


def _voxel_scale(y, cfg):
    n_vox = y[0].size
    return 1.0 / n_vox if cfg.reduction == "mean-per-class" else 1.0


def one_hot_channels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """``(num_classes, ...)`` float masks for classes ``1..num_classes``."""
    labels = np.asarray(labels)
    return np.stack([(labels == c).astype(np.float64) for c in range(1, num_classes + 1)])


def dice_loss(pred, gt, cfg: LossConfig = LossConfig()):
    p, y, squeeze = _pair(pred, gt)
    axes = tuple(range(1, p.ndim))
    eps = cfg.epsilon
    inter = (y * p).sum(axis=axes)
    denom = y.sum(axis=axes) + p.sum(axis=axes) + eps
    num = 2.0 * inter + eps if cfg.conventional_dice else 2.0 * (inter + eps)
    shape = (-1,) + (1,) * len(axes)
    terms = num / denom
    value = p.shape[0] - terms.sum()
    # quotient rule on num/denom; d denom / dp = 1
    dterm = (2.0 * y * denom.reshape(shape) - num.reshape(shape)) / (denom**2).reshape(shape)
    return float(value), _out(-dterm, squeeze)


def product_terms(pred, target) -> np.ndarray:
    """Per-voxel ``-y p / (y p + p^2 + y^2)``; 0 at ``y = p = 0``."""
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    d = y * p + p * p + y * y
    return -(y * p) / np.where(d > 0, d, PRODUCT_GUARD)


def product_loss(pred_sdm, gt_sdm, cfg: LossConfig = LossConfig()):
    p, y, squeeze = _pair(pred_sdm, gt_sdm)
    scale = _voxel_scale(y, cfg)
    d = y * p + p * p + y * y
    d = np.where(d > 0, d, PRODUCT_GUARD)
    value = float((-(y * p) / d).sum() * scale)
    # d/dp of -yp/d simplifies to -y (y^2 - p^2) / d^2
    grad = -y * (y * y - p * p) / (d * d) * scale
    return value, _out(grad, squeeze)


def l1_loss(pred_sdm, gt_sdm, cfg: LossConfig = LossConfig()):
    p, y, squeeze = _pair(pred_sdm, gt_sdm)
    scale = _voxel_scale(y, cfg)
    diff = p - y
    return float(np.abs(diff).sum() * scale), _out(np.sign(diff) * scale, squeeze)


def sdm_loss(pred_sdm, gt_sdm, cfg: LossConfig = LossConfig()):
    v1, g1 = product_loss(pred_sdm, gt_sdm, cfg)
    v2, g2 = l1_loss(pred_sdm, gt_sdm, cfg)
    return v1 + v2, g1 + g2


def joint_loss(
    pred_sdm,
    gt_sdm,
    gt_labels,
    hcfg: HeavisideConfig = HeavisideConfig(),
    cfg: LossConfig = LossConfig(),
    regression=sdm_loss,
):
    """Dice on the Heaviside-converted prediction plus ``lam`` times the SDM loss.

    ``gt_labels`` is either an integer label grid or ready one-hot channels
    matching ``pred_sdm``. ``regression`` selects the SDM term; pass
    :func:`l1_loss` for the L1-only variant.
    """
    p, y, squeeze = _pair(pred_sdm, gt_sdm)
    gt = np.asarray(gt_labels)
    if gt.shape == p.shape[1:]:
        gt = one_hot_channels(gt, p.shape[0])
    if gt.shape != p.shape:
        raise DomainError(f"label shape {np.shape(gt_labels)} does not match prediction {p.shape}")
    seg = seg_from_sdm(p, hcfg)
    dval, dgrad = dice_loss(seg, gt, cfg)
    grad = dgrad * seg_from_sdm_grad(p, hcfg)
    value = dval
    if cfg.lam:
        rval, rgrad = regression(p, y, cfg)
        value += cfg.lam * rval
        grad = grad + cfg.lam * rgrad
    return float(value), _out(grad, squeeze)
