"""Smooth Heaviside connector between signed distance maps and segmentations.

The step is the logistic ``f(z) = 1 / (1 + exp(-k z))`` with steepness
``k`` multiplying ``z``. With ``k = 1500`` on normalized SDMs the curve is
essentially a hard step except inside a thin shell around the zero level set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .volume import ScalarVolume

__all__ = ["HeavisideConfig", "smooth_step", "smooth_step_grad", "seg_from_sdm", "seg_from_sdm_grad"]

# exp(-40) is below float64 resolution next to 1, so the logistic is 0 or 1
SATURATION = 40.0


@dataclass(frozen=True)
class HeavisideConfig:
    k: float = 1500.0

    def __post_init__(self):
        if not (math.isfinite(self.k) and self.k > 0):
            raise DomainError(f"steepness k must be positive and finite, got {self.k!r}")


def _logistic(t: np.ndarray) -> np.ndarray:
    raw = t
    # clip first so saturated inputs never overflow or underflow exp
    t = np.clip(t, -SATURATION - 1, SATURATION + 1)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    out[raw > SATURATION] = 1.0
    out[raw < -SATURATION] = 0.0
    return out


def smooth_step(z, cfg: HeavisideConfig = HeavisideConfig()):
    """Logistic step ``sigma(k z)``; scalar in, scalar out."""
    t = np.asarray(z, dtype=np.float64) * cfg.k
    out = _logistic(np.atleast_1d(t)).reshape(t.shape)
    return float(out) if out.ndim == 0 else out


def smooth_step_grad(z, cfg: HeavisideConfig = HeavisideConfig()):
    """Derivative ``k sigma(k z) (1 - sigma(k z))``, zero once saturated."""
    t = np.atleast_1d(np.asarray(z, dtype=np.float64) * cfg.k)
    # sigma(t)(1 - sigma(t)) is even in t; evaluate on the small side
    s = _logistic(-np.abs(t))
    g = cfg.k * s * (1.0 - s)
    g = g.reshape(np.shape(z))
    return float(g) if g.ndim == 0 else g


def seg_from_sdm(sdm, cfg: HeavisideConfig = HeavisideConfig()):
    """Organ probability ``f(-phi)``: above 0.5 exactly where ``phi < 0``."""
    if isinstance(sdm, ScalarVolume):
        return ScalarVolume(smooth_step(-np.asarray(sdm.data, dtype=np.float64), cfg), sdm.spacing)
    return smooth_step(-np.asarray(sdm, dtype=np.float64), cfg)


def seg_from_sdm_grad(sdm, cfg: HeavisideConfig = HeavisideConfig()):
    """``d seg_from_sdm / d phi``, which is ``-f'(-phi)``."""
    return -smooth_step_grad(-np.asarray(sdm, dtype=np.float64), cfg)
