"""Overlap and surface-distance metrics for label volumes.

Surfaces are the foreground voxels with at least one background
6-neighbour, the outside of the grid counting as background. Distances are
between voxel centres in mm. HD95 takes the larger of the two directed
95th percentiles, each by the nearest-rank rule.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError
from .volume import LabelVolume, Spacing

__all__ = [
    "ClassMetrics",
    "MetricReport",
    "dice_coefficient",
    "extract_surface",
    "surface_distances",
    "hausdorff",
    "hd95",
    "asd",
    "nearest_rank_percentile",
    "evaluate",
]

HD95_CONVENTION = "max of directed nearest-rank 95th percentiles"
CSV_COLUMNS = ("class_id", "dice", "hd_mm", "hd95_mm", "asd_mm", "defined")


def dice_coefficient(a, b) -> float:
    """``2|a & b| / (|a| + |b|)``, taken as 1.0 when both masks are empty."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def surface_mask(mask) -> np.ndarray:
    m = np.asarray(mask).astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = padded[1:-1, 1:-1, 1:-1].copy()
    for axis in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    return m & ~interior


def extract_surface(mask, spacing=None) -> np.ndarray:
    """Physical positions (mm) of the boundary voxels, shape ``(n, 3)``."""
    idx = np.argwhere(surface_mask(mask))
    return idx * Spacing.of(spacing).as_array()


def surface_distances(a_surf: np.ndarray, b_surf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Directed nearest-neighbour distances ``a -> b`` and ``b -> a``."""
    a_surf = np.asarray(a_surf, dtype=np.float64).reshape(-1, 3)
    b_surf = np.asarray(b_surf, dtype=np.float64).reshape(-1, 3)
    if len(a_surf) == 0 or len(b_surf) == 0:
        raise DomainError("surface distances need two non-empty surfaces")
    d_ab, _ = cKDTree(b_surf).query(a_surf, k=1)
    d_ba, _ = cKDTree(a_surf).query(b_surf, k=1)
    return np.asarray(d_ab, dtype=np.float64), np.asarray(d_ba, dtype=np.float64)


def nearest_rank_percentile(values, q: float) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise DomainError("percentile of an empty set")
    rank = max(1, math.ceil(q / 100.0 * v.size))
    return float(v[rank - 1])


def hausdorff(d_ab, d_ba) -> float:
    return float(max(np.max(d_ab), np.max(d_ba)))


def hd95(d_ab, d_ba) -> float:
    return max(nearest_rank_percentile(d_ab, 95), nearest_rank_percentile(d_ba, 95))


def asd(d_ab, d_ba) -> float:
    return float((np.sum(d_ab) + np.sum(d_ba)) / (len(d_ab) + len(d_ba)))


@dataclass
class ClassMetrics:
    class_id: int
    dice: float
    hd_mm: float = math.nan
    hd95_mm: float = math.nan
    asd_mm: float = math.nan
    defined: bool = True


@dataclass
class MetricReport:
    classes: list[ClassMetrics] = field(default_factory=list)
    hd95_convention: str = HD95_CONVENTION

    def _mean(self, name):
        vals = [getattr(c, name) for c in self.classes if c.defined]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def mean_dice(self) -> float:
        return self._mean("dice")

    @property
    def mean_hd(self) -> float:
        return self._mean("hd_mm")

    @property
    def mean_hd95(self) -> float:
        return self._mean("hd95_mm")

    @property
    def mean_asd(self) -> float:
        return self._mean("asd_mm")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# hd95: {self.hd95_convention}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in self.classes:
            w.writerow([c.class_id, f"{c.dice:.6f}", f"{c.hd_mm:.6f}", f"{c.hd95_mm:.6f}",
                        f"{c.asd_mm:.6f}", int(c.defined)])
        return buf.getvalue()


def class_metrics(pred_mask, gt_mask, spacing=None, class_id: int = 1) -> ClassMetrics:
    pred_mask = np.asarray(pred_mask).astype(bool)
    gt_mask = np.asarray(gt_mask).astype(bool)
    dice = dice_coefficient(pred_mask, gt_mask)
    if not pred_mask.any() or not gt_mask.any():
        return ClassMetrics(class_id, dice, defined=False)
    d_ab, d_ba = surface_distances(extract_surface(pred_mask, spacing), extract_surface(gt_mask, spacing))
    return ClassMetrics(class_id, dice, hausdorff(d_ab, d_ba), hd95(d_ab, d_ba), asd(d_ab, d_ba))


def evaluate(pred: LabelVolume, gt: LabelVolume, num_classes: int | None = None) -> MetricReport:
    """Per-class report for labels ``1..num_classes``.

    A class missing from either volume is reported with ``defined=False`` and
    left out of the means.
    """
    if pred.dims != gt.dims:
        raise DomainError(f"dims differ: {pred.dims} vs {gt.dims}")
    n = num_classes or max(pred.num_classes, gt.num_classes)
    return MetricReport(
        [class_metrics(pred.data == c, gt.data == c, gt.spacing, c) for c in range(1, n + 1)]
    )
