"""Depth evaluation: standard error/accuracy metrics, per-frame median
scaling, distance caps, and all-region vs. overlap-region reporting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import DepthMap, Mask
from .rig import CameraRig
from .warp import overlap_mask

PRED_CLAMP_FLOOR = 1e-3


class EmptyEvaluation(ValueError):
    """Raised when no pixel survives masking and capping."""


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    delta1: float
    delta2: float
    delta3: float

    def __post_init__(self):
        vals = (self.abs_rel, self.sq_rel, self.rmse,
                self.delta1, self.delta2, self.delta3)
        if not all(np.isfinite(v) and v >= 0.0 for v in vals):
            raise ValueError("metrics must be finite and nonnegative")
        if not self.delta1 <= self.delta2 + 1e-15 or not self.delta2 <= self.delta3 + 1e-15:
            raise ValueError("threshold accuracies must be monotone")

    def as_row(self) -> dict[str, float]:
        return {"abs_rel": self.abs_rel, "sq_rel": self.sq_rel, "rmse": self.rmse,
                "delta1": self.delta1, "delta2": self.delta2, "delta3": self.delta3}


def _effective_mask(gt: DepthMap, mask: Mask, cap: float) -> np.ndarray:
    return mask.data & gt.valid & (gt.values > 0.0) & (gt.values <= cap)


def depth_metrics(pred: DepthMap, gt: DepthMap, mask: Mask, cap: float) -> DepthMetrics:
    """Evaluate predictions against ground truth where the mask holds and
    0 < gt <= cap; predictions are clamped to [1e-3, cap] first."""
    if pred.values.shape != gt.values.shape or pred.values.shape != mask.data.shape:
        raise ValueError("prediction, ground truth, and mask shapes differ")
    m = _effective_mask(gt, mask, cap)
    if not m.any():
        raise EmptyEvaluation("no pixels to evaluate after masking and capping")
    p = np.clip(pred.values[m], PRED_CLAMP_FLOOR, cap)
    g = gt.values[m]
    err = p - g
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(err) / g)),
        sq_rel=float(np.mean(err * err / g)),
        rmse=float(np.sqrt(np.mean(err * err))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
    )


def lower_median(values: np.ndarray) -> float:
    """Sort-based median; for even counts the lower of the two middles."""
    v = np.sort(np.asarray(values).reshape(-1))
    if v.size == 0:
        raise EmptyEvaluation("median of an empty sample")
    return float(v[(v.size - 1) // 2])


def median_scale(pred: DepthMap, gt: DepthMap, mask: Mask) -> tuple[DepthMap, float]:
    """Rescale predictions by median(gt)/median(pred) over the mask."""
    m = mask.data & gt.valid & (gt.values > 0.0) & pred.valid
    if not m.any():
        raise EmptyEvaluation("median scaling over an empty mask")
    med_pred = lower_median(pred.values[m])
    med_gt = lower_median(gt.values[m])
    if med_pred <= 0.0:
        raise ValueError("median of predictions is not strictly positive")
    ratio = med_gt / med_pred
    return DepthMap(pred.values * ratio, pred.valid.copy()), ratio


def region_report(pred: DepthMap, gt: DepthMap, rig: CameraRig,
                  depths_for_overlap: list[DepthMap], camera: int, cap: float
                  ) -> tuple[DepthMetrics, DepthMetrics | None]:
    """Metrics over the full valid region and over the cross-view overlap
    region of one camera; the overlap entry is None when the region is empty."""
    full = Mask(np.ones(gt.values.shape, dtype=bool) & pred.valid)
    all_metrics = depth_metrics(pred, gt, full, cap)
    ovl = overlap_mask(rig, depths_for_overlap, camera)
    both = ovl.data & full.data
    overlap_metrics = None
    if both.any():
        eff = _effective_mask(gt, Mask(both), cap)
        if eff.any():
            overlap_metrics = depth_metrics(pred, gt, Mask(both), cap)
    return all_metrics, overlap_metrics
