"""Evaluation measures: region similarity J, boundary measure F, and the
score-versus-time curves (AUC, interpolated score at a fixed time).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage

from .core import LabelMask, ShapeMismatchError
from .interaction import FrameScoreTable

_CROSS = ndimage.generate_binary_structure(2, 1)


def region_j(pred: np.ndarray, ref: np.ndarray) -> float:
    """Region similarity (Jaccard index) of two binary masks.

    Both masks empty counts as a perfect 1.0 so that frames where an absent
    object is correctly left unsegmented are not penalized.
    """
    pred = np.asarray(pred, dtype=bool)
    ref = np.asarray(ref, dtype=bool)
    if pred.shape != ref.shape:
        raise ShapeMismatchError(f"mask shapes differ: {pred.shape} vs {ref.shape}")
    union = np.count_nonzero(pred | ref)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & ref) / union


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """Boundary pixels: mask minus its 4-connected erosion.

    The frame border counts as outside, so object pixels on the image edge
    are boundary pixels.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros_like(mask)
    interior = np.zeros_like(mask)
    interior[1:-1, 1:-1] = (mask[1:-1, 1:-1] & mask[:-2, 1:-1]
                            & mask[2:, 1:-1] & mask[1:-1, :-2]
                            & mask[1:-1, 2:])
    return mask & ~interior


def default_boundary_tolerance(width: int, height: int) -> int:
    """DAVIS-convention tolerance: ceil(0.8% of the image diagonal)."""
    return int(math.ceil(0.008 * math.hypot(width, height)))


def boundary_f(pred: np.ndarray, ref: np.ndarray, tolerance: int) -> float:
    """Boundary F-measure with a Chebyshev pixel tolerance.

    Precision/recall are the fractions of pred/ref boundary pixels lying
    within ``tolerance`` (Chebyshev dilation) of the other boundary.
    """
    pred = np.asarray(pred, dtype=bool)
    ref = np.asarray(ref, dtype=bool)
    if pred.shape != ref.shape:
        raise ShapeMismatchError(f"mask shapes differ: {pred.shape} vs {ref.shape}")
    pb = mask_boundary(pred)
    rb = mask_boundary(ref)
    n_pb = np.count_nonzero(pb)
    n_rb = np.count_nonzero(rb)
    if n_pb == 0 and n_rb == 0:
        return 1.0
    if n_pb == 0 or n_rb == 0:
        return 0.0
    if tolerance > 0:
        # Chebyshev-ball dilation as a separable maximum filter.
        size = 2 * tolerance + 1
        pb_zone = ndimage.maximum_filter(pb, size=size, mode="constant") > 0
        rb_zone = ndimage.maximum_filter(rb, size=size, mode="constant") > 0
    else:
        pb_zone, rb_zone = pb, rb
    precision = np.count_nonzero(pb & rb_zone) / n_pb
    recall = np.count_nonzero(rb & pb_zone) / n_rb
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def jf_score(pred: LabelMask, ref: LabelMask,
             tolerance: int | None = None) -> Tuple[Dict[int, float], float]:
    """Per-object (J+F)/2 and the frame mean.

    The mean runs over objects visible in the reference at this frame; if
    none is visible, it falls back to all reference objects (each scoring
    via the both-empty conventions).
    """
    if (pred.width, pred.height) != (ref.width, ref.height):
        raise ShapeMismatchError("prediction and reference dimensions differ")
    if tolerance is None:
        tolerance = default_boundary_tolerance(ref.width, ref.height)
    per_object: Dict[int, float] = {}
    for oid in ref.object_ids:
        p = pred.binary(oid)
        r = ref.binary(oid)
        per_object[oid] = 0.5 * (region_j(p, r) + boundary_f(p, r, tolerance))
    visible = [oid for oid in ref.object_ids if ref.binary(oid).any()]
    pool = visible if visible else ref.object_ids
    mean = float(np.mean([per_object[o] for o in pool])) if pool else 1.0
    return per_object, mean


def sequence_scores(pred_masks: List[LabelMask], ref_masks: List[LabelMask],
                    tolerance: int | None = None) -> FrameScoreTable:
    """Per-frame J, F and J&F for a whole sequence of predictions."""
    if len(pred_masks) != len(ref_masks):
        raise ShapeMismatchError("prediction/reference length mismatch")
    n = len(ref_masks)
    js = np.zeros(n)
    fs = np.zeros(n)
    for t in range(n):
        ref = ref_masks[t]
        pred = pred_masks[t]
        tol = tolerance if tolerance is not None else \
            default_boundary_tolerance(ref.width, ref.height)
        visible = [o for o in ref.object_ids if ref.binary(o).any()]
        pool = visible if visible else ref.object_ids
        jvals, fvals = [], []
        for oid in pool:
            p = pred.binary(oid)
            r = ref.binary(oid)
            jvals.append(region_j(p, r))
            fvals.append(boundary_f(p, r, tol))
        js[t] = float(np.mean(jvals)) if jvals else 1.0
        fs[t] = float(np.mean(fvals)) if fvals else 1.0
    return FrameScoreTable(j=js, f=fs)


@dataclass(frozen=True)
class TimeCurve:
    """Score samples over elapsed interaction time, with an evaluation horizon."""

    times: np.ndarray
    scores: np.ndarray
    t_max: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if times.ndim != 1 or times.shape != scores.shape or times.size == 0:
            raise ValueError("curve needs matching, non-empty time/score arrays")
        if np.any(np.diff(times) <= 0):
            raise ValueError("curve times must be strictly increasing")
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "scores", scores)


def auc(curve: TimeCurve) -> float:
    """Normalized area under the piecewise-linear score curve over [0, t_max].

    The score is held constant before the first sample and after the last.
    """
    inner = curve.times[(curve.times > 0.0) & (curve.times < curve.t_max)]
    grid = np.concatenate(([0.0], inner, [curve.t_max]))
    vals = np.interp(grid, curve.times, curve.scores)
    return float(np.trapezoid(vals, grid) / curve.t_max)


def score_at(curve: TimeCurve, t: float) -> float:
    """Linearly interpolated score at time t, clamped to the sampled span."""
    return float(np.interp(t, curve.times, curve.scores))
