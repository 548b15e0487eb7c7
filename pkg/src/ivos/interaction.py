"""Simulated user interaction: prompt generation from reference masks and
frame selection.

Positive points are chosen on a grid over the target (no clustering, mimics
deliberate human spread), negative points are seeded-random picks from the
complement, and the box is the tight rectangle with a bounded per-edge error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .core import (NEGATIVE, POSITIVE, EmptyRegionError, LabelMask, PromptSet,
                   QueryBox, QueryPoint, RunConfig, nearest_pixel)


class EmptyFrameError(EmptyRegionError):
    """A frame with no visible object where one was required."""


class FramesExhaustedError(RuntimeError):
    """Every frame has already been interacted with."""


@dataclass(frozen=True)
class InteractionRecord:
    """One round's interaction: which frame, which prompts, when."""

    round_index: int
    frame_index: int
    prompts: PromptSet
    timestamp: float


@dataclass(frozen=True)
class FrameScoreTable:
    """Per-frame J, F and J&F for the current round's predictions."""

    j: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        j = np.asarray(self.j, dtype=np.float64)
        f = np.asarray(self.f, dtype=np.float64)
        if j.shape != f.shape or j.ndim != 1:
            raise ValueError("J/F tables must be 1-D and equal length")
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "f", f)

    @property
    def jf(self) -> np.ndarray:
        return 0.5 * (self.j + self.f)

    def __len__(self) -> int:
        return self.j.shape[0]


def _tight_bbox(mask: np.ndarray) -> Tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])


def sample_positive_points(mask: np.ndarray, n: int,
                           object_id: int = 0) -> Tuple[List[QueryPoint], bool]:
    """Grid-based positive click simulation.

    Lays the coarsest g x g grid over the mask's bounding box (g starting at
    ceil(sqrt(n))) such that at least n cell centers land inside the mask,
    then emits the first n in-mask centers in raster order. Returns the
    points and a shortfall flag (set when the mask has fewer than n pixels,
    in which case every mask pixel is returned instead).
    """
    mask = np.asarray(mask, dtype=bool)
    if n < 1:
        raise ValueError("n must be >= 1")
    total = int(np.count_nonzero(mask))
    if total == 0:
        raise EmptyRegionError("cannot sample positive points from an empty mask")
    h, w = mask.shape
    if total < n:
        ys, xs = np.nonzero(mask)
        pts = [QueryPoint(float(x), float(y), POSITIVE, object_id)
               for y, x in zip(ys, xs)]
        return pts, True

    x0, y0, x1, y1 = _tight_bbox(mask)
    # Continuous extent of the pixel box: centers at integers, unit pixels.
    ox, oy = x0 - 0.5, y0 - 0.5
    bw, bh = (x1 - x0 + 1), (y1 - y0 + 1)
    g = max(1, math.ceil(math.sqrt(n)))
    while True:
        centers = []
        for i in range(g):          # rows
            cy = oy + (i + 0.5) * bh / g
            for j in range(g):      # cols
                cx = ox + (j + 0.5) * bw / g
                px, py = nearest_pixel(cx, cy)
                if 0 <= px < w and 0 <= py < h and mask[py, px]:
                    centers.append((cx, cy))
        if len(centers) >= n:
            pts = [QueryPoint(cx, cy, POSITIVE, object_id)
                   for cx, cy in centers[:n]]
            return pts, False
        g += 1


def sample_negative_points(mask: np.ndarray, n: int, rng: np.random.Generator,
                           object_id: int = 0) -> List[QueryPoint]:
    """Uniform seeded picks (no duplicates) from pixels outside the mask."""
    mask = np.asarray(mask, dtype=bool)
    if n == 0:
        return []
    ys, xs = np.nonzero(~mask)
    if xs.size == 0:
        raise EmptyRegionError("mask complement is empty")
    count = min(n, xs.size)
    chosen = rng.choice(xs.size, size=count, replace=False)
    return [QueryPoint(float(xs[i]), float(ys[i]), NEGATIVE, object_id)
            for i in chosen]


def jitter_box(mask: np.ndarray, max_jitter: float, rng: np.random.Generator,
               object_id: int = 0) -> QueryBox:
    """Tight bounding box with a bounded independent error on each edge.

    Edges are drawn in the fixed order (x_min, y_min, x_max, y_max), clipped
    to the frame, and an axis that degenerates is reset to its tight extent.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyRegionError("cannot box an empty mask")
    h, w = mask.shape
    x0, y0, x1, y1 = _tight_bbox(mask)
    tight = (float(x0), float(y0), float(x1 + 1), float(y1 + 1))
    if max_jitter == 0:
        return QueryBox(*tight, object_id=object_id)
    d = rng.uniform(-max_jitter, max_jitter, size=4)
    xmin = min(max(tight[0] + d[0], 0.0), float(w))
    ymin = min(max(tight[1] + d[1], 0.0), float(h))
    xmax = min(max(tight[2] + d[2], 0.0), float(w))
    ymax = min(max(tight[3] + d[3], 0.0), float(h))
    if xmin >= xmax:
        xmin, xmax = tight[0], tight[2]
    if ymin >= ymax:
        ymin, ymax = tight[1], tight[3]
    return QueryBox(xmin, ymin, xmax, ymax, object_id=object_id)


def build_prompt_set(reference: LabelMask, frame_index: int, cfg: RunConfig,
                     rng: np.random.Generator) -> PromptSet:
    """Simulate one round of user prompts for every object visible in the
    reference at this frame. Objects with no visible pixel get no prompts.
    """
    visible = reference.visible_objects()
    if not visible:
        raise EmptyFrameError(f"no visible object at frame {frame_index}")
    points: List[QueryPoint] = []
    boxes: Dict[int, QueryBox] = {}
    for oid in visible:
        mask = reference.binary(oid)
        pos, _short = sample_positive_points(mask, cfg.num_pos_points, oid)
        neg = sample_negative_points(mask, cfg.num_neg_points, rng, oid)
        points.extend(pos)
        points.extend(neg)
        if cfg.use_box_prompts:
            boxes[oid] = jitter_box(mask, cfg.box_jitter_max, rng, oid)
    return PromptSet(frame_index, tuple(points), boxes)


def select_initial_frame(reference: Sequence[LabelMask]) -> int:
    """Earliest frame showing the most objects (ties: larger area, lower index)."""
    if not reference:
        raise EmptyFrameError("empty reference sequence")
    best: Optional[Tuple[int, int, int]] = None   # (-count, -area, index)
    for idx, ref in enumerate(reference):
        visible = ref.visible_objects()
        if not visible:
            continue
        area = int(np.count_nonzero(ref.labels != 0))
        key = (-len(visible), -area, idx)
        if best is None or key < best:
            best = key
    if best is None:
        raise EmptyFrameError("no frame shows any object")
    return best[2]


def select_worst_frame(scores: FrameScoreTable, interacted: Set[int]) -> int:
    """Lowest-J&F frame among those not yet interacted (ties: lowest index)."""
    jf = scores.jf
    candidates = [t for t in range(len(scores)) if t not in interacted]
    if not candidates:
        raise FramesExhaustedError("all frames have been interacted with")
    return min(candidates, key=lambda t: (jf[t], t))
