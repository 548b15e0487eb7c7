"""Shared domain types: label masks, prompts, feature maps, run configuration.

Everything here is an immutable value after construction (arrays are marked
read-only) so sessions can hand objects across threads freely. RNG streams
are the one exception: each stream has a single owner.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List

import numpy as np

POSITIVE = "positive"
NEGATIVE = "negative"

BACKGROUND = 0


class ShapeMismatchError(ValueError):
    """Array dimensions disagree where the contract requires them to match."""


class EmptyRegionError(ValueError):
    """An operation needed a non-empty pixel region and got none."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


def nearest_pixel(x: float, y: float) -> tuple[int, int]:
    """Map a sub-pixel coordinate to the pixel whose center is nearest.

    Pixel centers sit at integer coordinates; halves round up (floor(p + 0.5)).
    """
    return int(math.floor(x + 0.5)), int(math.floor(y + 0.5))


@dataclass(frozen=True)
class LabelMask:
    """Multi-object segmentation of one frame.

    ``labels`` holds one object id per pixel (0 = background). ``scores``
    keeps the per-object soft maps the labels were derived from, so blending
    can operate on scores and labels can be re-derived afterwards.
    """

    width: int
    height: int
    labels: np.ndarray                  # (H, W) int32
    scores: Dict[int, np.ndarray]       # object id -> (H, W) float32 in [0, 1]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int32)
        if labels.shape != (self.height, self.width):
            raise ShapeMismatchError(
                f"labels shape {labels.shape} != ({self.height}, {self.width})")
        scores = {}
        for oid in sorted(self.scores):
            s = np.asarray(self.scores[oid], dtype=np.float32)
            if s.shape != (self.height, self.width):
                raise ShapeMismatchError(
                    f"score map for object {oid} has shape {s.shape}, "
                    f"expected ({self.height}, {self.width})")
            if s.size and (float(s.min()) < 0.0 or float(s.max()) > 1.0):
                raise ValueError(f"score map for object {oid} leaves [0, 1]")
            scores[int(oid)] = _freeze(s)
        object.__setattr__(self, "labels", _freeze(labels))
        object.__setattr__(self, "scores", scores)

    @property
    def object_ids(self) -> List[int]:
        return sorted(self.scores)

    def binary(self, object_id: int) -> np.ndarray:
        """Boolean mask of the pixels labelled with ``object_id``."""
        return self.labels == object_id

    def visible_objects(self) -> List[int]:
        present = np.unique(self.labels)
        return [int(o) for o in present if o != BACKGROUND]

    @staticmethod
    def empty(width: int, height: int, object_ids: List[int]) -> "LabelMask":
        zeros = np.zeros((height, width), dtype=np.float32)
        return LabelMask(width, height,
                         np.zeros((height, width), dtype=np.int32),
                         {oid: zeros.copy() for oid in object_ids})


def merge_object_scores(scores_per_object: Dict[int, np.ndarray],
                        threshold: float) -> LabelMask:
    """Resolve per-object soft maps into a single label map.

    A pixel takes the id of the highest-scoring object provided that score
    reaches ``threshold``; ties go to the lowest object id; everything else
    is background. The soft maps are retained unchanged.
    """
    if not scores_per_object:
        raise EmptyRegionError("no score maps to merge")
    ids = sorted(scores_per_object)
    maps = [np.asarray(scores_per_object[o], dtype=np.float32) for o in ids]
    shape = maps[0].shape
    for o, m in zip(ids, maps):
        if m.shape != shape:
            raise ShapeMismatchError(
                f"score map for object {o} has shape {m.shape}, expected {shape}")
    stack = np.stack(maps, axis=0)                      # (K, H, W)
    best = np.argmax(stack, axis=0)                     # first max wins: lowest id
    best_score = np.take_along_axis(stack, best[None], axis=0)[0]
    labels = np.where(best_score >= threshold,
                      np.asarray(ids, dtype=np.int32)[best], BACKGROUND)
    h, w = shape
    return LabelMask(w, h, labels, dict(zip(ids, maps)))


@dataclass(frozen=True)
class QueryPoint:
    """A click prompt: sub-pixel position, polarity, per-frame occlusion flag."""

    x: float
    y: float
    polarity: str
    object_id: int
    occluded: bool = False

    def __post_init__(self):
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ValueError(f"bad polarity {self.polarity!r}")


@dataclass(frozen=True)
class QueryBox:
    """An axis-aligned box prompt in half-open pixel coordinates.

    A tight box around pixels x in [a, b] has x_min=a, x_max=b+1 so that
    area equals pixel count and single-pixel masks stay non-degenerate.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    object_id: int
    confidence: float = 1.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        """Closed-boundary containment against the margin-expanded box."""
        return (self.x_min - margin <= x <= self.x_max + margin
                and self.y_min - margin <= y <= self.y_max + margin)

    def iou(self, other: "QueryBox") -> float:
        ix = min(self.x_max, other.x_max) - max(self.x_min, other.x_min)
        iy = min(self.y_max, other.y_max) - max(self.y_min, other.y_min)
        if ix <= 0.0 or iy <= 0.0:
            return 0.0
        inter = ix * iy
        return inter / (self.area + other.area - inter)

    def clipped(self, width: int, height: int) -> "QueryBox":
        return QueryBox(max(0.0, self.x_min), max(0.0, self.y_min),
                        min(float(width), self.x_max), min(float(height), self.y_max),
                        self.object_id, self.confidence)


@dataclass(frozen=True)
class PromptSet:
    """All prompts issued for one frame: points plus at most one box per object."""

    frame_index: int
    points: tuple
    boxes: Dict[int, QueryBox] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        for oid, box in self.boxes.items():
            if box.object_id != oid:
                raise ValueError(f"box keyed {oid} carries object_id {box.object_id}")

    def points_for(self, object_id: int) -> List[QueryPoint]:
        return [p for p in self.points if p.object_id == object_id]

    @property
    def object_ids(self) -> List[int]:
        ids = {p.object_id for p in self.points} | set(self.boxes)
        return sorted(ids)


@dataclass(frozen=True)
class FeatureMap:
    """Dense C x H x W feature tensor exchanged with segmentation backends."""

    channels: int
    height: int
    width: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.shape != (self.channels, self.height, self.width):
            raise ShapeMismatchError(
                f"feature data shape {data.shape} != "
                f"({self.channels}, {self.height}, {self.width})")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature map contains non-finite values")
        object.__setattr__(self, "data", _freeze(data))

    @staticmethod
    def from_array(data: np.ndarray) -> "FeatureMap":
        c, h, w = data.shape
        return FeatureMap(c, h, w, data)

    def flat(self) -> np.ndarray:
        """View as (C, H*W)."""
        return self.data.reshape(self.channels, self.height * self.width)


@dataclass(frozen=True)
class RunConfig:
    """Knobs of the interactive loop.

    The ablation toggles (`use_box_prompts`, `use_crstm`) switch Table-style
    configuration axes; everything else mirrors the protocol constants.
    """

    num_rounds: int = 8
    num_pos_points: int = 8
    num_neg_points: int = 1
    iri_count: int = 3
    topk: int = 32
    memory_interval: int = 5
    box_jitter_max: float = 5.0
    per_object_time_cap: float = 30.0
    mask_threshold: float = 0.5
    rng_seed: int = 0
    use_box_prompts: bool = True
    use_crstm: bool = True
    occlusion_threshold: float = 0.5
    filter_margin: float = 0.0
    strict_time_budget: bool = False

    def __post_init__(self):
        if self.num_rounds < 1:
            raise ValueError("num_rounds must be >= 1")
        if self.num_pos_points < 1:
            raise ValueError("num_pos_points must be >= 1")
        if self.memory_interval < 1:
            raise ValueError("memory_interval must be >= 1")
        if self.topk < 1:
            raise ValueError("topk must be >= 1")
        if self.iri_count < 0:
            raise ValueError("iri_count must be >= 0")

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def to_dict(self) -> Dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def default_config() -> RunConfig:
    """Protocol defaults: 8 rounds, 8 positive + 1 negative point, 30 s cap."""
    return RunConfig()


def stable_u64(*parts) -> int:
    """Platform-stable 64-bit hash of the stringified parts.

    Python's builtin hash() is salted per process; this one is not.
    """
    blob = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def seeded_rng(seed: int, stream_tag: str) -> np.random.Generator:
    """Deterministic, platform-stable random stream for a (seed, tag) pair.

    Distinct tags on the same seed give independent streams, so modules can
    draw without coordinating consumption order.
    """
    entropy = int.from_bytes(
        hashlib.sha256(f"{seed}|{stream_tag}".encode("utf-8")).digest()[:16],
        "little")
    return np.random.Generator(np.random.PCG64(entropy))
