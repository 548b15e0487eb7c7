"""Segmentation backends and the multi-pass mask decoding orchestration.

Per frame and object the decoder runs: a first pass on positive and box
tokens only (yielding the query key and a first low-res mask), a memory
readout that blends the transported value into the dense value, a second
pass on all tokens with the first mask as prior, and a configurable number
of refinement passes that feed each low-res mask back in.

A deterministic synthetic segmenter stands in for the real model at desk
scale: its output quality is an explicit function of prompt quality, so
pipeline-level properties (filtering helps, memory helps) become testable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .core import (POSITIVE, FeatureMap, RunConfig, nearest_pixel,
                   seeded_rng)
from .crstm import MemoryBank, blend_value, read_memory
from .tracking import BackendError

# Frozen synthetic-backend constants; golden tests depend on them.
SYNTH_CHANNELS = 8
SYNTH_DOWNSAMPLE = 8
SYNTH_BLUR_SIGMA = 2.0
SYNTH_PRIOR_MIX = 0.3
SYNTH_NEGATIVE_RADIUS = 5.0
SYNTH_SIGNATURE_SEED = 2024


class ConfigurationError(RuntimeError):
    """The requested decode needs a capability the backend lacks."""


@dataclass(frozen=True)
class SegmenterCapabilities:
    exports_keys_values: bool = True
    supports_mask_prior: bool = True
    supports_iterative_refinement: bool = True


@dataclass(frozen=True)
class SegmenterBackendHandle:
    endpoint: str
    channels: int
    feature_height: int
    feature_width: int
    capabilities: SegmenterCapabilities


@dataclass(frozen=True)
class FramePoint:
    """A tracked point's state at one frame."""

    x: float
    y: float
    polarity: str
    occlusion: float


@dataclass(frozen=True)
class PromptTokens:
    """Prompt tokens for one object at one frame.

    Positive tokens come only from positive non-occluded points; negative
    points and occluded positives all become negative tokens.
    """

    object_id: int
    positive: Tuple[Tuple[float, float], ...] = ()
    negative: Tuple[Tuple[float, float], ...] = ()
    box: Optional[Tuple[float, float, float, float]] = None
    mask_prior: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "positive", tuple(map(tuple, self.positive)))
        object.__setattr__(self, "negative", tuple(map(tuple, self.negative)))

    def with_prior(self, prior: np.ndarray) -> "PromptTokens":
        return replace(self, mask_prior=prior)

    def first_pass(self) -> "PromptTokens":
        """Positive and box tokens only, no prior."""
        return PromptTokens(self.object_id, self.positive, (), self.box, None)


@dataclass(frozen=True)
class DecodeResult:
    low_res_mask: np.ndarray      # (H', W') float32 in [0, 1]
    query_key: FeatureMap
    dense_value: FeatureMap
    score_map: np.ndarray         # (H, W) float32 in [0, 1]

    def __post_init__(self):
        lr = np.asarray(self.low_res_mask, dtype=np.float32)
        sm = np.asarray(self.score_map, dtype=np.float32)
        object.__setattr__(self, "low_res_mask", lr)
        object.__setattr__(self, "score_map", sm)


def classify_tokens(points: Sequence[FramePoint],
                    box: Optional[Tuple[float, float, float, float]],
                    object_id: int,
                    occlusion_threshold: float = 0.5) -> PromptTokens:
    """Token classification: positive and visible -> positive token,
    everything else -> negative token."""
    positive, negative = [], []
    for p in points:
        if p.polarity == POSITIVE and p.occlusion <= occlusion_threshold:
            positive.append((p.x, p.y))
        else:
            negative.append((p.x, p.y))
    return PromptTokens(object_id, tuple(positive), tuple(negative), box)


class EmbeddingCache:
    """Per-session cache of image embedding references.

    The expensive embedding runs once per frame (round 1); later rounds are
    cache hits that never touch the backend.
    """

    def __init__(self):
        self._refs: Dict[int, str] = {}

    def embed(self, backend, frame_index: int, pixels: np.ndarray) -> str:
        ref = self._refs.get(frame_index)
        if ref is None:
            ref = backend.embed(pixels)
            self._refs[frame_index] = ref
        return ref

    def clear(self):
        self._refs.clear()

    def __len__(self) -> int:
        return len(self._refs)


def decode_frame(backend, image_ref: str, tokens: PromptTokens,
                 bank: Optional[MemoryBank], round_index: int, cfg: RunConfig,
                 iri_override: Optional[int] = None) -> DecodeResult:
    """Run the full multi-pass decode for one object on one frame.

    Backend decode calls total exactly 2 + iri_count. The memory readout is
    skipped when the bank is empty (or memory is disabled); refinement
    passes reuse the blended value from pass 2.
    """
    caps = backend.handle.capabilities
    iri = cfg.iri_count if iri_override is None else iri_override
    if not caps.supports_mask_prior:
        raise ConfigurationError("backend cannot accept a low-res mask prior")
    if iri > 0 and not caps.supports_iterative_refinement:
        raise ConfigurationError("backend cannot run refinement passes")

    first = backend.decode(image_ref, tokens.first_pass(), None)

    value = first.dense_value
    if (cfg.use_crstm and bank is not None
            and bank.size(tokens.object_id) > 0):
        if not caps.exports_keys_values:
            raise ConfigurationError("backend does not export keys/values")
        transported = read_memory(bank, tokens.object_id, first.query_key,
                                  cfg.topk)
        value = blend_value(first.dense_value, transported, round_index,
                            cfg.num_rounds)

    result = backend.decode(image_ref, tokens.with_prior(first.low_res_mask),
                            value)
    for _ in range(iri):
        result = backend.decode(image_ref,
                                tokens.with_prior(result.low_res_mask), value)
    return result


def _pool8(arr: np.ndarray) -> np.ndarray:
    """8x average pooling with zero padding to a multiple of 8."""
    f = SYNTH_DOWNSAMPLE
    h, w = arr.shape
    ph, pw = (-h) % f, (-w) % f
    if ph or pw:
        arr = np.pad(arr, ((0, ph), (0, pw)))
    hh, ww = arr.shape[0] // f, arr.shape[1] // f
    return arr.reshape(hh, f, ww, f).mean(axis=(1, 3))


def _upsample8(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    f = SYNTH_DOWNSAMPLE
    up = np.repeat(np.repeat(arr, f, axis=0), f, axis=1)
    return up[:h, :w]


def _shift2d(arr: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer translation with zero fill (no wraparound)."""
    out = np.zeros_like(arr)
    h, w = arr.shape
    ys = slice(max(0, dy), min(h, h + dy))
    xs = slice(max(0, dx), min(w, w + dx))
    ys_src = slice(max(0, -dy), min(h, h - dy))
    xs_src = slice(max(0, -dx), min(w, w - dx))
    out[ys, xs] = arr[ys_src, xs_src]
    return out


def object_signature(object_id: int, channels: int = SYNTH_CHANNELS) -> np.ndarray:
    """Fixed per-object channel signature for synthetic keys."""
    rng = seeded_rng(SYNTH_SIGNATURE_SEED, f"object-signature/{object_id}")
    return rng.uniform(0.5, 1.5, size=channels)


class SyntheticSegmenter:
    """Deterministic stand-in segmentation backend driven by scene truth.

    Output quality q = 0.5 * (fraction of positive tokens on the true mask)
    + 0.5 * IoU(box token, true box); without a box token q is just the
    fraction. The score map mixes the true mask (weight q) with the true
    mask translated by the positive tokens' mean error vector (weight 1-q),
    carves 0.5 out of a 5 px disc around negative tokens, and, when a
    replacement dense value is supplied, folds 30% of its upsampled first
    channel back in. Keys are the blurred, downsampled score tiled across
    channels with a per-object signature; values carry the downsampled score
    in channel 0.
    """

    def __init__(self, truth, frames: np.ndarray):
        self.truth = truth
        self.frames = frames
        h8 = -(-truth.spec.height // SYNTH_DOWNSAMPLE)
        w8 = -(-truth.spec.width // SYNTH_DOWNSAMPLE)
        self.handle = SegmenterBackendHandle(
            endpoint="inproc://synthetic-segmenter",
            channels=SYNTH_CHANNELS, feature_height=h8, feature_width=w8,
            capabilities=SegmenterCapabilities())
        self._ref_to_frame: Dict[str, int] = {}
        for t in range(truth.num_frames):
            self._ref_to_frame[self._ref_for(frames[t])] = t
        self.embed_calls = 0
        self.decode_calls = 0

    @staticmethod
    def _ref_for(pixels: np.ndarray) -> str:
        digest = hashlib.sha1(
            np.ascontiguousarray(pixels).tobytes()).hexdigest()[:16]
        return f"synth/{digest}"

    def embed(self, pixels: np.ndarray) -> str:
        self.embed_calls += 1
        ref = self._ref_for(np.asarray(pixels, dtype=np.uint8))
        if ref not in self._ref_to_frame:
            raise BackendError("pixels do not belong to this scene")
        return ref

    def decode(self, image_ref: str, tokens: PromptTokens,
               value_prior: Optional[FeatureMap]) -> DecodeResult:
        self.decode_calls += 1
        frame = self._ref_to_frame.get(image_ref)
        if frame is None:
            raise BackendError(f"unknown image ref {image_ref!r}")
        return self.segment(frame, tokens, value_prior)

    def segment(self, frame: int, tokens: PromptTokens,
                value_prior: Optional[FeatureMap]) -> DecodeResult:
        if not 0 <= frame < self.truth.num_frames:
            raise BackendError(f"frame {frame} outside scene")
        spec = self.truth.spec
        h, w = spec.height, spec.width
        true_mask = self.truth.visible_mask(tokens.object_id, frame)
        true_box = self.truth.visible_box(tokens.object_id, frame)

        inside = 0
        for x, y in tokens.positive:
            px, py = nearest_pixel(x, y)
            if 0 <= px < w and 0 <= py < h and true_mask[py, px]:
                inside += 1
        frac = inside / len(tokens.positive) if tokens.positive else 0.0
        if tokens.box is not None:
            from .core import QueryBox
            bx = QueryBox(*tokens.box, object_id=tokens.object_id)
            box_iou = bx.iou(true_box) if true_box is not None else 0.0
            q = 0.5 * frac + 0.5 * box_iou
        else:
            q = frac

        truth_f = true_mask.astype(np.float64)
        if tokens.positive and true_mask.any():
            ys, xs = np.nonzero(true_mask)
            cx, cy = float(xs.mean()), float(ys.mean())
            mx = float(np.mean([p[0] for p in tokens.positive]))
            my = float(np.mean([p[1] for p in tokens.positive]))
            dx, dy = int(round(mx - cx)), int(round(my - cy))
        else:
            dx = dy = 0

        if not tokens.positive and tokens.box is None:
            score = np.zeros((h, w))
        else:
            score = q * truth_f + (1.0 - q) * _shift2d(truth_f, dx, dy)

        if tokens.negative:
            crater = np.zeros((h, w), dtype=bool)
            rad = SYNTH_NEGATIVE_RADIUS
            r = int(rad)
            for x, y in tokens.negative:
                px, py = nearest_pixel(x, y)
                x0, x1 = max(0, px - r), min(w, px + r + 1)
                y0, y1 = max(0, py - r), min(h, py + r + 1)
                if x0 >= x1 or y0 >= y1:
                    continue
                yy, xx = np.mgrid[y0:y1, x0:x1]
                crater[y0:y1, x0:x1] |= \
                    (xx - px) ** 2 + (yy - py) ** 2 <= rad * rad
            score = score - 0.5 * crater
        score = np.clip(score, 0.0, 1.0)

        if value_prior is not None:
            up = _upsample8(value_prior.data[0].astype(np.float64), h, w)
            score = (1.0 - SYNTH_PRIOR_MIX) * score + SYNTH_PRIOR_MIX * up
            score = np.clip(score, 0.0, 1.0)

        low = _pool8(score)
        blurred = _pool8(ndimage.gaussian_filter(score, SYNTH_BLUR_SIGMA))
        sig = object_signature(tokens.object_id)
        key = (sig[:, None, None] * blurred[None]).astype(np.float32)
        value = np.zeros((SYNTH_CHANNELS,) + low.shape, dtype=np.float32)
        value[0] = low
        return DecodeResult(
            low_res_mask=low.astype(np.float32),
            query_key=FeatureMap.from_array(key),
            dense_value=FeatureMap.from_array(value),
            score_map=score.astype(np.float32))
