"""Cross-round space-time memory: bank lifecycle and affinity readout.

The bank stores key/value feature maps per object at a fixed frame interval
plus every interaction frame. Readout matches a query key against the
concatenated memory keys with negative squared Euclidean distance, keeps the
top-k entries per query position, softmax-normalizes them, and transports
the memory values. A round-indexed sigmoid finally blends the transported
value with the frame's own dense value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .core import FeatureMap, ShapeMismatchError


class EmptyMemoryError(LookupError):
    """Readout was requested from a bank with no entry for the object."""


class InadmissibleFrameError(ValueError):
    """Tried to store a frame outside the memory index set."""


@dataclass(frozen=True)
class MemoryEntry:
    """Key/value snapshot of one decoded frame."""

    object_id: int
    frame_index: int
    round_created: int
    is_interaction_frame: bool
    key: FeatureMap
    value: FeatureMap

    def __post_init__(self):
        if (self.key.height, self.key.width) != (self.value.height, self.value.width):
            raise ShapeMismatchError("key and value spatial dims differ")


@dataclass
class MemoryBank:
    """Per-object ordered memory entries with a fixed admission interval.

    Frames are admissible when their index is a multiple of ``interval`` or
    they are interaction frames. At most one entry per (object, frame);
    entries stay sorted by frame index. A version counter invalidates the
    concatenation cache on every mutation.
    """

    interval: int
    _entries: Dict[int, List[MemoryEntry]] = field(default_factory=dict)
    _version: int = 0
    _concat_cache: Dict[int, tuple] = field(default_factory=dict)

    def admissible(self, frame_index: int, is_interaction_frame: bool) -> bool:
        return is_interaction_frame or frame_index % self.interval == 0

    def entries(self, object_id: int) -> List[MemoryEntry]:
        return list(self._entries.get(object_id, []))

    def size(self, object_id: int) -> int:
        return len(self._entries.get(object_id, []))

    @property
    def object_ids(self) -> List[int]:
        return sorted(o for o, es in self._entries.items() if es)


def store_entry(bank: MemoryBank, entry: MemoryEntry) -> MemoryBank:
    """Insert an entry, replacing any same-frame entry for that object."""
    if not bank.admissible(entry.frame_index, entry.is_interaction_frame):
        raise InadmissibleFrameError(
            f"frame {entry.frame_index} is not a multiple of {bank.interval} "
            "and not an interaction frame")
    entries = bank._entries.setdefault(entry.object_id, [])
    entries[:] = [e for e in entries if e.frame_index != entry.frame_index]
    entries.append(entry)
    entries.sort(key=lambda e: e.frame_index)
    bank._version += 1
    bank._concat_cache.clear()
    return bank


def clear_range(bank: MemoryBank, lo: int, hi: int,
                object_ids: Optional[Iterable[int]] = None) -> MemoryBank:
    """Drop entries with frame index in [lo, hi], keeping interaction frames.

    With ``object_ids`` given, only those objects' stores are touched (the
    engine clears just the objects it is about to re-propagate).
    """
    targets = set(object_ids) if object_ids is not None else None
    for oid, entries in bank._entries.items():
        if targets is not None and oid not in targets:
            continue
        entries[:] = [e for e in entries
                      if e.is_interaction_frame or not (lo <= e.frame_index <= hi)]
    bank._version += 1
    bank._concat_cache.clear()
    return bank


def concat_memory(bank: MemoryBank, object_id: int) -> Tuple[np.ndarray, np.ndarray]:
    """Concatenate an object's keys/values along the spatial axis, frame order.

    Returns (K, V), each of shape (C, n*H*W) for n stored entries.
    """
    entries = bank._entries.get(object_id)
    if not entries:
        raise EmptyMemoryError(f"no memory for object {object_id}")
    keys = np.concatenate([e.key.flat() for e in entries], axis=1)
    values = np.concatenate([e.value.flat() for e in entries], axis=1)
    return keys, values


def affinity(memory_keys: np.ndarray, query_key: np.ndarray) -> np.ndarray:
    """Pairwise negative squared Euclidean distances.

    S[j, l] = -|| memory_keys[:, j] - query_key[:, l] ||^2, shape (M, L).
    Computed via the norm expansion (float32 inputs stay float32 so the
    dense-memory path rides BLAS); entries are clamped to <= 0 to absorb
    rounding residue.
    """
    km = np.asarray(memory_keys)
    kq = np.asarray(query_key)
    if km.ndim != 2 or kq.ndim != 2 or km.shape[0] != kq.shape[0]:
        raise ShapeMismatchError(
            f"channel dims differ: {km.shape} vs {kq.shape}")
    if km.dtype != np.float32 or kq.dtype != np.float32:
        km = km.astype(np.float64)
        kq = kq.astype(np.float64)
    mm = np.sum(km * km, axis=0)
    qq = np.sum(kq * kq, axis=0)
    s = 2.0 * (km.T @ kq) - mm[:, None] - qq[None, :]
    return np.minimum(s, 0.0)


def _topk_weights(scores: np.ndarray, k: int):
    """Per-column top-k softmax weights in gathered form: (indices, weights),
    both of shape (k', L) with k' = min(k, rows)."""
    rows = scores.shape[0]
    k = min(k, rows)
    if k == rows:
        idx = np.broadcast_to(np.arange(rows)[:, None], scores.shape).copy()
        vals = scores
    else:
        idx = np.argpartition(scores, rows - k, axis=0)[rows - k:]
        vals = np.take_along_axis(scores, idx, axis=0)
    ex = np.exp(vals - vals.max(axis=0, keepdims=True))
    ex /= ex.sum(axis=0, keepdims=True)
    return idx, ex


def _topk_weights_rows(scores_t: np.ndarray, k: int):
    """Row-wise variant of _topk_weights for (L, M)-transposed scores;
    returns (indices, weights) of shape (L, k')."""
    cols = scores_t.shape[1]
    k = min(k, cols)
    if k == cols:
        idx = np.broadcast_to(np.arange(cols)[None, :], scores_t.shape).copy()
        vals = scores_t
    else:
        idx = np.argpartition(scores_t, cols - k, axis=1)[:, cols - k:]
        vals = np.take_along_axis(scores_t, idx, axis=1)
    ex = np.exp(vals - vals.max(axis=1, keepdims=True))
    ex /= ex.sum(axis=1, keepdims=True)
    return idx, ex


def topk_softmax(scores: np.ndarray, k: int) -> np.ndarray:
    """Column-wise softmax over the k largest entries; the rest become 0.

    k is clamped to the number of rows. Softmax uses per-column max
    subtraction for stability. Every column of the result sums to 1.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    s = np.asarray(scores, dtype=np.float64)
    idx, ex = _topk_weights(s, k)
    out = np.zeros_like(s)
    np.put_along_axis(out, idx, ex, axis=0)
    return out


def readout(memory_values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Transport memory values through the attention weights: V @ W."""
    v = np.asarray(memory_values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if v.shape[1] != w.shape[0]:
        raise ShapeMismatchError(
            f"inner dims differ: values {v.shape}, weights {w.shape}")
    return v @ w


def round_weight(r: float, total_rounds: float) -> float:
    """Sigmoid weight on the frame's own value, rising with the round index."""
    return 1.0 / (1.0 + math.exp(-(r - total_rounds / 2.0) / 2.0))


def blend_value(v_original: FeatureMap, v_query: FeatureMap, r: int,
                total_rounds: int) -> FeatureMap:
    """Round-weighted mix of the frame's own value with the memory readout.

    alpha = sigmoid((r - R/2) / 2); result = alpha * own + (1 - alpha) * readout.
    Early rounds lean on memory, late rounds on the frame itself.
    """
    if v_original.data.shape != v_query.data.shape:
        raise ShapeMismatchError("value shapes differ")
    if not 1 <= r <= total_rounds:
        raise ValueError(f"round {r} outside [1, {total_rounds}]")
    alpha = round_weight(r, total_rounds)
    mixed = alpha * v_original.data.astype(np.float64) \
        + (1.0 - alpha) * v_query.data.astype(np.float64)
    return FeatureMap.from_array(mixed.astype(np.float32))


def read_memory(bank: MemoryBank, object_id: int, query_key: FeatureMap,
                k: int) -> FeatureMap:
    """Full readout pipeline for one query frame: concat, affinity, top-k,
    transport. Raises EmptyMemoryError when the object has no entries.

    Uses the gathered (never-densified) form of the attention weights on a
    query-major layout; the result equals
    readout(V, topk_softmax(affinity(K, q), k)) and is property-tested
    against that composition and the naive loop.
    """
    cached = bank._concat_cache.get(object_id)
    if cached is None:
        keys, values = concat_memory(bank, object_id)
        mm = np.sum(keys * keys, axis=0)
        bank._concat_cache[object_id] = (keys, values, mm)
    else:
        keys, values, mm = cached
    kq = query_key.flat()
    qq = np.sum(kq * kq, axis=0)
    s_t = 2.0 * (kq.T @ keys) - qq[:, None] - mm[None, :]   # (L, M), contiguous
    np.minimum(s_t, 0.0, out=s_t)
    idx, w = _topk_weights_rows(s_t, k)
    gathered = values[:, idx]                               # (C, L, k')
    vq = np.einsum("lk,clk->cl", w, gathered)
    return FeatureMap(query_key.channels, query_key.height, query_key.width,
                      vq.reshape(query_key.channels, query_key.height,
                                 query_key.width).astype(np.float32))


def serialize_bank(bank: MemoryBank) -> dict:
    """JSON-ready description plus raw little-endian float32 tensors."""
    entries = []
    blobs: List[bytes] = []
    for oid in sorted(bank._entries):
        for e in bank._entries[oid]:
            entries.append({
                "object_id": e.object_id,
                "frame_index": e.frame_index,
                "round_created": e.round_created,
                "is_interaction_frame": e.is_interaction_frame,
                "key_shape": [e.key.channels, e.key.height, e.key.width],
                "value_shape": [e.value.channels, e.value.height, e.value.width],
            })
            blobs.append(e.key.data.astype("<f4").tobytes())
            blobs.append(e.value.data.astype("<f4").tobytes())
    return {"interval": bank.interval, "entries": entries, "blobs": blobs}


def deserialize_bank(doc: dict) -> MemoryBank:
    bank = MemoryBank(interval=int(doc["interval"]))
    blobs: Iterable[bytes] = doc["blobs"]
    it = iter(blobs)
    for meta in doc["entries"]:
        kc, kh, kw = meta["key_shape"]
        vc, vh, vw = meta["value_shape"]
        key = np.frombuffer(next(it), dtype="<f4").reshape(kc, kh, kw)
        value = np.frombuffer(next(it), dtype="<f4").reshape(vc, vh, vw)
        store_entry(bank, MemoryEntry(
            object_id=int(meta["object_id"]),
            frame_index=int(meta["frame_index"]),
            round_created=int(meta["round_created"]),
            is_interaction_frame=bool(meta["is_interaction_frame"]),
            key=FeatureMap(kc, kh, kw, key),
            value=FeatureMap(vc, vh, vw, value)))
    return bank
