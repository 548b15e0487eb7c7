"""Session checkpoints: a versioned zip container with the label-PNG masks,
serialized memory banks, the interaction records and the timing ledger.

Entries are written in a fixed order with zeroed timestamps, so identical
sessions produce byte-identical files (relied on by the determinism tests).

Layout (format "ivos-checkpoint/1"):

    manifest.json            session metadata, records, ledger, memory index
    masks/%05d.png           current label map per frame
    memory/%04d.k.f32        entry key tensor, little-endian float32
    memory/%04d.v.f32        entry value tensor
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from ..core import FeatureMap, LabelMask, PromptSet, QueryBox, QueryPoint, RunConfig
from ..crstm import MemoryBank, MemoryEntry, store_entry
from ..engine import SessionState
from .dataset import decode_label_png, encode_label_png, labels_to_mask

FORMAT = "ivos-checkpoint/1"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _prompts_doc(p: PromptSet) -> dict:
    return {
        "frame_index": p.frame_index,
        "points": [{"x": q.x, "y": q.y, "polarity": q.polarity,
                    "object_id": q.object_id, "occluded": q.occluded}
                   for q in p.points],
        "boxes": {str(oid): [b.x_min, b.y_min, b.x_max, b.y_max, b.confidence]
                  for oid, b in sorted(p.boxes.items())},
    }


def prompts_from_doc(doc: dict) -> PromptSet:
    points = tuple(QueryPoint(d["x"], d["y"], d["polarity"], d["object_id"],
                              d.get("occluded", False))
                   for d in doc["points"])
    boxes = {int(oid): QueryBox(v[0], v[1], v[2], v[3], object_id=int(oid),
                                confidence=v[4] if len(v) > 4 else 1.0)
             for oid, v in doc.get("boxes", {}).items()}
    return PromptSet(int(doc["frame_index"]), points, boxes)


def _write(zf: zipfile.ZipFile, name: str, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, data)


def save_checkpoint(session: SessionState, cfg: RunConfig,
                    source: Optional[dict] = None,
                    path=None) -> bytes:
    """Serialize a session; returns the bytes (and writes ``path`` if given)."""
    memory_index = []
    blobs: List[Tuple[str, bytes]] = []
    idx = 0
    for oid in sorted(session.bank._entries):
        for e in session.bank._entries[oid]:
            memory_index.append({
                "object_id": e.object_id, "frame_index": e.frame_index,
                "round_created": e.round_created,
                "is_interaction_frame": e.is_interaction_frame,
                "key_shape": [e.key.channels, e.key.height, e.key.width],
                "value_shape": [e.value.channels, e.value.height, e.value.width],
            })
            blobs.append((f"memory/{idx:04d}.k.f32",
                          e.key.data.astype("<f4").tobytes()))
            blobs.append((f"memory/{idx:04d}.v.f32",
                          e.value.data.astype("<f4").tobytes()))
            idx += 1
    manifest = {
        "format": FORMAT,
        "source": source or {},
        "config": cfg.to_dict(),
        "width": session.width,
        "height": session.height,
        "num_frames": session.num_frames,
        "object_ids": list(session.object_ids),
        "interacted": sorted(session.interacted),
        "elapsed": session.elapsed,
        "records": [{"round": r.round_index, "frame_index": r.frame_index,
                     "timestamp": r.timestamp,
                     "prompts": _prompts_doc(r.prompts)}
                    for r in session.records],
        "ledger": [{"round": l.round_index, "frame_index": l.frame_index,
                    "sim_time": l.sim_time,
                    "infer_time": {str(k): v for k, v in sorted(l.infer_time.items())},
                    "budget_exceeded": list(l.budget_exceeded)}
                   for l in session.ledger],
        "memory": {"interval": session.bank.interval, "entries": memory_index},
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _write(zf, "manifest.json",
               json.dumps(manifest, indent=2, sort_keys=True).encode())
        for t in range(session.num_frames):
            m = session.masks[t]
            labels = m.labels if m is not None else \
                np.zeros((session.height, session.width), dtype=np.int32)
            _write(zf, f"masks/{t:05d}.png", encode_label_png(labels))
        for name, data in blobs:
            _write(zf, name, data)
    data = buf.getvalue()
    if path is not None:
        Path(path).write_bytes(data)
    return data


def load_checkpoint(path_or_bytes) -> Tuple[dict, List[LabelMask], MemoryBank]:
    """Read back manifest, masks (labels with indicator scores) and bank."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        buf = io.BytesIO(path_or_bytes)
    else:
        buf = io.BytesIO(Path(path_or_bytes).read_bytes())
    with zipfile.ZipFile(buf) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != FORMAT:
            raise ValueError(f"unknown checkpoint format {manifest.get('format')!r}")
        ids = [int(i) for i in manifest["object_ids"]]
        masks = []
        for t in range(int(manifest["num_frames"])):
            labels = decode_label_png(zf.read(f"masks/{t:05d}.png"))
            masks.append(labels_to_mask(labels, ids))
        bank = MemoryBank(interval=int(manifest["memory"]["interval"]))
        for idx, meta in enumerate(manifest["memory"]["entries"]):
            kc, kh, kw = meta["key_shape"]
            vc, vh, vw = meta["value_shape"]
            key = np.frombuffer(zf.read(f"memory/{idx:04d}.k.f32"),
                                dtype="<f4").reshape(kc, kh, kw)
            val = np.frombuffer(zf.read(f"memory/{idx:04d}.v.f32"),
                                dtype="<f4").reshape(vc, vh, vw)
            store_entry(bank, MemoryEntry(
                object_id=int(meta["object_id"]),
                frame_index=int(meta["frame_index"]),
                round_created=int(meta["round_created"]),
                is_interaction_frame=bool(meta["is_interaction_frame"]),
                key=FeatureMap(kc, kh, kw, key),
                value=FeatureMap(vc, vh, vw, val)))
    return manifest, masks, bank
