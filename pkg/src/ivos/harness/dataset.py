"""Dataset layout and label-image encoding.

Layout (simulation mode needs one annotation per frame):

    <root>/JPEGImages/<sequence>/%05d.png|jpg
    <root>/Annotations/<sequence>/%05d.png     (indexed PNG, pixel = object id)
    <root>/Scenes/<sequence>.json              (optional synthetic scene spec)

Annotations use the conventional indexed palette so files drop into other
VOS tooling unchanged.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image

from ..core import LabelMask
from ..synthlab import SceneSpec, render_scene


class DatasetError(ValueError):
    """Dataset layout or content problem; message carries the path."""


def label_palette() -> np.ndarray:
    """The conventional 256-entry label palette (bit-interleaved colors)."""
    pal = np.zeros((256, 3), dtype=np.uint8)
    for i in range(256):
        c, r, g, b = i, 0, 0, 0
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        pal[i] = (r, g, b)
    return pal


_PALETTE = label_palette()


def encode_label_png(labels: np.ndarray) -> bytes:
    """Label map -> indexed PNG bytes (palette index = object id)."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise DatasetError("label ids must fit in a byte")
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(_PALETTE.flatten().tolist())
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def decode_label_png(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data))
    if img.mode != "P":
        raise DatasetError(f"annotation is mode {img.mode!r}, expected indexed")
    return np.asarray(img, dtype=np.int32)


def encode_frame_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def load_frame(path: Path) -> np.ndarray:
    try:
        img = Image.open(path).convert("RGB")
    except Exception as exc:
        raise DatasetError(f"unreadable frame {path}: {exc}") from exc
    return np.asarray(img, dtype=np.uint8)


def labels_to_mask(labels: np.ndarray, object_ids: List[int]) -> LabelMask:
    """Reference annotation -> LabelMask with indicator score maps."""
    h, w = labels.shape
    scores = {oid: (labels == oid).astype(np.float32) for oid in object_ids}
    return LabelMask(w, h, labels, scores)


@dataclass(frozen=True)
class SequenceEntry:
    name: str
    frame_paths: Tuple[Path, ...]
    annotation_paths: Tuple[Path, ...]
    width: int
    height: int
    object_ids: Tuple[int, ...]
    scene_spec_path: Optional[Path] = None

    @property
    def num_frames(self) -> int:
        return len(self.frame_paths)


@dataclass(frozen=True)
class DatasetIndex:
    root: Path
    sequences: Tuple[SequenceEntry, ...]

    def sequence(self, name: str) -> SequenceEntry:
        for s in self.sequences:
            if s.name == name:
                return s
        raise DatasetError(f"sequence {name!r} not in dataset {self.root}")

    @property
    def names(self) -> List[str]:
        return [s.name for s in self.sequences]


_FRAME_RX = re.compile(r"^(\d+)\.(png|jpg|jpeg)$", re.IGNORECASE)


def _indexed_files(directory: Path) -> List[Path]:
    out = []
    for p in sorted(directory.iterdir()):
        m = _FRAME_RX.match(p.name)
        if m:
            out.append((int(m.group(1)), p))
    out.sort(key=lambda t: t[0])
    return [p for _, p in out]


def load_dataset(root, require_annotations: bool = True) -> DatasetIndex:
    """Index and validate a dataset tree.

    Simulation mode (the default) demands one annotation per frame; any gap,
    resolution mismatch or unreadable file is reported with its path.
    """
    root = Path(root)
    images = root / "JPEGImages"
    annos = root / "Annotations"
    if not images.is_dir():
        raise DatasetError(f"missing image directory {images}")
    sequences = []
    for seq_dir in sorted(p for p in images.iterdir() if p.is_dir()):
        name = seq_dir.name
        frames = _indexed_files(seq_dir)
        if not frames:
            raise DatasetError(f"sequence {seq_dir} has no frames")
        anno_dir = annos / name
        annotations = _indexed_files(anno_dir) if anno_dir.is_dir() else []
        if require_annotations and len(annotations) != len(frames):
            raise DatasetError(
                f"sequence {name!r}: {len(frames)} frames but "
                f"{len(annotations)} annotations under {anno_dir}")
        first = load_frame(frames[0])
        h, w = first.shape[:2]
        ids: set = set()
        for fp in frames[1:]:
            fh, fw = load_frame(fp).shape[:2]
            if (fh, fw) != (h, w):
                raise DatasetError(
                    f"frame {fp} is {fw}x{fh}, sequence is {w}x{h}")
        for ap in annotations:
            labels = decode_label_png(ap.read_bytes())
            if labels.shape != (h, w):
                raise DatasetError(
                    f"annotation {ap} is {labels.shape[1]}x{labels.shape[0]}, "
                    f"sequence is {w}x{h}")
            ids.update(int(v) for v in np.unique(labels) if v != 0)
        spec_path = root / "Scenes" / f"{name}.json"
        sequences.append(SequenceEntry(
            name=name, frame_paths=tuple(frames),
            annotation_paths=tuple(annotations), width=w, height=h,
            object_ids=tuple(sorted(ids)),
            scene_spec_path=spec_path if spec_path.exists() else None))
    if not sequences:
        raise DatasetError(f"no sequences under {images}")
    return DatasetIndex(root=root, sequences=tuple(sequences))


def load_sequence(entry: SequenceEntry) -> Tuple[np.ndarray, List[LabelMask]]:
    """Load a sequence's frames and reference masks into memory."""
    frames = np.stack([load_frame(p) for p in entry.frame_paths])
    ids = list(entry.object_ids)
    refs = [labels_to_mask(decode_label_png(p.read_bytes()), ids)
            for p in entry.annotation_paths]
    return frames, refs


def export_dataset(specs: Dict[str, SceneSpec], root) -> DatasetIndex:
    """Render scenes into the dataset layout (plus their spec files)."""
    root = Path(root)
    for name, spec in specs.items():
        frames, truth = render_scene(spec)
        img_dir = root / "JPEGImages" / name
        ann_dir = root / "Annotations" / name
        img_dir.mkdir(parents=True, exist_ok=True)
        ann_dir.mkdir(parents=True, exist_ok=True)
        for t in range(spec.num_frames):
            (img_dir / f"{t:05d}.png").write_bytes(encode_frame_png(frames[t]))
            (ann_dir / f"{t:05d}.png").write_bytes(
                encode_label_png(truth.masks[t].labels))
        scene_dir = root / "Scenes"
        scene_dir.mkdir(parents=True, exist_ok=True)
        (scene_dir / f"{name}.json").write_text(spec.to_json())
    return load_dataset(root)
