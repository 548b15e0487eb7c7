"""Deterministic synthetic scenes with exact ground truth.

Scenes are parametric: a handful of rigid shapes on affine-plus-sinusoid
trajectories over a textured background. Rasterization tests pixel centers
(integer coordinates) against the analytic shapes, with no anti-aliasing,
so masks, boxes and point tracks are exact and platform-stable. Object
centers are snapped to a 1/16-px grid before any containment test so that
libm-level sin() differences can never flip a boundary pixel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import LabelMask, QueryBox, seeded_rng

SCENE_DIR = Path(__file__).parent / "scenes"

STANDARD_SCENE_NAMES = ("static", "linear", "sinusoidal", "crossing",
                        "disappear_reappear", "edge_exit")

# Small fast objects make point drift the dominant failure mode; these two
# scenes drive the prompt-ablation acceptance runs.
DRIFT_SUITE = ("drift_rects", "drift_weave")

MATERIAL_GRID_SPACING = 3.0

_OBJECT_COLORS = {
    1: (204, 64, 52),
    2: (58, 116, 204),
    3: (70, 170, 90),
    4: (215, 180, 60),
}


class SceneValidationError(ValueError):
    """The scene description violates a structural constraint."""


def _snap(v: float) -> float:
    """Quantize to 1/16 px for platform-stable geometry."""
    return math.floor(v * 16.0 + 0.5) / 16.0


@dataclass(frozen=True)
class Trajectory:
    """Affine-in-time position with an optional sinusoidal term."""

    x0: float
    y0: float
    vx: float = 0.0
    vy: float = 0.0
    amp_x: float = 0.0
    amp_y: float = 0.0
    period: float = 40.0
    phase: float = 0.0

    def position(self, t: float) -> Tuple[float, float]:
        w = 2.0 * math.pi / self.period
        x = self.x0 + self.vx * t + self.amp_x * math.sin(w * t + self.phase)
        y = self.y0 + self.vy * t + self.amp_y * math.sin(w * t + self.phase)
        return _snap(x), _snap(y)


@dataclass(frozen=True)
class ShapeSpec:
    """One of rectangle / ellipse / triangle, in object-local coordinates."""

    kind: str
    params: Dict[str, object]

    def __post_init__(self):
        if self.kind not in ("rectangle", "ellipse", "triangle"):
            raise SceneValidationError(f"unknown shape kind {self.kind!r}")

    def contains(self, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
        """Inclusive point-in-shape test on offsets from the object center."""
        if self.kind == "rectangle":
            hw = float(self.params["width"]) / 2.0
            hh = float(self.params["height"]) / 2.0
            return (np.abs(dx) <= hw) & (np.abs(dy) <= hh)
        if self.kind == "ellipse":
            rx = float(self.params["rx"])
            ry = float(self.params["ry"])
            return (dx / rx) ** 2 + (dy / ry) ** 2 <= 1.0
        verts = [(float(x), float(y)) for x, y in self.params["vertices"]]
        if len(verts) != 3:
            raise SceneValidationError("triangle needs exactly 3 vertices")
        # Normalize winding so the inclusive half-plane tests agree.
        area2 = ((verts[1][0] - verts[0][0]) * (verts[2][1] - verts[0][1])
                 - (verts[2][0] - verts[0][0]) * (verts[1][1] - verts[0][1]))
        if area2 < 0:
            verts = [verts[0], verts[2], verts[1]]
        inside = np.ones_like(np.asarray(dx, dtype=np.float64), dtype=bool)
        for i in range(3):
            ax, ay = verts[i]
            bx, by = verts[(i + 1) % 3]
            cross = (bx - ax) * (dy - ay) - (by - ay) * (dx - ax)
            inside &= cross >= 0
        return inside

    def local_bbox(self) -> Tuple[float, float, float, float]:
        if self.kind == "rectangle":
            hw = float(self.params["width"]) / 2.0
            hh = float(self.params["height"]) / 2.0
            return -hw, -hh, hw, hh
        if self.kind == "ellipse":
            rx = float(self.params["rx"])
            ry = float(self.params["ry"])
            return -rx, -ry, rx, ry
        xs = [float(x) for x, _ in self.params["vertices"]]
        ys = [float(y) for _, y in self.params["vertices"]]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class ObjectSpec:
    object_id: int
    shape: ShapeSpec
    z: int
    trajectory: Trajectory
    color: Tuple[int, int, int] = (200, 200, 200)


@dataclass(frozen=True)
class SceneSpec:
    """Parametric description of a synthetic video."""

    name: str
    width: int
    height: int
    num_frames: int
    objects: Tuple[ObjectSpec, ...]
    background_seed: int = 0
    events: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.num_frames < 1:
            raise SceneValidationError("num_frames must be >= 1")
        if self.width < 1 or self.height < 1:
            raise SceneValidationError("frame dimensions must be positive")
        zs = [o.z for o in self.objects]
        if len(set(zs)) != len(zs):
            raise SceneValidationError("z-orders must be unique")
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneValidationError("object ids must be unique")
        for o in self.objects:
            tr = o.trajectory
            vals = (tr.x0, tr.y0, tr.vx, tr.vy, tr.amp_x, tr.amp_y, tr.phase)
            if not all(math.isfinite(v) for v in vals) or tr.period <= 0:
                raise SceneValidationError(
                    f"object {o.object_id} trajectory is not finite")
        object.__setattr__(self, "objects", tuple(self.objects))

    @property
    def object_ids(self) -> List[int]:
        return sorted(o.object_id for o in self.objects)

    def to_json(self) -> str:
        doc = {
            "format": "ivos-scene/1",
            "name": self.name,
            "width": self.width,
            "height": self.height,
            "num_frames": self.num_frames,
            "background_seed": self.background_seed,
            "events": {k: list(v) for k, v in sorted(self.events.items())},
            "objects": [
                {
                    "object_id": o.object_id,
                    "z": o.z,
                    "color": list(o.color),
                    "shape": {"kind": o.shape.kind, "params": o.shape.params},
                    "trajectory": {
                        "x0": o.trajectory.x0, "y0": o.trajectory.y0,
                        "vx": o.trajectory.vx, "vy": o.trajectory.vy,
                        "amp_x": o.trajectory.amp_x, "amp_y": o.trajectory.amp_y,
                        "period": o.trajectory.period, "phase": o.trajectory.phase,
                    },
                }
                for o in self.objects
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "SceneSpec":
        doc = json.loads(text)
        if doc.get("format") != "ivos-scene/1":
            raise SceneValidationError(f"unknown scene format {doc.get('format')!r}")
        objects = tuple(
            ObjectSpec(
                object_id=int(od["object_id"]),
                z=int(od["z"]),
                color=tuple(int(c) for c in od["color"]),
                shape=ShapeSpec(od["shape"]["kind"], od["shape"]["params"]),
                trajectory=Trajectory(**od["trajectory"]),
            )
            for od in doc["objects"]
        )
        return SceneSpec(
            name=doc["name"], width=int(doc["width"]), height=int(doc["height"]),
            num_frames=int(doc["num_frames"]), objects=objects,
            background_seed=int(doc.get("background_seed", 0)),
            events={k: (int(v[0]), int(v[1]))
                    for k, v in doc.get("events", {}).items()},
        )


@dataclass
class SceneTruth:
    """Exact per-frame ground truth derived from a SceneSpec.

    Holds the rendered label masks, visible tight boxes (None when an object
    has no visible pixel), analytic per-frame object centers, and a
    material-point grid rigidly attached to each object.
    """

    spec: SceneSpec
    masks: List[LabelMask]
    boxes: Dict[int, List[Optional[QueryBox]]]
    centers: Dict[int, np.ndarray]            # (T, 2) analytic centers
    material_local: Dict[int, np.ndarray]     # (P, 2) object-local offsets
    material_positions: Dict[int, np.ndarray]  # (T, P, 2)
    material_visible: Dict[int, np.ndarray]    # (T, P) bool

    @property
    def num_frames(self) -> int:
        return self.spec.num_frames

    @property
    def object_ids(self) -> List[int]:
        return self.spec.object_ids

    def _object(self, object_id: int) -> ObjectSpec:
        for o in self.spec.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(f"object {object_id} not in scene {self.spec.name!r}")

    def center(self, object_id: int, t: int) -> Tuple[float, float]:
        c = self.centers[object_id][t]
        return float(c[0]), float(c[1])

    def transport(self, object_id: int, t_from: int, x: float, y: float,
                  t_to: int) -> Tuple[float, float]:
        """Rigid transport of a point attached to an object (0 = background)."""
        if object_id == 0:
            return x, y
        cf = self.centers[object_id][t_from]
        ct = self.centers[object_id][t_to]
        return x + float(ct[0] - cf[0]), y + float(ct[1] - cf[1])

    def owner_at(self, x: float, y: float, t: int) -> int:
        """Topmost object whose shape contains the point, else background."""
        best_z, owner = None, 0
        for o in self.spec.objects:
            cx, cy = self.centers[o.object_id][t]
            if bool(o.shape.contains(np.float64(x - cx), np.float64(y - cy))):
                if best_z is None or o.z > best_z:
                    best_z, owner = o.z, o.object_id
        return owner

    def point_visible(self, object_id: int, x: float, y: float, t: int) -> bool:
        """Visible = inside the frame and not covered by a higher-z shape."""
        if not (-0.5 <= x < self.spec.width - 0.5
                and -0.5 <= y < self.spec.height - 0.5):
            return False
        if object_id == 0:
            return self.owner_at(x, y, t) == 0
        own_z = self._object(object_id).z
        for o in self.spec.objects:
            if o.z <= own_z:
                continue
            cx, cy = self.centers[o.object_id][t]
            if bool(o.shape.contains(np.float64(x - cx), np.float64(y - cy))):
                return False
        return True

    def visible_box(self, object_id: int, t: int) -> Optional[QueryBox]:
        return self.boxes[object_id][t]

    def visible_mask(self, object_id: int, t: int) -> np.ndarray:
        return self.masks[t].binary(object_id)


def _material_grid(shape: ShapeSpec) -> np.ndarray:
    """Object-local lattice of points inside the shape, spacing 3 px."""
    x0, y0, x1, y1 = shape.local_bbox()
    xs = np.arange(math.ceil(x0), math.floor(x1) + 1e-9, MATERIAL_GRID_SPACING)
    ys = np.arange(math.ceil(y0), math.floor(y1) + 1e-9, MATERIAL_GRID_SPACING)
    gx, gy = np.meshgrid(xs, ys)
    keep = shape.contains(gx, gy)
    pts = np.stack([gx[keep], gy[keep]], axis=1)
    if pts.size == 0:
        pts = np.zeros((1, 2))
    return pts


def render_scene(spec: SceneSpec) -> Tuple[np.ndarray, SceneTruth]:
    """Rasterize a scene. Returns (frames uint8 (T, H, W, 3), truth)."""
    h, w, n = spec.height, spec.width, spec.num_frames
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    by_z = sorted(spec.objects, key=lambda o: o.z)

    rng = seeded_rng(spec.background_seed, f"background/{spec.name}")
    background = (96 + rng.integers(-24, 25, size=(h, w, 1))).astype(np.uint8)
    background = np.repeat(background, 3, axis=2)

    centers = {o.object_id: np.zeros((n, 2)) for o in spec.objects}
    for o in spec.objects:
        for t in range(n):
            centers[o.object_id][t] = o.trajectory.position(t)

    frames = np.empty((n, h, w, 3), dtype=np.uint8)
    masks: List[LabelMask] = []
    boxes: Dict[int, List[Optional[QueryBox]]] = {o.object_id: [] for o in spec.objects}
    for t in range(n):
        labels = np.zeros((h, w), dtype=np.int32)
        frame = background.copy()
        for o in by_z:  # ascending z: later paints occlude earlier
            cx, cy = centers[o.object_id][t]
            inside = o.shape.contains(xs - cx, ys - cy)
            labels[inside] = o.object_id
            frame[inside] = o.color
        frames[t] = frame
        scores = {o.object_id: (labels == o.object_id).astype(np.float32)
                  for o in spec.objects}
        masks.append(LabelMask(w, h, labels, scores))
        for o in spec.objects:
            region = labels == o.object_id
            if region.any():
                rows = np.flatnonzero(region.any(axis=1))
                cols = np.flatnonzero(region.any(axis=0))
                boxes[o.object_id].append(QueryBox(
                    float(cols[0]), float(rows[0]),
                    float(cols[-1] + 1), float(rows[-1] + 1), o.object_id))
            else:
                boxes[o.object_id].append(None)

    material_local, material_pos, material_vis = {}, {}, {}
    for o in spec.objects:
        local = _material_grid(o.shape)
        p = local.shape[0]
        pos = np.zeros((n, p, 2))
        vis = np.zeros((n, p), dtype=bool)
        truth_stub = SceneTruth(spec, masks, boxes, centers, {}, {}, {})
        for t in range(n):
            pos[t] = local + centers[o.object_id][t]
            for i in range(p):
                vis[t, i] = truth_stub.point_visible(
                    o.object_id, pos[t, i, 0], pos[t, i, 1], t)
        material_local[o.object_id] = local
        material_pos[o.object_id] = pos
        material_vis[o.object_id] = vis

    truth = SceneTruth(spec, masks, boxes, centers,
                       material_local, material_pos, material_vis)
    return frames, truth


def truth_point_tracks(truth: SceneTruth, seeds):
    """Exact trajectories for the seed prompts of a PromptSet.

    Each seed is attached to the topmost surface under it at the seed frame
    (object or static background) and transported rigidly; visibility follows
    z-order and frame bounds.
    """
    from .tracking import PointTrajectory

    t0 = seeds.frame_index
    if not (0 <= t0 < truth.num_frames):
        raise SceneValidationError(f"seed frame {t0} outside scene")
    out = []
    n = truth.num_frames
    for p in seeds.points:
        carrier = truth.owner_at(p.x, p.y, t0)
        if p.polarity == "positive" and carrier != p.object_id:
            raise SceneValidationError(
                f"positive seed ({p.x}, {p.y}) is not on object {p.object_id}")
        xs = np.zeros(n)
        ys = np.zeros(n)
        occ = np.zeros(n, dtype=np.float32)
        for t in range(n):
            x, y = truth.transport(carrier, t0, p.x, p.y, t)
            xs[t], ys[t] = x, y
            occ[t] = 0.0 if truth.point_visible(carrier, x, y, t) else 1.0
        out.append(PointTrajectory(
            object_id=p.object_id, polarity=p.polarity, seed_frame=t0,
            start=0, xs=xs, ys=ys, occlusion=occ))
    return out


def _rect(object_id, z, color, w, h, traj) -> ObjectSpec:
    return ObjectSpec(object_id, ShapeSpec("rectangle", {"width": w, "height": h}),
                      z, traj, color)


def _ellipse(object_id, z, color, rx, ry, traj) -> ObjectSpec:
    return ObjectSpec(object_id, ShapeSpec("ellipse", {"rx": rx, "ry": ry}),
                      z, traj, color)


def _triangle(object_id, z, color, verts, traj) -> ObjectSpec:
    return ObjectSpec(object_id, ShapeSpec("triangle", {"vertices": verts}),
                      z, traj, color)


def standard_suite_specs() -> Dict[str, SceneSpec]:
    """The six bundled 40-frame 128x128 verification scenes."""
    c1, c2 = _OBJECT_COLORS[1], _OBJECT_COLORS[2]
    specs = {}
    specs["static"] = SceneSpec(
        "static", 128, 128, 40, (
            _rect(1, 1, c1, 28, 20, Trajectory(44, 64)),
            _ellipse(2, 2, c2, 12, 9, Trajectory(92, 50)),
        ), background_seed=11)
    specs["linear"] = SceneSpec(
        "linear", 128, 128, 40, (
            _rect(1, 1, c1, 24, 16, Trajectory(22, 70, vx=2.0)),
            _ellipse(2, 2, c2, 10, 8, Trajectory(100, 40, vx=-1.5, vy=0.5)),
        ), background_seed=12)
    specs["sinusoidal"] = SceneSpec(
        "sinusoidal", 128, 128, 40, (
            _rect(1, 1, c1, 20, 20, Trajectory(64, 84, amp_x=24.0, period=40.0)),
            _triangle(2, 2, c2, [[0.0, -12.0], [11.0, 9.0], [-11.0, 9.0]],
                      Trajectory(40, 34, amp_y=14.0, period=20.0,
                                 phase=math.pi / 2)),
        ), background_seed=13)
    specs["crossing"] = SceneSpec(
        "crossing", 128, 128, 40, (
            _rect(1, 2, c1, 30, 30, Trajectory(14, 64, vx=2.5)),
            _rect(2, 1, c2, 14, 14, Trajectory(64, 64)),
        ), background_seed=14, events={"full_cover": (17, 23)})
    specs["disappear_reappear"] = SceneSpec(
        "disappear_reappear", 128, 128, 40, (
            _rect(1, 2, c1, 48, 44, Trajectory(64, 62)),
            _rect(2, 1, c2, 12, 12, Trajectory(12, 64, vx=2.2)),
        ), background_seed=15, events={"invisible": (16, 32)})
    specs["edge_exit"] = SceneSpec(
        "edge_exit", 128, 128, 40, (
            _rect(1, 2, c1, 16, 16, Trajectory(20, 64, vx=-2.2)),
            _ellipse(2, 1, c2, 14, 10, Trajectory(90, 80)),
        ), background_seed=16, events={"out_of_frame": (13, 39)})
    return specs


def drift_suite_specs() -> Dict[str, SceneSpec]:
    """Two 44-frame scenes with small (9-10 px) fast objects, where
    accumulated point drift dwarfs the object extent within a few frames."""
    c1, c2 = _OBJECT_COLORS[1], _OBJECT_COLORS[2]
    specs = {}
    specs["drift_rects"] = SceneSpec(
        "drift_rects", 128, 128, 44, (
            _rect(1, 1, c1, 10, 10, Trajectory(18, 42, vx=1.9)),
            _ellipse(2, 2, c2, 5, 5, Trajectory(104, 90, vx=-1.6, vy=-0.5)),
        ), background_seed=31)
    specs["drift_weave"] = SceneSpec(
        "drift_weave", 128, 128, 44, (
            _rect(1, 1, c1, 9, 9,
                  Trajectory(24, 64, vx=1.7, amp_y=18.0, period=24.0)),
            _triangle(2, 2, c2, [[0.0, -6.0], [5.5, 4.5], [-5.5, 4.5]],
                      Trajectory(100, 40, vx=-1.4, amp_x=10.0, period=30.0,
                                 phase=1.0)),
        ), background_seed=32)
    return specs


def occlusion_event_scene(kind: str) -> SceneSpec:
    """Canonical scene for a named occlusion event; event frames are in
    spec.events."""
    mapping = {"crossing": "crossing",
               "disappear_reappear": "disappear_reappear",
               "edge_exit": "edge_exit"}
    if kind not in mapping:
        raise SceneValidationError(f"unknown occlusion event kind {kind!r}")
    return standard_suite_specs()[mapping[kind]]


def load_scene(path) -> SceneSpec:
    return SceneSpec.from_json(Path(path).read_text())


def bundled_scene(name: str) -> SceneSpec:
    return load_scene(SCENE_DIR / f"{name}.json")


def write_bundled_scenes(target_dir=None) -> List[Path]:
    """Write the standard and drift suite spec files (versioned in-repo)."""
    target = Path(target_dir) if target_dir else SCENE_DIR
    target.mkdir(parents=True, exist_ok=True)
    written = []
    for specs in (standard_suite_specs(), drift_suite_specs()):
        for name, spec in specs.items():
            p = target / f"{name}.json"
            p.write_text(spec.to_json())
            written.append(p)
    return written
