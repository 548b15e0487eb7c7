"""Joint visual prompt tracking: trajectories, the in-box point filter, and
deterministic synthetic reference trackers.

Backends are black boxes behind a small interface; bidirectional tracking is
realized as two independent directional calls from the seed frame. The
synthetic trackers transport prompts rigidly with the analytic scene motion
and can inject Gaussian jitter and linear drift to emulate real-tracker
error accumulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import PromptSet, QueryBox, QueryPoint, seeded_rng


class BackendError(RuntimeError):
    """Backend transport or execution failure, with frame context."""


class ProtocolViolationError(BackendError):
    """Backend returned data that breaks the tracking contract."""


@dataclass(frozen=True)
class TrackerCapabilities:
    max_points: int = 1024
    supports_occlusion: bool = True


@dataclass(frozen=True)
class TrackerBackendHandle:
    kind: str                       # "point" or "box"
    endpoint: str
    capabilities: TrackerCapabilities


@dataclass(frozen=True)
class PointTrajectory:
    """Per-frame positions and occlusion scores for one tracked point.

    Arrays cover the contiguous frame range [start, start + len - 1].
    """

    object_id: int
    polarity: str
    seed_frame: int
    start: int
    xs: np.ndarray
    ys: np.ndarray
    occlusion: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float64)
        ys = np.asarray(self.ys, dtype=np.float64)
        occ = np.asarray(self.occlusion, dtype=np.float64)
        if not (xs.shape == ys.shape == occ.shape) or xs.ndim != 1:
            raise ValueError("trajectory arrays must be 1-D and equal length")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("trajectory positions must be finite")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "occlusion", occ)

    @property
    def stop(self) -> int:
        return self.start + len(self.xs) - 1

    def position(self, t: int) -> Tuple[float, float]:
        i = t - self.start
        return float(self.xs[i]), float(self.ys[i])

    def occluded_score(self, t: int) -> float:
        return float(self.occlusion[t - self.start])


@dataclass(frozen=True)
class BoxTrajectory:
    """Per-frame box for one object over [start, start + len - 1]."""

    object_id: int
    start: int
    boxes: Tuple[QueryBox, ...]

    def box(self, t: int) -> QueryBox:
        return self.boxes[t - self.start]

    @property
    def stop(self) -> int:
        return self.start + len(self.boxes) - 1


def _directional_frames(seed_frame: int, left: int, right: int):
    """Forward then backward frame index lists, both starting at the seed."""
    forward = list(range(seed_frame, right + 1))
    backward = list(range(seed_frame - 1, left - 1, -1))
    return forward, backward


def track_points(backend, frame_range: Tuple[int, int],
                 seeds: PromptSet) -> List[PointTrajectory]:
    """Track every seed point over [left, right], bidirectionally.

    The backend is invoked once forward and once backward from the seed
    frame; each call must return one position and occlusion score per frame
    per point, or a ProtocolViolationError is raised.
    """
    left, right = frame_range
    if backend.handle.kind != "point":
        raise BackendError(f"backend kind {backend.handle.kind!r} is not 'point'")
    if not seeds.points:
        raise ValueError("no seed points to track")
    if not left <= seeds.frame_index <= right:
        raise ValueError(
            f"seed frame {seeds.frame_index} outside range [{left}, {right}]")

    n_frames = right - left + 1
    n_points = len(seeds.points)
    xs = np.zeros((n_frames, n_points))
    ys = np.zeros((n_frames, n_points))
    occ = np.zeros((n_frames, n_points))

    forward, backward = _directional_frames(seeds.frame_index, left, right)
    for frames in (forward, backward):
        if not frames:
            continue
        pos, o = backend.track(list(seeds.points), seeds.frame_index, frames)
        pos = np.asarray(pos, dtype=np.float64)
        o = np.asarray(o, dtype=np.float64)
        if pos.shape != (len(frames), n_points, 2) or o.shape != (len(frames), n_points):
            raise ProtocolViolationError(
                f"backend returned shapes {pos.shape}/{o.shape} for "
                f"{len(frames)} frames x {n_points} points")
        for row, t in enumerate(frames):
            xs[t - left] = pos[row, :, 0]
            ys[t - left] = pos[row, :, 1]
            occ[t - left] = o[row]

    out = []
    for i, p in enumerate(seeds.points):
        out.append(PointTrajectory(
            object_id=p.object_id, polarity=p.polarity,
            seed_frame=seeds.frame_index, start=left,
            xs=xs[:, i], ys=ys[:, i], occlusion=occ[:, i]))
    return out


def track_boxes(backend, frame_range: Tuple[int, int],
                seeds: PromptSet) -> List[BoxTrajectory]:
    """Track one box per object over [left, right], bidirectionally."""
    left, right = frame_range
    if backend.handle.kind != "box":
        raise BackendError(f"backend kind {backend.handle.kind!r} is not 'box'")
    if not seeds.boxes:
        raise ValueError("no seed boxes to track")
    object_ids = sorted(seeds.boxes)
    n_frames = right - left + 1
    per_object: Dict[int, List[Optional[QueryBox]]] = {
        oid: [None] * n_frames for oid in object_ids}

    forward, backward = _directional_frames(seeds.frame_index, left, right)
    for frames in (forward, backward):
        if not frames:
            continue
        result = backend.track([seeds.boxes[o] for o in object_ids],
                               seeds.frame_index, frames)
        boxes, conf = result
        if len(boxes) != len(frames):
            raise ProtocolViolationError(
                f"backend returned {len(boxes)} frames, expected {len(frames)}")
        for row, t in enumerate(frames):
            if len(boxes[row]) != len(object_ids):
                raise ProtocolViolationError(
                    f"backend returned {len(boxes[row])} boxes at frame {t}")
            for col, oid in enumerate(object_ids):
                b = boxes[row][col]
                per_object[oid][t - left] = QueryBox(
                    float(b[0]), float(b[1]), float(b[2]), float(b[3]),
                    object_id=oid, confidence=float(conf[row][col]))

    return [BoxTrajectory(oid, left, tuple(per_object[oid]))
            for oid in object_ids]


def filter_points_by_box(points: Sequence[Tuple[float, float]], box: QueryBox,
                         margin: float = 0.0) -> Tuple[List[Tuple[float, float]], List[bool]]:
    """Keep points inside the margin-expanded box (closed boundary).

    Returns (surviving points, per-point keep flags). The caller records the
    flags rather than mutating trajectories, so points can rejoin later.
    """
    keep = [box.contains(x, y, margin) for x, y in points]
    kept = [p for p, k in zip(points, keep) if k]
    return kept, keep


class SyntheticPointTracker:
    """Reference point tracker driven by analytic scene truth.

    Points transport rigidly with the surface they start on. Optional
    Gaussian jitter (sigma px) and linear drift (delta px/frame away from
    the seed frame, fixed random direction per point) corrupt positions;
    occlusion scores stay exact: 1.0 where the true point is covered by a
    higher-z object or out of frame, else 0.0.
    """

    def __init__(self, truth, sigma: float = 0.0, drift: float = 0.0,
                 noise_seed: int = 0):
        self.truth = truth
        self.sigma = float(sigma)
        self.drift = float(drift)
        self.noise_seed = int(noise_seed)
        self.handle = TrackerBackendHandle(
            "point", "inproc://synthetic-point", TrackerCapabilities())

    def track(self, seeds: List[QueryPoint], seed_frame: int,
              frames: Sequence[int]):
        n_f, n_p = len(frames), len(seeds)
        pos = np.zeros((n_f, n_p, 2))
        occ = np.zeros((n_f, n_p))
        carriers = [self.truth.owner_at(p.x, p.y, seed_frame) for p in seeds]
        dirs = np.zeros((n_p, 2))
        for i in range(n_p):
            rng = seeded_rng(self.noise_seed, f"drift-dir/{seed_frame}/{i}")
            angle = rng.uniform(0.0, 2.0 * math.pi)
            dirs[i] = (math.cos(angle), math.sin(angle))
        for row, t in enumerate(frames):
            for i, p in enumerate(seeds):
                x, y = self.truth.transport(carriers[i], seed_frame, p.x, p.y, t)
                occ[row, i] = 0.0 if self.truth.point_visible(
                    carriers[i], x, y, t) else 1.0
                if t != seed_frame:
                    dt = abs(t - seed_frame)
                    x += self.drift * dt * dirs[i, 0]
                    y += self.drift * dt * dirs[i, 1]
                    if self.sigma > 0.0:
                        rng = seeded_rng(self.noise_seed,
                                         f"jitter/{seed_frame}/{i}/{t}")
                        jx, jy = rng.normal(0.0, self.sigma, size=2)
                        x += jx
                        y += jy
                pos[row, i] = (x, y)
        return pos, occ


class SyntheticBoxTracker:
    """Reference box tracker: tight visible box plus bounded edge noise.

    On full occlusion the last emitted box is held with confidence 0.1; at
    the seed frame the user's box is returned unchanged.
    """

    def __init__(self, truth, edge_noise: float = 0.0, noise_seed: int = 0):
        self.truth = truth
        self.edge_noise = float(edge_noise)
        self.noise_seed = int(noise_seed)
        self.handle = TrackerBackendHandle(
            "box", "inproc://synthetic-box", TrackerCapabilities())

    def _noisy(self, box: QueryBox, oid: int, t: int) -> Tuple[float, ...]:
        if self.edge_noise <= 0.0:
            return (box.x_min, box.y_min, box.x_max, box.y_max)
        rng = seeded_rng(self.noise_seed, f"box-noise/{oid}/{t}")
        d = rng.uniform(-self.edge_noise, self.edge_noise, size=4)
        w, h = self.truth.spec.width, self.truth.spec.height
        xmin = min(max(box.x_min + d[0], 0.0), float(w))
        ymin = min(max(box.y_min + d[1], 0.0), float(h))
        xmax = min(max(box.x_max + d[2], 0.0), float(w))
        ymax = min(max(box.y_max + d[3], 0.0), float(h))
        if xmin >= xmax:
            xmin, xmax = box.x_min, box.x_max
        if ymin >= ymax:
            ymin, ymax = box.y_min, box.y_max
        return (xmin, ymin, xmax, ymax)

    def track(self, seed_boxes: List[QueryBox], seed_frame: int,
              frames: Sequence[int]):
        boxes_out = []
        conf_out = []
        last: Dict[int, Tuple[float, ...]] = {
            b.object_id: (b.x_min, b.y_min, b.x_max, b.y_max)
            for b in seed_boxes}
        for t in frames:
            row_boxes = []
            row_conf = []
            for b in seed_boxes:
                oid = b.object_id
                if t == seed_frame:
                    coords = (b.x_min, b.y_min, b.x_max, b.y_max)
                    c = 1.0
                else:
                    tight = self.truth.visible_box(oid, t)
                    if tight is None:
                        coords = last[oid]
                        c = 0.1
                    else:
                        coords = self._noisy(tight, oid, t)
                        c = 1.0
                last[oid] = coords
                row_boxes.append(coords)
                row_conf.append(c)
            boxes_out.append(row_boxes)
            conf_out.append(row_conf)
        return boxes_out, conf_out
