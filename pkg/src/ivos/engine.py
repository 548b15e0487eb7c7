"""Round orchestration: restricted propagation, the per-round sweep, the
anchored linear mask blend, and timing-budget bookkeeping.

Each round annotates one frame, tracks its prompts bidirectionally until the
closest previously interacted frame on either side, re-decodes every frame
in that range (object by object, forward then backward, storing memory
entries as it goes), and blends the new masks against the old ones with
weights proportional to the distance from the interaction frame and its
anchor. Frames outside the range are never touched.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .core import (LabelMask, PromptSet, RunConfig, merge_object_scores,
                   seeded_rng)
from .crstm import MemoryBank, MemoryEntry, clear_range, store_entry
from .interaction import (FrameScoreTable, InteractionRecord,
                          build_prompt_set, select_initial_frame,
                          select_worst_frame)
from .metrics import sequence_scores
from .segmentation import (EmbeddingCache, FramePoint, classify_tokens,
                           decode_frame)
from .tracking import track_boxes, track_points


class RoundProtocolError(RuntimeError):
    """The round request violates the session protocol."""


class WallTimer:
    """Real elapsed time."""

    def now(self) -> float:
        return time.monotonic()


class StepTimer:
    """Deterministic timer: each now() advances an internal counter by a
    fixed step. The engine queries it in a fixed pattern (twice per round
    for prompt simulation, then one mark per object), so a round's ledger
    total is exactly (1 + num_objects) * step and reports are reproducible
    byte for byte."""

    def __init__(self, step: float = 1.0):
        self.step = float(step)
        self._t = 0.0

    def now(self) -> float:
        t = self._t
        self._t += self.step
        return t


@dataclass(frozen=True)
class TrackingRange:
    """One round's update range and its anchors.

    Anchors are the closest previously interacted frames on each side; the
    updated range excludes them. A side without an anchor extends to the
    sequence boundary.
    """

    left: int
    right: int
    interaction_frame: int
    left_anchor: Optional[int]
    right_anchor: Optional[int]

    def frames(self) -> range:
        return range(self.left, self.right + 1)


def compute_tracking_range(t_r: int, interacted: Set[int],
                           num_frames: int) -> TrackingRange:
    """Restricted propagation bounds for an interaction at frame t_r."""
    if t_r in interacted:
        raise RoundProtocolError(f"frame {t_r} was already interacted")
    if not 0 <= t_r < num_frames:
        raise ValueError(f"frame {t_r} outside sequence of {num_frames}")
    below = [t for t in interacted if t < t_r]
    above = [t for t in interacted if t > t_r]
    left_anchor = max(below) if below else None
    right_anchor = min(above) if above else None
    left = left_anchor + 1 if left_anchor is not None else 0
    right = right_anchor - 1 if right_anchor is not None else num_frames - 1
    return TrackingRange(max(0, left), min(num_frames - 1, right), t_r,
                         left_anchor, right_anchor)


def blend_weights(t_i: int, t_r: int, t_c: int) -> Tuple[float, float]:
    """(old, new) weights of the distance-linear frame update.

    w_old = |t_i - t_r| / |t_c - t_r|, w_new = |t_i - t_c| / |t_c - t_r|.
    At t_i = t_r the new mask carries everything; at t_i = t_c the old one
    does; between them the weights sum to 1.
    """
    if t_c == t_r:
        raise ValueError("degenerate blend: anchor equals interaction frame")
    span = abs(t_c - t_r)
    return abs(t_i - t_r) / span, abs(t_i - t_c) / span


def blend_frame_mask(old: LabelMask, new: LabelMask, t_i: int, t_r: int,
                     t_c: int, threshold: float) -> LabelMask:
    """Distance-weighted blend of the previous and current round's masks.

    Blending happens on per-object score maps, then labels are re-derived.
    The engine only calls this for frames strictly between the anchor and
    the interaction frame, where the weights are a convex pair.
    """
    lo, hi = min(t_c, t_r), max(t_c, t_r)
    if t_c == t_r or not lo < t_i < hi:
        if t_c == t_r:
            raise ValueError("degenerate blend: anchor equals interaction frame")
        raise ValueError(f"frame {t_i} not strictly between {t_c} and {t_r}")
    w_old, w_new = blend_weights(t_i, t_r, t_c)
    ids = sorted(set(old.scores) | set(new.scores))
    zeros = np.zeros((old.height, old.width), dtype=np.float32)
    blended = {}
    for oid in ids:
        o = old.scores.get(oid, zeros)
        n = new.scores.get(oid, zeros)
        blended[oid] = (w_old * o.astype(np.float64)
                        + w_new * n.astype(np.float64)).astype(np.float32)
    return merge_object_scores(blended, threshold)


@dataclass
class RoundLedger:
    round_index: int
    frame_index: int
    sim_time: float
    infer_time: Dict[int, float]
    budget_exceeded: List[int]

    @property
    def total_time(self) -> float:
        return self.sim_time + sum(self.infer_time.values())


@dataclass
class Backends:
    point_tracker: object
    box_tracker: Optional[object]
    segmenter: object


@dataclass
class SessionState:
    """Mutable per-video interaction state, owned by one logical thread."""

    frames: np.ndarray
    width: int
    height: int
    num_frames: int
    object_ids: List[int]
    masks: List[Optional[LabelMask]]
    interacted: Set[int] = field(default_factory=set)
    records: List[InteractionRecord] = field(default_factory=list)
    bank: MemoryBank = None
    ledger: List[RoundLedger] = field(default_factory=list)
    cache: EmbeddingCache = field(default_factory=EmbeddingCache)
    elapsed: float = 0.0

    @staticmethod
    def new(frames: np.ndarray, object_ids: Sequence[int],
            cfg: RunConfig) -> "SessionState":
        n, h, w = frames.shape[0], frames.shape[1], frames.shape[2]
        return SessionState(
            frames=frames, width=w, height=h, num_frames=n,
            object_ids=sorted(object_ids), masks=[None] * n,
            bank=MemoryBank(interval=cfg.memory_interval))

    @property
    def round_count(self) -> int:
        return len(self.records)

    def mask_or_empty(self, t: int) -> LabelMask:
        m = self.masks[t]
        if m is None:
            return LabelMask.empty(self.width, self.height, self.object_ids)
        return m


ProgressFn = Callable[[int, int, float], None]


def _sweep_frames(rng: TrackingRange) -> List[int]:
    """Forward from the interaction frame, then backward."""
    fwd = list(range(rng.interaction_frame, rng.right + 1))
    bwd = list(range(rng.interaction_frame - 1, rng.left - 1, -1))
    return fwd + bwd


def run_round(session: SessionState, prompts: PromptSet, backends: Backends,
              cfg: RunConfig, timer=None, sim_time: float = 0.0,
              progress: Optional[ProgressFn] = None) -> SessionState:
    """Execute one interaction round in place and return the session."""
    timer = timer or WallTimer()
    t_r = prompts.frame_index
    round_index = session.round_count + 1
    if round_index > cfg.num_rounds:
        raise RoundProtocolError(
            f"round {round_index} exceeds configured {cfg.num_rounds}")
    rng = compute_tracking_range(t_r, session.interacted, session.num_frames)

    prompted = prompts.object_ids
    clear_range(session.bank, rng.left, rng.right, object_ids=prompted)

    new_scores: Dict[int, Dict[int, np.ndarray]] = {}
    infer_time: Dict[int, float] = {}
    budget_exceeded: List[int] = []

    mark = timer.now()
    for oid in prompted:
        t_a = mark
        pts = prompts.points_for(oid)
        box = prompts.boxes.get(oid)
        obj_prompts = PromptSet(t_r, tuple(pts),
                                {oid: box} if box is not None else {})
        trajectories = track_points(
            backends.point_tracker, (rng.left, rng.right),
            obj_prompts) if pts else []
        box_traj = None
        if cfg.use_box_prompts and box is not None:
            if backends.box_tracker is None:
                raise RoundProtocolError("box prompts enabled without a box tracker")
            box_traj = track_boxes(backends.box_tracker,
                                   (rng.left, rng.right), obj_prompts)[0]

        scores: Dict[int, np.ndarray] = {}
        iri_override = None
        for t in _sweep_frames(rng):
            box_t = box_traj.box(t) if box_traj is not None else None
            frame_points = []
            for traj in trajectories:
                x, y = traj.position(t)
                if (traj.polarity == "positive" and box_t is not None
                        and not box_t.contains(x, y, cfg.filter_margin)):
                    continue    # filtered out for this frame; may rejoin later
                frame_points.append(FramePoint(
                    x, y, traj.polarity, traj.occluded_score(t)))
            box_token = (box_t.x_min, box_t.y_min, box_t.x_max, box_t.y_max) \
                if box_t is not None else None
            tokens = classify_tokens(frame_points, box_token, oid,
                                     cfg.occlusion_threshold)
            image_ref = session.cache.embed(backends.segmenter, t,
                                            session.frames[t])
            result = decode_frame(backends.segmenter, image_ref, tokens,
                                  session.bank, round_index, cfg,
                                  iri_override=iri_override)
            scores[t] = result.score_map
            if session.bank.admissible(t, t == t_r):
                store_entry(session.bank, MemoryEntry(
                    object_id=oid, frame_index=t, round_created=round_index,
                    is_interaction_frame=(t == t_r),
                    key=result.query_key, value=result.dense_value))
            if progress is not None:
                progress(t, oid, float(result.score_map.mean()))
            if cfg.strict_time_budget and iri_override is None:
                if timer.now() - t_a > cfg.per_object_time_cap:
                    iri_override = 0
        new_scores[oid] = scores
        mark = timer.now()
        infer_time[oid] = mark - t_a
        if infer_time[oid] > cfg.per_object_time_cap:
            budget_exceeded.append(oid)

    zeros = np.zeros((session.height, session.width), dtype=np.float32)
    for t in rng.frames():
        old = session.mask_or_empty(t)
        per_object = {}
        for oid in session.object_ids:
            if oid in new_scores and t in new_scores[oid]:
                per_object[oid] = new_scores[oid][t]
            else:
                per_object[oid] = old.scores.get(oid, zeros)
        merged = merge_object_scores(per_object, cfg.mask_threshold)
        if t == t_r:
            final = merged
        elif t > t_r and rng.right_anchor is not None:
            final = blend_frame_mask(old, merged, t, t_r, rng.right_anchor,
                                     cfg.mask_threshold)
        elif t < t_r and rng.left_anchor is not None:
            final = blend_frame_mask(old, merged, t, t_r, rng.left_anchor,
                                     cfg.mask_threshold)
        else:
            final = merged
        session.masks[t] = final

    round_elapsed = sim_time + sum(infer_time.values())
    session.elapsed += round_elapsed
    session.interacted.add(t_r)
    session.records.append(InteractionRecord(
        round_index, t_r, prompts, timestamp=session.elapsed))
    session.ledger.append(RoundLedger(
        round_index, t_r, sim_time, infer_time, budget_exceeded))
    return session


def run_simulated_session(
    frames: np.ndarray,
    reference: Sequence[LabelMask],
    cfg: RunConfig,
    backends: Backends,
    timer=None,
    prompt_stream_tag: str = "session",
    progress: Optional[ProgressFn] = None,
) -> Tuple[SessionState, List[FrameScoreTable]]:
    """Full simulated interaction: R rounds of annotate, propagate, score.

    The simulated user annotates the frame with the worst current J&F
    (initially the frame showing the most objects), never revisiting a
    frame. Returns the final session plus one score table per round.
    """
    if len(reference) != frames.shape[0]:
        raise ValueError("reference does not cover all frames")
    timer = timer or WallTimer()
    object_ids = sorted({o for ref in reference for o in ref.visible_objects()})
    session = SessionState.new(frames, object_ids, cfg)
    rng = seeded_rng(cfg.rng_seed, f"prompts/{prompt_stream_tag}")
    tables: List[FrameScoreTable] = []
    target = select_initial_frame(reference)
    for r in range(1, cfg.num_rounds + 1):
        t0 = timer.now()
        prompts = build_prompt_set(reference[target], target, cfg, rng)
        t1 = timer.now()
        run_round(session, prompts, backends, cfg, timer,
                  sim_time=t1 - t0, progress=progress)
        table = sequence_scores(session.masks, list(reference))
        tables.append(table)
        if r < cfg.num_rounds:
            target = select_worst_frame(table, session.interacted)
    return session, tables
