"""HTTP session service consumed by the browser annotation client.

Sessions wrap the engine: the client supplies prompts (instead of the
simulator), rounds run server-side, and per-frame progress events stream
over a persistent WebSocket. In simulation-reference mode (synthetic scenes)
per-frame J&F against the reference drives the worst-frame suggestion; in
live mode a confidence proxy (mean per-pixel max object score) stands in.
"""

from __future__ import annotations

import asyncio
import io
import threading
import uuid
import zipfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from fastapi import (FastAPI, HTTPException, Request, Response, WebSocket,
                     WebSocketDisconnect)
from PIL import Image
from pydantic import BaseModel, Field

from ..backends import BackendNoise, remote_backends_from_env, synthetic_backends
from ..core import LabelMask, PromptSet, QueryBox, QueryPoint, RunConfig, default_config
from ..engine import Backends, SessionState, StepTimer, run_round
from ..interaction import FramesExhaustedError, select_worst_frame
from ..metrics import sequence_scores
from ..synthlab import STANDARD_SCENE_NAMES, bundled_scene, render_scene
from .dataset import (DatasetIndex, encode_frame_png, encode_label_png,
                      load_sequence)


class PointPayload(BaseModel):
    x: float
    y: float
    polarity: str = Field(pattern="^(positive|negative)$")
    object_id: int


class BoxPayload(BaseModel):
    object_id: int
    x_min: float
    y_min: float
    x_max: float
    y_max: float


class RoundPayload(BaseModel):
    frame_index: int
    points: List[PointPayload]
    boxes: List[BoxPayload] = []


class CreateSessionPayload(BaseModel):
    scene: Optional[str] = None
    sequence: Optional[str] = None
    reference: bool = True
    session_seed: int = 0
    noise: Dict[str, float] = {}
    config: Dict[str, object] = {}


@dataclass
class _Session:
    sid: str
    state: SessionState
    cfg: RunConfig
    backends: Backends
    reference: Optional[List[LabelMask]]
    timer: StepTimer
    events: List[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    round_lock: threading.Lock = field(default_factory=threading.Lock)
    scores: Optional[dict] = None

    def push(self, event: dict):
        with self.lock:
            event = dict(event, seq=len(self.events))
            self.events.append(event)


def _confidence(state: SessionState) -> List[float]:
    """Per-frame mean of the max object score; 0 for frames without a mask."""
    out = []
    for m in state.masks:
        if m is None or not m.scores:
            out.append(0.0)
            continue
        stack = np.stack([m.scores[o] for o in m.object_ids])
        out.append(float(stack.max(axis=0).mean()))
    return out


def _suggest(session: _Session) -> Optional[int]:
    try:
        if session.reference is not None:
            table = sequence_scores(
                [session.state.mask_or_empty(t)
                 for t in range(session.state.num_frames)],
                session.reference)
            return select_worst_frame(table, session.state.interacted)
        conf = _confidence(session.state)
        candidates = [t for t in range(session.state.num_frames)
                      if t not in session.state.interacted]
        if not candidates:
            return None
        return min(candidates, key=lambda t: (conf[t], t))
    except FramesExhaustedError:
        return None


def create_app(dataset_index: Optional[DatasetIndex] = None,
               cfg: Optional[RunConfig] = None,
               default_noise: Optional[BackendNoise] = None) -> FastAPI:
    base_cfg = cfg or default_config()
    app = FastAPI(title="ivos session service")
    sessions: Dict[str, _Session] = {}

    def _get(sid: str) -> _Session:
        s = sessions.get(sid)
        if s is None:
            raise HTTPException(status_code=404, detail=f"no session {sid!r}")
        return s

    def _load_source(payload: CreateSessionPayload):
        if payload.scene:
            if payload.scene in STANDARD_SCENE_NAMES:
                spec = bundled_scene(payload.scene)
            else:
                raise HTTPException(status_code=404,
                                    detail=f"unknown scene {payload.scene!r}")
            frames, truth = render_scene(spec)
            reference = truth.masks if payload.reference else None
            return frames, truth, reference, spec.object_ids
        if payload.sequence:
            if dataset_index is None:
                raise HTTPException(status_code=400,
                                    detail="service has no dataset configured")
            entry = dataset_index.sequence(payload.sequence)
            frames, refs = load_sequence(entry)
            truth = None
            if entry.scene_spec_path is not None:
                from ..synthlab import load_scene
                _, truth = render_scene(load_scene(entry.scene_spec_path))
            reference = refs if payload.reference else None
            return frames, truth, reference, list(entry.object_ids)
        raise HTTPException(status_code=422,
                            detail="payload needs 'scene' or 'sequence'")

    @app.get("/scenes")
    def list_scenes():
        return {"scenes": list(STANDARD_SCENE_NAMES)}

    @app.post("/sessions")
    def create_session(payload: CreateSessionPayload):
        frames, truth, reference, object_ids = _load_source(payload)
        try:
            session_cfg = base_cfg.with_overrides(**payload.config)
        except (TypeError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        noise_cfg = default_noise or BackendNoise()
        if payload.noise:
            noise_cfg = BackendNoise(
                sigma=float(payload.noise.get("sigma", noise_cfg.sigma)),
                drift=float(payload.noise.get("drift", noise_cfg.drift)),
                box_edge=float(payload.noise.get("box_edge", noise_cfg.box_edge)))
        backends = remote_backends_from_env()
        if backends is None:
            if truth is None:
                raise HTTPException(
                    status_code=400,
                    detail="sequence has no scene spec and no remote "
                           "backends are configured")
            backends = synthetic_backends(truth, frames, noise_cfg,
                                          seed=payload.session_seed)
        sid = uuid.uuid4().hex
        state = SessionState.new(frames, object_ids, session_cfg)
        sessions[sid] = _Session(sid=sid, state=state, cfg=session_cfg,
                                 backends=backends, reference=reference,
                                 timer=StepTimer(1.0))
        return {"session_id": sid,
                "num_frames": state.num_frames,
                "width": state.width, "height": state.height,
                "object_ids": state.object_ids,
                "num_rounds": session_cfg.num_rounds,
                "reference": reference is not None}

    @app.put("/sessions/upload")
    async def upload_session(request: Request, session_seed: int = 0,
                             object_count: int = 1):
        """Live-mode session from an uploaded zip of png frames.

        There is no reference or scene truth, so remote backends must be
        configured through the IVOS_*_ENDPOINT environment variables.
        """
        body = await request.body()
        try:
            with zipfile.ZipFile(io.BytesIO(body)) as zf:
                names = sorted(n for n in zf.namelist() if n.endswith(".png"))
                if not names:
                    raise HTTPException(status_code=422,
                                        detail="zip contains no png frames")
                frames = np.stack([
                    np.asarray(Image.open(io.BytesIO(zf.read(n)))
                               .convert("RGB"), dtype=np.uint8)
                    for n in names])
        except HTTPException:
            raise
        except zipfile.BadZipFile:
            raise HTTPException(status_code=422, detail="body is not a zip")
        except Exception as exc:
            raise HTTPException(status_code=422,
                                detail=f"undecodable frames: {exc}")
        backends = remote_backends_from_env()
        if backends is None:
            raise HTTPException(status_code=400,
                                detail="uploaded-frame sessions need remote "
                                       "backends (IVOS_*_ENDPOINT)")
        sid = uuid.uuid4().hex
        object_ids = list(range(1, max(1, object_count) + 1))
        state = SessionState.new(frames, object_ids, base_cfg)
        sessions[sid] = _Session(sid=sid, state=state, cfg=base_cfg,
                                 backends=backends, reference=None,
                                 timer=StepTimer(1.0))
        return {"session_id": sid, "num_frames": state.num_frames,
                "width": state.width, "height": state.height,
                "object_ids": object_ids, "reference": False}

    @app.get("/sessions/{sid}/frames")
    def list_frames(sid: str):
        s = _get(sid)
        return {"count": s.state.num_frames,
                "width": s.state.width, "height": s.state.height,
                "interacted": sorted(s.state.interacted),
                "round": s.state.round_count}

    @app.get("/sessions/{sid}/frames/{t}/image")
    def frame_image(sid: str, t: int):
        s = _get(sid)
        if not 0 <= t < s.state.num_frames:
            raise HTTPException(status_code=404, detail=f"no frame {t}")
        return Response(content=encode_frame_png(s.state.frames[t]),
                        media_type="image/png")

    @app.post("/sessions/{sid}/rounds")
    def submit_round(sid: str, payload: RoundPayload):
        s = _get(sid)
        if not s.round_lock.acquire(blocking=False):
            raise HTTPException(status_code=409,
                                detail="a round is already running")
        try:
            return _run_submitted_round(s, payload)
        finally:
            s.round_lock.release()

    def _run_submitted_round(s: _Session, payload: RoundPayload):
        if s.state.round_count >= s.cfg.num_rounds:
            raise HTTPException(status_code=409, detail="round budget spent")
        if payload.frame_index in s.state.interacted:
            raise HTTPException(status_code=409,
                                detail=f"frame {payload.frame_index} was "
                                       "already interacted")
        if not payload.points and not payload.boxes:
            raise HTTPException(status_code=422, detail="empty prompt set")
        known = set(s.state.object_ids)
        for p in payload.points:
            if p.object_id not in known:
                raise HTTPException(status_code=422,
                                    detail=f"unknown object {p.object_id}")
        try:
            prompts = PromptSet(
                payload.frame_index,
                tuple(QueryPoint(p.x, p.y, p.polarity, p.object_id)
                      for p in payload.points),
                {b.object_id: QueryBox(b.x_min, b.y_min, b.x_max, b.y_max,
                                       object_id=b.object_id)
                 for b in payload.boxes})
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        round_index = s.state.round_count + 1
        s.push({"type": "round_start", "round": round_index,
                "frame_index": payload.frame_index})

        def progress(t: int, oid: int, score: float):
            s.push({"type": "frame", "frame_index": t, "object_id": oid,
                    "score": score})

        try:
            run_round(s.state, prompts, s.backends, s.cfg, s.timer,
                      progress=progress)
        except Exception as exc:
            s.push({"type": "round_error", "round": round_index,
                    "message": str(exc)})
            raise HTTPException(status_code=400, detail=str(exc))
        if s.reference is not None:
            table = sequence_scores(
                [s.state.mask_or_empty(t) for t in range(s.state.num_frames)],
                s.reference)
            s.scores = {"j": table.j.tolist(), "f": table.f.tolist(),
                        "jf": table.jf.tolist()}
        suggestion = _suggest(s)
        record = s.state.records[-1]
        s.push({"type": "round_end", "round": round_index,
                "suggestion": suggestion})
        return {"round": round_index,
                "frame_index": record.frame_index,
                "timestamp": record.timestamp,
                "interacted": sorted(s.state.interacted),
                "suggestion": suggestion,
                "mean_jf": (float(np.mean(s.scores["jf"]))
                            if s.scores else None)}

    @app.get("/sessions/{sid}/masks/{t}")
    def mask_png(sid: str, t: int):
        s = _get(sid)
        if not 0 <= t < s.state.num_frames:
            raise HTTPException(status_code=404, detail=f"no frame {t}")
        mask = s.state.mask_or_empty(t)
        return Response(content=encode_label_png(mask.labels),
                        media_type="image/png")

    @app.get("/sessions/{sid}/scores")
    def scores(sid: str):
        s = _get(sid)
        if s.scores is not None:
            return {"basis": "reference-jf", **s.scores}
        return {"basis": "confidence", "confidence": _confidence(s.state)}

    @app.get("/sessions/{sid}/suggestion")
    def suggestion(sid: str):
        s = _get(sid)
        basis = "reference-jf" if s.reference is not None else "confidence"
        return {"frame_index": _suggest(s), "basis": basis}

    @app.get("/sessions/{sid}/ledger")
    def ledger(sid: str):
        s = _get(sid)
        return {"elapsed": s.state.elapsed,
                "rounds": [{
                    "round": l.round_index, "frame_index": l.frame_index,
                    "sim_time": l.sim_time,
                    "infer_time": {str(k): v for k, v in l.infer_time.items()},
                    "budget_exceeded": l.budget_exceeded}
                    for l in s.state.ledger]}

    @app.websocket("/sessions/{sid}/progress")
    async def progress_stream(ws: WebSocket, sid: str):
        await ws.accept()
        s = sessions.get(sid)
        if s is None:
            await ws.close(code=4404)
            return
        cursor = 0
        try:
            while True:
                with s.lock:
                    pending = s.events[cursor:]
                for event in pending:
                    await ws.send_json(event)
                cursor += len(pending)
                await asyncio.sleep(0.01)
        except WebSocketDisconnect:
            return

    return app


def serve(host: str, port: int, **app_kwargs):
    """Run the session service under uvicorn (blocking)."""
    import uvicorn

    uvicorn.run(create_app(**app_kwargs), host=host, port=port,
                log_level="warning")
