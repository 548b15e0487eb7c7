// DOM wiring: a frame canvas with an overlay layer, pointer gestures for
// prompts, a timeline scrubber, and the round-progress stream.

import { GestureTracker } from "./annotate.js";
import { ApiError, SessionApi } from "./api.js";
import { labelsFromRgba, objectColorCss, overlayRgba } from "./palette.js";
import { ClientSession } from "./session.js";
import { OverlayCache, timelineMarks } from "./timeline.js";

const api = new SessionApi("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function decodeMask(
  url: string,
  width: number,
  height: number,
): Promise<Uint8Array> {
  const resp = await fetch(url);
  if (!resp.ok) throw new ApiError(resp.status, "mask fetch failed");
  const bitmap = await createImageBitmap(await resp.blob());
  const scratch = document.createElement("canvas");
  scratch.width = width;
  scratch.height = height;
  const ctx = scratch.getContext("2d", { willReadFrequently: true })!;
  ctx.drawImage(bitmap, 0, 0);
  const rgba = ctx.getImageData(0, 0, width, height).data;
  return labelsFromRgba(rgba, width, height);
}

async function boot(): Promise<void> {
  const sceneSelect = el<HTMLSelectElement>("scene");
  for (const name of await api.listScenes()) {
    const opt = document.createElement("option");
    opt.value = opt.textContent = name;
    sceneSelect.appendChild(opt);
  }
  el<HTMLButtonElement>("open").onclick = () =>
    openSession(sceneSelect.value).catch((err) => {
      el("status").textContent = String(err);
    });
}

async function openSession(scene: string): Promise<void> {
  const info = await api.createSession({ scene });
  const session = new ClientSession(info);
  const cache = new OverlayCache();

  const frameCanvas = el<HTMLCanvasElement>("frame");
  const overlayCanvas = el<HTMLCanvasElement>("overlay");
  frameCanvas.width = overlayCanvas.width = info.width;
  frameCanvas.height = overlayCanvas.height = info.height;
  const frameCtx = frameCanvas.getContext("2d")!;
  const overlayCtx = overlayCanvas.getContext("2d")!;
  const scrub = el<HTMLInputElement>("scrub");
  scrub.max = String(info.num_frames - 1);
  const status = el("status");
  const badge = el("badge");
  const chip = el("suggestion");

  const objects = el("objects");
  objects.replaceChildren();
  for (const oid of info.object_ids) {
    const button = document.createElement("button");
    button.textContent = `object ${oid}`;
    button.style.borderColor = objectColorCss(oid);
    button.onclick = () => {
      session.selectObject(oid);
      render();
    };
    objects.appendChild(button);
  }

  const gesture = new GestureTracker(info.width, info.height);
  overlayCanvas.onpointerdown = (ev) => {
    const p = toFrame(ev, overlayCanvas, info.width, info.height);
    gesture.pointerDown({ ...p, negative: ev.shiftKey || ev.button === 2 });
  };
  overlayCanvas.onpointerup = (ev) => {
    const p = toFrame(ev, overlayCanvas, info.width, info.height);
    const edit = gesture.pointerUp(
      { ...p, negative: ev.shiftKey || ev.button === 2 },
      session.activeObject,
    );
    if (edit && session.addEdit(edit)) render();
  };
  overlayCanvas.oncontextmenu = (ev) => ev.preventDefault();
  el<HTMLButtonElement>("undo").onclick = () => {
    session.undo();
    render();
  };

  el<HTMLButtonElement>("submit").onclick = async () => {
    let payload;
    try {
      payload = session.buildPayload();
    } catch (err) {
      status.textContent = String(err);
      return;
    }
    session.beginSubmit();
    render();
    const stop = api.watchProgress(info.session_id, {
      onEvent: (event) => {
        if (event.type === "frame") {
          status.textContent = `round ${session.round + 1}: frame ${event.frame_index}`;
        }
      },
    });
    try {
      const result = await api.submitRound(info.session_id, payload);
      const scores = await api.scores(info.session_id);
      session.completeSubmit(result, scores);
      cache.bump();
    } catch (err) {
      session.failSubmit(
        err instanceof ApiError ? err.message : String(err),
      );
    } finally {
      stop();
      render();
      void showFrame();
    }
  };

  scrub.oninput = () => {
    session.selectFrame(Number(scrub.value));
    render();
    void showFrame();
  };

  async function showFrame(): Promise<void> {
    const t = session.selectedFrame;
    const img = new Image();
    img.src = api.frameImageUrl(info.session_id, t);
    await img.decode();
    frameCtx.drawImage(img, 0, 0);
    let labels = cache.get(t);
    if (!labels) {
      labels = await decodeMask(
        api.maskUrl(info.session_id, t),
        info.width,
        info.height,
      );
      cache.put(t, labels);
    }
    const rgba = overlayRgba(labels, info.width, info.height);
    const image = overlayCtx.createImageData(info.width, info.height);
    image.data.set(rgba);
    overlayCtx.putImageData(image, 0, 0);
    drawDraft();
  }

  function drawDraft(): void {
    for (const p of session.draft.points) {
      overlayCtx.strokeStyle = objectColorCss(p.object_id);
      overlayCtx.beginPath();
      if (p.polarity === "positive") {
        overlayCtx.arc(p.x, p.y, 3, 0, 2 * Math.PI);
      } else {
        overlayCtx.moveTo(p.x - 3, p.y - 3);
        overlayCtx.lineTo(p.x + 3, p.y + 3);
        overlayCtx.moveTo(p.x + 3, p.y - 3);
        overlayCtx.lineTo(p.x - 3, p.y + 3);
      }
      overlayCtx.stroke();
    }
    for (const b of session.draft.boxes) {
      overlayCtx.strokeStyle = objectColorCss(b.object_id);
      overlayCtx.strokeRect(b.x_min, b.y_min, b.x_max - b.x_min, b.y_max - b.y_min);
    }
  }

  function render(): void {
    const marks = timelineMarks(
      info.num_frames,
      session.interacted,
      session.suggestion,
      (t) => session.badge(t),
    );
    const mark = marks[session.selectedFrame];
    badge.textContent = mark?.badge != null ? mark.badge.toFixed(3) : "-";
    badge.classList.toggle("interacted", Boolean(mark?.interacted));
    chip.textContent =
      session.suggestion != null ? `suggested frame: ${session.suggestion}` : "";
    el("round").textContent =
      `round ${session.round}` +
      (session.meanDisplayedScore != null
        ? ` | mean ${session.scoreBasis}: ${session.meanDisplayedScore.toFixed(3)}`
        : "");
    if (session.lastError) status.textContent = `error: ${session.lastError}`;
    el<HTMLButtonElement>("submit").disabled =
      session.submitting || session.draftEmpty || session.roundsLeft === 0;
  }

  render();
  void showFrame();
}

function toFrame(
  ev: PointerEvent,
  canvas: HTMLCanvasElement,
  width: number,
  height: number,
): { x: number; y: number } {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) / rect.width) * width,
    y: ((ev.clientY - rect.top) / rect.height) * height,
  };
}

boot().catch((err) => {
  document.body.textContent = `failed to start: ${err}`;
});
