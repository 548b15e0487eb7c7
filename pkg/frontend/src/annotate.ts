// Pointer gestures -> prompt draft edits. Left click adds a positive point,
// modifier-click (shift/ctrl/right button) a negative one, dragging beyond a
// small threshold draws a box. Everything operates in frame pixel
// coordinates; out-of-frame input is rejected.

import { BoxPrompt, PointPrompt } from "./schema.js";

export interface FrameInput {
  x: number;
  y: number;
  negative: boolean;
}

export interface Draft {
  points: PointPrompt[];
  boxes: BoxPrompt[];
}

export type DraftEdit =
  | { kind: "point"; point: PointPrompt }
  | { kind: "box"; box: BoxPrompt };

export const DRAG_THRESHOLD_PX = 3;

export function emptyDraft(): Draft {
  return { points: [], boxes: [] };
}

export function inFrame(x: number, y: number, width: number, height: number): boolean {
  return x >= 0 && y >= 0 && x < width && y < height;
}

export class GestureTracker {
  private downAt: { x: number; y: number; negative: boolean } | null = null;

  constructor(
    private readonly width: number,
    private readonly height: number,
  ) {}

  pointerDown(input: FrameInput): void {
    if (!inFrame(input.x, input.y, this.width, this.height)) {
      this.downAt = null;
      return;
    }
    this.downAt = { ...input };
  }

  /** Returns the edit produced by releasing the pointer, if any. */
  pointerUp(input: FrameInput, objectId: number): DraftEdit | null {
    const start = this.downAt;
    this.downAt = null;
    if (!start) return null;
    const dx = input.x - start.x;
    const dy = input.y - start.y;
    if (Math.hypot(dx, dy) >= DRAG_THRESHOLD_PX) {
      const x0 = Math.max(0, Math.min(start.x, input.x));
      const y0 = Math.max(0, Math.min(start.y, input.y));
      const x1 = Math.min(this.width, Math.max(start.x, input.x));
      const y1 = Math.min(this.height, Math.max(start.y, input.y));
      if (x0 >= x1 || y0 >= y1) return null;
      return {
        kind: "box",
        box: { object_id: objectId, x_min: x0, y_min: y0, x_max: x1, y_max: y1 },
      };
    }
    return {
      kind: "point",
      point: {
        x: start.x,
        y: start.y,
        polarity: start.negative ? "negative" : "positive",
        object_id: objectId,
      },
    };
  }
}

/** Apply an edit; a new box replaces the object's previous box (the API
 * accepts at most one box per object). */
export function applyEdit(draft: Draft, edit: DraftEdit): Draft {
  if (edit.kind === "point") {
    return { points: [...draft.points, edit.point], boxes: draft.boxes };
  }
  return {
    points: draft.points,
    boxes: [
      ...draft.boxes.filter((b) => b.object_id !== edit.box.object_id),
      edit.box,
    ],
  };
}

/** Remove the most recent prompt (points and boxes share one history). */
export function undoLast(draft: Draft, history: DraftEdit[]): {
  draft: Draft;
  history: DraftEdit[];
} {
  const last = history[history.length - 1];
  if (!last) return { draft, history };
  const rest = history.slice(0, -1);
  if (last.kind === "point") {
    const points = [...draft.points];
    points.pop();
    return { draft: { points, boxes: draft.boxes }, history: rest };
  }
  // restore the object's previous box if one was replaced
  const previous = rest
    .filter(
      (e): e is Extract<DraftEdit, { kind: "box" }> =>
        e.kind === "box" && e.box.object_id === last.box.object_id,
    )
    .pop();
  const boxes = draft.boxes.filter(
    (b) => b.object_id !== last.box.object_id,
  );
  if (previous) boxes.push(previous.box);
  return { draft: { points: draft.points, boxes }, history: rest };
}
