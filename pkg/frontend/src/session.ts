// Client-side session state. All heavy lifting happens server-side: masks
// and scores are fetched, never computed here; this store only tracks the
// draft, round history and which cached overlays are still valid.

import { applyEdit, Draft, DraftEdit, emptyDraft, undoLast } from "./annotate.js";
import { RoundPayload, RoundResult, Scores, SessionInfo } from "./schema.js";

export interface RoundScore {
  round: number;
  meanJf: number | null;
}

export class ClientSession {
  round = 0;
  selectedFrame = 0;
  activeObject: number;
  draft: Draft = emptyDraft();
  history: DraftEdit[] = [];
  interacted = new Set<number>();
  suggestion: number | null = null;
  scoreHistory: RoundScore[] = [];
  frameScores: number[] | null = null;
  scoreBasis: "reference-jf" | "confidence" | null = null;
  submitting = false;
  lastError: string | null = null;

  constructor(readonly info: SessionInfo) {
    this.activeObject = info.object_ids[0] ?? 1;
  }

  get numFrames(): number {
    return this.info.num_frames;
  }

  get roundsLeft(): number {
    const budget = this.info.num_rounds ?? Infinity;
    return Math.max(0, budget - this.round);
  }

  selectFrame(frame: number): void {
    if (frame >= 0 && frame < this.numFrames) this.selectedFrame = frame;
  }

  selectObject(objectId: number): void {
    if (this.info.object_ids.includes(objectId)) this.activeObject = objectId;
  }

  addEdit(edit: DraftEdit): boolean {
    if (this.submitting) return false;
    this.draft = applyEdit(this.draft, edit);
    this.history = [...this.history, edit];
    return true;
  }

  undo(): void {
    if (this.submitting) return;
    const { draft, history } = undoLast(this.draft, this.history);
    this.draft = draft;
    this.history = history;
  }

  get draftEmpty(): boolean {
    return this.draft.points.length === 0 && this.draft.boxes.length === 0;
  }

  /** Validated payload for the current draft on the selected frame. */
  buildPayload(): RoundPayload {
    if (this.draftEmpty) throw new Error("draft is empty");
    if (this.interacted.has(this.selectedFrame)) {
      throw new Error(`frame ${this.selectedFrame} was already annotated`);
    }
    return RoundPayload.parse({
      frame_index: this.selectedFrame,
      points: this.draft.points,
      boxes: this.draft.boxes,
    });
  }

  beginSubmit(): void {
    this.submitting = true;
    this.lastError = null;
  }

  /** A round landed: clear the draft, advance history, mark overlays stale. */
  completeSubmit(result: RoundResult, scores: Scores | null): void {
    this.submitting = false;
    this.round = result.round;
    this.interacted = new Set(result.interacted);
    this.suggestion = result.suggestion;
    this.draft = emptyDraft();
    this.history = [];
    this.scoreHistory = [
      ...this.scoreHistory,
      { round: result.round, meanJf: result.mean_jf },
    ];
    if (scores) this.applyScores(scores);
  }

  /** Submission failed: surface the error, keep the draft intact. */
  failSubmit(message: string): void {
    this.submitting = false;
    this.lastError = message;
  }

  applyScores(scores: Scores): void {
    this.scoreBasis = scores.basis;
    this.frameScores =
      scores.basis === "reference-jf"
        ? (scores.jf ?? null)
        : (scores.confidence ?? null);
  }

  /** Score badge value for a frame, when the latest round produced scores. */
  badge(frame: number): number | null {
    if (!this.frameScores || frame >= this.frameScores.length) return null;
    return this.frameScores[frame] ?? null;
  }

  get meanDisplayedScore(): number | null {
    if (!this.frameScores) return null;
    const s = this.frameScores;
    return s.reduce((a, b) => a + b, 0) / s.length;
  }
}
