// Frame timeline: O(1) scrubbing over cached mask overlays.
//
// Overlays are keyed by (frame, round); after a round completes the cache
// generation is bumped, so stale entries are ignored and frames re-fetch
// lazily. Frames outside the last round's update range simply come back
// unchanged from the server (the engine froze them), which is how the
// "older overlay on frozen frames" behavior falls out.

export interface CachedOverlay {
  labels: Uint8Array;
  round: number;
}

export class OverlayCache {
  private generation = 0;
  private entries = new Map<number, CachedOverlay>();

  /** Invalidate everything (a new round landed). */
  bump(): void {
    this.generation += 1;
    this.entries.clear();
  }

  get round(): number {
    return this.generation;
  }

  get(frame: number): Uint8Array | null {
    const hit = this.entries.get(frame);
    return hit && hit.round === this.generation ? hit.labels : null;
  }

  put(frame: number, labels: Uint8Array): void {
    this.entries.set(frame, { labels, round: this.generation });
  }

  get size(): number {
    return this.entries.size;
  }
}

export interface TimelineMark {
  frame: number;
  interacted: boolean;
  suggested: boolean;
  badge: number | null;
}

export function timelineMarks(
  numFrames: number,
  interacted: Set<number>,
  suggestion: number | null,
  badge: (frame: number) => number | null,
): TimelineMark[] {
  const marks: TimelineMark[] = [];
  for (let t = 0; t < numFrames; t++) {
    marks.push({
      frame: t,
      interacted: interacted.has(t),
      suggested: suggestion === t,
      badge: badge(t),
    });
  }
  return marks;
}
