// Wire schemas for the session API. Every payload the client sends is
// validated against these before it leaves, so serialization drift between
// the UI and the service fails loudly in tests rather than server-side.

import { z } from "zod";

export const Polarity = z.enum(["positive", "negative"]);
export type Polarity = z.infer<typeof Polarity>;

export const PointPrompt = z.object({
  x: z.number().finite(),
  y: z.number().finite(),
  polarity: Polarity,
  object_id: z.number().int().positive(),
});
export type PointPrompt = z.infer<typeof PointPrompt>;

export const BoxPrompt = z
  .object({
    object_id: z.number().int().positive(),
    x_min: z.number().finite(),
    y_min: z.number().finite(),
    x_max: z.number().finite(),
    y_max: z.number().finite(),
  })
  .refine((b) => b.x_min < b.x_max && b.y_min < b.y_max, {
    message: "box must have positive extent",
  });
export type BoxPrompt = z.infer<typeof BoxPrompt>;

export const RoundPayload = z.object({
  frame_index: z.number().int().nonnegative(),
  points: z.array(PointPrompt),
  boxes: z.array(BoxPrompt),
});
export type RoundPayload = z.infer<typeof RoundPayload>;

export const SessionInfo = z.object({
  session_id: z.string(),
  num_frames: z.number().int().positive(),
  width: z.number().int().positive(),
  height: z.number().int().positive(),
  object_ids: z.array(z.number().int()),
  num_rounds: z.number().int().positive().optional(),
  reference: z.boolean(),
});
export type SessionInfo = z.infer<typeof SessionInfo>;

export const RoundResult = z.object({
  round: z.number().int().positive(),
  frame_index: z.number().int().nonnegative(),
  timestamp: z.number(),
  interacted: z.array(z.number().int()),
  suggestion: z.number().int().nullable(),
  mean_jf: z.number().nullable(),
});
export type RoundResult = z.infer<typeof RoundResult>;

export const Scores = z.object({
  basis: z.enum(["reference-jf", "confidence"]),
  j: z.array(z.number()).optional(),
  f: z.array(z.number()).optional(),
  jf: z.array(z.number()).optional(),
  confidence: z.array(z.number()).optional(),
});
export type Scores = z.infer<typeof Scores>;

export const ProgressEvent = z.discriminatedUnion("type", [
  z.object({
    type: z.literal("round_start"),
    seq: z.number().int(),
    round: z.number().int(),
    frame_index: z.number().int(),
  }),
  z.object({
    type: z.literal("frame"),
    seq: z.number().int(),
    frame_index: z.number().int(),
    object_id: z.number().int(),
    score: z.number(),
  }),
  z.object({
    type: z.literal("round_end"),
    seq: z.number().int(),
    round: z.number().int(),
    suggestion: z.number().int().nullable(),
  }),
  z.object({
    type: z.literal("round_error"),
    seq: z.number().int(),
    round: z.number().int(),
    message: z.string(),
  }),
]);
export type ProgressEvent = z.infer<typeof ProgressEvent>;
