/** Wire schema of the teleoperation channel, validated at the boundary.
 *
 * Mirrors the service's frame models field for field; anything that
 * fails validation is surfaced as a protocol error, never rendered.
 */

import { z } from "zod";

const vec = z.array(z.number());
const point = z.tuple([z.number(), z.number()]);

export const MarginsSchema = z.object({
  x: vec,
  u: vec,
  min: z.number(),
});

export const TelemetryFrameSchema = z.object({
  type: z.literal("frame"),
  k: z.number().int().nonnegative(),
  t_wall: z.number(),
  x: vec,
  u_ext: vec,
  u_applied: vec,
  used_fallback: z.boolean(),
  V: z.number().nullable(),
  a: z.number(),
  M: z.number().int().positive(),
  s2_boundary: z.array(point),
  margins: MarginsSchema,
});

export const ConfigFrameSchema = z.object({
  type: z.literal("config"),
  case: z.string(),
  X_lower: vec,
  X_upper: vec,
  U_lower: vec,
  U_upper: vec,
  Ts: z.number().nullable(),
  a_range: z.tuple([z.number(), z.number()]),
});

export const ErrorFrameSchema = z.object({
  type: z.literal("error"),
  message: z.string(),
});

export const ServerMessageSchema = z.discriminatedUnion("type", [
  TelemetryFrameSchema,
  ConfigFrameSchema,
  ErrorFrameSchema,
]);

export type TelemetryFrame = z.infer<typeof TelemetryFrameSchema>;
export type ConfigFrame = z.infer<typeof ConfigFrameSchema>;
export type ErrorFrame = z.infer<typeof ErrorFrameSchema>;
export type ServerMessage = z.infer<typeof ServerMessageSchema>;

export type CmdMessage = { type: "cmd"; u: number[] };
export type SetAMessage = { type: "set_a"; a: number };
export type PauseMessage = { type: "pause" };
export type ResetMessage = { type: "reset"; x: number[] };
export type ClientMessage =
  | CmdMessage
  | SetAMessage
  | PauseMessage
  | ResetMessage;

export type ConnectionStatus = "connecting" | "open" | "closed";
export type InputMode = "keyboard" | "sliders";
