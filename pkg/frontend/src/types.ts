/** Shared types for the layout editor and the prediction service client. */

export interface Building {
  id: number;
  /** south-west corner, meters from the tile's south-west origin */
  x: number;
  y: number;
  /** footprint extents in meters */
  w: number;
  d: number;
  /** roof height in meters, > 0 */
  h: number;
}

export interface EditorLayout {
  side: number; // tile side in meters (1000)
  buildings: Building[];
}

export type WindDirection = "N" | "E" | "S" | "W";

export type OverlayMode = "heights" | "magnitude" | "mask" | "discrepancy";

export interface PredictResponse {
  u: number[][];
  v: number[][];
  magnitude: number[][];
  mask?: boolean[][];
  comfort_fraction: number;
  threshold: number;
  direction: WindDirection;
  latency_ms: number;
  model?: unknown;
}

export interface OverlayData {
  direction: WindDirection;
  layoutHash: string;
  response: PredictResponse;
  receivedAt: number;
}

export interface EditResult {
  ok: boolean;
  reason?: string;
}

export const DIRECTIONS: readonly WindDirection[] = ["N", "E", "S", "W"];
