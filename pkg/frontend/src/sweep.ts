/** Four-direction comfort sweep for the 2x2 panel view. */

import { ApiClient } from "./api.js";
import { DIRECTIONS, type EditorLayout, type PredictResponse, type WindDirection } from "./types.js";

export interface SweepPanel {
  direction: WindDirection;
  response: PredictResponse | null;
  error: string | null;
}

export interface SweepResult {
  panels: SweepPanel[];
  fractions: Partial<Record<WindDirection, number>>;
  requestCount: number;
}

export async function directionSweep(
  api: ApiClient,
  layout: EditorLayout,
  threshold: number,
  resolution: number,
): Promise<SweepResult> {
  let requestCount = 0;
  const panels = await Promise.all(
    DIRECTIONS.map(async (direction): Promise<SweepPanel> => {
      requestCount += 1;
      try {
        const response = await api.predict(layout, direction, threshold, resolution);
        return { direction, response, error: null };
      } catch (err) {
        return { direction, response: null, error: String(err) };
      }
    }),
  );
  const fractions: Partial<Record<WindDirection, number>> = {};
  for (const p of panels) {
    if (p.response) fractions[p.direction] = p.response.comfort_fraction;
  }
  return { panels, fractions, requestCount };
}
