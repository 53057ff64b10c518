/** Typed client for the prediction service. */

import { gridToNested, rasterizeLayout } from "./raster.js";
import type { EditorLayout, PredictResponse, WindDirection } from "./types.js";

export interface ServiceInfo {
  status: string;
  resolution: number;
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  async health(): Promise<ServiceInfo> {
    const res = await this.fetchImpl(`${this.baseUrl}/health`);
    if (!res.ok) throw new Error(`service not ready (${res.status})`);
    return (await res.json()) as ServiceInfo;
  }

  async predict(
    layout: EditorLayout,
    direction: WindDirection,
    threshold: number,
    resolution: number,
  ): Promise<PredictResponse> {
    const grid = rasterizeLayout(layout, resolution);
    const res = await this.fetchImpl(`${this.baseUrl}/predict`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        heights: gridToNested(grid, resolution),
        direction,
        threshold,
        include_mask: true,
      }),
    });
    if (!res.ok) {
      const detail = await res.text();
      throw new Error(`predict failed (${res.status}): ${detail}`);
    }
    return (await res.json()) as PredictResponse;
  }
}
