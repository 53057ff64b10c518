/** Editor store: layout edits, view state, and overlay staleness.
 *
 * Contract: any layout mutation after a response marks the overlay stale
 * until a fresh prediction for the CURRENT layout lands. At most one
 * request is in flight per direction; responses for a layout other than
 * the current one are discarded. Edits never wait on requests.
 */

import { ApiClient } from "./api.js";
import { LayoutEditor } from "./layout.js";
import type {
  EditResult,
  OverlayData,
  OverlayMode,
  PredictResponse,
  WindDirection,
} from "./types.js";

export interface ViewState {
  direction: WindDirection;
  overlayMode: OverlayMode;
  threshold: number;
  overlayStale: boolean;
  overlay: OverlayData | null;
  lastLatencyMs: number | null;
}

export class EditorStore {
  readonly editor: LayoutEditor;
  view: ViewState;
  private inFlight = new Map<WindDirection, Promise<PredictResponse | null>>();

  constructor(
    private api: ApiClient,
    private resolution: number,
    side = 1000,
  ) {
    this.editor = new LayoutEditor(side);
    this.view = {
      direction: "N",
      overlayMode: "magnitude",
      threshold: 1.5,
      overlayStale: true,
      overlay: null,
      lastLatencyMs: null,
    };
  }

  /** Wrap an edit so overlay staleness tracks every successful mutation. */
  private edited(result: EditResult): EditResult {
    if (result.ok) this.view.overlayStale = true;
    return result;
  }

  addBuilding(x: number, y: number, w: number, d: number, h: number) {
    return this.edited(this.editor.add(x, y, w, d, h));
  }

  moveBuilding(id: number, x: number, y: number) {
    return this.edited(this.editor.move(id, x, y));
  }

  resizeBuilding(id: number, w: number, d: number) {
    return this.edited(this.editor.resize(id, w, d));
  }

  setBuildingHeight(id: number, h: number) {
    return this.edited(this.editor.setHeight(id, h));
  }

  deleteBuilding(id: number) {
    return this.edited(this.editor.remove(id));
  }

  undo() {
    if (this.editor.undo()) this.view.overlayStale = true;
  }

  redo() {
    if (this.editor.redo()) this.view.overlayStale = true;
  }

  setThreshold(threshold: number) {
    this.view.threshold = threshold;
    this.view.overlayStale = true;
  }

  setDirection(direction: WindDirection) {
    this.view.direction = direction;
    this.view.overlayStale = true;
  }

  /** Issue a prediction for the current layout; stale responses are dropped. */
  async requestPrediction(
    direction: WindDirection = this.view.direction,
  ): Promise<PredictResponse | null> {
    const existing = this.inFlight.get(direction);
    if (existing) return existing;
    const hash = this.editor.hash();
    const layout = this.editor.current();
    const threshold = this.view.threshold;
    const task = (async () => {
      try {
        const response = await this.api.predict(layout, direction, threshold, this.resolution);
        if (this.editor.hash() !== hash) return null; // layout moved on; discard
        this.view.overlay = {
          direction,
          layoutHash: hash,
          response,
          receivedAt: Date.now(),
        };
        this.view.lastLatencyMs = response.latency_ms;
        if (direction === this.view.direction && threshold === this.view.threshold) {
          this.view.overlayStale = false;
        }
        return response;
      } finally {
        this.inFlight.delete(direction);
      }
    })();
    this.inFlight.set(direction, task);
    return task;
  }

  inFlightCount(): number {
    return this.inFlight.size;
  }
}
