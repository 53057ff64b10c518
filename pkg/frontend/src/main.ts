/** Browser entry point: wires the editor store to the DOM. */

import { ApiClient } from "./api.js";
import { rasterizeLayout } from "./raster.js";
import { drawBuildings, drawGridOverlay, drawInflowArrow } from "./render.js";
import { EditorStore } from "./state.js";
import { directionSweep } from "./sweep.js";
import { DIRECTIONS, type OverlayMode, type WindDirection } from "./types.js";

const SERVICE = (window as any).UF_SERVICE_URL ?? "http://127.0.0.1:8777";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot() {
  const api = new ApiClient(SERVICE);
  const status = el<HTMLSpanElement>("status");
  let resolution = 64;
  try {
    const info = await api.health();
    resolution = info.resolution;
    status.textContent = `service ok, ${resolution}x${resolution}`;
  } catch (err) {
    status.textContent = `service unreachable: ${err}`;
  }

  const store = new EditorStore(api, resolution);
  const canvas = el<HTMLCanvasElement>("view");
  const ctx = canvas.getContext("2d")!;
  const size = canvas.width;
  let selected: number | null = null;
  let dragStart: { x: number; y: number } | null = null;

  const staleBadge = el<HTMLSpanElement>("stale");
  const fractionLabel = el<HTMLSpanElement>("fraction");
  const latencyLabel = el<HTMLSpanElement>("latency");

  function redraw() {
    const layout = store.editor.current();
    const heights = rasterizeLayout(layout, resolution);
    drawGridOverlay(ctx, size, store.view.overlay, store.view.overlayMode, heights, resolution);
    drawBuildings(ctx, size, layout, selected);
    drawInflowArrow(ctx, size, store.view.direction);
    staleBadge.textContent = store.view.overlayStale ? "overlay: stale" : "overlay: current";
    staleBadge.className = store.view.overlayStale ? "stale" : "fresh";
    const overlay = store.view.overlay;
    fractionLabel.textContent = overlay
      ? `${(100 * overlay.response.comfort_fraction).toFixed(1)}% >= ${overlay.response.threshold} m/s`
      : "-";
    latencyLabel.textContent =
      store.view.lastLatencyMs === null ? "-" : `${store.view.lastLatencyMs.toFixed(1)} ms`;
  }

  function toWorld(ev: MouseEvent): { x: number; y: number } {
    const rect = canvas.getBoundingClientRect();
    const px = ((ev.clientX - rect.left) / rect.width) * size;
    const py = ((ev.clientY - rect.top) / rect.height) * size;
    const scale = store.editor.current().side / size;
    return { x: px * scale, y: (size - py) * scale };
  }

  canvas.addEventListener("mousedown", (ev) => {
    const p = toWorld(ev);
    const layout = store.editor.current();
    selected =
      layout.buildings.find(
        (b) => p.x >= b.x && p.x <= b.x + b.w && p.y >= b.y && p.y <= b.y + b.d,
      )?.id ?? null;
    dragStart = selected === null ? p : null;
    redraw();
  });

  canvas.addEventListener("mouseup", (ev) => {
    if (dragStart) {
      const p = toWorld(ev);
      const x = Math.min(dragStart.x, p.x);
      const y = Math.min(dragStart.y, p.y);
      const w = Math.abs(p.x - dragStart.x);
      const d = Math.abs(p.y - dragStart.y);
      if (w > 5 && d > 5) {
        const height = Number(el<HTMLInputElement>("height").value) || 30;
        const result = store.addBuilding(x, y, w, d, height);
        if (!result.ok) status.textContent = result.reason ?? "rejected";
      }
      dragStart = null;
      redraw();
    }
  });

  el<HTMLButtonElement>("undo").onclick = () => (store.undo(), redraw());
  el<HTMLButtonElement>("redo").onclick = () => (store.redo(), redraw());
  el<HTMLButtonElement>("delete").onclick = () => {
    if (selected !== null) store.deleteBuilding(selected);
    selected = null;
    redraw();
  };
  el<HTMLButtonElement>("predict").onclick = async () => {
    status.textContent = "predicting...";
    const t0 = performance.now();
    const res = await store.requestPrediction();
    status.textContent = res ? `done in ${(performance.now() - t0).toFixed(0)} ms` : "discarded (layout changed)";
    redraw();
  };
  el<HTMLButtonElement>("sweep").onclick = async () => {
    status.textContent = "sweeping 4 directions...";
    const result = await directionSweep(
      api, store.editor.current(), store.view.threshold, resolution,
    );
    const parts = DIRECTIONS.map((d) => {
      const f = result.fractions[d];
      return `${d}: ${f === undefined ? "err" : (100 * f).toFixed(1) + "%"}`;
    });
    el<HTMLSpanElement>("sweep-out").textContent = parts.join("  ");
    status.textContent = "sweep done";
    redraw();
  };

  for (const d of DIRECTIONS) {
    el<HTMLButtonElement>(`dir-${d}`).onclick = () => {
      store.setDirection(d as WindDirection);
      redraw();
    };
  }
  el<HTMLSelectElement>("mode").onchange = (ev) => {
    store.view.overlayMode = (ev.target as HTMLSelectElement).value as OverlayMode;
    redraw();
  };
  el<HTMLInputElement>("threshold").onchange = (ev) => {
    store.setThreshold(Number((ev.target as HTMLInputElement).value));
    redraw();
  };

  redraw();
}

boot();
