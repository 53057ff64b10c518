/** Canvas rendering: height map, magnitude heatmap, comfort mask, arrow. */

import type { EditorLayout, OverlayData, OverlayMode, WindDirection } from "./types.js";

const VIRIDIS: [number, number, number][] = [
  [68, 1, 84], [71, 44, 122], [59, 81, 139], [44, 113, 142], [33, 144, 141],
  [39, 173, 129], [92, 200, 99], [170, 220, 50], [253, 231, 37],
];

function heatColor(t: number): string {
  const x = Math.max(0, Math.min(0.9999, t)) * (VIRIDIS.length - 1);
  const i = Math.floor(x);
  const f = x - i;
  const a = VIRIDIS[i];
  const b = VIRIDIS[i + 1];
  const c = [0, 1, 2].map((k) => Math.round(a[k] + f * (b[k] - a[k])));
  return `rgb(${c[0]},${c[1]},${c[2]})`;
}

export function drawGridOverlay(
  ctx: CanvasRenderingContext2D,
  size: number,
  overlay: OverlayData | null,
  mode: OverlayMode,
  heights: Float32Array,
  resolution: number,
): void {
  const cellPx = size / resolution;
  if (mode === "heights" || overlay === null) {
    let hMax = 1;
    for (const v of heights) hMax = Math.max(hMax, v);
    for (let r = 0; r < resolution; r++) {
      for (let c = 0; c < resolution; c++) {
        const v = heights[r * resolution + c];
        ctx.fillStyle = v > 0 ? heatColor(v / hMax) : "#15162b";
        ctx.fillRect(c * cellPx, r * cellPx, cellPx + 0.5, cellPx + 0.5);
      }
    }
    return;
  }
  const mag = overlay.response.magnitude;
  const mask = overlay.response.mask;
  let vMax = 0.1;
  for (const row of mag) for (const v of row) vMax = Math.max(vMax, v);
  for (let r = 0; r < resolution; r++) {
    for (let c = 0; c < resolution; c++) {
      if (mode === "mask" && mask) {
        ctx.fillStyle = mask[r][c] ? "#ffd500" : "#202040";
      } else {
        ctx.fillStyle = heatColor(mag[r][c] / vMax);
      }
      ctx.fillRect(c * cellPx, r * cellPx, cellPx + 0.5, cellPx + 0.5);
    }
  }
  // building outlines stay visible over the field
  for (let r = 0; r < resolution; r++) {
    for (let c = 0; c < resolution; c++) {
      if (heights[r * resolution + c] > 0) {
        ctx.fillStyle = "rgba(255,255,255,0.35)";
        ctx.fillRect(c * cellPx, r * cellPx, cellPx + 0.5, cellPx + 0.5);
      }
    }
  }
}

export function drawBuildings(
  ctx: CanvasRenderingContext2D,
  size: number,
  layout: EditorLayout,
  selectedId: number | null,
): void {
  const scale = size / layout.side;
  for (const b of layout.buildings) {
    const px = b.x * scale;
    const py = size - (b.y + b.d) * scale; // canvas y grows downward
    ctx.fillStyle = b.id === selectedId ? "rgba(255,165,0,0.75)" : "rgba(200,200,215,0.8)";
    ctx.strokeStyle = "#0a0a14";
    ctx.fillRect(px, py, b.w * scale, b.d * scale);
    ctx.strokeRect(px, py, b.w * scale, b.d * scale);
  }
}

export function drawInflowArrow(
  ctx: CanvasRenderingContext2D,
  size: number,
  direction: WindDirection,
): void {
  const mid = size / 2;
  const len = size * 0.16;
  const vec: Record<WindDirection, [number, number]> = {
    N: [0, 1], S: [0, -1], E: [-1, 0], W: [1, 0],
  };
  const [dx, dy] = vec[direction];
  const x0 = mid - (dx * len) / 2;
  const y0 = mid - (dy * len) / 2;
  const x1 = mid + (dx * len) / 2;
  const y1 = mid + (dy * len) / 2;
  ctx.strokeStyle = "red";
  ctx.fillStyle = "red";
  ctx.lineWidth = 4;
  ctx.beginPath();
  ctx.moveTo(x0, y0);
  ctx.lineTo(x1, y1);
  ctx.stroke();
  const ang = Math.atan2(y1 - y0, x1 - x0);
  ctx.beginPath();
  ctx.moveTo(x1, y1);
  ctx.lineTo(x1 - 12 * Math.cos(ang - 0.5), y1 - 12 * Math.sin(ang - 0.5));
  ctx.lineTo(x1 - 12 * Math.cos(ang + 0.5), y1 - 12 * Math.sin(ang + 0.5));
  ctx.closePath();
  ctx.fill();
}
