/** Client-side rasterization, cell-for-cell identical to the backend rule.
 *
 * Row 0 is the north edge; the cell (r, c) center sits at
 * x = (c + 0.5) * cell, y = side - (r + 0.5) * cell. A cell takes the
 * height of the rectangle strictly containing its center; overlapping
 * rectangles resolve to the maximum height. Values are rounded through
 * float32 to match the wire format of the reference grids.
 */

import type { EditorLayout } from "./types.js";

export function rasterizeLayout(layout: EditorLayout, resolution: number): Float32Array {
  const cell = layout.side / resolution;
  const grid = new Float32Array(resolution * resolution);
  for (const b of layout.buildings) {
    const h = Math.fround(b.h);
    const x0 = b.x;
    const x1 = b.x + b.w;
    const y0 = b.y;
    const y1 = b.y + b.d;
    // candidate cell ranges; exact test per cell keeps the strict rule
    const cLo = Math.max(0, Math.floor(x0 / cell - 0.5));
    const cHi = Math.min(resolution - 1, Math.ceil(x1 / cell));
    const rLo = Math.max(0, Math.floor((layout.side - y1) / cell - 0.5));
    const rHi = Math.min(resolution - 1, Math.ceil((layout.side - y0) / cell));
    for (let r = rLo; r <= rHi; r++) {
      const y = layout.side - (r + 0.5) * cell;
      if (!(y > y0 && y < y1)) continue;
      for (let c = cLo; c <= cHi; c++) {
        const x = (c + 0.5) * cell;
        if (x > x0 && x < x1) {
          const i = r * resolution + c;
          if (h > grid[i]) grid[i] = h;
        }
      }
    }
  }
  return grid;
}

export function gridToNested(grid: Float32Array, resolution: number): number[][] {
  const out: number[][] = [];
  for (let r = 0; r < resolution; r++) {
    const row: number[] = [];
    for (let c = 0; c < resolution; c++) row.push(grid[r * resolution + c]);
    out.push(row);
  }
  return out;
}

/** Threshold exceedance mask over non-building cells (pedestrian cut 1.2 m). */
export function maskFromMagnitude(
  magnitude: number[][],
  heights: Float32Array,
  resolution: number,
  threshold: number,
): boolean[][] {
  const out: boolean[][] = [];
  for (let r = 0; r < resolution; r++) {
    const row: boolean[] = [];
    for (let c = 0; c < resolution; c++) {
      const open = heights[r * resolution + c] < 1.2;
      row.push(open && magnitude[r][c] >= threshold);
    }
    out.push(row);
  }
  return out;
}
