/** Pure layout-editing operations with bounds validation and undo/redo.
 *
 * Every mutating call returns an EditResult; rejected edits leave the
 * layout untouched. Undo/redo restore exact snapshots (deep JSON clones),
 * so a round trip reproduces the prior state field for field.
 */

import type { Building, EditorLayout, EditResult } from "./types.js";

export function emptyLayout(side = 1000): EditorLayout {
  return { side, buildings: [] };
}

export function layoutHash(layout: EditorLayout): string {
  // deterministic content hash; JSON order is construction order
  const s = JSON.stringify(layout);
  let h = 0x811c9dc5;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h.toString(16).padStart(8, "0");
}

function validate(layout: EditorLayout, b: Building): EditResult {
  if (!(b.w > 0) || !(b.d > 0)) return { ok: false, reason: "footprint must have positive extent" };
  if (!(b.h > 0)) return { ok: false, reason: "height must be > 0" };
  if (b.x < 0 || b.y < 0 || b.x + b.w > layout.side || b.y + b.d > layout.side) {
    return { ok: false, reason: "building must stay inside the tile" };
  }
  return { ok: true };
}

function clone(layout: EditorLayout): EditorLayout {
  return JSON.parse(JSON.stringify(layout));
}

export class LayoutEditor {
  private layout: EditorLayout;
  private undoStack: string[] = [];
  private redoStack: string[] = [];
  private nextId = 1;

  constructor(side = 1000) {
    this.layout = emptyLayout(side);
  }

  current(): EditorLayout {
    return clone(this.layout);
  }

  hash(): string {
    return layoutHash(this.layout);
  }

  get canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  get canRedo(): boolean {
    return this.redoStack.length > 0;
  }

  private snapshot(): void {
    this.undoStack.push(JSON.stringify(this.layout));
    this.redoStack.length = 0;
  }

  add(x: number, y: number, w: number, d: number, h: number): EditResult & { id?: number } {
    const b: Building = { id: this.nextId, x, y, w, d, h };
    const check = validate(this.layout, b);
    if (!check.ok) return check;
    this.snapshot();
    this.layout.buildings.push(b);
    this.nextId += 1;
    return { ok: true, id: b.id };
  }

  private mutate(id: number, patch: Partial<Building>): EditResult {
    const idx = this.layout.buildings.findIndex((b) => b.id === id);
    if (idx < 0) return { ok: false, reason: `no building ${id}` };
    const candidate = { ...this.layout.buildings[idx], ...patch };
    const check = validate(this.layout, candidate);
    if (!check.ok) return check;
    this.snapshot();
    this.layout.buildings[idx] = candidate;
    return { ok: true };
  }

  move(id: number, x: number, y: number): EditResult {
    return this.mutate(id, { x, y });
  }

  resize(id: number, w: number, d: number): EditResult {
    return this.mutate(id, { w, d });
  }

  setHeight(id: number, h: number): EditResult {
    return this.mutate(id, { h });
  }

  remove(id: number): EditResult {
    const idx = this.layout.buildings.findIndex((b) => b.id === id);
    if (idx < 0) return { ok: false, reason: `no building ${id}` };
    this.snapshot();
    this.layout.buildings.splice(idx, 1);
    return { ok: true };
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (prev === undefined) return false;
    this.redoStack.push(JSON.stringify(this.layout));
    this.layout = JSON.parse(prev);
    return true;
  }

  redo(): boolean {
    const next = this.redoStack.pop();
    if (next === undefined) return false;
    this.undoStack.push(JSON.stringify(this.layout));
    this.layout = JSON.parse(next);
    return true;
  }
}
