import { describe, expect, it } from "vitest";

import { LayoutEditor } from "../src/layout.js";
import type { Building, EditorLayout } from "../src/types.js";

describe("layout editing", () => {
  it("add then undo restores the prior state exactly", () => {
    const ed = new LayoutEditor();
    ed.add(100, 100, 50, 60, 25);
    const before = JSON.stringify(ed.current());
    const result = ed.add(300, 300, 40, 40, 18);
    expect(result.ok).toBe(true);
    ed.undo();
    expect(JSON.stringify(ed.current())).toBe(before);
  });

  it("rejects out-of-bounds placement and leaves the layout unchanged", () => {
    const ed = new LayoutEditor(1000);
    const before = JSON.stringify(ed.current());
    expect(ed.add(980, 10, 50, 20, 10).ok).toBe(false); // crosses east edge
    expect(ed.add(-5, 10, 50, 20, 10).ok).toBe(false);
    expect(ed.add(10, 10, 50, 20, 0).ok).toBe(false); // zero height
    expect(JSON.stringify(ed.current())).toBe(before);
  });

  it("rejects resize beyond the tile edge, layout unchanged", () => {
    const ed = new LayoutEditor(1000);
    const { id } = ed.add(900, 900, 50, 50, 30);
    const before = JSON.stringify(ed.current());
    expect(ed.resize(id!, 200, 50).ok).toBe(false);
    expect(JSON.stringify(ed.current())).toBe(before);
  });

  it("undo/redo round-trip restores the final state exactly", () => {
    const ed = new LayoutEditor();
    const { id } = ed.add(100, 100, 80, 60, 20);
    ed.move(id!, 200, 250);
    ed.setHeight(id!, 44);
    ed.add(500, 500, 60, 60, 15);
    const final = JSON.stringify(ed.current());
    while (ed.canUndo) ed.undo();
    expect(ed.current().buildings.length).toBe(0);
    while (ed.canRedo) ed.redo();
    expect(JSON.stringify(ed.current())).toBe(final);
  });

  it("matches an action-replay oracle over 20 random edit scripts", () => {
    // independent reducer: same validation rule, direct array manipulation
    function replay(script: any[]): EditorLayout {
      const side = 1000;
      let buildings: Building[] = [];
      let nextId = 1;
      const inBounds = (b: Building) =>
        b.w > 0 && b.d > 0 && b.h > 0 && b.x >= 0 && b.y >= 0 &&
        b.x + b.w <= side && b.y + b.d <= side;
      const history: Building[][] = [];
      const future: Building[][] = [];
      const snap = () => {
        history.push(JSON.parse(JSON.stringify(buildings)));
        future.length = 0;
      };
      for (const op of script) {
        if (op.kind === "add") {
          const b = { id: nextId, x: op.x, y: op.y, w: op.w, d: op.d, h: op.h };
          if (inBounds(b)) {
            snap();
            buildings.push(b);
            nextId += 1;
          }
        } else if (op.kind === "move" || op.kind === "resize" || op.kind === "height") {
          const i = buildings.findIndex((b) => b.id === op.id);
          if (i >= 0) {
            const cand = { ...buildings[i], ...op.patch };
            if (inBounds(cand)) {
              snap();
              buildings[i] = cand;
            }
          }
        } else if (op.kind === "delete") {
          const i = buildings.findIndex((b) => b.id === op.id);
          if (i >= 0) {
            snap();
            buildings.splice(i, 1);
          }
        } else if (op.kind === "undo") {
          const prev = history.pop();
          if (prev !== undefined) {
            future.push(buildings);
            buildings = prev;
          }
        } else if (op.kind === "redo") {
          const next = future.pop();
          if (next !== undefined) {
            history.push(buildings);
            buildings = next;
          }
        }
      }
      return { side, buildings };
    }

    let seed = 12345;
    const rand = () => {
      // deterministic LCG so the scripts are reproducible
      seed = (seed * 1103515245 + 12345) % 2147483648;
      return seed / 2147483648;
    };

    for (let script = 0; script < 20; script++) {
      const ops: any[] = [];
      const ed = new LayoutEditor();
      let maxId = 0;
      for (let i = 0; i < 30; i++) {
        const roll = rand();
        if (roll < 0.4 || maxId === 0) {
          const op = {
            kind: "add",
            x: rand() * 1100 - 50, // sometimes out of bounds on purpose
            y: rand() * 1000,
            w: rand() * 150 + 5,
            d: rand() * 150 + 5,
            h: rand() * 50 + 1,
          };
          ops.push(op);
          const res = ed.add(op.x, op.y, op.w, op.d, op.h);
          if (res.ok) maxId = res.id!;
        } else if (roll < 0.55) {
          const id = Math.ceil(rand() * maxId);
          const patch = { x: rand() * 900, y: rand() * 900 };
          ops.push({ kind: "move", id, patch });
          ed.move(id, patch.x, patch.y);
        } else if (roll < 0.7) {
          const id = Math.ceil(rand() * maxId);
          const patch = { w: rand() * 200 + 5, d: rand() * 200 + 5 };
          ops.push({ kind: "resize", id, patch });
          ed.resize(id, patch.w, patch.d);
        } else if (roll < 0.8) {
          const id = Math.ceil(rand() * maxId);
          const patch = { h: rand() * 60 + 1 };
          ops.push({ kind: "height", id, patch });
          ed.setHeight(id, patch.h);
        } else if (roll < 0.88) {
          const id = Math.ceil(rand() * maxId);
          ops.push({ kind: "delete", id });
          ed.remove(id);
        } else if (roll < 0.94) {
          ops.push({ kind: "undo" });
          ed.undo();
        } else {
          ops.push({ kind: "redo" });
          ed.redo();
        }
      }
      expect(ed.current()).toEqual(replay(ops));
    }
  });
});
