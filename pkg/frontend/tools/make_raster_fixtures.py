"""Generate client-rasterizer parity fixtures from the primary rasterizer.

Each case is a set of axis-aligned rectangles plus the nonzero cells of the
reference 64x64 height grid (float32 values, stored exactly as float64).
"""

import json
from pathlib import Path

import numpy as np

from urbanflow.geomodel import Footprint, Tile
from urbanflow.raster import rasterize

SIDE = 1000.0
RES = 64

def main():
    rng = np.random.default_rng(2024)
    cases = []
    for i in range(50):
        n = int(rng.integers(1, 6))
        rects = []
        fps = []
        for _ in range(n):
            w = float(rng.uniform(15, 220))
            d = float(rng.uniform(15, 220))
            x = float(rng.uniform(1.0, SIDE - w - 1.0))
            y = float(rng.uniform(1.0, SIDE - d - 1.0))
            h = float(rng.uniform(3, 80))
            rects.append({"x": x, "y": y, "w": w, "d": d, "h": h})
            fps.append(Footprint(((x, y), (x + w, y), (x + w, y + d), (x, y + d)), h))
        grid = rasterize(Tile((0.0, 0.0), SIDE, tuple(fps)), RES)
        nz = [
            [int(r), int(c), float(grid.data[r, c])]
            for r, c in zip(*np.nonzero(grid.data))
        ]
        cases.append({"rects": rects, "nonzero": nz})
    doc = {"side": SIDE, "resolution": RES, "cases": cases}
    out = Path(__file__).parent.parent / "test" / "fixtures" / "raster_parity.json"
    out.write_text(json.dumps(doc))
    print(f"wrote {out} ({len(cases)} cases)")

if __name__ == "__main__":
    main()
