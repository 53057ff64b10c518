"""Dataset directory layout, manifest, and the training-data loader.

A dataset directory is built in two steps: `sample` writes the tile
geometry (tiles/tile_00042.json), `simulate` adds the canonical-frame
rasters and oracle fields per direction (grids/tile_00042_N.ufnd,
fields/tile_00042_N.ufnd) plus manifest.json.

The manifest records the format version, resolution, flow configuration,
the layout -> train/val/test assignment, and a sha256 per artifact file.
`WindDataset` refuses to load when any hash disagrees, and keeps an access
log of served cases so tests can prove the test partition was never read
during training.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._logging import get_logger
from .errors import FormatError, IntegrityError, ValidationError
from .flowsim import FlowConfig, generate_fields
from .formats import canonical_json, read_field_file, sha256_file, write_field_file
from .geomodel import Tile, load_tile, save_tile
from .raster import Direction
from .surrogate import SplitSpec

log = get_logger(__name__)

MANIFEST_VERSION = 1
DIRECTIONS = [d.value for d in Direction]


def tile_name(layout: int) -> str:
    return f"tile_{layout:05d}"


def write_tiles(tiles: list[Tile], out_dir: str | Path) -> None:
    out = Path(out_dir)
    (out / "tiles").mkdir(parents=True, exist_ok=True)
    for i, tile in enumerate(tiles):
        save_tile(tile, out / "tiles" / f"{tile_name(i)}.json")


def list_tiles(dataset_dir: str | Path) -> dict[int, Path]:
    tiles_dir = Path(dataset_dir) / "tiles"
    if not tiles_dir.is_dir():
        raise FormatError(f"{dataset_dir}: no tiles/ directory (run sample first)")
    out = {}
    for p in sorted(tiles_dir.glob("tile_*.json")):
        out[int(p.stem.split("_")[1])] = p
    return out


def simulate_dataset(
    dataset_dir: str | Path,
    resolution: int,
    flow: FlowConfig = FlowConfig(),
    split: SplitSpec | None = None,
    workers: int = 1,
) -> "WindDataset":
    """Run the oracle for every tile and direction; write rasters + manifest."""
    root = Path(dataset_dir)
    tile_paths = list_tiles(root)
    tiles = [load_tile(tile_paths[i]) for i in sorted(tile_paths)]
    ids = sorted(tile_paths)
    log.info("simulating %d layouts x 4 directions at %d^2", len(tiles), resolution)
    cases = generate_fields(tiles, resolution, flow, workers=workers)

    (root / "grids").mkdir(exist_ok=True)
    (root / "fields").mkdir(exist_ok=True)
    files: dict[str, str] = {}
    surviving = sorted({c.layout for c in cases})
    for c in cases:
        layout_id = ids[c.layout]
        base = f"{tile_name(layout_id)}_{c.direction.value}"
        grid_rel = f"grids/{base}.ufnd"
        field_rel = f"fields/{base}.ufnd"
        write_field_file(root / grid_rel, c.grid.data[None])
        write_field_file(root / field_rel, np.stack([c.field.u, c.field.v]))
        files[grid_rel] = sha256_file(root / grid_rel)
        files[field_rel] = sha256_file(root / field_rel)
    for i in surviving:
        rel = f"tiles/{tile_name(ids[i])}.json"
        files[rel] = sha256_file(root / rel)

    layout_ids = [ids[i] for i in surviving]
    if split is None:
        split = SplitSpec() if len(layout_ids) >= SplitSpec().total else None
    assignment = split.assign(layout_ids) if split is not None else {}
    manifest = {
        "format": "uf-dataset",
        "version": MANIFEST_VERSION,
        "resolution": resolution,
        "cell_size": tiles[0].side / resolution if tiles else 0.0,
        "layouts": layout_ids,
        "directions": DIRECTIONS,
        "flow": asdict(flow),
        "split": {str(k): v for k, v in assignment.items()},
        "files": files,
    }
    manifest["dataset_hash"] = _dataset_hash(manifest)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return WindDataset(root)


def _dataset_hash(manifest: dict) -> str:
    import hashlib

    core = {k: manifest[k] for k in ("resolution", "flow", "split", "files", "layouts")}
    return hashlib.sha256(canonical_json(core)).hexdigest()


class WindDataset:
    """Loader over a simulated dataset directory; verifies manifest hashes."""

    def __init__(self, root: str | Path, verify: bool = True):
        self.root = Path(root)
        mpath = self.root / "manifest.json"
        if not mpath.is_file():
            raise FormatError(f"{self.root}: missing manifest.json (run simulate first)")
        try:
            manifest = json.loads(mpath.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{mpath}: unparseable manifest ({exc})") from exc
        if manifest.get("format") != "uf-dataset" or manifest.get("version") != MANIFEST_VERSION:
            raise FormatError(f"{mpath}: wrong format marker or version")
        self.manifest = manifest
        self.resolution = int(manifest["resolution"])
        self.cell_size = float(manifest["cell_size"])
        self.dataset_hash = manifest["dataset_hash"]
        self.access_log: list[tuple[int, str]] = []
        self._cache: dict[tuple[int, str], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        if _dataset_hash(manifest) != self.dataset_hash:
            raise IntegrityError(f"{mpath}: dataset_hash does not match manifest contents")
        if verify:
            self.verify()

    def verify(self) -> None:
        for rel, want in self.manifest["files"].items():
            p = self.root / rel
            if not p.is_file():
                raise IntegrityError(f"{self.root}: missing artifact {rel}")
            got = sha256_file(p)
            if got != want:
                raise IntegrityError(f"{rel}: sha256 mismatch ({got[:12]} != {want[:12]})")

    def layout_ids(self) -> list[int]:
        return list(self.manifest["layouts"])

    def split_assignment(self) -> dict[int, str]:
        return {int(k): v for k, v in self.manifest["split"].items()}

    def cases(self, partition: str, assignment: dict[int, str] | None = None):
        """(layout, direction) keys for a partition, canonical order."""
        assignment = assignment or self.split_assignment()
        return [
            (lid, d)
            for lid in self.layout_ids()
            if assignment.get(lid) == partition
            for d in DIRECTIONS
        ]

    def load_case(self, key: tuple[int, str]):
        """-> (heights, u, v) float32 arrays in the canonical frame."""
        if key not in self._cache:
            lid, d = key
            base = f"{tile_name(lid)}_{d}"
            grid = read_field_file(self.root / "grids" / f"{base}.ufnd")[0]
            uv = read_field_file(self.root / "fields" / f"{base}.ufnd")
            self._cache[key] = (grid, uv[0], uv[1])
        self.access_log.append(key)
        return self._cache[key]

    def building_counts(self) -> dict[int, int]:
        out = {}
        for lid in self.layout_ids():
            tile = load_tile(self.root / "tiles" / f"{tile_name(lid)}.json")
            out[lid] = tile.n_buildings
        return out
