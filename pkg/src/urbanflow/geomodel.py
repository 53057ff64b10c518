"""Building-footprint city models and square tile sampling.

A city model is a flat list of extruded footprints: simple polygons with a
height, in meters. Training layouts are square tiles cut from the model.
A tile keeps exactly the buildings that sit wholly inside its square;
anything touching or crossing the square boundary is excluded, so every
kept building is completely contained in the layout.

Because the tile is an axis-aligned square (convex), "wholly inside" is
equivalent to "every vertex strictly inside", which reduces membership to
a bounding-box test. The test suite re-checks membership with a full
point-in-square plus edge-crossing oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from shapely.geometry import Polygon

from ._logging import get_logger
from .errors import FormatError, SamplingBudgetError, ValidationError

log = get_logger(__name__)

CITY_FORMAT = "uf-city"
TILE_FORMAT = "uf-tile"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Footprint:
    """Simple polygon with a uniform roof height (LOD1-style extrusion)."""

    vertices: tuple[tuple[float, float], ...]
    height: float

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise ValidationError(f"footprint needs >= 3 vertices, got {len(self.vertices)}")
        if not (self.height > 0) or not np.isfinite(self.height):
            raise ValidationError(f"footprint height must be > 0, got {self.height}")
        arr = np.asarray(self.vertices, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("footprint vertices must be finite")
        poly = Polygon(self.vertices)
        if not poly.is_valid or poly.area <= 0:
            raise ValidationError("footprint polygon is degenerate or self-intersecting")
        # Normalize to counterclockwise winding.
        if _signed_area(arr) < 0:
            object.__setattr__(self, "vertices", tuple(reversed(self.vertices)))

    def vertex_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    def translated(self, dx: float, dy: float) -> "Footprint":
        return Footprint(tuple((x + dx, y + dy) for x, y in self.vertices), self.height)


def _signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class CityModel:
    """Immutable collection of footprints plus an axis-aligned bounding rectangle."""

    footprints: tuple[Footprint, ...]
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.bounds
        for i, fp in enumerate(self.footprints):
            arr = fp.vertex_array()
            if (
                arr[:, 0].min() < xmin
                or arr[:, 0].max() > xmax
                or arr[:, 1].min() < ymin
                or arr[:, 1].max() > ymax
            ):
                raise ValidationError(f"footprint {i} lies outside the city bounds")

    @property
    def n_buildings(self) -> int:
        return len(self.footprints)

    def footprint_bboxes(self) -> np.ndarray:
        """(n, 4) array of per-footprint (xmin, ymin, xmax, ymax)."""
        if not self.footprints:
            return np.zeros((0, 4))
        out = np.empty((len(self.footprints), 4))
        for i, fp in enumerate(self.footprints):
            arr = fp.vertex_array()
            out[i] = (arr[:, 0].min(), arr[:, 1].min(), arr[:, 0].max(), arr[:, 1].max())
        return out


@dataclass(frozen=True)
class Tile:
    """Square layout cut from a city model; footprints are in tile-local coordinates."""

    origin: tuple[float, float]
    side: float
    footprints: tuple[Footprint, ...]

    def __post_init__(self):
        for fp in self.footprints:
            arr = fp.vertex_array()
            if arr.min() <= 0 or arr.max() >= self.side:
                raise ValidationError("tile footprint not strictly inside the tile square")

    @property
    def n_buildings(self) -> int:
        return len(self.footprints)


@dataclass(frozen=True)
class SamplerConfig:
    side: float = 1000.0
    min_buildings: int = 1
    seed: int = 0
    max_attempts_per_tile: int = 1000

    def __post_init__(self):
        if self.side <= 0:
            raise ValidationError("tile side must be > 0")
        if self.min_buildings < 1:
            raise ValidationError("min_buildings must be >= 1")


# ---------------------------------------------------------------------------
# City/tile file IO (structured text; format shared with the CLI layer)
# ---------------------------------------------------------------------------

def _footprints_to_jsonable(footprints) -> list[dict]:
    return [
        {"height": fp.height, "vertices": [[float(x), float(y)] for x, y in fp.vertices]}
        for fp in footprints
    ]


def _footprints_from_jsonable(items) -> tuple[Footprint, ...]:
    out = []
    for i, item in enumerate(items):
        try:
            verts = tuple((float(x), float(y)) for x, y in item["vertices"])
            height = float(item["height"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"building {i}: malformed entry ({exc})") from exc
        out.append(Footprint(verts, height))
    return tuple(out)


def load_city(path: str | Path) -> CityModel:
    """Parse and validate a city-model file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: not a valid city file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != CITY_FORMAT:
        raise FormatError(f"{path}: missing or wrong format marker (expected {CITY_FORMAT!r})")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {doc.get('version')!r}")
    footprints = _footprints_from_jsonable(doc.get("buildings", []))
    if "bounds" in doc:
        bounds = tuple(float(b) for b in doc["bounds"])
        if len(bounds) != 4 or bounds[0] > bounds[2] or bounds[1] > bounds[3]:
            raise FormatError(f"{path}: malformed bounds {doc['bounds']!r}")
    else:
        bounds = _computed_bounds(footprints)
    return CityModel(footprints, bounds)


def save_city(city: CityModel, path: str | Path) -> None:
    doc = {
        "format": CITY_FORMAT,
        "version": FORMAT_VERSION,
        "bounds": [float(b) for b in city.bounds],
        "buildings": _footprints_to_jsonable(city.footprints),
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_tile(path: str | Path) -> Tile:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: not a valid tile file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != TILE_FORMAT:
        raise FormatError(f"{path}: missing or wrong format marker (expected {TILE_FORMAT!r})")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {doc.get('version')!r}")
    try:
        origin = (float(doc["origin"][0]), float(doc["origin"][1]))
        side = float(doc["side"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed tile header ({exc})") from exc
    return Tile(origin, side, _footprints_from_jsonable(doc.get("buildings", [])))


def save_tile(tile: Tile, path: str | Path) -> None:
    doc = {
        "format": TILE_FORMAT,
        "version": FORMAT_VERSION,
        "origin": [float(tile.origin[0]), float(tile.origin[1])],
        "side": float(tile.side),
        "buildings": _footprints_to_jsonable(tile.footprints),
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def _computed_bounds(footprints) -> tuple[float, float, float, float]:
    if not footprints:
        return (0.0, 0.0, 0.0, 0.0)
    arrs = np.concatenate([fp.vertex_array() for fp in footprints])
    return (
        float(arrs[:, 0].min()),
        float(arrs[:, 1].min()),
        float(arrs[:, 0].max()),
        float(arrs[:, 1].max()),
    )


# ---------------------------------------------------------------------------
# Tile sampling
# ---------------------------------------------------------------------------

def tile_at(city: CityModel, center: tuple[float, float], config: SamplerConfig) -> Tile | None:
    """Cut the tile centered at `center`, or None if it holds too few buildings.

    Membership rule: a footprint is kept iff every vertex is strictly inside
    the square. Touching the boundary counts as intersecting and excludes
    the building.
    """
    half = config.side / 2.0
    x0, y0 = center[0] - half, center[1] - half
    x1, y1 = center[0] + half, center[1] + half
    bboxes = city.footprint_bboxes()
    if len(bboxes) == 0:
        return None if config.min_buildings > 0 else Tile((x0, y0), config.side, ())
    keep = (
        (bboxes[:, 0] > x0) & (bboxes[:, 2] < x1) & (bboxes[:, 1] > y0) & (bboxes[:, 3] < y1)
    )
    if int(keep.sum()) < config.min_buildings:
        return None
    kept = tuple(
        city.footprints[i].translated(-x0, -y0) for i in np.flatnonzero(keep)
    )
    return Tile((x0, y0), config.side, kept)


def sample_tile(city: CityModel, config: SamplerConfig, rng: np.random.Generator) -> Tile | None:
    """Draw one uniform tile center within the city bounds; None on rejection."""
    xmin, ymin, xmax, ymax = city.bounds
    if xmax - xmin < config.side or ymax - ymin < config.side:
        raise ValidationError(
            f"city bounds {city.bounds} smaller than the {config.side} m tile"
        )
    cx = rng.uniform(xmin, xmax)
    cy = rng.uniform(ymin, ymax)
    return tile_at(city, (cx, cy), config)


def sample_dataset(city: CityModel, n: int, config: SamplerConfig) -> list[Tile]:
    """Draw tile centers until n tiles are accepted. Deterministic in (city, config, n)."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(config.seed)
    budget = config.max_attempts_per_tile * n
    tiles: list[Tile] = []
    attempts = 0
    while len(tiles) < n:
        if attempts >= budget:
            raise SamplingBudgetError(n, len(tiles), attempts)
        attempts += 1
        tile = sample_tile(city, config, rng)
        if tile is not None:
            tiles.append(tile)
    log.info("sampled %d tiles in %d attempts", n, attempts)
    return tiles


def height_histogram(city: CityModel, bin_width: float) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of building heights with half-open bins [k*w, (k+1)*w)."""
    if bin_width <= 0:
        raise ValidationError("bin_width must be > 0")
    if not city.footprints:
        return np.zeros(0), np.zeros(0, dtype=int)
    heights = np.array([fp.height for fp in city.footprints])
    idx = np.floor(heights / bin_width).astype(int)
    n_bins = int(idx.max()) + 1
    counts = np.bincount(idx, minlength=n_bins)
    edges = np.arange(n_bins + 1) * bin_width
    return edges, counts


# ---------------------------------------------------------------------------
# Synthetic city generator (the real housing dataset is not distributed)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic city. These are conveniences, not ground truth.

    Heights follow a clipped log-normal, which gives the right-skewed shape
    typical of dense public-housing stock. Buildings are rectangular blocks,
    placed either uniformly or around cluster seeds so tiles vary in density.
    """

    n_buildings: int = 400
    side: float = 4000.0
    seed: int = 0
    width_range: tuple[float, float] = (20.0, 90.0)
    depth_range: tuple[float, float] = (15.0, 60.0)
    height_log_mean: float = 3.4  # exp(3.4) ~ 30 m
    height_log_sigma: float = 0.45
    height_clip: tuple[float, float] = (8.0, 140.0)
    cluster_fraction: float = 0.5
    n_clusters: int = 12
    cluster_sigma: float = 220.0
    max_place_attempts: int = 200


def synth_city(config: SynthConfig) -> CityModel:
    """Generate a synthetic rectangular-block city; overlaps are rejected."""
    rng = np.random.default_rng(config.seed)
    side = config.side
    clusters = rng.uniform(0.1 * side, 0.9 * side, size=(config.n_clusters, 2))
    placed_boxes: list[tuple[float, float, float, float]] = []
    footprints: list[Footprint] = []
    for _ in range(config.n_buildings):
        for _attempt in range(config.max_place_attempts):
            w = rng.uniform(*config.width_range)
            d = rng.uniform(*config.depth_range)
            if rng.uniform() < config.cluster_fraction:
                cx, cy = clusters[rng.integers(len(clusters))]
                x = cx + rng.normal(0, config.cluster_sigma)
                y = cy + rng.normal(0, config.cluster_sigma)
            else:
                x = rng.uniform(0, side)
                y = rng.uniform(0, side)
            x = float(np.clip(x, 1.0, side - w - 1.0))
            y = float(np.clip(y, 1.0, side - d - 1.0))
            box = (x, y, x + w, y + d)
            if any(
                not (box[2] <= b[0] or box[0] >= b[2] or box[3] <= b[1] or box[1] >= b[3])
                for b in placed_boxes
            ):
                continue
            h = float(
                np.clip(
                    rng.lognormal(config.height_log_mean, config.height_log_sigma),
                    *config.height_clip,
                )
            )
            placed_boxes.append(box)
            footprints.append(
                Footprint(((x, y), (x + w, y), (x + w, y + d), (x, y + d)), h)
            )
            break
        else:
            log.warning("placement attempts exhausted at %d buildings", len(footprints))
            break
    return CityModel(tuple(footprints), (0.0, 0.0, side, side))
