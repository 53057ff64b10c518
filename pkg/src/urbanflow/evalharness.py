"""Evaluation program: error tables, dataset-size and density studies,
error-vs-density correlation, and wind-comfort masks.

All error numbers are mean absolute error in denormalized m/s, computed
per (layout, direction) case, per velocity component, then aggregated
over cases and over replicate seeds. Every study evaluates on the frozen
test partition recorded in the dataset manifest and carries the dataset
hash it was computed from.

Study trainings are cached by a content key (dataset hash, subset, train
config, component) so reruns and overlapping studies (the random rows of
the density study are exactly the size-study subsets) reuse models
bit-for-bit instead of retraining.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._logging import get_logger
from .errors import ValidationError
from .formats import canonical_json, load_model, save_model
from .raster import CUT_HEIGHT, Direction, HeightGrid
from .surrogate import COMPONENTS, ModelBundle, TrainConfig, predict, predict_directional, train

log = get_logger(__name__)


# ---------------------------------------------------------------------------
# Predictors: anything mapping a canonical HeightGrid to a component field
# ---------------------------------------------------------------------------

def _as_predict_fn(pred):
    if isinstance(pred, ModelBundle):
        return lambda grid: predict(pred, grid)
    if callable(pred):
        return pred
    raise ValidationError(f"not a predictor: {pred!r}")


def constant_predictor(value: float):
    """Baseline: predicts `value` everywhere."""
    return lambda grid: np.full_like(grid.data, np.float32(value), dtype=np.float32)


def training_mean_predictor(dataset, component: str, assignment=None) -> float:
    """Mean of the component over all training cells; feed to constant_predictor."""
    comp_idx = 1 if component == "u" else 2
    vals = [dataset.load_case(k)[comp_idx] for k in dataset.cases("train", assignment)]
    return float(np.mean([v.mean() for v in vals]))


# ---------------------------------------------------------------------------
# Table II analog
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    dataset_hash: str
    partition: str
    # per component: case key "layout:direction" -> one MAE per replicate
    per_case: dict[str, dict[str, list[float]]]
    mean: dict[str, float]
    std: dict[str, float]

    def per_layout(self, component: str) -> dict[int, float]:
        """MAE averaged over directions and replicates, keyed by layout id."""
        acc: dict[int, list[float]] = {}
        for key, maes in self.per_case[component].items():
            lid = int(key.split(":")[0])
            acc.setdefault(lid, []).extend(maes)
        return {lid: float(np.mean(v)) for lid, v in sorted(acc.items())}

    def to_json(self) -> dict:
        return {
            "dataset_hash": self.dataset_hash,
            "partition": self.partition,
            "mean": self.mean,
            "std": self.std,
            "per_case": self.per_case,
        }


def evaluate(predictors: dict[str, list], dataset, partition: str = "test", assignment=None) -> EvalReport:
    """MAE per case and component, aggregated over cases and replicates."""
    keys = dataset.cases(partition, assignment)
    if not keys:
        raise ValidationError(f"empty partition {partition!r}")
    per_case: dict[str, dict[str, list[float]]] = {}
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for comp, preds in predictors.items():
        if comp not in COMPONENTS:
            raise ValidationError(f"unknown component {comp!r}")
        fns = [_as_predict_fn(p) for p in preds]
        comp_idx = 1 if comp == "u" else 2
        cases: dict[str, list[float]] = {}
        replicate_means = []
        for fn in fns:
            case_maes = []
            for key in keys:
                heights, *uv = dataset.load_case(key)
                truth = (heights, *uv)[comp_idx]
                grid = HeightGrid(heights, dataset.cell_size)
                pred_field = fn(grid)
                mae = float(np.abs(np.asarray(pred_field, dtype=np.float64) - truth).mean())
                cases.setdefault(f"{key[0]}:{key[1]}", []).append(mae)
                case_maes.append(mae)
            replicate_means.append(float(np.mean(case_maes)))
        per_case[comp] = cases
        mean[comp] = float(np.mean(replicate_means))
        std[comp] = float(np.std(replicate_means))
    return EvalReport(dataset.dataset_hash, partition, per_case, mean, std)


# ---------------------------------------------------------------------------
# Cached study trainings
# ---------------------------------------------------------------------------

def random_subset(pool: list[int], k: int, seed: int) -> list[int]:
    """Seeded k-subset of layout ids, returned in canonical (sorted) order."""
    if k > len(pool):
        raise ValidationError(f"subset size {k} exceeds pool {len(pool)}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, k, 0x5B5E7]))
    pick = rng.choice(len(pool), size=k, replace=False)
    return sorted(pool[i] for i in pick)


def densest_subset(pool: list[int], k: int, counts: dict[int, int]) -> list[int]:
    """Top-k layouts by building count, ties broken by layout id."""
    if k > len(pool):
        raise ValidationError(f"subset size {k} exceeds pool {len(pool)}")
    ranked = sorted(pool, key=lambda lid: (-counts[lid], lid))
    return sorted(ranked[:k])


def train_cached(
    dataset, subset: list[int], tcfg: TrainConfig, cache_dir: str | Path | None
) -> ModelBundle:
    """Train on the given train-layout subset, reusing a cached bundle if present.

    The cache key pins dataset hash, subset membership, and the full train
    config, so a hit is bit-identical to retraining.
    """
    assignment = dict(dataset.split_assignment())
    train_ids = [lid for lid, part in assignment.items() if part == "train"]
    missing = set(subset) - set(train_ids)
    if missing:
        raise ValidationError(f"subset layouts not in train partition: {sorted(missing)}")
    for lid in train_ids:
        if lid not in subset:
            assignment[lid] = "unused"

    if cache_dir is not None:
        key_doc = {
            "dataset": dataset.dataset_hash,
            "subset": sorted(subset),
            "tcfg": asdict(tcfg),
        }
        key = hashlib.sha256(canonical_json(key_doc)).hexdigest()[:32]
        path = Path(cache_dir) / f"model_{key}.ufnm"
        if path.is_file():
            log.info("cache hit for %s (%s, %d layouts)", tcfg.component, key[:8], len(subset))
            return load_model(path)
    bundle, _ = train(dataset, assignment, tcfg)
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        save_model(bundle, path)
    return bundle


# ---------------------------------------------------------------------------
# Table III analog: dataset-size dependence
# ---------------------------------------------------------------------------

@dataclass
class SizeStudyResult:
    dataset_hash: str
    sizes: list[int]
    seeds: list[int]
    # component -> size -> list of per-seed MAEs (test partition)
    maes: dict[str, dict[int, list[float]]]
    slope: dict[str, float]  # d(mean MAE)/d(log size)

    def mean(self, comp: str, size: int) -> float:
        return float(np.mean(self.maes[comp][size]))

    def std(self, comp: str, size: int) -> float:
        return float(np.std(self.maes[comp][size]))

    def to_json(self) -> dict:
        return {
            "dataset_hash": self.dataset_hash,
            "sizes": self.sizes,
            "seeds": self.seeds,
            "maes": {c: {str(s): v for s, v in by.items()} for c, by in self.maes.items()},
            "slope": self.slope,
        }


def size_study(
    dataset,
    sizes: list[int],
    seeds: list[int],
    tcfg_base: TrainConfig = TrainConfig(),
    cache_dir: str | Path | None = None,
) -> SizeStudyResult:
    if sorted(sizes) != list(sizes):
        raise ValidationError("sizes must be strictly increasing")
    pool = sorted(
        lid for lid, part in dataset.split_assignment().items() if part == "train"
    )
    maes: dict[str, dict[int, list[float]]] = {c: {s: [] for s in sizes} for c in COMPONENTS}
    for size in sizes:
        for seed in seeds:
            subset = random_subset(pool, size, seed)
            preds = {}
            for comp in COMPONENTS:
                tcfg = _with(tcfg_base, component=comp, seed=seed)
                preds[comp] = [train_cached(dataset, subset, tcfg, cache_dir)]
            report = evaluate(preds, dataset, "test")
            for comp in COMPONENTS:
                maes[comp][size].append(report.mean[comp])
    slope = {}
    logx = np.log(np.asarray(sizes, dtype=float))
    for comp in COMPONENTS:
        means = np.array([np.mean(maes[comp][s]) for s in sizes])
        slope[comp] = float(np.polyfit(logx, means, 1)[0])
    return SizeStudyResult(dataset.dataset_hash, list(sizes), list(seeds), maes, slope)


# ---------------------------------------------------------------------------
# Table IV analog: density-selected training subsets
# ---------------------------------------------------------------------------

@dataclass
class DensityStudyResult:
    dataset_hash: str
    sizes: list[int]
    seeds: list[int]
    # component -> (size, mode) -> list of per-seed MAEs; mode in {random, dense}
    maes: dict[str, dict[tuple[int, str], list[float]]]

    def mean(self, comp: str, size: int, mode: str) -> float:
        return float(np.mean(self.maes[comp][(size, mode)]))

    def std(self, comp: str, size: int, mode: str) -> float:
        return float(np.std(self.maes[comp][(size, mode)]))

    def to_json(self) -> dict:
        return {
            "dataset_hash": self.dataset_hash,
            "sizes": self.sizes,
            "seeds": self.seeds,
            "maes": {
                c: {f"{s}-{m}": v for (s, m), v in by.items()} for c, by in self.maes.items()
            },
        }


def density_study(
    dataset,
    sizes: list[int],
    seeds: list[int],
    tcfg_base: TrainConfig = TrainConfig(),
    cache_dir: str | Path | None = None,
) -> DensityStudyResult:
    """Random vs densest-K subsets, trained and evaluated identically.

    No directional assertion is made about which wins; the output is the
    comparison table.
    """
    pool = sorted(
        lid for lid, part in dataset.split_assignment().items() if part == "train"
    )
    counts = dataset.building_counts()
    maes: dict[str, dict[tuple[int, str], list[float]]] = {
        c: {(s, m): [] for s in sizes for m in ("random", "dense")} for c in COMPONENTS
    }
    for size in sizes:
        subsets = {"dense": densest_subset(pool, size, counts)}
        for seed in seeds:
            subsets["random"] = random_subset(pool, size, seed)
            for mode in ("random", "dense"):
                preds = {}
                for comp in COMPONENTS:
                    tcfg = _with(tcfg_base, component=comp, seed=seed)
                    preds[comp] = [train_cached(dataset, subsets[mode], tcfg, cache_dir)]
                report = evaluate(preds, dataset, "test")
                for comp in COMPONENTS:
                    maes[comp][(size, mode)].append(report.mean[comp])
    return DensityStudyResult(dataset.dataset_hash, list(sizes), list(seeds), maes)


def _with(tcfg: TrainConfig, **kw) -> TrainConfig:
    doc = asdict(tcfg)
    doc.update(kw)
    return TrainConfig(**doc)


# ---------------------------------------------------------------------------
# Fig 8 analog: per-layout error vs building count
# ---------------------------------------------------------------------------

def average_ranks(values) -> np.ndarray:
    """Ranks 1..n with ties getting the average of their positions."""
    arr = np.asarray(values, dtype=float)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(len(arr))
    i = 0
    while i < len(arr):
        j = i
        while j + 1 < len(arr) and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(x, y) -> float:
    """Rank correlation with average ranks; 0 by convention for constant input."""
    if len(x) != len(y) or len(x) < 3:
        raise ValidationError("need at least 3 paired samples")
    rx, ry = average_ranks(x), average_ranks(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0 or sy == 0:
        return 0.0
    return float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (sx * sy))


@dataclass
class CorrelationResult:
    dataset_hash: str
    # component -> list of (layout id, building count, layout MAE)
    points: dict[str, list[tuple[int, int, float]]]
    rho: dict[str, float]

    def to_json(self) -> dict:
        return {
            "dataset_hash": self.dataset_hash,
            "points": {c: [list(p) for p in pts] for c, pts in self.points.items()},
            "rho": self.rho,
        }


def density_correlation(report: EvalReport, dataset) -> CorrelationResult:
    counts = dataset.building_counts()
    points: dict[str, list[tuple[int, int, float]]] = {}
    rho: dict[str, float] = {}
    for comp in report.per_case:
        by_layout = report.per_layout(comp)
        if len(by_layout) < 3:
            raise ValidationError("need at least 3 layouts for a rank correlation")
        pts = [(lid, counts[lid], mae) for lid, mae in by_layout.items()]
        points[comp] = pts
        rho[comp] = spearman_rho([p[1] for p in pts], [p[2] for p in pts])
    return CorrelationResult(report.dataset_hash, points, rho)


# ---------------------------------------------------------------------------
# Comfort analysis (threshold exceedance masks)
# ---------------------------------------------------------------------------

@dataclass
class ComfortResult:
    direction: Direction
    threshold: float
    magnitude: np.ndarray  # m/s, world frame
    mask: np.ndarray  # bool; False on building cells
    comfort_fraction: float


def comfort(
    bundles: dict[str, ModelBundle],
    grid: HeightGrid,
    directions=tuple(Direction),
    threshold: float = 1.5,
) -> list[ComfortResult]:
    """Per-direction speed magnitude and the >= threshold exceedance mask.

    Building cells (height above the pedestrian cut-plane) are excluded
    from both the mask and the comfort-fraction denominator.
    """
    building = grid.data >= CUT_HEIGHT
    out = []
    for direction in directions:
        fieldw = predict_directional(bundles, grid, direction)
        mag = np.asarray(fieldw.speed())
        mask = (mag >= threshold) & ~building
        open_cells = int((~building).sum())
        frac = float(mask.sum() / open_cells) if open_cells else 0.0
        out.append(ComfortResult(direction, threshold, mag, mask, frac))
    return out


# ---------------------------------------------------------------------------
# Table I analog: dataset velocity statistics
# ---------------------------------------------------------------------------

def dataset_stats(dataset, partition: str | None = None) -> dict[str, dict[str, float]]:
    """Per-component mean/min/max/std over all cells of all fields."""
    if partition is None:
        keys = [
            (lid, d) for lid in dataset.layout_ids() for d in ("N", "E", "S", "W")
        ]
    else:
        keys = dataset.cases(partition)
    if not keys:
        raise ValidationError("empty dataset")
    acc = {c: {"n": 0, "sum": 0.0, "sumsq": 0.0, "min": np.inf, "max": -np.inf} for c in COMPONENTS}
    for key in keys:
        _, u, v = dataset.load_case(key)
        for comp, arr in (("u", u), ("v", v)):
            a = acc[comp]
            arr64 = arr.astype(np.float64)
            a["n"] += arr64.size
            a["sum"] += float(arr64.sum())
            a["sumsq"] += float((arr64**2).sum())
            a["min"] = min(a["min"], float(arr64.min()))
            a["max"] = max(a["max"], float(arr64.max()))
    out = {}
    for comp, a in acc.items():
        mean = a["sum"] / a["n"]
        var = max(a["sumsq"] / a["n"] - mean * mean, 0.0)
        out[comp] = {
            "mean": mean,
            "min": a["min"],
            "max": a["max"],
            "std": float(np.sqrt(var)),
        }
    return out


def save_report(doc: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))
