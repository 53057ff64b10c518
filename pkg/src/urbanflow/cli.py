"""Command-line interface. Every report command writes delimited output
plus rendered figures into its --out directory, and fails with a single
machine-parseable `UF-ERROR <kind>: <message>` line on stderr."""

from __future__ import annotations

import csv
import functools
import json
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import evalharness, geomodel, plotting
from ._logging import get_logger
from .dataset import WindDataset, simulate_dataset, write_tiles
from .errors import UrbanflowError
from .flowsim import FlowConfig
from .formats import load_model, save_model, write_field_file
from .geomodel import SamplerConfig, SynthConfig
from .raster import Direction, HeightGrid, rasterize
from .surrogate import SplitSpec, TrainConfig, predict_directional, train

log = get_logger(__name__)


def failing_loudly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except UrbanflowError as exc:
            click.echo(f"UF-ERROR {type(exc).__name__}: {exc}", err=True)
            sys.exit(1)
        except FileNotFoundError as exc:
            click.echo(f"UF-ERROR FileNotFound: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _city_path(path: Path) -> Path:
    return path / "city.json" if path.is_dir() else path


def _load_models_grouped(models_dir: Path) -> dict[str, list]:
    groups: dict[str, list] = {"u": [], "v": []}
    for p in sorted(models_dir.glob("*.ufnm")):
        b = load_model(p)
        groups[b.component].append(b)
    for comp, lst in groups.items():
        if not lst:
            raise UrbanflowError(f"{models_dir}: no .ufnm model for component {comp!r}")
        lst.sort(key=lambda b: int(b.metadata.get("seed", 0)))
    return groups


def _bundle_pair(model_u: Path, model_v: Path) -> dict:
    bundles = {"u": load_model(model_u), "v": load_model(model_v)}
    for comp, b in bundles.items():
        if b.component != comp:
            raise UrbanflowError(f"{comp} model file holds a {b.component!r} model")
    return bundles


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


@click.group()
@click.version_option()
def main():
    """Urban wind surrogate toolkit."""


@main.command()
@click.option("--city", "city_file", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@failing_loudly
def ingest(city_file: Path, out_dir: Path):
    """Parse and validate a city model; write a normalized copy plus summaries."""
    city = geomodel.load_city(_city_path(city_file))
    out_dir.mkdir(parents=True, exist_ok=True)
    geomodel.save_city(city, out_dir / "city.json")
    edges, counts = geomodel.height_histogram(city, 10.0)
    _write_csv(
        out_dir / "height_histogram.csv",
        ["bin_lo_m", "bin_hi_m", "count"],
        [[edges[i], edges[i + 1], int(counts[i])] for i in range(len(counts))],
    )
    plotting.save_histogram_figure(edges, counts, out_dir / "height_histogram.png")
    summary = {
        "buildings": city.n_buildings,
        "bounds": list(city.bounds),
        "max_height": max((f.height for f in city.footprints), default=0.0),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    click.echo(f"ingested {city.n_buildings} buildings -> {out_dir}")


@main.command("synth-city")
@click.option("--buildings", type=int, default=400, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--side-m", type=float, default=4000.0, show_default=True)
@click.option("--out", "out_file", type=click.Path(path_type=Path), required=True)
@failing_loudly
def synth_city_cmd(buildings: int, seed: int, side_m: float, out_file: Path):
    """Generate a synthetic rectangular-block city."""
    city = geomodel.synth_city(SynthConfig(n_buildings=buildings, seed=seed, side=side_m))
    out_file.parent.mkdir(parents=True, exist_ok=True)
    geomodel.save_city(city, out_file)
    click.echo(f"wrote {city.n_buildings} buildings -> {out_file}")


@main.command()
@click.option("--city", "city_file", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--n", "n_tiles", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tile-m", type=float, default=1000.0, show_default=True)
@click.option("--min-buildings", type=int, default=1, show_default=True)
@click.option("--max-attempts", type=int, default=1000, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@failing_loudly
def sample(city_file, n_tiles, seed, tile_m, min_buildings, max_attempts, out_dir: Path):
    """Sample square training layouts from a city model."""
    city = geomodel.load_city(_city_path(city_file))
    cfg = SamplerConfig(
        side=tile_m, min_buildings=min_buildings, seed=seed, max_attempts_per_tile=max_attempts
    )
    tiles = geomodel.sample_dataset(city, n_tiles, cfg)
    write_tiles(tiles, out_dir)
    counts = [t.n_buildings for t in tiles]
    click.echo(
        f"sampled {len(tiles)} tiles -> {out_dir} (buildings/tile: "
        f"min {min(counts)}, median {int(np.median(counts))}, max {max(counts)})"
    )


@main.command()
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--resolution", type=int, default=64, show_default=True)
@click.option("--inflow-speed", type=float, default=2.0, show_default=True)
@click.option("--viscosity", type=float, default=5.0, show_default=True)
@click.option("--padding", type=float, default=0.25, show_default=True)
@click.option("--tol", type=float, default=1e-5, show_default=True)
@click.option("--max-iterations", type=int, default=20000, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--split", type=str, default=None, help="train/val/test layout counts, e.g. 200/20/20")
@failing_loudly
def simulate(dataset_dir, resolution, inflow_speed, viscosity, padding, tol, max_iterations, workers, split):
    """Run the flow oracle for every tile and direction; write the manifest."""
    flow = FlowConfig(
        inflow_speed=inflow_speed,
        effective_viscosity=viscosity,
        padding_fraction=padding,
        convergence_tol=tol,
        max_iterations=max_iterations,
    )
    split_spec = None
    if split:
        a, b, c = (int(x) for x in split.split("/"))
        split_spec = SplitSpec(a, b, c)
    ds = simulate_dataset(dataset_dir, resolution, flow, split_spec, workers=workers)
    click.echo(f"simulated {len(ds.layout_ids())} layouts -> {dataset_dir} ({ds.dataset_hash[:12]})")


@main.command("train")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--component", type=click.Choice(["u", "v"]), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--batch-size", type=int, default=8, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--l1", type=float, default=1e-9, show_default=True)
@click.option("--max-epochs", type=int, default=200, show_default=True)
@click.option("--out", "out_file", type=click.Path(path_type=Path), required=True)
@failing_loudly
def train_cmd(dataset_dir, component, seed, batch_size, lr, l1, max_epochs, out_file: Path):
    """Train one velocity-component model on a simulated dataset."""
    ds = WindDataset(dataset_dir)
    tcfg = TrainConfig(
        component=component, seed=seed, batch_size=batch_size, initial_lr=lr,
        l1_lambda=l1, max_epochs=max_epochs,
    )
    bundle, history = train(ds, None, tcfg)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    save_model(bundle, out_file)
    plotting.save_history_figure(history, out_file.with_suffix(".history.png"), component)
    _write_csv(
        out_file.with_suffix(".history.csv"),
        ["epoch", "train_loss", "val_mae_ms", "lr"],
        [
            [i + 1, history.train_loss[i], history.val_mae[i], history.lr[i]]
            for i in range(history.epochs)
        ],
    )
    click.echo(
        f"trained {component} ({history.epochs} epochs, best val MAE "
        f"{bundle.metadata['final_val_mae']:.4f} m/s) -> {out_file}"
    )


@main.command("predict")
@click.option("--model-u", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--model-v", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--layout", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--direction", type=click.Choice(["N", "E", "S", "W"]), default="N", show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
@failing_loudly
def predict_cmd(model_u, model_v, layout: Path, direction, out_dir: Path, plot):
    """Predict the world-frame velocity field for a layout tile."""
    bundles = _bundle_pair(model_u, model_v)
    tile = geomodel.load_tile(layout)
    grid = rasterize(tile, bundles["u"].resolution)
    field = predict_directional(bundles, grid, Direction(direction))
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{layout.stem}_{direction}"
    write_field_file(out_dir / f"{stem}.ufnd", np.stack([field.u, field.v]))
    if plot:
        plotting.save_field_figure(
            np.asarray(field.speed()), out_dir / f"{stem}.png", Direction(direction)
        )
    click.echo(f"predicted {stem} -> {out_dir}")


def _eval_report(dataset_dir: Path, models_dir: Path):
    ds = WindDataset(dataset_dir)
    groups = _load_models_grouped(models_dir)
    report = evalharness.evaluate(groups, ds, "test")
    return ds, groups, report


@main.command("evaluate")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--models", "models_dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@failing_loudly
def evaluate_cmd(dataset_dir, models_dir, out_dir: Path):
    """Test-set MAE per component, aggregated over replicate models."""
    ds, groups, report = _eval_report(dataset_dir, models_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    evalharness.save_report(report.to_json(), out_dir / "report.json")
    rows = [
        [comp, len(groups[comp]), report.mean[comp], report.std[comp]] for comp in ("u", "v")
    ]
    _write_csv(out_dir / "mae_table.csv", ["component", "replicates", "mean_mae_ms", "std_mae_ms"], rows)
    stats = evalharness.dataset_stats(ds, "train")
    _write_csv(
        out_dir / "training_stats.csv",
        ["component", "mean", "min", "max", "std"],
        [[c, s["mean"], s["min"], s["max"], s["std"]] for c, s in stats.items()],
    )
    for comp in ("u", "v"):
        click.echo(f"{comp}: MAE {report.mean[comp]:.4f} +/- {report.std[comp]:.4f} m/s "
                   f"(train std {stats[comp]['std']:.4f})")


@main.command("size-study")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--sizes", type=str, default="25,50,100,200", show_default=True)
@click.option("--seeds", type=str, default="0,1,2", show_default=True)
@click.option("--max-epochs", type=int, default=200, show_default=True)
@click.option("--cache", "cache_dir", type=click.Path(path_type=Path), default=None)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@failing_loudly
def size_study_cmd(dataset_dir, sizes, seeds, max_epochs, cache_dir, out_dir: Path):
    """Test MAE vs training-set size (3 seeds per size)."""
    ds = WindDataset(dataset_dir)
    result = evalharness.size_study(
        ds,
        [int(s) for s in sizes.split(",")],
        [int(s) for s in seeds.split(",")],
        TrainConfig(max_epochs=max_epochs),
        cache_dir,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    evalharness.save_report(result.to_json(), out_dir / "report.json")
    rows = [
        [size, comp, result.mean(comp, size), result.std(comp, size)]
        for size in result.sizes
        for comp in ("u", "v")
    ]
    _write_csv(out_dir / "size_table.csv", ["train_layouts", "component", "mean_mae_ms", "std_mae_ms"], rows)
    plotting.save_size_study_figure(result, out_dir / "size_study.png")
    click.echo(f"slopes vs log(size): u {result.slope['u']:+.4f}, v {result.slope['v']:+.4f}")


@main.command("density-study")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--sizes", type=str, default="50,100", show_default=True)
@click.option("--seeds", type=str, default="0,1,2", show_default=True)
@click.option("--max-epochs", type=int, default=200, show_default=True)
@click.option("--cache", "cache_dir", type=click.Path(path_type=Path), default=None)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@failing_loudly
def density_study_cmd(dataset_dir, sizes, seeds, max_epochs, cache_dir, out_dir: Path):
    """Random vs densest-K training subsets (no winner asserted)."""
    ds = WindDataset(dataset_dir)
    result = evalharness.density_study(
        ds,
        [int(s) for s in sizes.split(",")],
        [int(s) for s in seeds.split(",")],
        TrainConfig(max_epochs=max_epochs),
        cache_dir,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    evalharness.save_report(result.to_json(), out_dir / "report.json")
    rows = [
        [f"{size}-{mode}", comp, result.mean(comp, size, mode), result.std(comp, size, mode)]
        for size in result.sizes
        for mode in ("random", "dense")
        for comp in ("u", "v")
    ]
    _write_csv(out_dir / "density_table.csv", ["subset", "component", "mean_mae_ms", "std_mae_ms"], rows)
    plotting.save_density_study_figure(result, out_dir / "density_study.png")
    click.echo(f"wrote {len(rows)} table rows -> {out_dir}")


@main.command("correlate")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--models", "models_dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@failing_loudly
def correlate_cmd(dataset_dir, models_dir, out_dir: Path):
    """Per-layout test MAE against building count (rank correlation)."""
    ds, _, report = _eval_report(dataset_dir, models_dir)
    corr = evalharness.density_correlation(report, ds)
    out_dir.mkdir(parents=True, exist_ok=True)
    evalharness.save_report(corr.to_json(), out_dir / "report.json")
    rows = [
        [comp, lid, count, mae]
        for comp in corr.points
        for lid, count, mae in corr.points[comp]
    ]
    _write_csv(out_dir / "correlation.csv", ["component", "layout", "buildings", "mae_ms"], rows)
    plotting.save_correlation_figure(corr, out_dir / "correlation.png")
    click.echo(f"Spearman rho: u {corr.rho['u']:+.3f}, v {corr.rho['v']:+.3f}")


@main.command("comfort")
@click.option("--model-u", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--model-v", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--layout", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--threshold", type=float, default=1.5, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@failing_loudly
def comfort_cmd(model_u, model_v, layout: Path, threshold, out_dir: Path):
    """Four-direction comfort masks for one layout."""
    bundles = _bundle_pair(model_u, model_v)
    tile = geomodel.load_tile(layout)
    grid = rasterize(tile, bundles["u"].resolution)
    results = evalharness.comfort(bundles, grid, threshold=threshold)
    out_dir.mkdir(parents=True, exist_ok=True)
    for res in results:
        stem = f"{layout.stem}_{res.direction.value}"
        write_field_file(
            out_dir / f"{stem}_comfort.ufnd",
            np.stack([res.magnitude.astype(np.float32), res.mask.astype(np.float32)]),
        )
    _write_csv(
        out_dir / "comfort.csv",
        ["direction", "threshold_ms", "comfort_fraction"],
        [[r.direction.value, r.threshold, r.comfort_fraction] for r in results],
    )
    plotting.save_comfort_panel(results, grid.data, out_dir / "comfort_panel.png")
    for r in results:
        click.echo(f"from {r.direction.value}: {100 * r.comfort_fraction:.1f}% >= {threshold} m/s")


@main.command("serve")
@click.option("--models", "models_dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--host", type=str, default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8777, show_default=True)
@failing_loudly
def serve_cmd(models_dir, host, port):
    """Start the HTTP prediction service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(models_dir), host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
