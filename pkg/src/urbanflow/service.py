"""HTTP prediction service: /health, /model/meta, /predict, /oracle.

Read-only with respect to models: bundles are loaded once at startup and
never mutated, so concurrent requests are equivalent to serial execution.
/predict wraps the same in-process prediction path the CLI uses (bit-exact
loopback); /oracle runs the flow solver on the posted layout for
side-by-side comparison and is labeled slow in its response metadata.

Wire format: plain JSON with nested numeric arrays, row-major, row 0 =
north edge. Request: {heights: WxW, direction: N|E|S|W, include_mask?,
threshold?}. Errors: 400 malformed body or wrong resolution, 422
non-finite heights, 503 while models are loading.
"""

from __future__ import annotations

import time
from contextlib import asynccontextmanager
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__
from ._logging import get_logger
from .errors import UrbanflowError
from .flowsim import FlowConfig, solve
from .formats import load_model
from .raster import CUT_HEIGHT, Direction, HeightGrid, VelocityField, canonicalize, decanonicalize
from .surrogate import ModelBundle, predict_directional

log = get_logger(__name__)


def load_bundles(models_dir: str | Path) -> dict[str, ModelBundle]:
    """Pick one bundle per component from a directory (lowest seed wins)."""
    found: dict[str, list[ModelBundle]] = {"u": [], "v": []}
    for path in sorted(Path(models_dir).glob("*.ufnm")):
        bundle = load_model(path)
        found[bundle.component].append(bundle)
    missing = [c for c, lst in found.items() if not lst]
    if missing:
        raise UrbanflowError(f"{models_dir}: no model files for component(s) {missing}")
    return {
        c: min(lst, key=lambda b: int(b.metadata.get("seed", 0))) for c, lst in found.items()
    }


def _bundle_meta(bundle: ModelBundle) -> dict:
    return {
        "component": bundle.component,
        "spec": {
            "depth": bundle.spec.depth,
            "base_channels": bundle.spec.base_channels,
            "kernel": bundle.spec.kernel,
        },
        "stats": {
            "h_max": bundle.stats.h_max,
            "v_scale_u": bundle.stats.v_scale_u,
            "v_scale_v": bundle.stats.v_scale_v,
        },
        "metadata": bundle.metadata,
    }


def _parse_request(body, resolution: int, cell_size: float):
    """Validate a predict/oracle body; returns (grid, direction, include_mask, threshold)."""
    if not isinstance(body, dict):
        return None, JSONResponse({"error": "body must be a JSON object"}, status_code=400)
    heights = body.get("heights")
    direction_name = body.get("direction", "N")
    include_mask = bool(body.get("include_mask", False))
    threshold = body.get("threshold", 1.5)
    if direction_name not in Direction.__members__:
        return None, JSONResponse(
            {"error": f"direction must be one of N,E,S,W, got {direction_name!r}"}, status_code=400
        )
    if not isinstance(threshold, (int, float)) or isinstance(threshold, bool):
        return None, JSONResponse({"error": "threshold must be a number"}, status_code=400)
    try:
        arr = np.asarray(heights, dtype=np.float64)
    except (TypeError, ValueError):
        return None, JSONResponse({"error": "heights must be a numeric array"}, status_code=400)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        return None, JSONResponse(
            {"error": f"heights must be a square 2-D array, got shape {arr.shape}"},
            status_code=400,
        )
    if arr.shape[0] != resolution:
        return None, JSONResponse(
            {"error": f"wrong resolution {arr.shape[0]}, models expect {resolution}"},
            status_code=400,
        )
    if not np.all(np.isfinite(arr)):
        return None, JSONResponse({"error": "heights contain non-finite values"}, status_code=422)
    if arr.min() < 0:
        return None, JSONResponse({"error": "heights must be >= 0"}, status_code=422)
    grid = HeightGrid(arr.astype(np.float32), cell_size)
    return (grid, Direction(direction_name), include_mask, float(threshold)), None


def _field_response(grid, field: VelocityField, include_mask, threshold):
    mag = np.sqrt(field.u.astype(np.float64) ** 2 + field.v.astype(np.float64) ** 2)
    building = grid.data >= CUT_HEIGHT
    open_cells = int((~building).sum())
    mask = (mag >= threshold) & ~building
    doc = {
        "u": field.u.astype(np.float64).tolist(),
        "v": field.v.astype(np.float64).tolist(),
        "magnitude": mag.tolist(),
        "comfort_fraction": float(mask.sum() / open_cells) if open_cells else 0.0,
        "threshold": threshold,
    }
    if include_mask:
        doc["mask"] = mask.tolist()
    return doc


def create_app(
    models_dir: str | Path | None = None,
    bundles: dict[str, ModelBundle] | None = None,
    tile_side: float = 1000.0,
    oracle_config: FlowConfig | None = None,
) -> FastAPI:
    state: dict = {"bundles": bundles}

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if state["bundles"] is None and models_dir is not None:
            log.info("loading models from %s", models_dir)
            state["bundles"] = load_bundles(models_dir)
        yield

    app = FastAPI(title="urbanflow", version=__version__, lifespan=lifespan)

    def ready():
        return state["bundles"] is not None

    def resolution():
        return state["bundles"]["u"].resolution

    @app.get("/health")
    def health():
        if not ready():
            return JSONResponse({"status": "loading"}, status_code=503)
        return {
            "status": "ok",
            "resolution": resolution(),
            "models": {c: _bundle_meta(b)["metadata"] for c, b in state["bundles"].items()},
        }

    @app.get("/model/meta")
    def model_meta():
        if not ready():
            return JSONResponse({"status": "loading"}, status_code=503)
        return {c: _bundle_meta(b) for c, b in state["bundles"].items()}

    @app.post("/predict")
    async def predict_endpoint(request: Request):
        if not ready():
            return JSONResponse({"status": "loading"}, status_code=503)
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body is not valid JSON"}, status_code=400)
        parsed, err = _parse_request(body, resolution(), tile_side / resolution())
        if err is not None:
            return err
        grid, direction, include_mask, threshold = parsed
        t0 = time.perf_counter()
        field = predict_directional(state["bundles"], grid, direction)
        latency_ms = (time.perf_counter() - t0) * 1e3
        doc = _field_response(grid, field, include_mask, threshold)
        doc["direction"] = direction.value
        doc["latency_ms"] = latency_ms
        doc["model"] = {c: _bundle_meta(b)["metadata"] for c, b in state["bundles"].items()}
        return doc

    @app.post("/oracle")
    async def oracle_endpoint(request: Request):
        if not ready():
            return JSONResponse({"status": "loading"}, status_code=503)
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body is not valid JSON"}, status_code=400)
        parsed, err = _parse_request(body, resolution(), tile_side / resolution())
        if err is not None:
            return err
        grid, direction, include_mask, threshold = parsed
        cfg = oracle_config or FlowConfig()
        t0 = time.perf_counter()
        canon_field, report = solve(canonicalize(grid, direction), cfg)
        field = decanonicalize(canon_field, direction)
        seconds = time.perf_counter() - t0
        doc = _field_response(grid, field, include_mask, threshold)
        doc["direction"] = direction.value
        doc["oracle"] = {
            "slow": True,
            "seconds": seconds,
            "iterations": report.iterations,
            "converged": report.converged,
            "residual": report.residual,
        }
        return doc

    return app
