import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import desk  # noqa: E402
from urbanflow import evalharness  # noqa: E402
from urbanflow.geomodel import SynthConfig, synth_city  # noqa: E402


@pytest.fixture(scope="session")
def unit_city():
    """Small synthetic city for geometry tests (no solves involved)."""
    return synth_city(SynthConfig(n_buildings=80, side=2500.0, seed=5))


@pytest.fixture(scope="session")
def desk_dataset():
    """The frozen desk dataset; built on first use (expensive, cached on disk)."""
    return desk.build_dataset()


@pytest.fixture(scope="session")
def desk_models(desk_dataset):
    """Baseline replicate models: {component: [bundle per seed]}, cache-backed."""
    pool = sorted(
        lid for lid, part in desk_dataset.split_assignment().items() if part == "train"
    )
    desk.CACHE_DIR.mkdir(parents=True, exist_ok=True)
    out = {}
    for comp in ("u", "v"):
        out[comp] = [
            evalharness.train_cached(
                desk_dataset, pool, desk.train_config(comp, seed), desk.CACHE_DIR
            )
            for seed in desk.SEEDS
        ]
    return out


@pytest.fixture(scope="session")
def tiny_dataset():
    """8-layout dataset at 16^2 for fast harness/format/service tests."""
    import desk as _desk
    from urbanflow.dataset import WindDataset, simulate_dataset, write_tiles
    from urbanflow.flowsim import FlowConfig
    from urbanflow.geomodel import SamplerConfig, sample_dataset
    from urbanflow.surrogate import SplitSpec

    root = _desk.ARTIFACTS / "tiny16"
    if (root / "manifest.json").is_file():
        return WindDataset(root)
    root.mkdir(parents=True, exist_ok=True)
    city = synth_city(SynthConfig(n_buildings=150, side=3000.0, seed=21))
    tiles = sample_dataset(city, 8, SamplerConfig(seed=13, min_buildings=2))
    write_tiles(tiles, root)
    return simulate_dataset(root, 16, FlowConfig(), SplitSpec(4, 2, 2), workers=2)


@pytest.fixture(scope="session")
def tiny_models(tiny_dataset):
    """Quickly trained (few-epoch) u/v bundles on the tiny dataset."""
    from urbanflow.surrogate import TrainConfig, train

    out = {}
    for comp in ("u", "v"):
        bundle, _ = train(tiny_dataset, None, TrainConfig(component=comp, seed=0, max_epochs=4))
        out[comp] = bundle
    return out


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
