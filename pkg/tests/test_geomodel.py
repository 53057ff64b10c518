import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import footprint_inside_square, polygon_is_simple
from urbanflow.errors import FormatError, SamplingBudgetError, ValidationError
from urbanflow.geomodel import (
    CityModel,
    Footprint,
    SamplerConfig,
    SynthConfig,
    height_histogram,
    load_city,
    sample_dataset,
    sample_tile,
    save_city,
    synth_city,
    tile_at,
)

UNIT_SQUARE = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))


def square(x, y, w, d, h=20.0):
    return Footprint(((x, y), (x + w, y), (x + w, y + d), (x, y + d)), h)


class TestFootprint:
    def test_needs_three_vertices(self):
        with pytest.raises(ValidationError):
            Footprint(((0, 0), (1, 0)), 10.0)

    def test_rejects_nonpositive_height(self):
        with pytest.raises(ValidationError):
            Footprint(UNIT_SQUARE, 0.0)

    def test_rejects_bowtie(self):
        bowtie = ((0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0))
        assert not polygon_is_simple(bowtie)  # oracle agrees it is degenerate
        with pytest.raises(ValidationError):
            Footprint(bowtie, 10.0)

    def test_clockwise_input_normalized_to_ccw(self):
        fp = Footprint(tuple(reversed(UNIT_SQUARE)), 5.0)
        arr = fp.vertex_array()
        area2 = np.sum(arr[:, 0] * np.roll(arr[:, 1], -1) - np.roll(arr[:, 0], -1) * arr[:, 1])
        assert area2 > 0


class TestCityIO:
    def test_empty_city_accepted(self, tmp_path):
        p = tmp_path / "city.json"
        p.write_text(json.dumps({"format": "uf-city", "version": 1, "buildings": []}))
        city = load_city(p)
        assert city.footprints == ()
        assert city.bounds == (0.0, 0.0, 0.0, 0.0)

    def test_unit_square_identity(self, tmp_path):
        p = tmp_path / "city.json"
        doc = {
            "format": "uf-city",
            "version": 1,
            "buildings": [{"height": 30.0, "vertices": [[0, 0], [1, 0], [1, 1], [0, 1]]}],
        }
        p.write_text(json.dumps(doc))
        city = load_city(p)
        assert city.n_buildings == 1
        assert city.bounds == (0.0, 0.0, 1.0, 1.0)
        assert city.footprints[0].height == 30.0

    def test_bowtie_file_rejected(self, tmp_path):
        p = tmp_path / "city.json"
        doc = {
            "format": "uf-city",
            "version": 1,
            "buildings": [{"height": 10.0, "vertices": [[0, 0], [1, 1], [1, 0], [0, 1]]}],
        }
        p.write_text(json.dumps(doc))
        with pytest.raises(ValidationError):
            load_city(p)

    def test_malformed_file(self, tmp_path):
        p = tmp_path / "city.json"
        p.write_text("{not json")
        with pytest.raises(FormatError):
            load_city(p)

    def test_wrong_marker(self, tmp_path):
        p = tmp_path / "city.json"
        p.write_text(json.dumps({"format": "something-else", "version": 1}))
        with pytest.raises(FormatError):
            load_city(p)

    def test_round_trip(self, unit_city, tmp_path):
        save_city(unit_city, tmp_path / "c.json")
        again = load_city(tmp_path / "c.json")
        assert again == unit_city


class TestTileMembership:
    def test_single_building_in_plain(self):
        city = CityModel((square(4975, 4975, 50, 50),), (0, 0, 10000, 10000))
        tile = tile_at(city, (5000, 5000), SamplerConfig())
        assert tile is not None and tile.n_buildings == 1

    def test_straddling_east_edge_excluded(self):
        inside = square(400, 400, 50, 50)
        straddler = square(980, 400, 50, 50)  # crosses x = 1000
        city = CityModel((inside, straddler), (-500, -500, 1500, 1500))
        tile = tile_at(city, (500, 500), SamplerConfig())
        assert tile is not None and tile.n_buildings == 1

    def test_touching_boundary_excluded(self):
        toucher = square(950.0, 400.0, 50.0, 50.0)  # east face exactly on x = 1000
        city = CityModel((toucher,), (-500, -500, 1500, 1500))
        assert tile_at(city, (500.0, 500.0), SamplerConfig()) is None

    def test_membership_matches_geometric_oracle(self):
        fps = (
            square(100, 100, 80, 60, h=20.0),
            square(940, 500, 100, 40, h=21.0),  # straddles east edge
            square(500, 980, 30, 60, h=22.0),  # straddles north edge
            square(700, 700, 50, 50, h=23.0),
            square(-100, 500, 50, 50, h=24.0),  # fully outside
        )
        city = CityModel(fps, (-200, -200, 1500, 1500))
        tile = tile_at(city, (500, 500), SamplerConfig(min_buildings=1))
        kept_heights = {fp.height for fp in tile.footprints}
        for fp in fps:
            expected = footprint_inside_square(fp.vertices, 0.0, 0.0, 1000.0)
            assert (fp.height in kept_heights) == expected
        assert tile.n_buildings == sum(
            footprint_inside_square(fp.vertices, 0.0, 0.0, 1000.0) for fp in fps
        )

    def test_tile_local_coordinates_strictly_inside(self, unit_city):
        cfg = SamplerConfig(seed=3)
        tiles = sample_dataset(unit_city, 5, cfg)
        for tile in tiles:
            for fp in tile.footprints:
                arr = fp.vertex_array()
                assert arr.min() > 0 and arr.max() < tile.side


class TestSampling:
    def test_deterministic(self, unit_city):
        cfg = SamplerConfig(seed=42)
        a = sample_dataset(unit_city, 10, cfg)
        b = sample_dataset(unit_city, 10, cfg)
        assert a == b  # bit-exact coordinates included

    def test_oracle_revalidates_membership(self, unit_city):
        cfg = SamplerConfig(seed=9)
        tiles = sample_dataset(unit_city, 50, cfg)
        fps = unit_city.footprints
        for tile in tiles:
            x0, y0 = tile.origin
            expected = sum(
                footprint_inside_square(fp.vertices, x0, y0, tile.side) for fp in fps
            )
            assert tile.n_buildings == expected

    def test_budget_exhaustion_reports_accepted(self):
        city = CityModel((square(10, 10, 20, 20),), (0, 0, 100000, 100000))
        cfg = SamplerConfig(seed=1, max_attempts_per_tile=5)
        with pytest.raises(SamplingBudgetError) as exc:
            sample_dataset(city, 3, cfg)
        assert exc.value.requested == 3
        assert 0 <= exc.value.accepted < 3

    def test_city_smaller_than_tile_rejected(self):
        city = CityModel((square(1, 1, 2, 2),), (0, 0, 500, 500))
        with pytest.raises(ValidationError):
            sample_tile(city, SamplerConfig(), np.random.default_rng(0))


class TestHistogram:
    def test_hand_counts(self):
        city = CityModel(
            (square(0, 0, 1, 1, 10.0), square(2, 2, 1, 1, 10.0), square(4, 4, 1, 1, 50.0)),
            (0, 0, 10, 10),
        )
        edges, counts = height_histogram(city, 20.0)
        assert np.allclose(edges, [0, 20, 40, 60])
        assert counts.tolist() == [2, 0, 1]

    def test_empty_city(self):
        city = CityModel((), (0, 0, 0, 0))
        edges, counts = height_histogram(city, 5.0)
        assert len(edges) == 0 and len(counts) == 0

    def test_counts_match_bruteforce(self, rng):
        heights = rng.uniform(1.0, 120.0, size=1000)
        fps = tuple(square(3 * i, 0, 1, 1, h) for i, h in enumerate(heights))
        city = CityModel(fps, (0, 0, 3200, 10))
        edges, counts = height_histogram(city, 7.5)
        assert counts.sum() == 1000
        brute = np.zeros(len(counts), dtype=int)
        for h in heights:
            brute[int(h // 7.5)] += 1
        assert counts.tolist() == brute.tolist()

    @given(st.integers(1, 400))
    @settings(max_examples=20, deadline=None)
    def test_counts_sum_to_building_count(self, n):
        rng = np.random.default_rng(n)
        heights = rng.uniform(0.5, 90.0, size=n)
        fps = tuple(square(3 * i, 0, 1, 1, h) for i, h in enumerate(heights))
        city = CityModel(fps, (0, 0, 3 * n + 10, 10))
        _, counts = height_histogram(city, 11.0)
        assert counts.sum() == n


class TestSynthCity:
    def test_deterministic_and_in_bounds(self):
        a = synth_city(SynthConfig(n_buildings=50, seed=2))
        b = synth_city(SynthConfig(n_buildings=50, seed=2))
        assert a == b
        xmin, ymin, xmax, ymax = a.bounds
        for fp in a.footprints:
            arr = fp.vertex_array()
            assert arr[:, 0].min() >= xmin and arr[:, 0].max() <= xmax

    def test_no_overlaps(self):
        city = synth_city(SynthConfig(n_buildings=60, seed=4))
        boxes = city.footprint_bboxes()
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                a, b = boxes[i], boxes[j]
                assert a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1]
