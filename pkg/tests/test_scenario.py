import numpy as np
import pytest

from phasenav.channel import LosProbabilityModel, NoiseConfig
from phasenav.scenario import (
    CoverageGrid,
    ObstacleMap,
    Rect,
    ScenarioConfig,
    TrpSite,
    WaypointTrack,
    coverage_grid,
    generate_random_waypoint_track,
    load_scenario,
    los_visible,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from phasenav.util import csv_rows


def make_config(**kw):
    base = dict(
        trp_list=[TrpSite("TRP-1", [0.0, 0.0, 10.0]), TrpSite("TRP-2", [50.0, 0.0, 10.0])],
        ue_init=[10.0, 10.0, 1.5],
    )
    base.update(kw)
    return ScenarioConfig(**base)


def test_trp_site_validation():
    with pytest.raises(ValueError):
        TrpSite("TRP-1", [0.0, 0.0])
    with pytest.raises(ValueError):
        TrpSite("TRP-1", [0.0, 0.0, -1.0])


def test_rect_properties():
    r = Rect(0.0, -5.0, 10.0, 5.0)
    assert r.width == 10.0
    assert r.height == 10.0
    with pytest.raises(ValueError):
        Rect(1.0, 0.0, 0.0, 1.0)


def test_scenario_config_validation():
    with pytest.raises(ValueError):
        make_config(comb_size=5)  # not a standard comb
    with pytest.raises(ValueError):
        make_config(comb_offset=6)
    with pytest.raises(ValueError):
        make_config(num_subcarriers=4000, subcarrier_spacing=30e3, bandwidth=100e6)
    with pytest.raises(ValueError):
        make_config(trp_list=[])
    with pytest.raises(ValueError):
        make_config(trp_list=[TrpSite("A", [0, 0, 10]), TrpSite("A", [1, 0, 10])])


def test_max_link_distance_bounds_every_pair():
    config = make_config()
    bound = config.max_link_distance
    for trp in config.trp_list:
        assert np.linalg.norm(config.ue_init - trp.position) <= bound + 1e-12
    # moving the UE to a corner of the implied box never exceeds the bound
    assert bound >= 50.0


def test_obstacle_map_file_round_trip(tmp_path):
    obs = ObstacleMap(boxes=(((0.0, 1.0, 2.0), (3.0, 4.0, 5.0)), ((-1.0, -2.0, 0.0), (0.5, 0.25, 9.0))))
    path = tmp_path / "boxes.txt"
    obs.to_file(path)
    back = ObstacleMap.from_file(path)
    assert len(back.boxes) == 2
    for (lo_a, hi_a), (lo_b, hi_b) in zip(obs.boxes, back.boxes):
        assert np.allclose(lo_a, lo_b)
        assert np.allclose(hi_a, hi_b)


def test_obstacle_map_rejects_inverted_boxes():
    with pytest.raises(ValueError):
        ObstacleMap(boxes=(((0.0, 0.0, 0.0), (-1.0, 1.0, 1.0)),))


def test_los_visible_blocking_and_grazing():
    wall = ObstacleMap(boxes=(((4.0, -1.0, 0.0), (6.0, 1.0, 20.0)),))
    # straight through the wall
    assert not los_visible([0, 0, 5], [10, 0, 5], wall)
    # around the wall
    assert los_visible([0, 5, 5], [10, 5, 5], wall)
    # over the wall
    assert los_visible([0, 0, 25], [10, 0, 25], wall)
    # grazing the face exactly does not block
    assert los_visible([0, 1.0, 5], [10, 1.0, 5], wall)
    empty = ObstacleMap()
    assert los_visible([0, 0, 0.0], [1, 1, 1], empty)
    with pytest.raises(ValueError):
        los_visible([1, 2, 3], [1, 2, 3], empty)


def test_los_visible_endpoint_inside_box():
    box = ObstacleMap(boxes=(((0.0, 0.0, 0.0), (10.0, 10.0, 10.0)),))
    # receiver buried in the box: the open segment crosses the interior
    assert not los_visible([5, 5, 5], [20, 5, 5], box)


def test_waypoint_track_geometry():
    config = make_config(ue_speed=1.5, rng_seed=3)
    area = Rect(0.0, 0.0, 40.0, 40.0)
    track = generate_random_waypoint_track(config, area, duration=30.0, dt=0.5)
    steps = np.linalg.norm(np.diff(track.positions, axis=0), axis=1)
    assert np.allclose(steps, 1.5 * 0.5, atol=1e-9)
    assert np.all(track.positions[:, 0] >= -1e-9)
    assert np.all(track.positions[:, 0] <= 40.0 + 1e-9)
    assert np.all(track.positions[:, 2] == 1.5)
    assert track.duration == pytest.approx(30.0)
    assert track.path_length == pytest.approx(steps.sum())
    with pytest.raises(ValueError):
        generate_random_waypoint_track(config, area, duration=30.0, dt=0.0)
    with pytest.raises(ValueError):
        generate_random_waypoint_track(config, Rect(0.0, 0.0, 0.5, 0.5), duration=30.0, dt=1.0)


def test_coverage_grid_unobstructed_counts_all_sites():
    trps = [TrpSite("A", [0, 0, 10]), TrpSite("B", [100, 0, 10]), TrpSite("C", [0, 100, 10])]
    grid = coverage_grid(ObstacleMap(), trps, cell_size=10.0, region=Rect(0, 0, 100, 100))
    assert grid.counts.shape == (10, 10)
    assert np.all(grid.counts == 3)
    assert grid.fraction_positionable == 1.0
    assert grid.fraction_with_at_least(4) == 0.0


def test_coverage_grid_single_wall_shadow():
    """A wall between the site and part of the region shadows exactly the far half."""
    trps = [TrpSite("A", [50.0, -20.0, 10.0])]
    # wall spans the full region width at y in [0, 2], taller than the site
    wall = ObstacleMap(boxes=(((-10.0, 0.0, 0.0), (110.0, 2.0, 30.0)),))
    grid = coverage_grid(wall, trps, cell_size=2.0, region=Rect(0.0, -20.0, 100.0, 100.0), ue_height=1.5)
    xs, ys = grid.cell_centers()
    for j, y in enumerate(ys):
        expected = 1 if y < 0.0 else 0
        assert np.all(grid.counts[j, :] == expected), f"row y={y}"


def test_coverage_monotone_under_site_addition(rng):
    """Adding a site never decreases any cell count."""
    for trial in range(20):
        boxes = []
        for _ in range(rng.integers(1, 5)):
            lo = rng.uniform([0, 0, 0], [80, 80, 0])
            size = rng.uniform([2, 2, 5], [20, 20, 25])
            boxes.append((tuple(lo), tuple(lo + size)))
        obs = ObstacleMap(boxes=tuple(boxes))
        sites = [TrpSite(f"S{i}", rng.uniform([0, 0, 8], [100, 100, 15])) for i in range(3)]
        extra = TrpSite("S3", rng.uniform([0, 0, 8], [100, 100, 15]))
        region = Rect(0.0, 0.0, 100.0, 100.0)
        base = coverage_grid(obs, sites, cell_size=10.0, region=region)
        more = coverage_grid(obs, sites + [extra], cell_size=10.0, region=region)
        assert np.all(more.counts >= base.counts)
        assert more.fraction_positionable >= base.fraction_positionable


def test_coverage_grid_csv(tmp_path):
    trps = [TrpSite("A", [0, 0, 10])]
    grid = coverage_grid(ObstacleMap(), trps, cell_size=5.0, region=Rect(0, 0, 10, 10))
    path = tmp_path / "coverage.csv"
    grid.to_csv(path)
    rows = csv_rows(path)
    assert rows[0] == ["x", "y", "los_count"]
    assert len(rows) == 1 + 4


def test_coverage_grid_validation():
    trps = [TrpSite("A", [0, 0, 10])]
    with pytest.raises(ValueError):
        coverage_grid(ObstacleMap(), trps, cell_size=0.0, region=Rect(0, 0, 10, 10))
    with pytest.raises(ValueError):
        coverage_grid(ObstacleMap(), trps, cell_size=20.0, region=Rect(0, 0, 10, 10))


def test_scenario_yaml_round_trip(tmp_path):
    config = make_config(
        comb_offset=2,
        noise=NoiseConfig(
            snr_db=20.0,
            phase_noise_std=0.024,
            los_probability_model=LosProbabilityModel(breakpoint_m=18.0, decay_m=36.0, scale=0.9),
        ),
        rng_seed=11,
    )
    path = tmp_path / "scenario.yaml"
    save_scenario(config, path)
    back = load_scenario(path)
    assert scenario_to_dict(back) == scenario_to_dict(config)
    assert back.noise.snr_db == 20.0
    assert back.noise.los_probability_model.scale == 0.9
    assert [t.id for t in back.trp_list] == ["TRP-1", "TRP-2"]


def test_scenario_dict_round_trip_infinite_snr():
    config = make_config()  # default NoiseConfig has snr_db = inf
    data = scenario_to_dict(config)
    back = scenario_from_dict(data)
    assert np.isinf(back.noise.snr_db)
