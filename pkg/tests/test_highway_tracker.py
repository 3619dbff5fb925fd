import numpy as np
import pytest

from occtrack.highway.sim import HighwayConfig, Vehicle, World, sense, simulate, step_world
from occtrack.highway.tracker import STRATEGIES, HighwayTracker, TrackerParams, truth_points
from occtrack.metrics import gospa


def test_unknown_strategy():
    with pytest.raises(ValueError, match="unknown strategy"):
        HighwayTracker(HighwayConfig(), "magic")


def test_empty_estimates_shape():
    t = HighwayTracker(HighwayConfig(), "none", TrackerParams(n_particles=20))
    assert t.estimates().shape == (0, 4)
    assert t.step([]).shape == (0, 4)
    assert t.expected_cardinality >= 0


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_deterministic_given_seed(strategy):
    cfg = HighwayConfig(spawn_rate=0.4)
    data = list(simulate(cfg, "mwo", steps=60, seed=1))
    runs = []
    for _ in range(2):
        t = HighwayTracker(cfg, strategy, TrackerParams(n_particles=50), seed=7)
        runs.append([t.step(rs) for _, rs in data])
    for a, b in zip(*runs):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_tracks_a_single_car(strategy):
    cfg = HighwayConfig(clutter_rate=0.2)   # the world below admits no arrivals
    rng = np.random.default_rng(4)
    world = World([Vehicle(0, 2, cfg.field_range[0] + 1.0, 4.6, cfg.lane_speeds[2])], next_arrival=[np.inf] * 4)
    tracker = HighwayTracker(cfg, strategy, seed=0)
    errors = []
    for k in range(15):
        est = tracker.step(sense(world, cfg, "mwo", rng))
        if k >= 5:
            errors.append(gospa(truth_points(world, cfg), est[:, :3]).total)
        world = step_world(world, cfg, rng)
    assert np.mean(errors) < 1.0
    assert len(tracker.estimates()) == 1
    assert tracker.estimates()[0, 1] == cfg.lane_offsets[2]


def test_truth_points():
    cfg = HighwayConfig()
    assert truth_points(World(), cfg).shape == (0, 3)
    pts = truth_points(World([Vehicle(3, 1, 0.0, 4.0, 25.0)]), cfg)
    np.testing.assert_allclose(pts, [[2.0, 8.5, 4.0]])
