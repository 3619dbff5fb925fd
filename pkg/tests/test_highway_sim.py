import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from occtrack.highway.sim import (
    Full,
    HighwayConfig,
    Reading,
    Vehicle,
    World,
    censored_mass,
    clip_span,
    likelihood_matrix,
    new_world,
    reading_likelihood,
    sense,
    simulate,
    step_world,
    tracker_meas_visibility,
    union_intervals,
    write_readings_csv,
    write_truth_csv,
)
from oracles import ray_spacing, raycast_visible_extents


@pytest.mark.parametrize("bad", [
    {"dt": 0.0},
    {"lane_speeds": (1.0, 2.0)},
    {"lane_offsets": (5.0, 4.0, 12.0, 15.5)},
    {"length_range": (6.0, 4.0)},
    {"headway": 5.0},
    {"field_range": (10.0, -10.0)},
    {"detection_prob": 1.5},
    {"noise_std": -1.0},
    {"steps": -1},
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        HighwayConfig(**bad)


def test_config_roundtrip(tmp_path):
    cfg = HighwayConfig(spawn_rate=0.3, noise_std=0.1)
    assert HighwayConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        HighwayConfig.from_dict({"lanes": 3})
    path = tmp_path / "hw.json"
    path.write_text('{"clutter_rate": 0.0}')
    assert HighwayConfig.load(path).clutter_rate == 0.0


intervals = st.lists(st.tuples(st.floats(-10, 10), st.floats(0, 5)).map(lambda t: (t[0], t[0] + t[1])),
                     max_size=8)


@given(intervals, st.lists(st.floats(-12, 17), min_size=1, max_size=20))
def test_union_intervals_matches_naive_cover(ivs, probes):
    union = union_intervals(ivs)
    for (a, b), (c, d) in zip(union, union[1:]):
        assert a <= b < c <= d
    for u in probes:
        naive = any(lo <= u <= hi for lo, hi in ivs)
        assert naive == any(lo <= u <= hi for lo, hi in union)


def test_clip_span_cases():
    union = [(0.0, 1.0), (2.0, 3.0)]
    assert clip_span(0.2, 0.8, union) is None
    assert clip_span(4.0, 5.0, union) == (None, None, 4.0, 5.0)
    assert clip_span(0.5, 1.5, union) == ((0.0, 1.0), None, 1.0, 1.5)
    assert clip_span(1.5, 2.5, union) == (None, (2.0, 3.0), 1.5, 2.0)
    # two different blockers hide both ends; the middle stays visible
    assert clip_span(0.5, 2.5, union) == ((0.0, 1.0), (2.0, 3.0), 1.0, 2.0)


def _ideal(**kw):
    return HighwayConfig(detection_prob=1.0, noise_std=0.0, clutter_rate=0.0, **kw)


def test_owo_readings_match_ray_casting():
    cfg = _ideal(spawn_rate=0.5)
    checked = 0
    for world, readings in simulate(cfg, "owo", steps=400, seed=3):
        if world.step % 20:
            continue
        vehicles = [(v.id, v.lane, v.back, v.front) for v in world.vehicles]
        rays = raycast_visible_extents(vehicles, cfg.lane_y)
        by_source = {r.source: r for r in readings}
        for vid, lane, back, front in vehicles:
            lo, hi, hits = rays[vid]
            r = by_source.get(vid)
            y = cfg.lane_y(lane)
            if hits == 0:
                if r is not None:
                    tol = 2 * max(ray_spacing(x, y) for x in r.visible_span)
                    assert r.visible_span[1] - r.visible_span[0] < tol
                continue
            assert r is not None
            got_lo, got_hi = r.visible_span
            assert got_lo == pytest.approx(lo, abs=2 * ray_spacing(lo, y))
            assert got_hi == pytest.approx(hi, abs=2 * ray_spacing(hi, y))
            assert (r.back_interval is None) == (r.back == back)
            assert (r.front_interval is None) == (r.front == front)
            checked += 1
    assert checked > 100


def test_owo_equals_mwo_without_noise():
    cfg = _ideal(spawn_rate=0.5)
    key = lambda r: (r.lane, r.back, r.front, r.back_interval, r.front_interval, r.source)  # noqa: E731
    for (w1, a), (w2, b) in zip(simulate(cfg, "owo", steps=200, seed=5), simulate(cfg, "mwo", steps=200, seed=5)):
        assert [v.id for v in w1.vehicles] == [v.id for v in w2.vehicles]
        assert sorted(map(key, a), key=repr) == sorted(map(key, b), key=repr)


def _scene():
    cfg = HighwayConfig(detection_prob=1.0, clutter_rate=0.0, noise_std=0.3)
    world = World([Vehicle(0, 0, -2.0, 4.0, 22.0), Vehicle(1, 1, 2.0, 5.0, 25.0)])
    return cfg, world


def test_constructed_scene_owo_clips_on_true_spans():
    cfg, world = _scene()
    rs = {r.source: r for r in sense(world, cfg, "owo", np.random.default_rng(0),
                                     noise={0: (0.0, 1.0), 1: (0.0, 0.0)})}
    assert rs[0].kind == "full" and rs[0].front == 3.0
    far = rs[1]
    assert far.which_end_occluded == "back"
    assert far.back_interval == pytest.approx((-0.4 * 8.5, 0.4 * 8.5))
    assert far.front == 7.0


def test_constructed_scene_mwo_clips_on_noisy_readings():
    cfg, world = _scene()
    rs = {r.source: r for r in sense(world, cfg, "mwo", np.random.default_rng(0),
                                     noise={0: (0.0, 1.0), 1: (0.0, 0.0)})}
    assert rs[1].back_interval == pytest.approx((-0.4 * 8.5, 0.6 * 8.5))
    rs = {r.source: r for r in sense(world, cfg, "mwo", np.random.default_rng(0),
                                     noise={0: (0.0, 5.0), 1: (0.0, 0.0)})}
    assert 1 not in rs          # the stretched near reading hides the far car entirely


def test_sense_rejects_unknown_mode():
    cfg, world = _scene()
    with pytest.raises(ValueError):
        sense(world, cfg, "xyz", np.random.default_rng(0))


def test_spawn_rate():
    cfg = HighwayConfig(spawn_rate=0.2, clutter_rate=0.0)
    rng = np.random.default_rng(11)
    world = new_world(cfg, rng)
    for _ in range(5000):
        world = step_world(world, cfg, rng)
    expected = cfg.spawn_rate * world.time * cfg.n_lanes
    assert world.spawned == pytest.approx(expected, rel=0.12)
    for lane in range(cfg.n_lanes):
        backs = sorted(v.back for v in world.vehicles if v.lane == lane)
        fronts = sorted(v.front for v in world.vehicles if v.lane == lane)
        assert all(b2 - f1 >= cfg.headway - cfg.length_range[1] - 1e-9 for f1, b2 in zip(fronts, backs[1:]))


def test_empty_world_at_start():
    cfg = HighwayConfig()
    world, _ = next(simulate(cfg, "mwo", steps=1, seed=0))
    assert all(v.back <= cfg.field_range[0] + max(cfg.lane_speeds) * cfg.dt for v in world.vehicles)


@given(st.floats(-5, 5), st.floats(0, 4), st.floats(-8, 8), st.floats(0.05, 2))
@settings(max_examples=60, deadline=None)
def test_censored_mass_against_quadrature(lo, width, mean, sigma):
    hi = lo + width
    pdf = lambda x: math.exp(-0.5 * ((x - mean) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))  # noqa: E731
    want, _ = quad(pdf, lo, hi, points=[mean] if lo < mean < hi else None)
    assert float(censored_mass(lo, hi, mean, sigma)) == pytest.approx(want, abs=1e-9)


def test_censored_mass_without_noise():
    np.testing.assert_array_equal(censored_mass(0.0, 1.0, [-0.5, 0.0, 0.5, 1.5], 0.0), [0, 1, 1, 0])


def test_likelihood_matrix_matches_scalar():
    cfg = HighwayConfig(noise_std=0.4)
    readings = [Full(0, 1.0, 5.5), Reading(1, front=7.0, back_interval=(0.0, 3.0)),
                Reading(2, back=-2.0, front_interval=(1.0, 4.0)),
                Reading(3, back_interval=(-1.0, 0.0), front_interval=(4.0, 6.0))]
    rng = np.random.default_rng(0)
    back, length = rng.uniform(-3, 3, 50), rng.uniform(4, 6, 50)
    M = likelihood_matrix(readings, back, length, cfg)
    for j, r in enumerate(readings):
        np.testing.assert_allclose(M[:, j], reading_likelihood(r, back, length, cfg), rtol=1e-12)
    with pytest.raises(ValueError):
        reading_likelihood(readings[0], back, length, HighwayConfig(noise_std=0.0))


def test_reading_properties_and_visibility():
    cfg = HighwayConfig()
    r = Reading(1, front=7.0, back_interval=(-3.4, 3.4))
    assert r.kind == "partial" and r.visible_span == (3.4, 7.0)
    assert Full(0, 1.0, 2.0).which_end_occluded is None
    near = [Full(0, -2.0, 2.0)]
    assert tracker_meas_visibility(Full(1, -1.0, 1.0), near, cfg) == 0.0
    assert tracker_meas_visibility(Full(1, 2.0, 7.0), near, cfg) == 1.0
    assert tracker_meas_visibility(Full(0, -1.0, 1.0), near, cfg) == 1.0


def test_csv_export(tmp_path):
    cfg = HighwayConfig(clutter_rate=1.0)
    data = list(simulate(cfg, "mwo", steps=60, seed=2))
    path = tmp_path / "r.csv"
    write_readings_csv(path, [rs for _, rs in data])
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == sum(len(rs) for _, rs in data)
    for row in rows:
        assert row["kind"] in ("full", "partial")
        assert (row["back"] == "") == (row["back_lo"] != "")
    truth = tmp_path / "t.csv"
    write_truth_csv(truth, [w for w, _ in data])
    with open(truth) as fh:
        assert sum(1 for _ in fh) == 1 + sum(len(w.vehicles) for w, _ in data)
