import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occtrack.densities import Bernoulli, Discrete, Gaussian, MeasurementModel, Particles
from occtrack.occlusion import (
    AngularInterval,
    BoxOverlap,
    VisibilityGrid,
    box_meas_visibility,
    box_occlusion_prob,
    box_overlap_fraction,
    center_to_box,
    combine_product,
    combine_softmax,
    expval_softmax_visibility,
    grid_visibility_update,
    mwo_augmented_miss,
    occluded_clutter_factor,
    static_owo_detection,
)

probs = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6)


def test_softmax_single_occluder_is_identity():
    for q in (0.0, 0.3, 1.0):
        assert combine_softmax([q]) == pytest.approx(q)
    assert combine_softmax([]) == 0.0


def test_softmax_by_hand():
    q = np.array([0.2, 0.6])
    want = 0.6 + math.exp(4 * (0.2 - 0.6)) * 0.2
    assert combine_softmax(q, beta=4.0) == pytest.approx(want)


@given(probs)
def test_softmax_bounds(q):
    v = combine_softmax(q)
    assert 0.0 <= v <= 1.0
    assert v >= max(q) - 1e-12 or v == 1.0


@given(probs, st.integers(0, 5), st.floats(0, 1))
def test_softmax_monotone_in_each_argument(q, k, bump):
    k = k % len(q)
    higher = list(q)
    higher[k] = max(q[k], bump)
    assert combine_softmax(higher) >= combine_softmax(q) - 1e-12


@given(probs)
def test_product_combiner_is_independent_union(q):
    assert combine_product(q) == pytest.approx(1 - np.prod(1 - np.array(q)))


def test_angular_interval_kernel():
    span = lambda s: (s[0], s[1], s[2])  # noqa: E731
    k = AngularInterval(span)
    assert k((2.0, 0.0, 1.0), (1.0, 0.5, 2.0)) == pytest.approx(0.5)
    assert k((1.0, 0.0, 1.0), (2.0, 0.0, 1.0)) == 0.0     # occluder behind
    assert k((2.0, 0.0, 1.0), (1.0, -5.0, 5.0)) == 1.0


def test_box_overlap_and_lower_bottom_rule():
    assert box_overlap_fraction((0, 0, 2, 2), (1, 1, 2, 2)) == pytest.approx(0.25)
    assert box_overlap_fraction((0, 0, 2, 2), (5, 5, 1, 1)) == 0.0
    k = BoxOverlap(threshold=0.5)
    assert k((0, 0, 2, 2), (1, 1, 2, 2)) == pytest.approx(0.5)   # occluder bottom is lower
    assert k((1, 1, 2, 2), (0, 0, 2, 2)) == 0.0
    assert box_occlusion_prob((0, 0, 2, 2), [(1, 1, 2, 2)], occludability=0.8) == pytest.approx(0.4)
    assert box_occlusion_prob((1, 1, 2, 2), [(0, 0, 2, 2)], occludability=1.0) == 0.0


def test_center_to_box_batch():
    z = np.array([[10.0, 20.0, 4.0, 6.0], [0.0, 0.0, 2.0, 2.0]])
    np.testing.assert_allclose(center_to_box(z), [[8, 17, 4, 6], [-1, -1, 2, 2]])


def test_box_meas_visibility_matches_scalar_rule():
    vis = box_meas_visibility(0.5, center_format=False)
    Zv = [(1.0, 1.0, 2.0, 2.0)]
    got = vis(np.array([[0.0, 0.0, 2.0, 2.0], [1.0, 1.0, 2.0, 2.0]]), Zv)
    want = [1 - box_occlusion_prob(z, Zv, 1.0) for z in [(0, 0, 2, 2), (1, 1, 2, 2)]]
    np.testing.assert_allclose(got, want)


def test_expval_visibility_uses_existence_and_means():
    kernel = AngularInterval(lambda s: (s[0], s[1], s[1] + 1.0))
    target = Bernoulli(1.0, Gaussian([2.0, 0.0], np.eye(2)))
    occ = Bernoulli(0.6, Gaussian([1.0, 0.5], np.eye(2)))
    v = expval_softmax_visibility(target, [occ], kernel)
    assert v == pytest.approx(1 - 0.6 * 0.5)


def test_static_detection_scales():
    f = static_owo_detection(0.8, lambda x: 0.5)
    assert f(None) == pytest.approx(0.4)
    assert static_owo_detection(0.8, 0.5) == pytest.approx(0.4)


def _footprint(points):
    pts = np.atleast_2d(points)
    return pts[:, 0], pts[:, 1], pts[:, 1] + 1.0


def test_grid_visibility_against_sampling():
    occluder = Particles(np.column_stack([np.ones(400), np.linspace(0, 2, 400)]), np.ones(400))
    grid = grid_visibility_update(VisibilityGrid.uniform(-1, 4, 500, depth=2.0), [(occluder, 0.7)], _footprint)
    # a cell at u is covered when the occluder's lo lies in [u - 1, u]
    for u in (0.5, 1.5, 3.5):
        lo = occluder.points[:, 1]
        covered = np.mean((lo <= u) & (lo + 1.0 >= u))
        c = np.argmin(np.abs(grid.centers - u))
        assert grid.visibility[c] == pytest.approx(1 - 0.7 * covered, abs=0.01)
    same_layer = grid_visibility_update(VisibilityGrid.uniform(-1, 4, 50, depth=1.0), [(occluder, 0.7)],
                                        _footprint)
    assert np.all(same_layer.visibility == 1.0)


def test_grid_object_visibility_is_max_over_span():
    g = VisibilityGrid(np.arange(6.0), np.array([0.1, 0.9, 0.2, 0.3, 0.4]))
    assert g.object_visibility(0.2, 2.8)[0] == pytest.approx(0.9)
    assert g.object_visibility(10.0, 11.0, fill=0.7)[0] == pytest.approx(0.7)
    with pytest.raises(ValueError):
        VisibilityGrid(np.array([0.0, 1.0]), np.ones(2))


def _discrete_model(pd=0.7):
    cells = [0, 1, 2]
    L = np.array([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]])
    return MeasurementModel(pd, likelihood=lambda x, z: L[x, z], clutter_rate=1.0,
                            clutter_density=lambda z: 1 / 3, measurement_support=cells)


def test_augmented_miss_by_hand():
    model = _discrete_model()
    vis = lambda z, Zv: 0.0 if (z == 2 and 1 in Zv) else 1.0  # noqa: E731
    miss = mwo_augmented_miss(model, [1], vis)
    assert miss(2) == pytest.approx(1 - 0.7 + 0.7 * 0.8)
    assert miss(0) == pytest.approx(1 - 0.7 + 0.7 * 0.1)
    plain = mwo_augmented_miss(model, [1], lambda z, Zv: 1.0)
    assert plain(0) == pytest.approx(0.3)


@given(st.floats(0, 1), st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_augmented_miss_between_plain_and_one(pd, hidden):
    model = _discrete_model(pd)
    miss = mwo_augmented_miss(model, [0], lambda z, Zv: 1 - hidden[z])
    for x in range(3):
        assert 1 - pd - 1e-12 <= miss(x) <= 1 + 1e-12


def test_occluded_clutter_factor():
    pts, w = [0, 1, 2], [1, 1, 1]
    f = occluded_clutter_factor(2.0, lambda z: 1 / 3, [], lambda z, Zv: 0.5 if z == 1 else 1.0, (pts, w))
    assert f == pytest.approx(math.exp(2.0 * (1 / 3) * 0.5))
    assert occluded_clutter_factor(0.0, 1.0, [], None, (pts, w)) == 1.0


def test_discrete_target_in_expval():
    kernel = lambda t, o: 1.0  # noqa: E731
    target = Bernoulli(1.0, Discrete(((0.0,),), [1.0]))
    assert expval_softmax_visibility(target, [], kernel) == 1.0
