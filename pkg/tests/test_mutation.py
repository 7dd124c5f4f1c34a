import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from farecourt.errors import JunctionGapError, MutationError
from farecourt.geo import GeoPoint, Polyline, planar_distance, polyline_length
from farecourt.mutation import (
    ARRIVAL_THEN_LEAVE,
    COMPLIANT,
    DEVIATION,
    DRIFT_ONLY,
    REVERSE,
    LabeledTrajectory,
    MutationConfig,
    classify_noise_free,
    mutate_arrival_then_leave,
    mutate_deviation,
    mutate_reverse,
    offset_waypoint,
    stitch,
    synthesize,
    synthesize_compliant,
)
from farecourt.network import PoiPair, plan_route, sample_poi_pair

NOISELESS = MutationConfig(sigma=0.0)


def _route(net, seed):
    return plan_route(net, sample_poi_pair(net, seed, 500))


def _turning_route(net, start_seed=0):
    for s in range(start_seed, start_seed + 200):
        r = _route(net, s)
        if r.intersections:
            return r
    raise AssertionError("no route with a turn")


def test_stitch_drops_junction():
    out = stitch(Polyline([(0, 0), (1, 0)]), Polyline([(1, 0), (2, 0)]))
    assert np.array_equal(out.points, [(0, 0), (1, 0), (2, 0)])


def test_stitch_rejects_gap():
    with pytest.raises(JunctionGapError):
        stitch(Polyline([(0, 0), (1, 0)]), Polyline([(1.5, 0), (2, 0)]))
    assert len(stitch(Polyline([(0, 0), (1, 0)]), Polyline([(1.5, 0), (2, 0)]), allow_gap=True)) == 4


def test_stitch_with_single_point_suffix():
    prefix = Polyline([(0, 0), (1, 0)])
    assert stitch(prefix, Polyline([(1, 0)])) == prefix


def test_zero_sigma_is_exact_route(city):
    route = _route(city, 1)
    traj = synthesize_compliant(route, MutationConfig(sigma=0))
    assert traj.path == route.geo and traj.label == COMPLIANT


def test_positive_sigma_labels_drift(city):
    route = _route(city, 1)
    assert synthesize_compliant(route, MutationConfig(sigma=10)).label == DRIFT_ONLY
    assert synthesize_compliant(route, MutationConfig(sigma=10, label_drift=False)).label == COMPLIANT


def test_sigma_out_of_range_rejected(city):
    with pytest.raises(ValueError):
        synthesize_compliant(_route(city, 1), MutationConfig(sigma=31))
    with pytest.raises(ValueError):
        MutationConfig(sigma=-1)


def test_drift_mean_displacement_small_sample(city):
    route = _route(city, 2)
    shifts = []
    seed = 0
    while sum(len(s) for s in shifts) < 1000:
        traj = synthesize_compliant(route, MutationConfig(sigma=10, seed=seed))
        shifts.append(np.hypot(*(traj.path.points - route.geo.points).T))
        seed += 1
    mean = np.concatenate(shifts)[:1000].mean()
    target = 10 * math.sqrt(math.pi / 2)
    assert 0.9 * target <= mean <= 1.1 * target


def test_compliant_is_deterministic(city):
    route = _route(city, 3)
    cfg = MutationConfig(sigma=12, seed=5)
    assert synthesize_compliant(route, cfg).path == synthesize_compliant(route, cfg).path


def test_deviation_vector_example():
    w = offset_waypoint(GeoPoint(0, 0), (1, 0), 200, 90)
    assert w == pytest.approx((0, 200))
    # the heading is normalized, so only its direction matters
    assert offset_waypoint(GeoPoint(0, 0), (5, 0), 200, 90) == pytest.approx((0, 200))


def test_reverse_inversion_example():
    assert offset_waypoint(GeoPoint(0, 0), (1, 0), 1, 180) == pytest.approx((-1, 0))


def test_deviation_on_pure_grid_reaches_destination(grid5):
    route = plan_route(grid5, PoiPair(0, 12, grid5.nodes[0], grid5.nodes[12]))
    for seed in range(10):
        traj = mutate_deviation(route, grid5, MutationConfig(sigma=0, seed=seed))
        assert traj.path.end == route.end
        a = traj.provenance["anchor_index"]
        assert np.array_equal(traj.path.points[: a + 1], route.geo.points[: a + 1])


def test_mutations_need_an_intersection(grid5):
    straight = plan_route(grid5, PoiPair(0, 4, grid5.nodes[0], grid5.nodes[4]))
    with pytest.raises(MutationError):
        mutate_deviation(straight, grid5, NOISELESS)
    with pytest.raises(MutationError):
        mutate_reverse(straight, grid5, NOISELESS)


def test_arrival_then_leave_infeasible_threshold(grid5):
    route = plan_route(grid5, PoiPair(0, 24, grid5.nodes[0], grid5.nodes[24]))
    with pytest.raises(MutationError):
        mutate_arrival_then_leave(route, grid5, MutationConfig(sigma=0, tau_thresh=10_000))


def test_synthesize_rejects_unknown_label(city):
    with pytest.raises(ValueError):
        synthesize("speeding", _route(city, 1), city, NOISELESS)


def test_labeled_trajectory_round_trip(city):
    route = _turning_route(city)
    traj = mutate_deviation(route, city, MutationConfig(sigma=0, seed=3))
    back = LabeledTrajectory.from_dict(json.loads(json.dumps(traj.to_dict())))
    assert back.path == traj.path and back.label == traj.label and back.provenance == traj.provenance


def test_provenance_fields_follow_label(city):
    route = _turning_route(city)
    dev = mutate_deviation(route, city, MutationConfig(sigma=0, seed=1))
    rev = mutate_reverse(route, city, MutationConfig(sigma=0, seed=1))
    esc = mutate_arrival_then_leave(route, city, MutationConfig(sigma=0, seed=1))
    assert set(dev.provenance) == {"anchor_index", "theta", "lambda", "seed"}
    assert set(rev.provenance) == {"anchor_index", "phi", "lambda", "delta", "seed"}
    assert set(esc.provenance) == {"escape_distance", "tau_thresh", "seed"}


def test_drift_after_structural_mutation(city):
    route = _turning_route(city)
    clean = mutate_deviation(route, city, MutationConfig(sigma=0, seed=4))
    noisy = mutate_deviation(route, city, MutationConfig(sigma=10, seed=4, drift_mutations=True))
    assert len(noisy.path) == len(clean.path)
    assert noisy.provenance["sigma"] == 10
    assert not np.array_equal(noisy.path.points, clean.path.points)


seeds = st.integers(0, 10_000)


@settings(max_examples=40)
@given(seeds, seeds)
def test_deviation_properties(city, route_seed, seed):
    route = _turning_route(city, route_seed % 500)
    cfg = MutationConfig(sigma=0, seed=seed)
    try:
        traj = mutate_deviation(route, city, cfg)
    except MutationError:
        # boundary routes can lack any off-route detour node; that is a declared error
        assume(False)
    a = traj.provenance["anchor_index"]
    assert a in route.intersections
    assert np.array_equal(traj.path.points[: a + 1], route.geo.points[: a + 1])
    assert planar_distance(traj.waypoint, route.geo[a]) == pytest.approx(traj.provenance["lambda"], abs=1e-6)
    assert traj.provenance["theta"] in (90.0, 270.0)
    assert traj.path.end == route.end
    assert mutate_deviation(route, city, cfg).path == traj.path


@settings(max_examples=40)
@given(seeds, seeds)
def test_reverse_properties(city, route_seed, seed):
    route = _turning_route(city, route_seed % 500)
    cfg = MutationConfig(sigma=0, seed=seed)
    traj = mutate_reverse(route, city, cfg)
    a = traj.provenance["anchor_index"]
    assert np.array_equal(traj.path.points[: a + 1], route.geo.points[: a + 1])
    leg = Polyline(traj.path.points[a:])
    assert polyline_length(leg) <= cfg.delta + 1e-6
    assert traj.path.end != route.end
    p = route.geo.points
    v = p[a + 1] - p[a]
    w = np.asarray(traj.waypoint) - p[a]
    ang = math.degrees(math.atan2(v[0] * w[1] - v[1] * w[0], v @ w)) % 360
    assert 150 - 1e-6 <= ang <= 210 + 1e-6


@settings(max_examples=40)
@given(seeds, seeds)
def test_arrival_then_leave_properties(city, route_seed, seed):
    route = _route(city, route_seed)
    cfg = MutationConfig(sigma=0, seed=seed)
    traj = mutate_arrival_then_leave(route, city, cfg)
    n = len(route.geo)
    assert np.array_equal(traj.path.points[:n], route.geo.points)
    assert planar_distance(route.end, traj.path.end) > cfg.tau_thresh


@settings(max_examples=25)
@given(seeds)
def test_noise_free_labels_are_separable(city, seed):
    route = _turning_route(city, seed % 500)
    cfg = MutationConfig(sigma=0, seed=seed)
    for label in (COMPLIANT, DEVIATION, REVERSE, ARRIVAL_THEN_LEAVE):
        try:
            traj = synthesize(label, route, city, cfg)
        except MutationError:
            assume(False)  # infeasible route; the dataset builder resamples these
        assert classify_noise_free(traj.path, route) == label
