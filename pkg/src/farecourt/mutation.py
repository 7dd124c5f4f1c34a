"""Behavioral trajectory simulation: compliant drift plus three structural violations.

Every operator is a pure function of ``(route, net, cfg)``; randomness comes
only from ``cfg.seed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .errors import JunctionGapError, MutationError
from .geo import (
    JUNCTION_TOL,
    GeoPoint,
    Polyline,
    distance_to_polyline,
    planar_distance,
    polyline_length,
    rotate_vector,
    truncate_polyline,
)
from .network import DEFAULT_POINT_SPACING, RoadNetwork, Route
from .seeding import rng_for

COMPLIANT = "compliant"
DRIFT_ONLY = "drift_only"
DEVIATION = "unintentional_deviation"
REVERSE = "reverse_driving"
ARRIVAL_THEN_LEAVE = "arrival_then_leave"
LABELS = (COMPLIANT, DRIFT_ONLY, DEVIATION, REVERSE, ARRIVAL_THEN_LEAVE)
STRUCTURAL_LABELS = (DEVIATION, REVERSE, ARRIVAL_THEN_LEAVE)

MAX_SIGMA = 30.0
MAX_RESAMPLES = 100


@dataclass(frozen=True)
class MutationConfig:
    sigma: float = 12.0
    lambda_range: tuple[float, float] = (150.0, 400.0)
    delta: float = 300.0
    tau_thresh: float = 250.0
    seed: int = 0
    label_drift: bool = True  # sigma > 0 on a compliant route -> drift_only
    drift_mutations: bool = False  # add sensor noise after structural mutations
    spacing: float = DEFAULT_POINT_SPACING

    def __post_init__(self):
        lo, hi = self.lambda_range
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not (0 < lo <= hi):
            raise ValueError("lambda_range must satisfy 0 < low <= high")
        if self.delta <= 0 or self.tau_thresh <= 0:
            raise ValueError("delta and tau_thresh must be positive")

    def with_seed(self, seed: int) -> "MutationConfig":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class LabeledTrajectory:
    path: Polyline
    label: str
    provenance: dict[str, Any] = field(default_factory=dict)
    waypoint: GeoPoint | None = None  # raw mutated target before snapping

    def __post_init__(self):
        if len(self.path) < 2:
            raise ValueError("trajectory needs at least two points")
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "path": self.path.to_list(),
            "label": self.label,
            "provenance": self.provenance,
            "waypoint": list(self.waypoint) if self.waypoint is not None else None,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "LabeledTrajectory":
        wp = doc.get("waypoint")
        return cls(Polyline(doc["path"]), doc["label"], dict(doc.get("provenance", {})), GeoPoint(*wp) if wp else None)


def stitch(prefix: Polyline, suffix: Polyline, allow_gap: bool = False) -> Polyline:
    """Concatenate two polylines, dropping the shared junction point."""
    gap = planar_distance(prefix.end, suffix.start)
    if gap <= JUNCTION_TOL:
        tail = suffix.points[1:]
    elif allow_gap:
        tail = suffix.points
    else:
        raise JunctionGapError(f"junction gap of {gap:.6g} m between prefix and suffix")
    if len(tail) == 0:
        return prefix
    return Polyline.from_points(np.vstack([prefix.points, tail]))


def apply_drift(path: Polyline, sigma: float, rng: np.random.Generator) -> Polyline:
    if sigma == 0:
        return path
    noise = rng.normal(0.0, sigma, size=path.points.shape)
    return Polyline.from_points(path.points + noise)


def synthesize_compliant(route: Route, cfg: MutationConfig) -> LabeledTrajectory:
    if not 0 <= cfg.sigma <= MAX_SIGMA:
        raise ValueError(f"sigma must be within [0, {MAX_SIGMA}]")
    rng = rng_for(cfg.seed, "drift")
    path = apply_drift(route.geo, cfg.sigma, rng)
    label = DRIFT_ONLY if (cfg.sigma > 0 and cfg.label_drift) else COMPLIANT
    return LabeledTrajectory(path, label, {"sigma": cfg.sigma, "seed": cfg.seed})


def _anchor_candidates(route: Route) -> tuple[int, ...]:
    ks = route.intersections
    if not ks:
        raise MutationError("route has no interior intersection to anchor a mutation")
    # endpoints of the intersection list are skipped only when others remain
    return ks[1:-1] if len(ks) >= 3 else ks


def _heading(route: Route, anchor: int) -> np.ndarray:
    v = route.geo.points[anchor + 1] - route.geo.points[anchor]
    return v / np.hypot(*v)


def offset_waypoint(anchor: GeoPoint, heading, magnitude: float, angle: float) -> GeoPoint:
    """``anchor + magnitude * R_angle(heading)`` with ``heading`` taken as a unit vector."""
    h = np.asarray(heading, dtype=float)
    h = h / np.hypot(*h)
    w = np.asarray(anchor, dtype=float) + magnitude * rotate_vector(h, angle)
    return GeoPoint(float(w[0]), float(w[1]))


def _finish(path: Polyline, label: str, prov: dict, cfg: MutationConfig, rng, waypoint=None) -> LabeledTrajectory:
    if cfg.drift_mutations and cfg.sigma > 0:
        path = apply_drift(path, cfg.sigma, rng)
        prov["sigma"] = cfg.sigma
    prov["seed"] = cfg.seed
    return LabeledTrajectory(path, label, prov, waypoint)


def mutate_deviation(route: Route, net: RoadNetwork, cfg: MutationConfig) -> LabeledTrajectory:
    """Leave the route at an intersection, detour via an off-route node, recover to the destination.

    Snapped detour nodes that coincide with the anchor or lie on the planned
    route are resampled; such detours would retrace the plan instead of
    leaving it.
    """
    candidates = _anchor_candidates(route)
    rng = rng_for(cfg.seed, "deviation")
    on_route = set(route.nodes)
    lo, hi = cfg.lambda_range
    for _ in range(MAX_RESAMPLES):
        anchor = int(candidates[rng.integers(len(candidates))])
        theta = float(rng.choice([90.0, 270.0]))
        lam = float(rng.uniform(lo, hi))
        k = route.geo[anchor]
        w_dev = offset_waypoint(k, _heading(route, anchor), lam, theta)
        target = net.nearest_node(w_dev)
        if target in on_route:
            continue
        anchor_node = route.node_at(anchor)
        history = route.geo.prefix(anchor + 1)
        detour = net.path_polyline(anchor_node, target, cfg.spacing)
        recovery = net.path_polyline(target, route.end_node, cfg.spacing)
        path = stitch(stitch(history, detour), recovery)
        prov = {"anchor_index": anchor, "theta": theta, "lambda": lam}
        return _finish(path, DEVIATION, prov, cfg, rng, w_dev)
    raise MutationError(f"no off-route detour target after {MAX_RESAMPLES} draws")


def mutate_reverse(route: Route, net: RoadNetwork, cfg: MutationConfig) -> LabeledTrajectory:
    """Drive against the planned heading from an intersection, truncated to ``cfg.delta``."""
    candidates = _anchor_candidates(route)
    rng = rng_for(cfg.seed, "reverse")
    lo, hi = cfg.lambda_range
    end = np.asarray(route.end)
    for _ in range(MAX_RESAMPLES):
        anchor = int(candidates[rng.integers(len(candidates))])
        phi = float(rng.uniform(150.0, 210.0))
        lam = float(rng.uniform(lo, hi))
        k = route.geo[anchor]
        w_rev = offset_waypoint(k, _heading(route, anchor), lam, phi)
        anchor_node = route.node_at(anchor)
        target = net.nearest_node(w_rev)
        if target == anchor_node:
            continue
        leg = truncate_polyline(net.path_polyline(anchor_node, target, cfg.spacing), cfg.delta)
        if np.any(np.hypot(*(leg.points - end).T) <= JUNCTION_TOL):
            continue
        path = stitch(route.geo.prefix(anchor + 1), leg)
        prov = {"anchor_index": anchor, "phi": phi, "lambda": lam, "delta": cfg.delta}
        return _finish(path, REVERSE, prov, cfg, rng, w_rev)
    raise MutationError(f"no usable reverse target after {MAX_RESAMPLES} draws")


def mutate_arrival_then_leave(route: Route, net: RoadNetwork, cfg: MutationConfig) -> LabeledTrajectory:
    """Complete the route, then drive to a random node farther than ``tau_thresh`` from the destination."""
    rng = rng_for(cfg.seed, "arrival_then_leave")
    ids, xy = net.node_ids(), net.node_xy()
    end = np.asarray(route.end)
    d = np.hypot(xy[:, 0] - end[0], xy[:, 1] - end[1])
    qualifying = ids[d > cfg.tau_thresh]
    if len(qualifying) == 0:
        raise MutationError(f"no node farther than tau_thresh={cfg.tau_thresh} m from the destination")
    target = int(qualifying[rng.integers(len(qualifying))])
    escape = net.path_polyline(route.end_node, target, cfg.spacing)
    path = stitch(route.geo, escape)
    dist = planar_distance(route.end, net.nodes[target])
    prov = {"escape_distance": dist, "tau_thresh": cfg.tau_thresh}
    return _finish(path, ARRIVAL_THEN_LEAVE, prov, cfg, rng, net.nodes[target])


MUTATORS = {
    DEVIATION: mutate_deviation,
    REVERSE: mutate_reverse,
    ARRIVAL_THEN_LEAVE: mutate_arrival_then_leave,
}


def synthesize(label: str, route: Route, net: RoadNetwork, cfg: MutationConfig) -> LabeledTrajectory:
    """Dispatch to the operator that produces ``label``."""
    if label == COMPLIANT:
        return synthesize_compliant(route, replace(cfg, sigma=0.0))
    if label == DRIFT_ONLY:
        if cfg.sigma <= 0:
            raise MutationError("drift_only needs sigma > 0")
        return synthesize_compliant(route, replace(cfg, label_drift=True))
    try:
        return MUTATORS[label](route, net, cfg)
    except KeyError:
        raise ValueError(f"unknown label {label!r}") from None


# -- trajectory descriptors ----------------------------------------------


@dataclass(frozen=True)
class TrajectoryFeatures:
    reaches_destination: bool
    max_route_offset: float
    post_arrival_travel: float
    detour_length: float


def describe(traj: Polyline, route: Route, tol: float = JUNCTION_TOL) -> TrajectoryFeatures:
    """Geometric summary used to tell violation classes apart."""
    pts = traj.points
    end = np.asarray(route.end)
    at_end = np.hypot(*(pts - end).T) <= tol
    reaches = bool(at_end[-1])
    post = 0.0
    if at_end.any() and not reaches:
        first = int(np.argmax(at_end))
        post = polyline_length(Polyline(pts[first:]))
    offset = float(distance_to_polyline(pts, route.geo).max())
    return TrajectoryFeatures(reaches, offset, post, polyline_length(traj) - polyline_length(route.geo))


def classify_noise_free(traj: Polyline, route: Route, offset_thresh: float = 20.0) -> str:
    """Rule classifier over destination reach, route offset and post-arrival travel."""
    f = describe(traj, route)
    if f.reaches_destination:
        return COMPLIANT if f.max_route_offset < offset_thresh else DEVIATION
    if f.post_arrival_travel > 0:
        return ARRIVAL_THEN_LEAVE
    return REVERSE
