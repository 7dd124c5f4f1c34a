"""Independent brute-force references used by the property and acceptance tests."""

from __future__ import annotations

import math

import numpy as np

from farecourt.network import Edge, RoadNetwork

# integer-length displacements, so path sums are exact and ties are real ties
_STEPS = [(dx, dy) for dx in range(-4, 5) for dy in range(-4, 5) if (dx, dy) != (0, 0) and math.isqrt(dx * dx + dy * dy) ** 2 == dx * dx + dy * dy]


def random_integer_graph(rng: np.random.Generator, max_nodes: int = 12) -> RoadNetwork:
    """Small graph on a lattice whose edges all have integer length."""
    n = int(rng.integers(2, max_nodes + 1))
    cells = rng.choice(36, size=n, replace=False)
    pos = {i: (float(c % 6), float(c // 6)) for i, c in enumerate(cells)}
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            dx, dy = pos[j][0] - pos[i][0], pos[j][1] - pos[i][1]
            if (int(dx), int(dy)) in _STEPS and rng.random() < 0.6:
                edges.append(Edge(i, j, math.hypot(dx, dy), "s"))
    return RoadNetwork(pos, edges)


def all_simple_paths(net: RoadNetwork, a: int, b: int):
    stack = [(a, (a,))]
    while stack:
        u, path = stack.pop()
        if u == b:
            yield path
            continue
        for v, _ in net.adjacency[u]:
            if v not in path:
                stack.append((v, path + (v,)))


def path_cost(net: RoadNetwork, path) -> float:
    d = 0.0
    for u, v in zip(path, path[1:]):
        d += net.edge(u, v).length
    return d


def exhaustive_shortest(net: RoadNetwork, a: int, b: int):
    """(cost, node path) minimizing cost then node sequence, or None when unreachable."""
    best = None
    for p in all_simple_paths(net, a, b):
        cand = (path_cost(net, p), p)
        if best is None or cand < best:
            best = cand
    return best


def brute_force_topk(vectors: np.ndarray, timestamps: np.ndarray, query: np.ndarray, t: float, k: int) -> list[int]:
    """Ids of the k most similar strictly-older entries, ties by timestamp then id."""
    rows = []
    for i in range(len(vectors)):
        if timestamps[i] < t:
            rows.append((-float(np.dot(vectors[i], query)), float(timestamps[i]), i))
    rows.sort()
    return [i for _, _, i in rows[:k]]


def _point_segment(p, a, b) -> float:
    ax, ay = a
    bx, by = b
    px, py = p
    dx, dy = bx - ax, by - ay
    den = dx * dx + dy * dy
    t = 0.0 if den == 0 else max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / den))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def label_by_rules(traj_pts, route_pts, offset_limit: float = 20.0, at_tol: float = 1e-6) -> str:
    """Plain-loop rule classifier: reaches destination, max route offset, travel after arrival."""
    traj_pts = [tuple(map(float, p)) for p in traj_pts]
    route_pts = [tuple(map(float, p)) for p in route_pts]
    dest = route_pts[-1]
    near = [math.hypot(x - dest[0], y - dest[1]) <= at_tol for x, y in traj_pts]
    if near[-1]:
        offset = max(min(_point_segment(p, a, b) for a, b in zip(route_pts, route_pts[1:])) for p in traj_pts)
        return "compliant" if offset < offset_limit else "unintentional_deviation"
    if any(near):
        first = near.index(True)
        after = sum(math.dist(p, q) for p, q in zip(traj_pts[first:], traj_pts[first + 1 :]))
        if after > 0:
            return "arrival_then_leave"
    return "reverse_driving"
