"""Procedural road networks and the shortest-path navigation oracle."""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .errors import InfeasibleError, NetworkError, UnreachableError
from .geo import GeoPoint, Polyline, densify, heading_change, planar_distance, polyline_length
from .seeding import rng_for

GRID_SPACING = 100.0
DEFAULT_POINT_SPACING = 10.0
TURN_THRESHOLD_DEG = 30.0
MAX_POI_ATTEMPTS = 1000


@dataclass(frozen=True)
class Edge:
    a: int
    b: int
    length: float
    street: str


def _key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


class RoadNetwork:
    """Undirected weighted road graph. Treat as immutable once built."""

    def __init__(
        self,
        nodes: dict[int, GeoPoint],
        edges: Iterable[Edge],
        seed: int = 0,
        meta: dict[str, Any] | None = None,
    ):
        self.nodes: dict[int, GeoPoint] = {int(k): GeoPoint(float(v[0]), float(v[1])).validate() for k, v in nodes.items()}
        self.edges: dict[tuple[int, int], Edge] = {}
        for e in edges:
            if e.a == e.b:
                raise NetworkError(f"self-loop at node {e.a}")
            if e.a not in self.nodes or e.b not in self.nodes:
                raise NetworkError(f"edge ({e.a}, {e.b}) references unknown node")
            expected = planar_distance(self.nodes[e.a], self.nodes[e.b])
            if abs(e.length - expected) > 1e-6:
                raise NetworkError(f"edge ({e.a}, {e.b}) length {e.length} != {expected}")
            if e.length <= 0:
                raise NetworkError(f"edge ({e.a}, {e.b}) has zero length")
            self.edges[_key(e.a, e.b)] = e
        self.seed = int(seed)
        self.meta = dict(meta or {})
        adj: dict[int, list[tuple[int, float]]] = {n: [] for n in self.nodes}
        for (a, b), e in self.edges.items():
            adj[a].append((b, e.length))
            adj[b].append((a, e.length))
        self.adjacency: dict[int, tuple[tuple[int, float], ...]] = {n: tuple(sorted(v)) for n, v in adj.items()}
        self._ids = np.array(sorted(self.nodes), dtype=np.int64)
        self._xy = np.array([self.nodes[i] for i in self._ids], dtype=float)
        self._path_cache: dict[tuple[int, int], tuple[tuple[int, ...], float]] = {}

    # -- structure -------------------------------------------------------

    def edge(self, a: int, b: int) -> Edge:
        return self.edges[_key(a, b)]

    def degree(self, n: int) -> int:
        return len(self.adjacency[n])

    def is_connected(self) -> bool:
        return _connected(self.nodes.keys(), {n: [v for v, _ in nbrs] for n, nbrs in self.adjacency.items()})

    def nearest_node(self, p) -> int:
        d = np.hypot(self._xy[:, 0] - p[0], self._xy[:, 1] - p[1])
        return int(self._ids[int(np.argmin(d))])

    def node_ids(self) -> np.ndarray:
        return self._ids

    def node_xy(self) -> np.ndarray:
        return self._xy

    def bounds(self) -> tuple[float, float, float, float]:
        lo = self._xy.min(axis=0)
        hi = self._xy.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    # -- routing ---------------------------------------------------------

    def shortest_node_path(self, a: int, b: int) -> tuple[tuple[int, ...], float]:
        """Node sequence and length of the shortest a->b path.

        Equal-length paths are ordered by their node-id sequence; the
        lexicographically smallest one wins.
        """
        if a not in self.nodes or b not in self.nodes:
            raise NetworkError(f"unknown node in ({a}, {b})")
        hit = self._path_cache.get((a, b))
        if hit is not None:
            return hit
        best: dict[int, tuple[float, tuple[int, ...]]] = {a: (0.0, (a,))}
        heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (a,))]
        done: set[int] = set()
        while heap:
            d, path = heapq.heappop(heap)
            u = path[-1]
            if u in done:
                continue
            done.add(u)
            if u == b:
                self._path_cache[(a, b)] = (path, d)
                return path, d
            for v, w in self.adjacency[u]:
                if v in done:
                    continue
                cand = (d + w, path + (v,))
                if v not in best or cand < best[v]:
                    best[v] = cand
                    heapq.heappush(heap, cand)
        raise UnreachableError(f"no path between {a} and {b}")

    def distances_from(self, a: int) -> dict[int, float]:
        dist = {a: 0.0}
        heap = [(0.0, a)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for v, w in self.adjacency[u]:
                nd = d + w
                if nd < dist.get(v, math.inf):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return dist

    def nodes_polyline(self, nodes: Iterable[int]) -> Polyline:
        return Polyline([self.nodes[n] for n in nodes])

    def path_polyline(self, a: int, b: int, spacing: float | None = DEFAULT_POINT_SPACING) -> Polyline:
        """Coordinate sequence of the shortest a->b path, densified when ``spacing`` is set."""
        nodes, _ = self.shortest_node_path(a, b)
        line = self.nodes_polyline(nodes)
        return densify(line, spacing) if spacing else line

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "meta": self.meta,
            "nodes": [[int(i), self.nodes[i].x, self.nodes[i].y] for i in sorted(self.nodes)],
            "edges": [[e.a, e.b, e.length, e.street] for _, e in sorted(self.edges.items())],
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "RoadNetwork":
        nodes = {int(i): GeoPoint(float(x), float(y)) for i, x, y in doc["nodes"]}
        edges = [Edge(int(a), int(b), float(ln), str(st)) for a, b, ln, st in doc["edges"]]
        return cls(nodes, edges, seed=doc.get("seed", 0), meta=doc.get("meta"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "RoadNetwork":
        net = cls.from_dict(json.loads(Path(path).read_text()))
        if not net.is_connected():
            raise NetworkError(f"{path}: network is not connected")
        return net


def _connected(nodes: Iterable[int], adj: dict[int, list[int]]) -> bool:
    nodes = list(nodes)
    if not nodes:
        return True
    seen = {nodes[0]}
    q = deque([nodes[0]])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                q.append(v)
    return len(seen) == len(nodes)


def generate_network(
    seed: int,
    width: int,
    height: int,
    jitter: float = 0.0,
    knockout_fraction: float = 0.0,
    spacing: float = GRID_SPACING,
) -> RoadNetwork:
    """Jittered lattice with a fraction of edges knocked out.

    Edges are removed in seeded random order, skipping any removal that
    would disconnect the graph or leave an interior node with degree < 2.
    """
    if width < 3 or height < 3:
        raise ValueError("width and height must be >= 3")
    if not 0.0 <= knockout_fraction <= 0.3:
        raise ValueError("knockout_fraction must be within [0, 0.3]")
    if not 0.0 <= jitter < spacing / 2:
        raise ValueError(f"jitter must be within [0, {spacing / 2})")
    rng = rng_for(seed, "network")
    offsets = rng.uniform(-jitter, jitter, size=(height, width, 2)) if jitter > 0 else np.zeros((height, width, 2))
    nodes: dict[int, GeoPoint] = {}
    for r in range(height):
        for c in range(width):
            nodes[r * width + c] = GeoPoint(c * spacing + float(offsets[r, c, 0]), r * spacing + float(offsets[r, c, 1]))

    pairs: list[tuple[int, int, str]] = []
    for r in range(height):
        for c in range(width):
            n = r * width + c
            if c + 1 < width:
                pairs.append((n, n + 1, f"R{r}"))
            if r + 1 < height:
                pairs.append((n, n + width, f"C{c}"))

    target = round(knockout_fraction * len(pairs))
    removed: set[tuple[int, int]] = set()
    if target:
        adj: dict[int, set[int]] = {n: set() for n in nodes}
        for a, b, _ in pairs:
            adj[a].add(b)
            adj[b].add(a)

        def boundary(n: int) -> bool:
            r, c = divmod(n, width)
            return r in (0, height - 1) or c in (0, width - 1)

        for idx in rng.permutation(len(pairs)):
            if len(removed) == target:
                break
            a, b, _ = pairs[int(idx)]
            if any(len(adj[n]) - 1 < (1 if boundary(n) else 2) for n in (a, b)):
                continue
            adj[a].discard(b)
            adj[b].discard(a)
            if _connected(nodes, {k: list(v) for k, v in adj.items()}):
                removed.add((a, b))
            else:
                adj[a].add(b)
                adj[b].add(a)
        if len(removed) < target:
            raise NetworkError(f"could only remove {len(removed)} of {target} edges while staying connected")

    edges = [
        Edge(a, b, planar_distance(nodes[a], nodes[b]), street)
        for a, b, street in pairs
        if (a, b) not in removed
    ]
    meta = {"width": width, "height": height, "jitter": jitter, "knockout_fraction": knockout_fraction, "spacing": spacing}
    return RoadNetwork(nodes, edges, seed=seed, meta=meta)


def shortest_path(net: RoadNetwork, a: int, b: int) -> Polyline:
    nodes, _ = net.shortest_node_path(a, b)
    return net.nodes_polyline(nodes)


# -- routes --------------------------------------------------------------


@dataclass(frozen=True)
class PoiPair:
    start_node: int
    end_node: int
    start: GeoPoint
    end: GeoPoint


@dataclass(frozen=True)
class Instruction:
    street: str
    maneuver: str  # left | right | straight | arrive
    length: float
    start_index: int
    end_index: int

    @property
    def text(self) -> str:
        if self.maneuver == "arrive":
            return f"continue on {self.street} for {self.length:.0f} m, then arrive at the destination"
        return f"continue on {self.street} for {self.length:.0f} m, then turn {self.maneuver}"


@dataclass(frozen=True)
class Route:
    geo: Polyline
    intersections: tuple[int, ...]
    instructions: tuple[Instruction, ...]
    nodes: tuple[int, ...] = ()
    node_indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = self.intersections
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("intersection indices must be strictly increasing")
        if idx and (idx[0] <= 0 or idx[-1] >= len(self.geo) - 1):
            raise ValueError("intersection indices must be interior")
        if len(self.instructions) != len(idx) + 1:
            raise ValueError("instruction count must equal intersection count + 1")

    @property
    def start(self) -> GeoPoint:
        return self.geo.start

    @property
    def end(self) -> GeoPoint:
        return self.geo.end

    @property
    def start_node(self) -> int:
        return self.nodes[0]

    @property
    def end_node(self) -> int:
        return self.nodes[-1]

    def node_at(self, geo_index: int) -> int:
        return self.nodes[self.node_indices.index(geo_index)]

    def instruction_covering(self, geo_index: int) -> Instruction:
        """Instruction whose segment ends at or contains ``geo_index``."""
        for ins in self.instructions:
            if ins.start_index < geo_index <= ins.end_index:
                return ins
        return self.instructions[0]

    def to_dict(self) -> dict[str, Any]:
        return {
            "geo": self.geo.to_list(),
            "intersections": list(self.intersections),
            "instructions": [vars(i).copy() for i in self.instructions],
            "nodes": list(self.nodes),
            "node_indices": list(self.node_indices),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "Route":
        return cls(
            geo=Polyline(doc["geo"]),
            intersections=tuple(doc["intersections"]),
            instructions=tuple(Instruction(**i) for i in doc["instructions"]),
            nodes=tuple(doc.get("nodes", ())),
            node_indices=tuple(doc.get("node_indices", ())),
        )


def _maneuver(turn: float, threshold: float) -> str:
    if abs(turn) <= threshold:
        return "straight"
    return "left" if turn > 0 else "right"


def plan_route(
    net: RoadNetwork,
    pair: PoiPair,
    spacing: float = DEFAULT_POINT_SPACING,
    turn_threshold: float = TURN_THRESHOLD_DEG,
) -> Route:
    """Shortest route for ``pair`` split into dense segments and instructions."""
    nodes, _ = net.shortest_node_path(pair.start_node, pair.end_node)
    if len(nodes) < 2:
        raise NetworkError("route endpoints coincide")

    pts: list[np.ndarray] = [np.asarray(net.nodes[nodes[0]], dtype=float)[None, :]]
    node_indices = [0]
    for a, b in zip(nodes[:-1], nodes[1:]):
        seg = densify(Polyline([net.nodes[a], net.nodes[b]]), spacing).points
        pts.append(seg[1:])
        node_indices.append(node_indices[-1] + len(seg) - 1)
    geo = Polyline(np.vstack(pts))

    intersections: list[int] = []
    maneuvers: list[str] = []
    for i in range(1, len(nodes) - 1):
        p0, p1, p2 = (np.asarray(net.nodes[n]) for n in nodes[i - 1 : i + 2])
        turn = heading_change(p1 - p0, p2 - p1)
        street_change = net.edge(nodes[i - 1], nodes[i]).street != net.edge(nodes[i], nodes[i + 1]).street
        if abs(turn) > turn_threshold or street_change:
            intersections.append(node_indices[i])
            maneuvers.append(_maneuver(turn, turn_threshold))
    maneuvers.append("arrive")

    bounds = [0, *intersections, len(geo) - 1]
    instructions = []
    for m, (s, e) in enumerate(zip(bounds[:-1], bounds[1:])):
        first_node = nodes[node_indices.index(s)]
        second_node = nodes[node_indices.index(s) + 1]
        street = net.edge(first_node, second_node).street
        length = polyline_length(Polyline(geo.points[s : e + 1]))
        instructions.append(Instruction(street, maneuvers[m], length, s, e))

    return Route(geo, tuple(intersections), tuple(instructions), tuple(nodes), tuple(node_indices))


def sample_poi_pair(net: RoadNetwork, seed: int, min_dist: float = 500.0) -> PoiPair:
    """Uniform random node pair at network distance >= ``min_dist``."""
    rng = rng_for(seed, "poi")
    ids = net.node_ids()
    if len(ids) < 2:
        raise InfeasibleError("network has fewer than two nodes")
    dist_cache: dict[int, dict[int, float]] = {}
    for _ in range(MAX_POI_ATTEMPTS):
        i, j = rng.choice(len(ids), size=2, replace=False)
        a, b = int(ids[i]), int(ids[j])
        if min_dist > 0:
            if a not in dist_cache:
                dist_cache[a] = net.distances_from(a)
            if dist_cache[a].get(b, math.inf) < min_dist:
                continue
        return PoiPair(a, b, net.nodes[a], net.nodes[b])
    raise InfeasibleError(f"no node pair at network distance >= {min_dist} m after {MAX_POI_ATTEMPTS} attempts")
