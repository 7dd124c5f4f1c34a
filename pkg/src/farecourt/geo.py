"""Planar geometry on local tangent-plane coordinates (meters)."""

from __future__ import annotations

import math
from typing import Iterable, NamedTuple, Sequence

import numpy as np

COORD_LIMIT = 1e7
JUNCTION_TOL = 1e-6


class GeoPoint(NamedTuple):
    x: float  # meters east of the local origin
    y: float  # meters north of the local origin

    def validate(self) -> "GeoPoint":
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinate {self}")
        if abs(self.x) >= COORD_LIMIT or abs(self.y) >= COORD_LIMIT:
            raise ValueError(f"coordinate out of range {self}")
        return self


class Polyline:
    """Immutable ordered point sequence.

    A single-point polyline is allowed and represents the degenerate
    path between a location and itself (length 0). Otherwise consecutive
    points must differ.
    """

    __slots__ = ("_pts",)

    def __init__(self, points: Iterable[Sequence[float]] | np.ndarray):
        arr = np.array(points, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 1:
            raise ValueError("polyline needs an (n, 2) array with n >= 1")
        if not np.all(np.isfinite(arr)) or np.any(np.abs(arr) >= COORD_LIMIT):
            raise ValueError("polyline coordinates must be finite and < 1e7 in magnitude")
        if len(arr) > 1 and np.any(np.all(arr[1:] == arr[:-1], axis=1)):
            raise ValueError("polyline has identical consecutive points")
        arr.setflags(write=False)
        self._pts = arr

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]]) -> "Polyline":
        """Build a polyline, silently dropping exact consecutive duplicates."""
        out: list[tuple[float, float]] = []
        for p in points:
            q = (float(p[0]), float(p[1]))
            if not out or out[-1] != q:
                out.append(q)
        return cls(out)

    @property
    def points(self) -> np.ndarray:
        return self._pts

    @property
    def is_degenerate(self) -> bool:
        return len(self._pts) == 1

    @property
    def start(self) -> GeoPoint:
        return GeoPoint(*map(float, self._pts[0]))

    @property
    def end(self) -> GeoPoint:
        return GeoPoint(*map(float, self._pts[-1]))

    def __len__(self) -> int:
        return len(self._pts)

    def __getitem__(self, i: int) -> GeoPoint:
        return GeoPoint(*map(float, self._pts[i]))

    def __iter__(self):
        for row in self._pts:
            yield GeoPoint(float(row[0]), float(row[1]))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Polyline) and np.array_equal(self._pts, other._pts)

    def __hash__(self) -> int:
        return hash(self._pts.tobytes())

    def __repr__(self) -> str:
        return f"Polyline(n={len(self)}, length={polyline_length(self):.3f})"

    def to_list(self) -> list[list[float]]:
        return self._pts.tolist()

    def prefix(self, n: int) -> "Polyline":
        return Polyline(self._pts[:n])


def rotate_vector(v: Sequence[float], theta: float) -> np.ndarray:
    """Rotate ``v`` counterclockwise by ``theta`` degrees."""
    vx, vy = float(v[0]), float(v[1])
    if not (math.isfinite(vx) and math.isfinite(vy)):
        raise ValueError("vector must be finite")
    rad = math.radians(theta)
    c, s = math.cos(rad), math.sin(rad)
    return np.array([c * vx - s * vy, s * vx + c * vy])


def planar_distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(float(b[0]) - float(a[0]), float(b[1]) - float(a[1]))


def segment_lengths(p: Polyline) -> np.ndarray:
    d = np.diff(p.points, axis=0)
    return np.hypot(d[:, 0], d[:, 1])


def polyline_length(p: Polyline) -> float:
    return float(segment_lengths(p).sum())


def truncate_polyline(p: Polyline, delta: float) -> Polyline:
    """Arc-length prefix of ``p`` with length ``min(delta, length(p))``."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    seg = segment_lengths(p)
    if seg.sum() <= delta:
        return p
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    # first segment whose far end lies beyond delta
    i = int(np.searchsorted(cum, delta, side="left"))
    pts = p.points
    if cum[i] == delta:
        return Polyline(pts[: i + 1])
    a, b = pts[i - 1], pts[i]
    frac = (delta - cum[i - 1]) / seg[i - 1]
    cut = a + frac * (b - a)
    head = pts[:i]
    if np.array_equal(head[-1], cut):
        return Polyline(head)
    return Polyline(np.vstack([head, cut]))


def densify(p: Polyline, spacing: float) -> Polyline:
    """Insert evenly spaced points so that no gap exceeds ``spacing``.

    Original vertices are kept.
    """
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    pts = p.points
    if len(pts) < 2:
        return p
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, math.ceil(planar_distance(a, b) / spacing - 1e-9))
        t = np.arange(1, n)[:, None] / n
        out.append(a + t * (b - a))
        out.append(b[None, :])  # exact vertex, not a + 1.0 * (b - a)
    return Polyline.from_points(np.vstack(out))


def point_segment_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(*(pts - a).T)
    t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(pts - proj).T)


def distance_to_polyline(pts: np.ndarray, line: Polyline) -> np.ndarray:
    """Minimum distance from each row of ``pts`` to ``line``."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    lp = line.points
    if len(lp) == 1:
        return np.hypot(*(pts - lp[0]).T)
    best = np.full(len(pts), np.inf)
    for a, b in zip(lp[:-1], lp[1:]):
        np.minimum(best, point_segment_distance(pts, a, b), out=best)
    return best


def heading_change(v_in: Sequence[float], v_out: Sequence[float]) -> float:
    """Signed turn angle in degrees from ``v_in`` to ``v_out`` (left positive)."""
    cross = v_in[0] * v_out[1] - v_in[1] * v_out[0]
    dot = v_in[0] * v_out[0] + v_in[1] * v_out[1]
    return math.degrees(math.atan2(cross, dot))
