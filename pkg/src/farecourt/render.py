"""Raster rendering of (planned route, executed trajectory) pairs and caption templating."""

from __future__ import annotations

import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from PIL import Image, ImageDraw

from .errors import InfeasibleError, MutationError, RenderError
from .mutation import (
    ARRIVAL_THEN_LEAVE,
    COMPLIANT,
    DEVIATION,
    DRIFT_ONLY,
    LABELS,
    REVERSE,
    LabeledTrajectory,
    MutationConfig,
    synthesize,
)
from .network import RoadNetwork, Route, plan_route, sample_poi_pair
from .seeding import derive_seed

log = logging.getLogger(__name__)

RGBA = tuple[int, int, int, int]
SUPERSAMPLE = 4
MAX_RESAMPLE_ATTEMPTS = 50


@dataclass(frozen=True)
class RenderSpec:
    width: int = 768
    height: int = 768
    margin: float = 0.08
    road_color: RGBA = (170, 170, 170, 255)
    nav_color: RGBA = (30, 90, 220, 255)
    real_color: RGBA = (220, 30, 30, 255)
    bg_color: RGBA = (250, 250, 245, 255)
    road_px: float = 4
    nav_px: float = 3
    real_px: float = 3
    marker_radius: float = 6
    start_color: RGBA = (20, 160, 60, 255)
    end_color: RGBA = (0, 0, 0, 255)

    def __post_init__(self):
        if self.width < 64 or self.height < 64:
            raise ValueError("width and height must be >= 64")
        if min(self.road_px, self.nav_px, self.real_px) < 1:
            raise ValueError("stroke widths must be >= 1")
        if not 0 <= self.margin < 0.5:
            raise ValueError("margin must be within [0, 0.5)")

    def scaled(self, factor: float) -> "RenderSpec":
        return replace(
            self,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
            road_px=self.road_px * factor,
            nav_px=self.nav_px * factor,
            real_px=self.real_px * factor,
            marker_radius=self.marker_radius * factor,
        )


class _Viewport:
    def __init__(self, pts: np.ndarray, spec: RenderSpec, ss: int):
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        extent = hi - lo
        if extent.max() <= 0:
            raise RenderError("degenerate bounding box (zero extent)")
        w, h = spec.width * ss, spec.height * ss
        usable_w = w * (1 - 2 * spec.margin)
        usable_h = h * (1 - 2 * spec.margin)
        # uniform scale keeps angles; zero-extent axes are centered
        sx = usable_w / extent[0] if extent[0] > 0 else math.inf
        sy = usable_h / extent[1] if extent[1] > 0 else math.inf
        self.scale = min(sx, sy)
        self.center = (lo + hi) / 2
        self.w, self.h = w, h

    def __call__(self, pts: np.ndarray) -> list[tuple[float, float]]:
        pts = np.asarray(pts, dtype=float)
        px = (pts[:, 0] - self.center[0]) * self.scale + self.w / 2
        py = self.h / 2 - (pts[:, 1] - self.center[1]) * self.scale
        return list(zip(px.tolist(), py.tolist()))


def _stroke(draw: ImageDraw.ImageDraw, xy: list, color: RGBA, width: float) -> None:
    w = max(1, int(round(width)))
    if len(xy) >= 2:
        draw.line(xy, fill=color, width=w, joint="curve")
    r = w / 2
    for x, y in (xy[0], xy[-1]):
        draw.ellipse([x - r, y - r, x + r, y + r], fill=color)


def render_pair(
    net: RoadNetwork,
    route: Route,
    traj: LabeledTrajectory | None,
    spec: RenderSpec = RenderSpec(),
    layers: tuple[str, ...] = ("roads", "nav", "real", "markers"),
) -> Image.Image:
    """Draw roads, the planned route and the executed trajectory, in that order.

    Drawing happens at 4x resolution and is box-filtered down, so strokes
    are antialiased and the output scales consistently with resolution.
    """
    ss = SUPERSAMPLE
    pts = route.geo.points if traj is None else np.vstack([route.geo.points, traj.path.points])
    view = _Viewport(pts, spec, ss)
    img = Image.new("RGBA", (spec.width * ss, spec.height * ss), spec.bg_color)
    draw = ImageDraw.Draw(img)
    if "roads" in layers:
        xy = net.node_xy()
        index = {int(n): i for i, n in enumerate(net.node_ids())}
        screen = view(xy)
        for (a, b) in sorted(net.edges):
            _stroke(draw, [screen[index[a]], screen[index[b]]], spec.road_color, spec.road_px * ss)
    if "nav" in layers:
        _stroke(draw, view(route.geo.points), spec.nav_color, spec.nav_px * ss)
    if "real" in layers and traj is not None:
        _stroke(draw, view(traj.path.points), spec.real_color, spec.real_px * ss)
    if "markers" in layers:
        r = spec.marker_radius * ss
        for p, color in ((route.start, spec.start_color), (route.end, spec.end_color)):
            (x, y), = view(np.array([p]))
            draw.ellipse([x - r, y - r, x + r, y + r], fill=color)
    return img.reduce(ss)


def png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def pixel_change_fraction(a: Image.Image, b: Image.Image, bg: RGBA, tol: int = 8) -> float:
    """Share of non-background pixels (in either image) that differ between ``a`` and ``b``."""
    x = np.asarray(a.convert("RGBA"), dtype=np.int16)
    y = np.asarray(b.convert("RGBA"), dtype=np.int16)
    if x.shape != y.shape:
        raise ValueError("images differ in size")
    bg_arr = np.array(bg, dtype=np.int16)
    non_bg = (np.abs(x - bg_arr).max(axis=2) > tol) | (np.abs(y - bg_arr).max(axis=2) > tol)
    diff = np.abs(x - y).max(axis=2) > tol
    denom = int(non_bg.sum())
    return float((diff & non_bg).sum() / denom) if denom else 0.0


# -- captions ------------------------------------------------------------


def _plural(n: int, word: str) -> str:
    return f"{n} {word}" if n == 1 else f"{n} {word}s"


def instantiate_caption(route: Route, traj: LabeledTrajectory) -> str:
    m = len(route.intersections)
    prov = traj.provenance
    label = traj.label
    if label == COMPLIANT:
        return f"The driver followed the planned route through {_plural(m, 'turn')} without deviation."
    if label == DRIFT_ONLY:
        return (
            f"The driver followed the planned route through {_plural(m, 'turn')}; "
            f"the GPS trace shows sensor drift of about {prov['sigma']:.0f} m but no structural deviation."
        )
    if label == ARRIVAL_THEN_LEAVE:
        return (
            f"The driver completed all {_plural(m, 'planned maneuver')} to the destination "
            f"but departed after arriving, ending {prov['escape_distance']:.0f} m away."
        )
    anchor = int(prov["anchor_index"])
    j = route.intersections.index(anchor) + 1
    street = route.instruction_covering(anchor).street
    if label == DEVIATION:
        return (
            f"The driver deviated from the planned route at intersection k{j} on {street} "
            f"and rerouted to the destination; the plan had {_plural(m, 'maneuver')}."
        )
    if label == REVERSE:
        return (
            f"The driver reversed against the planned direction at intersection k{j} on {street} "
            f"for up to {prov['delta']:.0f} m and never reached the destination; the plan had {_plural(m, 'maneuver')}."
        )
    raise ValueError(f"no caption template for label {label!r}")


CAPTION_PATTERNS = {
    COMPLIANT: r"followed the planned route .* without deviation",
    DRIFT_ONLY: r"sensor drift",
    DEVIATION: r"\bdeviated\b",
    REVERSE: r"\breversed against\b",
    ARRIVAL_THEN_LEAVE: r"departed after arriving",
}


# -- dataset -------------------------------------------------------------


@dataclass
class DatasetRecord:
    image_path: str
    caption: str
    label: str
    provenance: dict[str, Any]
    route_id: str
    sample_id: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def allocate_counts(n: int, class_mix: Mapping[str, float]) -> dict[str, int]:
    """Largest-remainder split of ``n`` over ``class_mix``; ties go to the earlier label."""
    total = sum(class_mix.values())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"class_mix ratios sum to {total}, expected 1")
    for lab, r in class_mix.items():
        if lab not in LABELS:
            raise ValueError(f"unknown label {lab!r} in class_mix")
        if r < 0:
            raise ValueError("class_mix ratios must be non-negative")
    labels = list(class_mix)
    raw = [n * class_mix[lab] for lab in labels]
    counts = [math.floor(x + 1e-9) for x in raw]
    order = sorted(range(len(labels)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return dict(zip(labels, counts))


def _synth_one(
    net: RoadNetwork,
    label: str,
    root_seed: int,
    index: int,
    cfg: MutationConfig,
    min_poi_dist: float,
) -> tuple[Route, LabeledTrajectory, str, int]:
    for attempt in range(MAX_RESAMPLE_ATTEMPTS):
        s = derive_seed(root_seed, "sample", index, attempt)
        pair = sample_poi_pair(net, s, min_poi_dist)
        route = plan_route(net, pair, spacing=cfg.spacing)
        try:
            traj = synthesize(label, route, net, cfg.with_seed(s))
        except MutationError as exc:
            log.info(json.dumps({"event": "resample", "index": index, "attempt": attempt, "reason": str(exc)}))
            continue
        route_id = f"r{pair.start_node}-{pair.end_node}"
        return route, traj, route_id, attempt
    raise InfeasibleError(f"sample {index} ({label}) infeasible after {MAX_RESAMPLE_ATTEMPTS} attempts")


def _make_sample(args) -> tuple[DatasetRecord, bytes]:
    net, label, root_seed, index, cfg, spec, min_poi_dist = args
    route, traj, route_id, _ = _synth_one(net, label, root_seed, index, cfg, min_poi_dist)
    sample_id = f"s{index:06d}"
    img = render_pair(net, route, traj, spec)
    record = DatasetRecord(
        image_path=f"images/{sample_id}.png",
        caption=instantiate_caption(route, traj),
        label=label,
        provenance=traj.provenance,
        route_id=route_id,
        sample_id=sample_id,
    )
    return record, png_bytes(img)


def build_dataset(
    net: RoadNetwork,
    n_samples: int,
    class_mix: Mapping[str, float],
    cfg: MutationConfig,
    spec: RenderSpec,
    out_dir: str | Path,
    min_poi_dist: float = 500.0,
    workers: int = 1,
) -> list[DatasetRecord]:
    """Synthesize, render and caption ``n_samples`` pairs under ``out_dir``.

    Writes ``images/<sample_id>.png`` and ``manifest.jsonl``. Per-sample seeds
    derive from ``cfg.seed`` and the sample index.
    """
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write to {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise PermissionError(f"{out} is not writable")

    counts = allocate_counts(n_samples, class_mix)
    plan = [lab for lab, c in counts.items() for _ in range(c)]
    jobs = [(net, lab, cfg.seed, i, cfg, spec, min_poi_dist) for i, lab in enumerate(plan)]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_make_sample, jobs, chunksize=4)
            records = _write_all(out, results)
    else:
        records = _write_all(out, map(_make_sample, jobs))
    return records


def _write_all(out: Path, results) -> list[DatasetRecord]:
    records = []
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for record, data in results:
            (out / record.image_path).write_bytes(data)
            fh.write(record.to_json() + "\n")
            records.append(record)
    return records


def load_manifest(path: str | Path) -> list[DatasetRecord]:
    with open(path, encoding="utf-8") as fh:
        return [DatasetRecord(**json.loads(line)) for line in fh if line.strip()]
