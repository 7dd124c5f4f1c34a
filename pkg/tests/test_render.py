import json
import re

import numpy as np
import pytest
from PIL import Image

from farecourt.errors import RenderError
from farecourt.geo import Polyline, distance_to_polyline
from farecourt.mutation import (
    ARRIVAL_THEN_LEAVE,
    COMPLIANT,
    DEVIATION,
    LABELS,
    REVERSE,
    LabeledTrajectory,
    MutationConfig,
    synthesize,
)
from farecourt.network import Instruction, Route, plan_route, sample_poi_pair
from farecourt.render import (
    CAPTION_PATTERNS,
    RenderSpec,
    _Viewport,
    allocate_counts,
    build_dataset,
    instantiate_caption,
    load_manifest,
    pixel_change_fraction,
    png_bytes,
    render_pair,
)

SMALL = RenderSpec(width=256, height=256)


def _turning_route(net, start=0):
    for s in range(start, start + 200):
        r = plan_route(net, sample_poi_pair(net, s, 500))
        if len(r.intersections) >= 2:
            return r
    raise AssertionError


def test_render_is_deterministic(city):
    route = _turning_route(city)
    traj = synthesize(DEVIATION, route, city, MutationConfig(sigma=0, seed=1))
    assert png_bytes(render_pair(city, route, traj, SMALL)) == png_bytes(render_pair(city, route, traj, SMALL))


def test_render_size_and_mode(city):
    route = _turning_route(city)
    img = render_pair(city, route, synthesize(COMPLIANT, route, city, MutationConfig(sigma=0)), RenderSpec(width=300, height=200))
    assert img.size == (300, 200) and img.mode == "RGBA"


def test_compliant_overlay_only_touches_route_stroke(city):
    route = _turning_route(city)
    traj = synthesize(COMPLIANT, route, city, MutationConfig(sigma=0))
    base = render_pair(city, route, traj, SMALL, layers=("roads", "nav", "markers"))
    full = render_pair(city, route, traj, SMALL)
    diff = np.abs(np.asarray(base, dtype=int) - np.asarray(full, dtype=int)).max(axis=2) > 0
    ys, xs = np.nonzero(diff)
    assert len(xs) > 0
    view = _Viewport(np.vstack([route.geo.points, traj.path.points]), SMALL, 1)
    screen = Polyline.from_points(view(route.geo.points))
    d = distance_to_polyline(np.column_stack([xs + 0.5, ys + 0.5]), screen)
    assert d.max() <= SMALL.real_px / 2 + 1.5


def test_deviation_changes_enough_pixels(city):
    route = _turning_route(city, 10)
    comp = render_pair(city, route, synthesize(COMPLIANT, route, city, MutationConfig(sigma=0)), SMALL)
    dev = render_pair(city, route, synthesize(DEVIATION, route, city, MutationConfig(sigma=0, seed=2)), SMALL)
    assert pixel_change_fraction(comp, dev, SMALL.bg_color) >= 0.01


def test_resolution_covariance(city):
    route = _turning_route(city)
    traj = synthesize(REVERSE, route, city, MutationConfig(sigma=0, seed=4))
    small = render_pair(city, route, traj, SMALL)
    big = render_pair(city, route, traj, SMALL.scaled(2))
    down = big.reduce(2)
    err = np.abs(np.asarray(small, dtype=float) - np.asarray(down, dtype=float)).mean()
    assert err <= 2.0


def test_degenerate_viewport_rejected():
    with pytest.raises(RenderError):
        _Viewport(np.array([[5.0, 5.0], [5.0, 5.0]]), SMALL, 1)


def test_one_axis_extent_is_enough(grid5):
    straight = Route(Polyline([(0, 0), (100, 0)]), (), (Instruction("R0", "arrive", 100.0, 0, 1),))
    assert render_pair(grid5, straight, None, SMALL).size == (256, 256)


def test_render_spec_validation():
    with pytest.raises(ValueError):
        RenderSpec(width=32)
    with pytest.raises(ValueError):
        RenderSpec(nav_px=0.5)


def test_compliant_caption_template(city):
    route = _turning_route(city)
    traj = synthesize(COMPLIANT, route, city, MutationConfig(sigma=0))
    m = len(route.intersections)
    assert instantiate_caption(route, traj) == f"The driver followed the planned route through {m} turns without deviation."


def test_deviation_caption_names_anchor_street(city):
    route = _turning_route(city)
    traj = synthesize(DEVIATION, route, city, MutationConfig(sigma=0, seed=3))
    anchor = traj.provenance["anchor_index"]
    j = route.intersections.index(anchor) + 1
    street = route.instruction_covering(anchor).street
    cap = instantiate_caption(route, traj)
    assert "deviated" in cap and street in cap and f"k{j}" in cap


def test_deviation_caption_slot_filling():
    geo = Polyline([(0, 0), (10, 0), (20, 0), (20, 10), (20, 20), (30, 20)])
    ins = (
        Instruction("C1", "left", 20, 0, 2),
        Instruction("R3", "right", 20, 2, 4),
        Instruction("R9", "arrive", 10, 4, 5),
    )
    route = Route(geo, (2, 4), ins)
    traj = LabeledTrajectory(Polyline([(0, 0), (5, 5)]), DEVIATION, {"anchor_index": 4, "theta": 90.0, "lambda": 200.0})
    cap = instantiate_caption(route, traj)
    assert "deviated" in cap and "k2" in cap and "R3" in cap


def test_arrival_caption(city):
    route = _turning_route(city)
    traj = synthesize(ARRIVAL_THEN_LEAVE, route, city, MutationConfig(sigma=0, seed=3))
    assert "departed after arriving" in instantiate_caption(route, traj)


def test_allocate_counts():
    assert allocate_counts(100, {lab: 0.2 for lab in LABELS}) == {lab: 20 for lab in LABELS}
    assert sum(allocate_counts(7, {COMPLIANT: 0.5, DEVIATION: 0.3, REVERSE: 0.2}).values()) == 7
    with pytest.raises(ValueError):
        allocate_counts(10, {COMPLIANT: 0.5, DEVIATION: 0.3})


def test_build_dataset_layout_and_rerun(tmp_path, city):
    mix = {lab: 0.2 for lab in LABELS}
    cfg = MutationConfig(sigma=10, seed=21)
    recs = build_dataset(city, 10, mix, cfg, SMALL, tmp_path / "a")
    build_dataset(city, 10, mix, cfg, SMALL, tmp_path / "b")
    a = (tmp_path / "a" / "manifest.jsonl").read_text()
    assert a == (tmp_path / "b" / "manifest.jsonl").read_text()
    assert len(a.splitlines()) == 10 == len(list((tmp_path / "a" / "images").glob("*.png")))
    for rec in load_manifest(tmp_path / "a" / "manifest.jsonl"):
        assert (tmp_path / "a" / rec.image_path).exists()
        assert re.search(CAPTION_PATTERNS[rec.label], rec.caption)
        assert set(json.loads(rec.to_json())) == {"image_path", "caption", "label", "provenance", "route_id", "sample_id"}
    assert {r.label for r in recs} == set(LABELS)
    for name in ("s000000.png", "s000009.png"):
        assert (tmp_path / "a" / "images" / name).read_bytes() == (tmp_path / "b" / "images" / name).read_bytes()
    assert Image.open(tmp_path / "a" / "images" / "s000000.png").size == (256, 256)


def test_build_dataset_with_workers_matches_serial(tmp_path, city):
    mix = {COMPLIANT: 0.5, DEVIATION: 0.5}
    cfg = MutationConfig(sigma=0, seed=3)
    build_dataset(city, 4, mix, cfg, SMALL, tmp_path / "s")
    build_dataset(city, 4, mix, cfg, SMALL, tmp_path / "p", workers=2)
    assert (tmp_path / "s" / "manifest.jsonl").read_text() == (tmp_path / "p" / "manifest.jsonl").read_text()


def test_build_dataset_unwritable(tmp_path, city):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        build_dataset(city, 1, {COMPLIANT: 1.0}, MutationConfig(), SMALL, blocker / "out")
