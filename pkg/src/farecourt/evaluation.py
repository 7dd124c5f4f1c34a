"""Verdict metrics and the synthetic end-to-end benchmark."""

from __future__ import annotations

import dataclasses
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .backends import Backends, FunctionBackend, backends_from_spec
from .calibration import CalibratorEnsemble, Rule, RuleBase, train_calibrators
from .coa import AdjudicationOptions, Prompts, adjudicate
from .config import PipelineConfig, write_effective
from .embedding import embedder_from_tag
from .errors import ConfigError, LabelSpaceError, PipelineError
from .geo import GeoPoint, Polyline, distance_to_polyline, planar_distance, polyline_length
from .mutation import ARRIVAL_THEN_LEAVE, COMPLIANT, DEVIATION, DRIFT_ONLY, REVERSE
from .network import Route, generate_network
from .orders import OrderInit, OrderRecord, dump_orders, order_text
from .render import allocate_counts, png_bytes, render_pair, _synth_one
from .retrieval import PrecedentStore
from .reward import OrdinalLabelSpace, binary_reward, format_reward, ordinal_reward, total_reward
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
ARRIVAL_RADIUS = 30.0


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass
class EvalReport:
    labels: list[str]
    confusion: list[list[int]]  # rows: ground truth, columns: prediction
    accuracy: float
    support: dict[str, int]
    per_class: dict[str, dict[str, float]]
    groups: dict[str, dict[str, float]]
    n: int

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def evaluate(
    preds: Sequence[str],
    gts: Sequence[str],
    space: OrdinalLabelSpace,
    grouping: Mapping[str, str],
) -> EvalReport:
    """Fine-label confusion and accuracy plus binary P/R for each reporting group.

    Precision or recall with a zero denominator is reported as 0.0.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground-truth labels")
    if not gts:
        raise ValueError("nothing to evaluate")
    group_of = {}
    for label, group in grouping.items():
        group_of[space.rank(label)] = group
    if len(group_of) != space.K:
        missing = [lab for lab in space.labels if space.rank(lab) not in group_of]
        raise ValueError(f"grouping lacks labels {missing}")

    p_idx = np.array([space.rank(p) - 1 for p in preds])
    g_idx = np.array([space.rank(g) - 1 for g in gts])
    conf = np.zeros((space.K, space.K), dtype=int)
    np.add.at(conf, (g_idx, p_idx), 1)

    labels = list(space.labels)
    per_class = {}
    for i, lab in enumerate(labels):
        tp = int(conf[i, i])
        per_class[lab] = {
            "precision": _ratio(tp, int(conf[:, i].sum())),
            "recall": _ratio(tp, int(conf[i, :].sum())),
        }
    groups = {}
    for group in sorted(set(grouping.values())):
        members = np.array([group_of[r + 1] == group for r in range(space.K)])
        in_gt, in_pred = members[g_idx], members[p_idx]
        tp = int((in_gt & in_pred).sum())
        groups[group] = {
            "precision": _ratio(tp, int(in_pred.sum())),
            "recall": _ratio(tp, int(in_gt.sum())),
            "support": int(in_gt.sum()),
        }
    return EvalReport(
        labels=labels,
        confusion=conf.tolist(),
        accuracy=float(np.trace(conf)) / len(gts),
        support={lab: int(conf[i, :].sum()) for i, lab in enumerate(labels)},
        per_class=per_class,
        groups=groups,
        n=len(gts),
    )


# -- benchmark corpus --------------------------------------------------------

BENCH_RULES = RuleBase(
    [
        Rule("B1", "A departure from the planned route that later rejoins it and still reaches the destination makes the driver partially liable."),
        Rule("B2", "Driving back against the planned direction and stopping short of the destination makes the driver liable."),
        Rule("B3", "Reaching the pickup destination and then driving away without completing the service is malicious conduct."),
        Rule("B4", "Small position offsets consistent with sensor drift along the planned route are not a violation."),
        Rule("B5", "A passenger who waited longer than ten minutes is entitled to cancellation without penalty."),
    ]
)
_RULE_CLASSES = {"B1": {DEVIATION}, "B2": {REVERSE}, "B3": {ARRIVAL_THEN_LEAVE}, "B4": {COMPLIANT, DRIFT_ONLY}}

_NARRATIVES = {
    COMPLIANT: ["driver arrived as planned but the passenger cancelled", "trip looked normal, passenger changed plans"],
    DRIFT_ONLY: ["map showed the car wobbling near the road", "location jumped around a little but the car came"],
    DEVIATION: ["driver took a different street than the app suggested", "car wandered off the route before arriving"],
    REVERSE: ["the car turned around and drove away from me", "driver went back the way they came and never arrived"],
    ARRIVAL_THEN_LEAVE: ["driver reached the pickup and then left without me", "car arrived then drove off before I got there"],
}


def trip_stats(path: Polyline, route: Route) -> dict[str, float]:
    """Driver-side behaviour features that survive sensor drift."""
    pts = path.points
    end = np.asarray(route.end)
    near = np.hypot(*(pts - end).T) <= ARRIVAL_RADIUS
    end_gap = planar_distance(GeoPoint(*pts[-1]), route.end)
    post = 0.0
    if near.any() and end_gap > ARRIVAL_RADIUS:
        post = polyline_length(Polyline(pts[int(np.argmax(near)) :]))
    return {
        "max_offset_m": float(distance_to_polyline(pts, route.geo).max()),
        "end_gap_m": float(end_gap),
        "post_arrival_m": float(post),
        "detour_m": float(polyline_length(path) - polyline_length(route.geo)),
    }


@dataclass
class BenchCorpus:
    orders: list[OrderRecord]
    classes: list[str]  # generating trajectory class per order
    applicability: np.ndarray


def build_bench_corpus(cfg: PipelineConfig, out_dir: Path) -> BenchCorpus:
    bench = cfg.bench
    net = generate_network(
        cfg.network.seed, cfg.network.width, cfg.network.height, cfg.network.jitter, cfg.network.knockout_fraction
    )
    mcfg = cfg.mutation_config()
    spec = cfg.render_spec()
    counts = allocate_counts(bench.n_orders, bench.class_mix)
    plan = [lab for lab, c in counts.items() for _ in range(c)]
    rng = rng_for(cfg.seed, "bench", "order-sequence")
    plan = [plan[i] for i in rng.permutation(len(plan))]

    images = out_dir / "images"
    images.mkdir(parents=True, exist_ok=True)
    root = derive_seed(cfg.seed, "bench", "trajectories")
    t0 = 1.7e9
    orders, rows = [], []
    for i, label in enumerate(plan):
        route, traj, _, _ = _synth_one(net, label, root, i, mcfg.with_seed(root), cfg.dataset.min_poi_distance)
        oid = f"b{i:05d}"
        (images / f"{oid}.png").write_bytes(png_bytes(render_pair(net, route, traj, spec)))
        r = rng_for(cfg.seed, "bench", "order", i)
        order = OrderRecord(
            order_id=oid,
            o_init=OrderInit(
                l_driver=GeoPoint(*map(float, net.node_xy()[int(r.integers(len(net.node_ids())))])),
                l_start=route.start,
                l_end=route.end,
                driver_profile={"tier": str(r.choice(["basic", "plus"]))},
                passenger_profile={"tier": str(r.choice(["new", "regular"]))},
            ),
            f_driver=trip_stats(traj.path, route),
            f_pass={"wait_s": float(r.uniform(0, 1200))},
            timestamp=t0 + 600.0 * i,
            image_ref=f"images/{oid}.png",
            cancel_code=int(r.integers(0, 4)),
            narrative=str(r.choice(_NARRATIVES[label])),
            ground_truth=bench.verdict_of[label],
        )
        orders.append(order)
        rows.append([int(label in _RULE_CLASSES.get(rid, ())) for rid in BENCH_RULES.ids[:4]] + [int(order.f_pass["wait_s"] > 600)])
    return BenchCorpus(orders, plan, np.array(rows, dtype=int))


# -- mock backends -------------------------------------------------------------

_ORDER_ID = re.compile(r"Order ID: (\S+)")


def _order_id(conversation) -> str:
    m = _ORDER_ID.search(conversation[0]["content"]) if conversation else None
    if m is None:
        raise ValueError("conversation carries no order id")
    return m.group(1)


def label_backends(verdict_for) -> Backends:
    """Deterministic backends that ask one map question and answer ``verdict_for(order_id)``."""

    def adjudicator(prompt, convo, image_ref):
        if len(convo) == 1:
            return "<map>Does the red trajectory follow the blue route all the way to the destination?</map>"
        return f"The map answer settles the facts. <result>{verdict_for(_order_id(convo))}</result>"

    def analyst(prompt, convo, image_ref):
        return "<answer>The red trajectory and the blue route are both visible on the map.</answer>"

    def refiner(prompt, convo, image_ref):
        label = verdict_for(_order_id(convo))
        return (
            "<reason>(1) Information Analysis: the order record and the dispute were reviewed.\n"
            "(2) Visual Evidence Integration: the analyst described the trajectory against the route.\n"
            "(3) Rule Grounding: the candidate rules were checked against those facts.\n"
            f"(4) Comprehensive Adjudication: the facts support {label}.</reason>\n"
            f"<judge>trajectory dispute</judge>\n<result>{label}</result>"
        )

    def summarizer(prompt, convo, image_ref):
        n = convo[0]["content"].split(" ", 1)[0]
        return f"{n} earlier decisions were retrieved; compare their verdicts with this order."

    return Backends(*(FunctionBackend(fn, name=fn.__name__) for fn in (adjudicator, analyst, refiner, summarizer)))


def bench_backends(spec: str, truth: Mapping[str, str], space: OrdinalLabelSpace) -> Backends:
    """``oracle``, ``fixed:<label>``, ``mock:<script>`` or ``http:<url>``."""
    if spec == "oracle":
        return label_backends(lambda oid: truth[oid])
    if spec.startswith("fixed:"):
        label = space.parse(spec[len("fixed:") :])
        if label is None:
            raise ConfigError(f"coa.backend: {spec!r} names a label outside the label space")
        return label_backends(lambda oid: label)
    try:
        return backends_from_spec(spec)
    except ValueError as exc:
        raise ConfigError(f"coa.backend: {exc}") from None


# -- driver --------------------------------------------------------------------


def _dumps(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def run_benchmark(cfg: PipelineConfig, out_dir: str | Path) -> dict[str, Any]:
    """Synthesize a labeled corpus, adjudicate its later half and write the report.

    The earlier ``history_fraction`` of orders (by timestamp) seed the
    precedent store and train the rule calibrators; the rest are evaluated.
    Writes ``report.json``, ``audit.jsonl``, ``orders.jsonl`` and the images
    under ``out_dir`` and returns the report document.
    """
    if cfg.bench is None:
        raise ConfigError("bench: section is required for the benchmark (it holds the label grouping)")
    bench = cfg.bench
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_effective(cfg, out)
    space = OrdinalLabelSpace(bench.labels)
    embedder = embedder_from_tag(cfg.retrieval.embedder)

    corpus = build_bench_corpus(cfg, out)
    dump_orders(corpus.orders, out / "orders.jsonl")
    n_hist = max(1, int(round(bench.history_fraction * len(corpus.orders))))
    history, test = corpus.orders[:n_hist], corpus.orders[n_hist:]
    if not test:
        raise ConfigError("bench: history_fraction leaves no orders to evaluate")

    store = PrecedentStore(embedder.dimension, embedder.name)
    for o in history:
        store.insert(order_text(o), o.ground_truth, o.timestamp, embedder)
    store.save(out / "store.jsonl")
    cal = cfg.calibration
    ensemble = train_calibrators(
        history,
        corpus.applicability[:n_hist],
        BENCH_RULES,
        embedder,
        families=cal.families,
        val_split=cal.val_split,
        seed=cal.seed,
        downsample_ratio=cal.downsample_ratio,
        threshold=cal.threshold,
    )
    ensemble.save(out / "ensemble.json")
    (out / "rules.json").write_text(_dumps(BENCH_RULES.to_dict()), encoding="utf-8")

    truth = {o.order_id: o.ground_truth for o in corpus.orders}
    backends = bench_backends(cfg.coa.backend, truth, space)
    options = AdjudicationOptions(
        k=cfg.retrieval.k,
        max_turns=cfg.coa.max_turns,
        use_insight=cfg.coa.use_insight and not bench.no_insight,
        use_calibration=not bench.no_calibration,
        use_refinement=not bench.no_refinement,
        prompts=Prompts.from_files(cfg.coa.adjudicator_prompt, cfg.coa.analyst_prompt, cfg.coa.refiner_prompt),
    )
    reward_cfg = cfg.reward_config()

    def run_one(order: OrderRecord) -> dict[str, Any]:
        live = dataclasses.replace(order, image_ref=str((out / order.image_ref).resolve()))
        rec: dict[str, Any] = {"order_id": order.order_id, "ground_truth": order.ground_truth}
        try:
            refined = adjudicate(live, BENCH_RULES, ensemble, store, backends, space, options, embedder)
        except PipelineError as exc:
            rec.update(status="failed", stage=exc.stage, error=str(exc.cause), prediction=None)
            return rec
        if bench.binary_reward:
            r_ans = binary_reward(refined.result, order.ground_truth, space)
        else:
            r_ans = ordinal_reward(refined.result, order.ground_truth, space, reward_cfg.beta)
        r_fmt = format_reward(refined.render())
        reasoning = refined.to_dict()
        reasoning.pop("audit")
        rec.update(
            status="ok",
            prediction=refined.result,
            audit=refined.audit,
            reasoning=reasoning,
            reward={"answer": r_ans, "format": r_fmt, "total": total_reward(r_ans, r_fmt, reward_cfg)},
        )
        return rec

    # scripted mocks may key on call order, so only stateless backends fan out
    parallel = cfg.workers > 1 and not cfg.coa.backend.startswith("mock:")
    if parallel:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(run_one, test))
    else:
        records = [run_one(o) for o in test]

    with open(out / "audit.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")

    ok = [r for r in records if r["status"] == "ok"]
    failed = [r for r in records if r["status"] == "failed"]
    metrics = None
    if ok:
        try:
            metrics = evaluate([r["prediction"] for r in ok], [r["ground_truth"] for r in ok], space, bench.grouping).to_dict()
        except LabelSpaceError as exc:
            raise PipelineError("evaluate", exc) from exc
    rewards = None
    if ok:
        rewards = {k: float(np.mean([r["reward"][k] for r in ok])) for k in ("answer", "format", "total")}
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": cfg.effective(),
        "ablations": {
            "no_refinement": bench.no_refinement,
            "no_insight": bench.no_insight,
            "no_calibration": bench.no_calibration,
            "binary_reward": bench.binary_reward,
        },
        "corpus": {
            "n_orders": len(corpus.orders),
            "n_history": len(history),
            "n_evaluated": len(test),
            "class_counts": {c: corpus.classes.count(c) for c in sorted(set(corpus.classes))},
            "rule_fail_open": sorted(rid for rid, c in ensemble.calibrators.items() if c.flag),
        },
        "n_ok": len(ok),
        "n_failed": len(failed),
        "failure_rate": len(failed) / len(records),
        "failures_by_stage": {s: sum(r["stage"] == s for r in failed) for s in sorted({r["stage"] for r in failed})},
        "metrics": metrics,
        "rewards": rewards,
    }
    (out / "report.json").write_text(_dumps(report), encoding="utf-8")
    return report
