"""``farecourt`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Errors go to stderr as one JSON object; logs are JSON lines on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .backends import backends_from_spec
from .calibration import CalibratorEnsemble, RuleBase, train_calibrators
from .coa import AdjudicationOptions, Prompts, adjudicate
from .config import DEFAULT_VERDICTS, PipelineConfig, load_config, parse_config, write_effective
from .embedding import embedder_from_tag
from .errors import ConfigError, FarecourtError, PipelineError
from .evaluation import run_benchmark
from .network import generate_network
from .orders import load_orders
from .render import build_dataset
from .retrieval import PrecedentStore, retrieve_topk
from .reward import (
    OrdinalLabelSpace,
    RewardConfig,
    binary_reward,
    consistency_score,
    divergence_filter,
    format_reward,
    ordinal_reward,
    predicted_label,
    total_reward,
)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        doc = {
            "ts": round(record.created, 3),
            "level": record.levelname.lower(),
            "logger": record.name,
        }
        msg = record.getMessage()
        try:
            payload = json.loads(msg)
        except ValueError:
            payload = None
        if isinstance(payload, dict):
            doc.update(payload)
        else:
            doc["msg"] = msg
        return json.dumps(doc, sort_keys=True)


def _setup_logging(level: str, log_file: str | None) -> None:
    handler = logging.FileHandler(log_file) if log_file else logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter())
    root = logging.getLogger("farecourt")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def _read_jsonl(path: str) -> list[dict[str, Any]]:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{path} does not exist")
    text = p.read_text(encoding="utf-8")
    if p.suffix == ".json":
        doc = json.loads(text)
        return doc if isinstance(doc, list) else [doc]
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def _read_labels(path: str | None) -> OrdinalLabelSpace:
    if path is None:
        return OrdinalLabelSpace(DEFAULT_VERDICTS)
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{path} does not exist")
    text = p.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
        labels = doc["labels"] if isinstance(doc, dict) else doc
    except ValueError:
        labels = [line.strip() for line in text.splitlines() if line.strip()]
    return OrdinalLabelSpace(labels)


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else parse_config({})
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    return cfg


def _emit(lines: Sequence[dict[str, Any]], out: str | None) -> None:
    text = "".join(json.dumps(d, sort_keys=True) + "\n" for d in lines)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    write_effective(cfg, out)
    n = cfg.network
    net = generate_network(n.seed, n.width, n.height, n.jitter, n.knockout_fraction)
    net.save(out / "network.json")
    records = build_dataset(
        net,
        cfg.dataset.n_samples,
        cfg.dataset.class_mix,
        cfg.mutation_config(),
        cfg.render_spec(),
        out,
        cfg.dataset.min_poi_distance,
        workers=cfg.workers,
    )
    logging.getLogger("farecourt.cli").info(json.dumps({"event": "synth_done", "samples": len(records)}))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    base = RuleBase.load(args.rules)
    docs = _read_jsonl(args.train)
    orders = load_orders(args.train)
    rows = []
    for d in docs:
        if "applicable_rules" not in d:
            raise UsageError(f"order {d.get('order_id')} lacks an 'applicable_rules' list")
        unknown = set(d["applicable_rules"]) - set(base.ids)
        if unknown:
            raise UsageError(f"order {d.get('order_id')} names unknown rules {sorted(unknown)}")
        rows.append([int(rid in d["applicable_rules"]) for rid in base.ids])
    cal = cfg.calibration
    ensemble = train_calibrators(
        orders,
        np.array(rows, dtype=int).reshape(len(orders), len(base)),
        base,
        embedder_from_tag(cfg.retrieval.embedder),
        families=cal.families,
        val_split=cal.val_split,
        seed=cal.seed,
        downsample_ratio=cal.downsample_ratio,
        threshold=cal.threshold,
        workers=cfg.workers,
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ensemble.save(args.out)
    summary = {rid: {"family": c.family, "val_recall": c.val_recall, "flag": c.flag} for rid, c in ensemble.calibrators.items()}
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    store = PrecedentStore.load(args.store)
    embedder = embedder_from_tag(store.embedder_tag or "hashing-256")
    neighbors = retrieve_topk(store, args.query, args.at, args.k, embedder)
    _emit([dataclasses.asdict(n) for n in neighbors], None)
    return EXIT_OK


def cmd_adjudicate(args) -> int:
    cfg = _config(args)
    orders = load_orders(args.order)
    base = RuleBase.load(args.rules)
    ensemble = CalibratorEnsemble.load(args.ensemble)
    store = PrecedentStore.load(args.store)
    space = _read_labels(args.labels)
    try:
        backends = backends_from_spec(args.backend)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    options = AdjudicationOptions(
        k=cfg.retrieval.k,
        max_turns=cfg.coa.max_turns,
        use_insight=cfg.coa.use_insight,
        prompts=Prompts.from_files(cfg.coa.adjudicator_prompt, cfg.coa.analyst_prompt, cfg.coa.refiner_prompt),
    )
    embedder = embedder_from_tag(store.embedder_tag or cfg.retrieval.embedder)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for order in orders:
        try:
            refined = adjudicate(order, base, ensemble, store, backends, space, options, embedder)
        except PipelineError as exc:
            failed += 1
            doc = {"order_id": order.order_id, "status": "failed", "stage": exc.stage, "error": str(exc.cause)}
            (out / f"{order.order_id}.error.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
            continue
        doc = refined.to_dict()
        transcript = doc["audit"].pop("transcript")
        (out / f"{order.order_id}.transcript.json").write_text(json.dumps(transcript, indent=2, sort_keys=True) + "\n")
        (out / f"{order.order_id}.reasoning.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        sys.stdout.write(json.dumps({"order_id": order.order_id, "verdict": refined.result}) + "\n")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_score(args) -> int:
    space = _read_labels(args.labels)
    try:
        cfg = RewardConfig(args.lambda_ans, 1.0 - args.lambda_ans, args.beta)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    preds = {str(d["id"]): d for d in _read_jsonl(args.pred)}
    gts = {str(d["id"]): d["label"] for d in _read_jsonl(args.gt)}
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise UsageError(f"no prediction for ids {missing}")
    lines = []
    for sid in sorted(gts):
        output = preds[sid].get("output", preds[sid].get("pred", ""))
        y_pred = predicted_label(output).strip()
        if args.binary:
            r_ans = binary_reward(y_pred, gts[sid], space)
        else:
            r_ans = ordinal_reward(y_pred, gts[sid], space, cfg.beta)
        r_fmt = format_reward(output)
        lines.append({"id": sid, "pred": y_pred, "gt": gts[sid], "r_ans": r_ans, "r_fmt": r_fmt, "total": total_reward(r_ans, r_fmt, cfg)})
    n = len(lines)
    agg = {
        "aggregate": True,
        "n": n,
        "mean_r_ans": sum(x["r_ans"] for x in lines) / n if n else 0.0,
        "mean_r_fmt": sum(x["r_fmt"] for x in lines) / n if n else 0.0,
        "mean_total": sum(x["total"] for x in lines) / n if n else 0.0,
    }
    _emit(lines + [agg], args.out)
    return EXIT_OK


def cmd_filter(args) -> int:
    samples = []
    for d in _read_jsonl(args.rollouts):
        if "score" in d:
            samples.append((str(d["id"]), float(d["score"])))
        else:
            samples.append((str(d["id"]), consistency_score(d["verdicts"], d["ground_truth"])))
    kept = divergence_filter(samples, args.low, args.high)
    _emit([{"id": sid} for sid in kept], args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    report = run_benchmark(cfg, args.out)
    summary = {
        "accuracy": report["metrics"]["accuracy"] if report["metrics"] else None,
        "failure_rate": report["failure_rate"],
    }
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="farecourt", description="Trajectory dispute synthesis, adjudication and scoring.")
    p.add_argument("--log-level", default="warning", choices=["debug", "info", "warning", "error"])
    p.add_argument("--log-file", default=None, help="write JSON log lines here instead of stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def with_config(sp, required=False):
        sp.add_argument("--config", required=required, help="TOML, JSON or YAML pipeline config")
        sp.add_argument("--workers", type=int, default=None, help="worker count (default: config, else CPU count)")

    sp = sub.add_parser("synth", help="build a rendered trajectory dataset")
    with_config(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("calibrate", help="train per-rule applicability calibrators")
    with_config(sp)
    sp.add_argument("--train", required=True, help="orders JSONL, each with an 'applicable_rules' list")
    sp.add_argument("--rules", required=True)
    sp.add_argument("--out", required=True, help="ensemble JSON path")
    sp.set_defaults(fn=cmd_calibrate)

    sp = sub.add_parser("retrieve", help="query a precedent store")
    sp.add_argument("--store", required=True)
    sp.add_argument("--query", required=True)
    sp.add_argument("--at", type=float, required=True, help="query timestamp; only strictly older entries qualify")
    sp.add_argument("-k", type=int, default=4)
    sp.set_defaults(fn=cmd_retrieve)

    sp = sub.add_parser("adjudicate", help="adjudicate orders with a reasoning backend")
    with_config(sp)
    sp.add_argument("--order", required=True)
    sp.add_argument("--rules", required=True)
    sp.add_argument("--ensemble", required=True)
    sp.add_argument("--store", required=True)
    sp.add_argument("--backend", required=True, help="mock:<script> or http:<url>")
    sp.add_argument("--labels", default=None, help="ordered verdict labels (JSON list or one per line)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_adjudicate)

    sp = sub.add_parser("score", help="compute answer, format and total rewards")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--beta", type=float, default=0.5)
    sp.add_argument("--lambda-ans", type=float, default=0.8)
    sp.add_argument("--binary", action="store_true", help="all-or-nothing answer reward")
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_score)

    sp = sub.add_parser("filter", help="keep rollouts whose consistency lies in the divergence band")
    sp.add_argument("--rollouts", required=True)
    sp.add_argument("--low", type=float, default=0.2)
    sp.add_argument("--high", type=float, default=0.8)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_filter)

    sp = sub.add_parser("bench", help="run the synthetic end-to-end benchmark")
    with_config(sp, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_bench)
    return p


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}, sort_keys=True) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    _setup_logging(args.log_level, args.log_file)
    if getattr(args, "workers", None) is not None and args.workers < 1:
        return _fail(EXIT_USAGE, "usage", "--workers must be >= 1")
    started = time.monotonic()
    try:
        code = args.fn(args)
    except (UsageError, ConfigError) as exc:
        return _fail(EXIT_USAGE, type(exc).__name__, str(exc))
    except PipelineError as exc:
        return _fail(EXIT_RUNTIME, "PipelineError", f"stage {exc.stage}: {exc.cause}")
    except (FarecourtError, ValueError, OSError, KeyError) as exc:
        return _fail(EXIT_RUNTIME, type(exc).__name__, str(exc))
    logging.getLogger("farecourt.cli").info(
        json.dumps({"event": "done", "command": args.command, "exit": code, "seconds": round(time.monotonic() - started, 3)})
    )
    return code


if __name__ == "__main__":
    sys.exit(main())
