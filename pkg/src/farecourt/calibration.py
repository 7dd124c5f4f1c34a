"""Per-rule applicability calibrators and knowledge-base pruning.

Each rule gets its own binary problem (binary relevance). For every rule
the majority class is down-sampled, one model per family is trained, and
the family with the highest validation recall is kept.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .classifiers import DEFAULT_FAMILIES, ConstantClassifier, classifier_from_dict, make_classifier
from .embedding import Embedder, embedder_from_tag
from .orders import OrderRecord, semantic_text
from .seeding import rng_for

log = logging.getLogger(__name__)

ENSEMBLE_VERSION = 1
BASE_TABULAR = (
    "hour_of_day",
    "l_driver_x",
    "l_driver_y",
    "l_start_x",
    "l_start_y",
    "l_end_x",
    "l_end_y",
    "cancel_code",
)


@dataclass(frozen=True)
class Rule:
    rule_id: str
    clause: str


class RuleBase:
    def __init__(self, rules: Sequence[Rule]):
        ids = [r.rule_id for r in rules]
        if len(set(ids)) != len(ids):
            raise ValueError("rule ids must be unique")
        for r in rules:
            if not r.clause or not r.clause.strip():
                raise ValueError(f"rule {r.rule_id} has empty clause text")
        self.rules: tuple[Rule, ...] = tuple(rules)

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RuleBase) and self.rules == other.rules

    def __repr__(self) -> str:
        return f"RuleBase({list(self.ids)})"

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.rule_id for r in self.rules)

    def subset(self, keep_ids) -> "RuleBase":
        keep = set(keep_ids)
        return RuleBase([r for r in self.rules if r.rule_id in keep])

    def to_dict(self) -> dict[str, Any]:
        return {"rules": [{"id": r.rule_id, "clause": r.clause} for r in self.rules]}

    @classmethod
    def from_dict(cls, doc: dict[str, Any] | list) -> "RuleBase":
        items = doc["rules"] if isinstance(doc, dict) else doc
        return cls([Rule(str(r["id"]), r["clause"]) for r in items])

    @classmethod
    def load(cls, path: str | Path) -> "RuleBase":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class FeatureVector:
    tabular: np.ndarray
    semantic: np.ndarray

    def concat(self) -> np.ndarray:
        return np.concatenate([self.tabular, self.semantic])


def raw_tabular(order: OrderRecord, fields: Sequence[str]) -> np.ndarray:
    oi = order.o_init
    base = {
        "hour_of_day": order.hour_of_day,
        "l_driver_x": oi.l_driver.x,
        "l_driver_y": oi.l_driver.y,
        "l_start_x": oi.l_start.x,
        "l_start_y": oi.l_start.y,
        "l_end_x": oi.l_end.x,
        "l_end_y": oi.l_end.y,
        "cancel_code": float(order.cancel_code),
    }
    out = []
    for name in fields:
        if name in base:
            out.append(base[name])
            continue
        group, _, key = name.partition(".")
        stats = order.f_driver if group == "driver" else order.f_pass
        if key not in stats:
            raise ValueError(f"order {order.order_id} lacks field {name!r}")
        out.append(float(stats[key]))
    v = np.array(out, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"order {order.order_id} has non-finite tabular values")
    return v


@dataclass
class FeatureSchema:
    """Fixed tabular field order plus the min-max statistics of the training corpus."""

    fields: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray
    embedder_tag: str

    @classmethod
    def fit(cls, orders: Sequence[OrderRecord], embedder: Embedder) -> "FeatureSchema":
        driver = sorted({k for o in orders for k in o.f_driver})
        passenger = sorted({k for o in orders for k in o.f_pass})
        fields = BASE_TABULAR + tuple(f"driver.{k}" for k in driver) + tuple(f"passenger.{k}" for k in passenger)
        raw = np.array([raw_tabular(o, fields) for o in orders])
        return cls(fields, raw.min(axis=0), raw.max(axis=0), embedder.name)

    def scale(self, raw: np.ndarray) -> np.ndarray:
        span = self.maxs - self.mins
        return np.where(span > 0, (raw - self.mins) / np.where(span > 0, span, 1.0), 0.0)

    def to_dict(self) -> dict[str, Any]:
        return {"fields": list(self.fields), "mins": self.mins.tolist(), "maxs": self.maxs.tolist(), "embedder": self.embedder_tag}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "FeatureSchema":
        return cls(tuple(doc["fields"]), np.array(doc["mins"]), np.array(doc["maxs"]), doc["embedder"])


def build_features(order: OrderRecord, embedder: Embedder, schema: FeatureSchema) -> FeatureVector:
    """Min-max scaled tabular block plus the unit-norm embedding of the order's free text."""
    tab = schema.scale(raw_tabular(order, schema.fields))
    sem = embedder.embed(semantic_text(order) or order.order_id)
    return FeatureVector(tab, sem)


def feature_matrix(orders: Sequence[OrderRecord], embedder: Embedder, schema: FeatureSchema) -> np.ndarray:
    return np.array([build_features(o, embedder, schema).concat() for o in orders])


# -- ensemble --------------------------------------------------------------


@dataclass
class RuleCalibrator:
    rule_id: str
    family: str
    model: Any
    threshold: float = 0.5
    val_recall: float | None = None
    val_precision: float | None = None
    candidates: dict[str, dict[str, float]] = field(default_factory=dict)
    flag: str | None = None  # set when the rule failed open

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.model.score(X) >= self.threshold).astype(int)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rule_id": self.rule_id,
            "family": self.family,
            "model": self.model.to_dict(),
            "threshold": self.threshold,
            "val_recall": self.val_recall,
            "val_precision": self.val_precision,
            "candidates": self.candidates,
            "flag": self.flag,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "RuleCalibrator":
        return cls(
            doc["rule_id"],
            doc["family"],
            classifier_from_dict(doc["model"]),
            doc.get("threshold", 0.5),
            doc.get("val_recall"),
            doc.get("val_precision"),
            doc.get("candidates", {}),
            doc.get("flag"),
        )


@dataclass
class CalibratorEnsemble:
    calibrators: dict[str, RuleCalibrator]
    schema: FeatureSchema | None
    meta: dict[str, Any] = field(default_factory=dict)

    def features(self, orders: Sequence[OrderRecord], embedder: Embedder | None = None) -> np.ndarray:
        if self.schema is None:
            return np.zeros((len(orders), 1))
        emb = embedder or embedder_from_tag(self.schema.embedder_tag)
        return feature_matrix(orders, emb, self.schema)

    def predict(self, order: OrderRecord, embedder: Embedder | None = None) -> dict[str, int]:
        x = self.features([order], embedder)
        return {rid: int(c.predict(x)[0]) for rid, c in self.calibrators.items()}

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": ENSEMBLE_VERSION,
            "meta": self.meta,
            "schema": self.schema.to_dict() if self.schema else None,
            "calibrators": [c.to_dict() for c in self.calibrators.values()],
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "CalibratorEnsemble":
        cals = [RuleCalibrator.from_dict(c) for c in doc["calibrators"]]
        schema = FeatureSchema.from_dict(doc["schema"]) if doc.get("schema") else None
        return cls({c.rule_id: c for c in cals}, schema, doc.get("meta", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CalibratorEnsemble":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def constant(cls, base: "RuleBase", positive_ids=()) -> "CalibratorEnsemble":
        """Ensemble with fixed per-rule outputs; positive for ``positive_ids``."""
        pos = set(positive_ids)
        cals = {r.rule_id: RuleCalibrator(r.rule_id, "constant", ConstantClassifier(int(r.rule_id in pos))) for r in base}
        return cls(cals, None, {"planted": True})


def recall_precision(y_true: np.ndarray, y_pred: np.ndarray) -> tuple[float, float]:
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    pos = int(np.sum(y_true == 1))
    pred_pos = int(np.sum(y_pred == 1))
    recall = tp / pos if pos else 0.0
    precision = tp / pred_pos if pred_pos else 0.0
    return recall, precision


def _stratified_split(y: np.ndarray, val_split: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    train, val = [], []
    for cls_ in (1, 0):
        idx = np.flatnonzero(y == cls_)
        idx = idx[rng.permutation(len(idx))]
        n_val = min(len(idx) - 1, max(1, int(round(len(idx) * val_split))))
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def downsample(idx: np.ndarray, y: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Subsample the majority class among ``idx`` to at most ``ratio`` times the minority."""
    pos = idx[y[idx] == 1]
    neg = idx[y[idx] == 0]
    major, minor = (neg, pos) if len(neg) >= len(pos) else (pos, neg)
    cap = int(math.floor(ratio * len(minor)))
    if len(major) > cap:
        major = np.sort(rng.choice(major, size=cap, replace=False))
    return np.sort(np.concatenate([major, minor]))


def select_family(candidates: Sequence[tuple[str, float, float]]) -> str:
    """Family with the highest validation recall; ties go to precision, then to list order."""
    if not candidates:
        raise ValueError("no candidate families")
    best = max(range(len(candidates)), key=lambda i: (candidates[i][1], candidates[i][2], -i))
    return candidates[best][0]


def _train_rule(
    rule_id: str,
    X: np.ndarray,
    y: np.ndarray,
    families: Sequence[str],
    val_split: float,
    seed: int,
    ratio: float,
    threshold: float,
) -> RuleCalibrator:
    n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
    if n_pos < 3 or n_neg < 3:
        # too few examples to leave >= 2 per class in training; fail open
        reason = "no positive examples" if n_pos == 0 else f"untrainable ({n_pos} positive, {n_neg} negative)"
        log.warning(json.dumps({"event": "rule_fail_open", "rule": rule_id, "reason": reason}))
        return RuleCalibrator(rule_id, "constant", ConstantClassifier(1), threshold, flag=reason)
    rng = rng_for(seed, "calibrate", rule_id)
    tr, va = _stratified_split(y, val_split, rng)
    tr = downsample(tr, y, ratio, rng)
    models, cands = {}, {}
    for fam in families:
        model = make_classifier(fam).fit(X[tr], y[tr])
        pred = (model.score(X[va]) >= threshold).astype(int)
        rec, prec = recall_precision(y[va], pred)
        models[fam], cands[fam] = model, {"recall": rec, "precision": prec}
    fam = select_family([(f, cands[f]["recall"], cands[f]["precision"]) for f in families])
    return RuleCalibrator(rule_id, fam, models[fam], threshold, cands[fam]["recall"], cands[fam]["precision"], cands)


def train_calibrators(
    orders: Sequence[OrderRecord],
    applicability: np.ndarray,
    base: RuleBase,
    embedder: Embedder,
    families: Sequence[str] = DEFAULT_FAMILIES,
    val_split: float = 0.2,
    seed: int = 0,
    downsample_ratio: float = 2.0,
    threshold: float = 0.5,
    workers: int = 1,
) -> CalibratorEnsemble:
    """Train one calibrator per rule.

    ``applicability`` is an ``(n_orders, n_rules)`` 0/1 matrix whose columns
    follow ``base`` order. Each rule reads only its own column and its own
    derived seed, so results do not depend on rule order.
    """
    Y = np.asarray(applicability, dtype=int)
    if Y.shape != (len(orders), len(base)):
        raise ValueError(f"applicability shape {Y.shape} != ({len(orders)}, {len(base)})")
    if not 0 < val_split < 1:
        raise ValueError("val_split must be within (0, 1)")
    schema = FeatureSchema.fit(orders, embedder)
    X = feature_matrix(orders, embedder, schema)

    def job(i: int) -> RuleCalibrator:
        rid = base.rules[i].rule_id
        return _train_rule(rid, X, Y[:, i], families, val_split, seed, downsample_ratio, threshold)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cals = list(pool.map(job, range(len(base))))
    else:
        cals = [job(i) for i in range(len(base))]
    meta = {
        "seed": seed,
        "val_split": val_split,
        "downsample_ratio": downsample_ratio,
        "families": list(families),
        "n_train": len(orders),
    }
    return CalibratorEnsemble({c.rule_id: c for c in cals}, schema, meta)


def prune_rules(
    ensemble: CalibratorEnsemble,
    base: RuleBase,
    order: OrderRecord,
    embedder: Embedder | None = None,
) -> RuleBase:
    """Rules of ``base`` whose calibrator fires for ``order``, in base order."""
    missing = [rid for rid in base.ids if rid not in ensemble.calibrators]
    if missing:
        raise ValueError(f"ensemble has no calibrator for rules {missing}")
    fired = ensemble.predict(order, embedder)
    return base.subset(rid for rid in base.ids if fired[rid] == 1)
