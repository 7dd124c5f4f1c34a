"""Ordinal-sensitive answer reward, format reward and divergence-aware sample selection."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import LabelSpaceError

BOUND_EPS = 1e-9
DIVERGENCE_LOW = 0.2
DIVERGENCE_HIGH = 0.8


def normalize_label(text: str) -> str:
    return text.strip().casefold()


class OrdinalLabelSpace:
    """Ordered verdicts ``y_1 < ... < y_K`` with 1-based ranks."""

    def __init__(self, labels: Sequence[str]):
        labels = [str(x) for x in labels]
        if len(labels) < 2:
            raise ValueError("label space needs at least two labels")
        keys = [normalize_label(x) for x in labels]
        if len(set(keys)) != len(keys):
            raise ValueError("labels must be unique (after trimming and case folding)")
        self.labels: tuple[str, ...] = tuple(labels)
        self._rank = {k: i + 1 for i, k in enumerate(keys)}

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, text: object) -> bool:
        return isinstance(text, str) and normalize_label(text) in self._rank

    def __iter__(self):
        return iter(self.labels)

    def __repr__(self) -> str:
        return f"OrdinalLabelSpace({list(self.labels)})"

    @property
    def K(self) -> int:
        return len(self.labels)

    def rank(self, label: str) -> int:
        try:
            return self._rank[normalize_label(label)]
        except KeyError:
            raise LabelSpaceError(f"{label!r} is not in the label space {list(self.labels)}") from None

    def parse(self, text: str) -> str | None:
        """Canonical label for ``text``, or None when it is outside the space."""
        r = self._rank.get(normalize_label(text))
        return self.labels[r - 1] if r else None


@dataclass(frozen=True)
class RewardConfig:
    lambda_ans: float = 0.8
    lambda_fmt: float = 0.2
    beta: float = 0.5

    def __post_init__(self):
        if self.lambda_ans < 0 or self.lambda_fmt < 0:
            raise ValueError("reward weights must be non-negative")
        if abs(self.lambda_ans + self.lambda_fmt - 1.0) > 1e-9:
            raise ValueError("lambda_ans + lambda_fmt must equal 1")
        if not 0 < self.beta < 1:
            raise ValueError("beta must be within (0, 1)")


def rank_credit(r_pred: int, r_gt: int, k: int, beta: float) -> float:
    """Off-target credit ``beta * (1 - |r_pred - r_gt| / (K - 1))``."""
    return beta * (1.0 - abs(r_pred - r_gt) / (k - 1))


def ordinal_reward(y_pred: str, y_gt: str, space: OrdinalLabelSpace, beta: float = 0.5) -> float:
    r_gt = space.rank(y_gt)
    if not 0 < beta < 1:
        raise ValueError("beta must be within (0, 1)")
    pred = space.parse(y_pred) if isinstance(y_pred, str) else None
    if pred is None:
        return 0.0
    r_pred = space.rank(pred)
    if r_pred == r_gt:
        return 1.0
    return rank_credit(r_pred, r_gt, space.K, beta)


def binary_reward(y_pred: str, y_gt: str, space: OrdinalLabelSpace) -> float:
    """All-or-nothing answer reward (the non-ordinal baseline)."""
    space.rank(y_gt)
    pred = space.parse(y_pred) if isinstance(y_pred, str) else None
    return 1.0 if pred is not None and space.rank(pred) == space.rank(y_gt) else 0.0


_TAGS = ("reason", "judge", "result")


def extract_tag(text: str, tag: str) -> str | None:
    m = re.search(rf"<{tag}>(.*?)</{tag}>", text, flags=re.DOTALL)
    return m.group(1) if m else None


def format_reward(output: str) -> int:
    """1 when ``output`` holds exactly one non-empty reason, judge and result block, in that order."""
    cursor = -1
    for tag in _TAGS:
        open_t, close_t = f"<{tag}>", f"</{tag}>"
        if output.count(open_t) != 1 or output.count(close_t) != 1:
            return 0
        start, end = output.index(open_t), output.index(close_t)
        if start < cursor or end < start:
            return 0
        if not output[start + len(open_t) : end].strip():
            return 0
        cursor = end
    return 1


def total_reward(r_ans: float, r_fmt: float, cfg: RewardConfig = RewardConfig()) -> float:
    if not 0 <= r_ans <= 1:
        raise ValueError("r_ans must be within [0, 1]")
    if r_fmt not in (0, 1):
        raise ValueError("r_fmt must be 0 or 1")
    return cfg.lambda_ans * r_ans + cfg.lambda_fmt * r_fmt


def predicted_label(output: str) -> str:
    """The verdict text of a model output: the result block if present, else the whole text."""
    inner = extract_tag(output, "result")
    return inner if inner is not None else output


def consistency_score(verdicts: Sequence[str], y_gt: str) -> float:
    """Fraction of rollout verdicts exactly matching ``y_gt`` (after trimming and case folding)."""
    if not verdicts:
        raise ValueError("need at least one rollout verdict")
    gt = normalize_label(y_gt)
    return sum(normalize_label(v) == gt for v in verdicts) / len(verdicts)


def divergence_filter(
    samples: Iterable[tuple[str, float]],
    low: float = DIVERGENCE_LOW,
    high: float = DIVERGENCE_HIGH,
) -> list[str]:
    """Ids whose consistency score lies in ``[low, high]``, bounds inclusive."""
    kept = []
    for sid, s in samples:
        if not -BOUND_EPS <= s <= 1 + BOUND_EPS:
            raise ValueError(f"score {s} for {sid} outside [0, 1]")
        if low - BOUND_EPS <= s <= high + BOUND_EPS:
            kept.append(sid)
    return kept
