"""Temporally partitioned precedent store, exact top-K cosine retrieval and meta-insight summaries."""

from __future__ import annotations

import json
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import ReasoningBackend
from .embedding import Embedder
from .errors import BackendError

DEFAULT_K = 4
STORE_VERSION = 1
NORM_TOL = 1e-6


@dataclass(frozen=True)
class PrecedentEntry:
    id: int
    text: str
    verdict: str
    timestamp: float
    vector: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class Neighbor:
    entry_id: int
    text: str
    verdict: str
    timestamp: float
    similarity: float


class PrecedentStore:
    """Append-only store. Inserts serialize on a lock; readers work on snapshots."""

    def __init__(self, dimension: int, embedder_tag: str = ""):
        self.dimension = int(dimension)
        self.embedder_tag = embedder_tag
        self._entries: list[PrecedentEntry] = []
        self._lock = threading.Lock()
        self._snap: tuple[tuple[PrecedentEntry, ...], np.ndarray, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> tuple[PrecedentEntry, ...]:
        return tuple(self._entries)

    def add_vector(self, text: str, verdict: str, timestamp: float, vector: np.ndarray) -> int:
        if not text:
            raise ValueError("precedent text must be non-empty")
        vec = np.asarray(vector, dtype=float)
        if vec.shape != (self.dimension,):
            raise ValueError(f"vector dimension {vec.shape} != store dimension {self.dimension}")
        if abs(np.linalg.norm(vec) - 1.0) > NORM_TOL:
            raise ValueError("stored vectors must have unit L2 norm")
        vec = vec.copy()
        vec.setflags(write=False)
        with self._lock:
            eid = len(self._entries)
            self._entries.append(PrecedentEntry(eid, text, str(verdict), float(timestamp), vec))
            self._snap = None
        return eid

    def insert(self, order_text: str, verdict: str, timestamp: float, embedder: Embedder) -> int:
        if not order_text:
            raise ValueError("precedent text must be non-empty")
        return self.add_vector(order_text, verdict, timestamp, embedder.embed(order_text))

    def snapshot(self) -> tuple[tuple[PrecedentEntry, ...], np.ndarray, np.ndarray]:
        with self._lock:
            if self._snap is None:
                entries = tuple(self._entries)
                mat = np.array([e.vector for e in entries]).reshape(len(entries), self.dimension)
                ts = np.array([e.timestamp for e in entries], dtype=float)
                self._snap = (entries, mat, ts)
            return self._snap

    def retrieve(self, query_vector: np.ndarray, query_timestamp: float, k: int = DEFAULT_K) -> list[Neighbor]:
        if k < 1:
            raise ValueError("K must be >= 1")
        entries, mat, ts = self.snapshot()
        eligible = np.flatnonzero(ts < query_timestamp)
        if len(eligible) == 0:
            return []
        scores = mat[eligible] @ np.asarray(query_vector, dtype=float)
        ids = eligible  # entry id == position
        # primary: similarity desc; then earlier timestamp; then lower id
        order = np.lexsort((ids, ts[eligible], -scores))[:k]
        return [
            Neighbor(int(ids[i]), entries[ids[i]].text, entries[ids[i]].verdict, float(ts[ids[i]]), float(scores[i]))
            for i in order
        ]

    # -- persistence -----------------------------------------------------

    def save(self, path: str | Path) -> None:
        entries = self.entries
        with open(path, "w", encoding="utf-8") as fh:
            header = {"type": "header", "version": STORE_VERSION, "dimension": self.dimension, "embedder": self.embedder_tag}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for e in entries:
                rec = {"type": "entry", "id": e.id, "text": e.text, "verdict": e.verdict, "timestamp": e.timestamp, "vector": e.vector.tolist()}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PrecedentStore":
        with open(path, encoding="utf-8") as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        if not lines or lines[0].get("type") != "header":
            raise ValueError(f"{path}: missing store header")
        head = lines[0]
        store = cls(head["dimension"], head.get("embedder", ""))
        for rec in lines[1:]:
            eid = store.add_vector(rec["text"], rec["verdict"], rec["timestamp"], np.array(rec["vector"]))
            if eid != rec["id"]:
                raise ValueError(f"{path}: entry ids out of sequence at {rec['id']}")
        return store


def insert(store: PrecedentStore, order_text: str, verdict: str, timestamp: float, embedder: Embedder) -> int:
    return store.insert(order_text, verdict, timestamp, embedder)


def retrieve_topk(
    store: PrecedentStore,
    query_text: str,
    query_timestamp: float,
    k: int,
    embedder: Embedder,
) -> list[Neighbor]:
    """Top-``k`` precedents strictly older than ``query_timestamp``, most similar first."""
    return store.retrieve(embedder.embed(query_text), query_timestamp, k)


# -- meta-insight ----------------------------------------------------------

SUMMARY_ROLE_PROMPT = (
    "You summarize past ride-hailing liability decisions. Read the retrieved precedent cases, "
    "state which verdicts dominate, which order facts those cases share, and what a reviewer "
    "of a similar new order should check first. Answer in at most five sentences."
)
NO_PRECEDENT_TEXT = "No precedent: no earlier adjudicated order is available for this query."


@dataclass(frozen=True)
class MetaInsight:
    text: str
    support: tuple[int, ...]
    verdict_histogram: dict[str, int]

    def to_dict(self) -> dict:
        return {"text": self.text, "support": list(self.support), "verdict_histogram": dict(self.verdict_histogram)}


def render_neighbors(neighbors: Sequence[Neighbor]) -> str:
    lines = [f"{len(neighbors)} retrieved precedent(s):"]
    for rank, n in enumerate(neighbors, 1):
        lines.append(f"[{rank}] case {n.entry_id} | verdict: {n.verdict} | similarity: {n.similarity:.4f}\n{n.text}")
    return "\n".join(lines)


def summarize_insight(neighbors: Sequence[Neighbor], summarizer: ReasoningBackend) -> MetaInsight:
    if not neighbors:
        return MetaInsight(NO_PRECEDENT_TEXT, (), {})
    hist = Counter(n.verdict for n in neighbors)
    histogram = {label: hist[label] for label in sorted(hist)}
    convo = [{"role": "user", "content": render_neighbors(neighbors)}]
    try:
        text = summarizer.complete(SUMMARY_ROLE_PROMPT, convo, None)
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"summarizer failed: {exc}", retriable=True) from exc
    return MetaInsight(text, tuple(n.entry_id for n in neighbors), histogram)
