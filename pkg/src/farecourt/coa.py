"""Adjudicator / visual-analyst inquiry loop, reasoning refinement and the end-to-end adjudication pipeline.

The adjudicator works from order text, candidate rules and precedent
insight only. Visual facts come exclusively through ``<map>`` questions
answered by the analyst, who sees the rendered image and the questions
but nothing else.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .backends import Backends, Message, ReasoningBackend
from .calibration import CalibratorEnsemble, RuleBase, prune_rules
from .embedding import Embedder, embedder_from_tag
from .errors import BackendError, LabelSpaceError, PipelineError, RefinementParseError
from .orders import OrderRecord, order_text
from .retrieval import DEFAULT_K, MetaInsight, PrecedentStore, retrieve_topk, summarize_insight
from .reward import OrdinalLabelSpace, extract_tag, format_reward

log = logging.getLogger(__name__)

DEFAULT_MAX_TURNS = 8
MAX_RETRIES = 2
MAX_REPROMPTS = 2

ADJUDICATOR_PROMPT = (
    "You decide liability for cancelled ride-hailing orders. You receive the order record, the "
    "platform rules that may apply and a digest of similar past decisions. You cannot see the "
    "trajectory map. Whenever a rule depends on what happened on the map, ask exactly one question "
    "per reply as <map>your question</map> and wait for the answer. Once the facts suffice, explain "
    "your reasoning and give the final verdict, one label from the allowed list, as "
    "<result>label</result>."
)
ANALYST_PROMPT = (
    "You read rendered trip maps for ride-hailing dispute review. The gray lines are roads, the blue "
    "line is the planned route, the red line is the trajectory the driver actually drove, the green "
    "dot is the start and the black dot the destination. Answer each question strictly from what "
    "the map shows, inside <answer></answer>."
)
REFINER_PROMPT = (
    "You turn a raw adjudication dialogue into a clean decision record. Using the dialogue, the "
    "order record and the rules, write:\n"
    "<reason> with four parts in this order, each introduced by its heading: "
    "(1) Information Analysis: the key order facts and the dispute; "
    "(2) Visual Evidence Integration: the map facts the analyst confirmed; "
    "(3) Rule Grounding: which rule clauses those facts satisfy; "
    "(4) Comprehensive Adjudication: the deduction that yields the verdict. </reason>\n"
    "<judge>the dispute scenario or fault category</judge>\n"
    "<result>one label from the allowed list</result>"
)
FORCED_VERDICT_MESSAGE = (
    "The question limit has been reached. No further map questions will be answered. "
    "Give your final verdict now as <result>label</result>."
)
NUDGE_MESSAGE = "Neither a map question nor a verdict was found. Ask one <map> question or give <result>label</result>."
NO_RULES_BLOCK = "No specific rules matched this order; decide from general platform policy."
RULE_REDACTION = "[rule text withheld]"
IMAGE_REDACTION = "[image]"


@dataclass(frozen=True)
class Prompts:
    """Role prompts; override any of them to swap in custom wording."""

    adjudicator: str = ADJUDICATOR_PROMPT
    analyst: str = ANALYST_PROMPT
    refiner: str = REFINER_PROMPT

    @classmethod
    def from_files(cls, adjudicator=None, analyst=None, refiner=None) -> "Prompts":
        def read(path, default):
            return Path(path).read_text(encoding="utf-8").strip() if path else default

        return cls(read(adjudicator, ADJUDICATOR_PROMPT), read(analyst, ANALYST_PROMPT), read(refiner, REFINER_PROMPT))


# -- map protocol ----------------------------------------------------------


class MapQueries(list):
    """List of extracted queries; ``malformed`` holds reports on tags that were skipped."""

    def __init__(self, queries=(), malformed=()):
        super().__init__(queries)
        self.malformed: list[str] = list(malformed)


_MAP_TAG = re.compile(r"<map>|</map>")


def parse_map_queries(text: str) -> MapQueries:
    """Well-formed ``<map>...</map>`` spans in order of appearance."""
    queries, malformed = [], []
    open_at: int | None = None
    for m in _MAP_TAG.finditer(text):
        if m.group() == "<map>":
            if open_at is not None:
                malformed.append(f"unclosed <map> at offset {open_at}")
            open_at = m.start()
            continue
        if open_at is None:
            malformed.append(f"stray </map> at offset {m.start()}")
            continue
        body = text[open_at + len("<map>") : m.start()].strip()
        if body:
            queries.append(body)
        else:
            malformed.append(f"empty <map> at offset {open_at}")
        open_at = None
    if open_at is not None:
        malformed.append(f"unclosed <map> at offset {open_at}")
    return MapQueries(queries, malformed)


# -- session ---------------------------------------------------------------


@dataclass
class AdjudicationTranscript:
    turns: list[tuple[str, str]] = field(default_factory=list)
    map_queries: list[tuple[str, str]] = field(default_factory=list)
    raw_verdict: str | None = None
    status: str = "open"  # verdict | forced | no_verdict | failed
    calls: int = 0  # logical backend calls
    attempts: int = 0  # including retries
    malformed: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def verdict_text(self) -> str | None:
        if self.raw_verdict is None:
            return None
        inner = extract_tag(self.raw_verdict, "result")
        return inner.strip() if inner is not None else None

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["turns"] = [{"speaker": s, "text": t} for s, t in self.turns]
        d["map_queries"] = [{"query": q, "answer": a} for q, a in self.map_queries]
        return d

    def render(self) -> str:
        return "\n\n".join(f"[{speaker.upper()}]\n{text}" for speaker, text in self.turns)


class _SessionFailed(Exception):
    pass


def _call(backend: ReasoningBackend, prompt: str, convo: list[Message], image_ref, tx: AdjudicationTranscript, retries: int) -> str:
    tx.calls += 1
    last: Exception | None = None
    for _ in range(retries + 1):
        tx.attempts += 1
        try:
            return backend.complete(prompt, [dict(m) for m in convo], image_ref)
        except BackendError as exc:
            last = exc
            if not exc.retriable:
                break
        except Exception as exc:  # backends are foreign code; treat anything as a failed attempt
            last = exc
    raise _SessionFailed(f"{backend.name}: {last}")


def render_rules(rules: RuleBase) -> str:
    if len(rules) == 0:
        return NO_RULES_BLOCK
    return "\n".join(f"- [{r.rule_id}] {r.clause}" for r in rules)


def build_adjudicator_context(
    order: OrderRecord,
    rules: RuleBase,
    insight: MetaInsight | None,
    labels: Sequence[str] | None = None,
) -> str:
    parts = ["## Order", order_text(order), "## Candidate rules", render_rules(rules)]
    if insight is not None:
        hist = ", ".join(f"{k}: {v}" for k, v in insight.verdict_histogram.items()) or "none"
        parts += ["## Precedent insight", insight.text, f"Precedent verdicts: {hist}"]
    if labels:
        parts += ["## Allowed verdict labels", ", ".join(labels)]
    return "\n".join(parts)


def _redact(text: str, needles: Sequence[str], replacement: str) -> str:
    for n in sorted({n for n in needles if n}, key=len, reverse=True):
        text = text.replace(n, replacement)
    return text


def run_adjudication_session(
    order: OrderRecord,
    rules: RuleBase,
    insight: MetaInsight | None,
    adjudicator: ReasoningBackend,
    analyst: ReasoningBackend,
    max_turns: int = DEFAULT_MAX_TURNS,
    labels: Sequence[str] | None = None,
    max_retries: int = MAX_RETRIES,
    prompts: Prompts = Prompts(),
) -> AdjudicationTranscript:
    """Run the inquiry loop until a verdict, forcing one after ``max_turns`` adjudicator turns.

    One map question is answered per adjudicator turn, so a session makes at
    most ``2 * max_turns + 1`` logical backend calls. Rule clauses are
    stripped from questions before they reach the analyst, and the image
    reference is stripped from answers before they reach the adjudicator.
    """
    if max_turns < 1:
        raise ValueError("max_turns must be >= 1")
    tx = AdjudicationTranscript()
    clauses = [r.clause for r in rules]
    image_needles = [order.image_ref, Path(order.image_ref).name] if order.image_ref else []
    adj_convo: list[Message] = [{"role": "user", "content": build_adjudicator_context(order, rules, insight, labels)}]
    ana_convo: list[Message] = []
    try:
        for _ in range(max_turns):
            text = _call(adjudicator, prompts.adjudicator, adj_convo, None, tx, max_retries)
            tx.turns.append(("adjudicator", text))
            adj_convo.append({"role": "assistant", "content": text})
            verdict = extract_tag(text, "result")
            if verdict is not None and verdict.strip():
                tx.raw_verdict, tx.status = text, "verdict"
                return tx
            queries = parse_map_queries(text)
            tx.malformed.extend(queries.malformed)
            if not queries:
                adj_convo.append({"role": "user", "content": NUDGE_MESSAGE})
                continue
            question = _redact(queries[0], clauses, RULE_REDACTION)
            ana_convo.append({"role": "user", "content": question})
            answer = _call(analyst, prompts.analyst, ana_convo, order.image_ref, tx, max_retries)
            ana_convo.append({"role": "assistant", "content": answer})
            tx.turns.append(("analyst", answer))
            tx.map_queries.append((question, answer))
            body = extract_tag(answer, "answer")
            body = (body if body is not None else answer).strip()
            reply = f"<answer>{_redact(body, image_needles, IMAGE_REDACTION)}</answer>"
            if len(queries) > 1:
                reply += f"\n(Only one map question is answered per turn; {len(queries) - 1} ignored.)"
            adj_convo.append({"role": "user", "content": reply})

        adj_convo.append({"role": "user", "content": FORCED_VERDICT_MESSAGE})
        text = _call(adjudicator, prompts.adjudicator, adj_convo, None, tx, max_retries)
        tx.turns.append(("adjudicator", text))
        verdict = extract_tag(text, "result")
        if verdict is not None and verdict.strip():
            tx.raw_verdict, tx.status = text, "forced"
        else:
            tx.status = "no_verdict"
    except _SessionFailed as exc:
        tx.status, tx.error = "failed", str(exc)
    return tx


# -- refinement ------------------------------------------------------------

STAGES = (
    ("information_analysis", r"information\s+analysis"),
    ("visual_evidence", r"visual\s+evidence(?:\s+integration)?"),
    ("rule_grounding", r"rule\s+grounding"),
    ("comprehensive_adjudication", r"comprehensive\s+adjudication"),
)


@dataclass
class RefinedReasoning:
    information_analysis: str
    visual_evidence: str
    rule_grounding: str
    comprehensive_adjudication: str
    judge: str
    result: str
    audit: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name, _ in STAGES:
            if not getattr(self, name).strip():
                raise RefinementParseError(f"section {name} is empty")

    @property
    def sections(self) -> tuple[str, str, str, str]:
        return tuple(getattr(self, name) for name, _ in STAGES)

    def render(self) -> str:
        reason = "\n".join(
            f"({i}) {title}: {body}"
            for i, (title, body) in enumerate(
                zip(
                    ("Information Analysis", "Visual Evidence Integration", "Rule Grounding", "Comprehensive Adjudication"),
                    self.sections,
                ),
                1,
            )
        )
        return f"<reason>\n{reason}\n</reason>\n<judge>{self.judge}</judge>\n<result>{self.result}</result>"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "RefinedReasoning":
        return cls(**doc)


def split_reason(reason: str) -> dict[str, str]:
    """Cut the reason block at the four stage headings, which must appear in order."""
    spans = []
    pos = 0
    for name, pat in STAGES:
        m = re.compile(rf"(?:\(\d\)|\b\d[.)])?\s*{pat}\s*[:：\-]?", re.IGNORECASE).search(reason, pos)
        if m is None:
            raise RefinementParseError(f"reason block lacks the {name.replace('_', ' ')} stage")
        spans.append((name, m.start(), m.end()))
        pos = m.end()
    out = {}
    for i, (name, _, body_start) in enumerate(spans):
        body_end = spans[i + 1][1] if i + 1 < len(spans) else len(reason)
        body = reason[body_start:body_end].strip()
        if not body:
            raise RefinementParseError(f"stage {name} is empty")
        out[name] = body
    return out


def parse_refined(text: str, space: OrdinalLabelSpace) -> RefinedReasoning:
    if not format_reward(text):
        raise RefinementParseError("output needs exactly one non-empty <reason>, <judge> and <result> block, in order")
    sections = split_reason(extract_tag(text, "reason"))
    judge = extract_tag(text, "judge").strip()
    raw_result = extract_tag(text, "result").strip()
    label = space.parse(raw_result)
    if label is None:
        raise LabelSpaceError(f"verdict {raw_result!r} is not one of {list(space.labels)}")
    return RefinedReasoning(judge=judge, result=label, **sections)


def build_refiner_input(transcript: AdjudicationTranscript, order: OrderRecord, rules: RuleBase, space: OrdinalLabelSpace) -> str:
    return "\n".join(
        [
            "## Order",
            order_text(order),
            "## Rules",
            render_rules(rules),
            "## Dialogue",
            transcript.render(),
            "## Verdict reached",
            transcript.verdict_text or "",
            "## Allowed verdict labels",
            ", ".join(space.labels),
        ]
    )


def refine_transcript(
    transcript: AdjudicationTranscript,
    order: OrderRecord,
    rules: RuleBase,
    refiner: ReasoningBackend,
    space: OrdinalLabelSpace,
    max_reprompts: int = MAX_REPROMPTS,
    prompt: str = REFINER_PROMPT,
) -> RefinedReasoning:
    """Have ``refiner`` rewrite the dialogue into the four-stage record; re-prompt on unparseable output."""
    if not transcript.verdict_text:
        raise ValueError("transcript has no raw verdict to refine")
    convo: list[Message] = [{"role": "user", "content": build_refiner_input(transcript, order, rules, space)}]
    last: Exception | None = None
    for attempt in range(max_reprompts + 1):
        text = refiner.complete(prompt, [dict(m) for m in convo], None)
        try:
            return parse_refined(text, space)
        except (RefinementParseError, LabelSpaceError) as exc:
            last = exc
            convo += [
                {"role": "assistant", "content": text},
                {"role": "user", "content": f"Your reply could not be used: {exc}. Reply again in the required format."},
            ]
    raise last


def unrefined_reasoning(transcript: AdjudicationTranscript, order: OrderRecord, rules: RuleBase, space: OrdinalLabelSpace) -> RefinedReasoning:
    """Decision record assembled directly from the raw dialogue (no refiner pass)."""
    verdict = transcript.verdict_text
    label = space.parse(verdict or "")
    if label is None:
        raise LabelSpaceError(f"verdict {verdict!r} is not one of {list(space.labels)}")
    answers = "; ".join(a for _, a in transcript.map_queries) or "no map questions were asked"
    return RefinedReasoning(
        information_analysis=order_text(order),
        visual_evidence=answers,
        rule_grounding=", ".join(rules.ids) or NO_RULES_BLOCK,
        comprehensive_adjudication=transcript.raw_verdict or "",
        judge="unrefined",
        result=label,
    )


# -- selection ---------------------------------------------------------------


@dataclass(frozen=True)
class SelectionDecision:
    keep: bool
    reason: str


def select_training_sample(refined: RefinedReasoning, order: OrderRecord) -> SelectionDecision:
    """Keep a synthesized record only when its verdict matches ground truth on an unambiguous order."""
    if order.ground_truth is None:
        raise ValueError(f"order {order.order_id} has no ground truth")
    match = refined.result.strip().casefold() == order.ground_truth.strip().casefold()
    if not match:
        return SelectionDecision(False, f"verdict {refined.result!r} diverges from ground truth {order.ground_truth!r}")
    if order.ambiguous:
        return SelectionDecision(False, "order is marked ambiguous")
    return SelectionDecision(True, "verdict matches ground truth")


# -- pipeline --------------------------------------------------------------


@dataclass(frozen=True)
class AdjudicationOptions:
    k: int = DEFAULT_K
    max_turns: int = DEFAULT_MAX_TURNS
    use_insight: bool = True
    use_calibration: bool = True
    use_refinement: bool = True
    prompts: Prompts = Prompts()


def adjudicate(
    order: OrderRecord,
    full_base: RuleBase,
    ensemble: CalibratorEnsemble,
    store: PrecedentStore,
    backends: Backends,
    space: OrdinalLabelSpace,
    options: AdjudicationOptions = AdjudicationOptions(),
    embedder: Embedder | None = None,
) -> RefinedReasoning:
    """Prune rules, retrieve and summarize precedents, run the inquiry session, refine.

    Component failures surface as ``PipelineError`` tagged with the stage.
    """
    stage = "prune"
    try:
        if options.use_calibration:
            rules = prune_rules(ensemble, full_base, order, embedder)
        else:
            rules = full_base

        stage = "retrieve"
        insight = None
        neighbors = []
        if options.use_insight:
            emb = embedder or embedder_from_tag(store.embedder_tag or "hashing-256")
            neighbors = retrieve_topk(store, order_text(order), order.timestamp, options.k, emb)
            stage = "summarize"
            insight = summarize_insight(neighbors, backends.summarizer)

        stage = "session"
        tx = run_adjudication_session(
            order, rules, insight, backends.adjudicator, backends.analyst, options.max_turns, space.labels,
            prompts=options.prompts,
        )
        if tx.status == "failed":
            raise BackendError(tx.error or "session failed", retriable=True)
        if tx.raw_verdict is None:
            raise RefinementParseError("session ended without a verdict")

        stage = "refine"
        if options.use_refinement:
            refined = refine_transcript(tx, order, rules, backends.refiner, space, prompt=options.prompts.refiner)
        else:
            refined = unrefined_reasoning(tx, order, rules, space)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, exc) from exc

    refined.audit = {
        "order_id": order.order_id,
        "pruned_rule_ids": list(rules.ids),
        "precedent_ids": [n.entry_id for n in neighbors],
        "verdict_histogram": dict(insight.verdict_histogram) if insight else {},
        "session_status": tx.status,
        "session_calls": tx.calls,
        "map_queries": len(tx.map_queries),
        "transcript": tx.to_dict(),
    }
    return refined
