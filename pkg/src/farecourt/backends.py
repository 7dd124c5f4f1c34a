"""Reasoning backends: the interface, scripted mocks, instrumentation and an HTTP adapter."""

from __future__ import annotations

import hashlib
import json
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence, runtime_checkable

from .errors import BackendError

Message = dict[str, str]  # {"role": "user" | "assistant", "content": str}

API_KEY_ENV = "FARECOURT_API_KEY"


@runtime_checkable
class ReasoningBackend(Protocol):
    name: str
    deterministic: bool

    def complete(self, role_prompt: str, conversation: Sequence[Message], image_ref: str | None = None) -> str: ...


def fingerprint(role_prompt: str, conversation: Sequence[Message]) -> str:
    payload = json.dumps({"role_prompt": role_prompt, "conversation": list(conversation)}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class ScriptRule:
    response: str
    contains: str | None = None  # substring of the last message
    regex: str | None = None  # searched in the last message
    prompt_contains: str | None = None  # substring of the role prompt
    call: int | None = None  # 0-based call index on this backend

    def matches(self, role_prompt: str, last: str, call: int) -> bool:
        if self.contains is not None and self.contains not in last:
            return False
        if self.regex is not None and not re.search(self.regex, last):
            return False
        if self.prompt_contains is not None and self.prompt_contains not in role_prompt:
            return False
        if self.call is not None and self.call != call:
            return False
        return True


class ScriptedBackend:
    """Deterministic canned responses.

    Lookup order: exact prompt fingerprint, then the first matching rule,
    then ``default``. No match and no default raises ``BackendError``.
    """

    deterministic = True

    def __init__(
        self,
        rules: Sequence[ScriptRule] = (),
        fingerprints: dict[str, str] | None = None,
        default: str | None = None,
        name: str = "scripted",
    ):
        self.rules = list(rules)
        self.fingerprints = dict(fingerprints or {})
        self.default = default
        self.name = name
        self.calls = 0

    @classmethod
    def from_spec(cls, spec: dict[str, Any] | list, name: str = "scripted") -> "ScriptedBackend":
        if isinstance(spec, list):
            spec = {"rules": spec}
        rules = [ScriptRule(**r) for r in spec.get("rules", [])]
        return cls(rules, spec.get("fingerprints"), spec.get("default"), spec.get("name", name))

    def complete(self, role_prompt: str, conversation: Sequence[Message], image_ref: str | None = None) -> str:
        call = self.calls
        self.calls += 1
        fp = fingerprint(role_prompt, conversation)
        if fp in self.fingerprints:
            return self.fingerprints[fp]
        last = conversation[-1]["content"] if conversation else ""
        for rule in self.rules:
            if rule.matches(role_prompt, last, call):
                return rule.response
        if self.default is not None:
            return self.default
        raise BackendError(f"{self.name}: no scripted response for fingerprint {fp}", retriable=False)


class FunctionBackend:
    """Wraps a plain callable; handy for oracles and adversarial test doubles."""

    deterministic = True

    def __init__(self, fn: Callable[[str, Sequence[Message], str | None], str], name: str = "function"):
        self.fn = fn
        self.name = name

    def complete(self, role_prompt: str, conversation: Sequence[Message], image_ref: str | None = None) -> str:
        return self.fn(role_prompt, conversation, image_ref)


@dataclass
class CallRecord:
    role_prompt: str
    conversation: list[Message]
    image_ref: str | None
    response: str | None = None
    error: str | None = None


class RecordingBackend:
    """Instrumentation wrapper that logs every call made through it."""

    def __init__(self, inner: ReasoningBackend):
        self.inner = inner
        self.name = f"recording({inner.name})"
        self.deterministic = getattr(inner, "deterministic", False)
        self.records: list[CallRecord] = []

    def complete(self, role_prompt: str, conversation: Sequence[Message], image_ref: str | None = None) -> str:
        rec = CallRecord(role_prompt, [dict(m) for m in conversation], image_ref)
        self.records.append(rec)
        try:
            rec.response = self.inner.complete(role_prompt, conversation, image_ref)
        except Exception as exc:
            rec.error = repr(exc)
            raise
        return rec.response

    def transcript_text(self) -> str:
        parts = []
        for r in self.records:
            parts.append(r.role_prompt)
            parts.extend(m["content"] for m in r.conversation)
        return "\n".join(parts)


class HttpBackend:
    """Chat-style remote endpoint.

    POSTs ``{"role_prompt", "messages", "image"}`` as JSON and expects
    ``{"text": ...}`` back. ``image`` carries the image reference as given;
    the server resolves it. A bearer token is read from ``FARECOURT_API_KEY``
    when set.
    """

    deterministic = False

    def __init__(self, url: str, timeout: float = 60.0, api_key: str | None = None, name: str | None = None):
        self.url = url
        self.timeout = timeout
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.name = name or f"http:{url}"

    def complete(self, role_prompt: str, conversation: Sequence[Message], image_ref: str | None = None) -> str:
        body = json.dumps({"role_prompt": role_prompt, "messages": list(conversation), "image": image_ref}).encode()
        req = urllib.request.Request(self.url, data=body, method="POST", headers={"Content-Type": "application/json"})
        if self.api_key:
            req.add_header("Authorization", f"Bearer {self.api_key}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                doc = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            raise BackendError(f"{self.url}: HTTP {exc.code}", retriable=exc.code >= 500 or exc.code == 429) from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise BackendError(f"{self.url}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise BackendError(f"{self.url}: invalid JSON response", retriable=False) from exc
        text = doc.get("text") if isinstance(doc, dict) else None
        if not isinstance(text, str):
            raise BackendError(f"{self.url}: response lacks a 'text' string", retriable=False)
        return text


ROLES = ("adjudicator", "analyst", "refiner", "summarizer")


@dataclass
class Backends:
    adjudicator: ReasoningBackend
    analyst: ReasoningBackend
    refiner: ReasoningBackend
    summarizer: ReasoningBackend


def load_script(path: str | Path) -> dict[str, Any]:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        return yaml.safe_load(text)
    return json.loads(text)


def backends_from_spec(spec: str) -> Backends:
    """Parse ``mock:<script>`` or ``http:<url>`` into one backend per role.

    A mock script is a JSON or YAML document with one section per role
    (``adjudicator``, ``analyst``, ``refiner``, ``summarizer``), each a
    ``ScriptedBackend`` spec.
    """
    kind, _, target = spec.partition(":")
    if kind == "mock":
        script = load_script(target)
        missing = [r for r in ROLES if r not in script]
        if missing:
            raise ValueError(f"mock script lacks sections: {', '.join(missing)}")
        return Backends(**{r: ScriptedBackend.from_spec(script[r], name=f"mock-{r}") for r in ROLES})
    if kind == "http":
        url = target if "://" in target else f"http:{target}"
        return Backends(**{r: HttpBackend(url, name=f"http-{r}") for r in ROLES})
    if kind == "https":
        return Backends(**{r: HttpBackend(spec, name=f"http-{r}") for r in ROLES})
    raise ValueError(f"unknown backend spec {spec!r}; expected mock:<script> or http:<url>")
