"""Negation-aware extraction: tag entities, classify assertion status,
remove absent entities, then re-run keyword extraction on the clean note.

Assertion classification comes either from the remote classification
service or from a shipped rule provider in the NegEx tradition: an entity
is absent when a pre-negation trigger precedes it in the same sentence,
possible when a speculation trigger does.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .gateway import Gateway
from .parsing import TaggedNote, parse_entity_tags, parse_keyword_list
from .prompts import get_strategy

log = logging.getLogger(__name__)

LABELS = ("present", "absent", "possible")

_SENTENCE_BOUNDARY = re.compile(r"[.!?;\n]")

ENTITY_TOKEN_RE = re.compile(r"\[entity\]")


class AssertionProviderError(RuntimeError):
    pass


@dataclass(frozen=True)
class Assertion:
    label: str
    confidence: float = 1.0

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown assertion label {self.label!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")


def _load_triggers(filename: str) -> tuple[str, ...]:
    text = resources.files("trialsearch.data").joinpath(filename).read_text("utf-8")
    return tuple(
        line.strip().lower() for line in text.splitlines()
        if line.strip() and not line.startswith("#")
    )


@lru_cache(maxsize=None)
def _trigger_patterns(filename: str, path: str | None = None):
    if path is not None:
        lines = Path(path).read_text("utf-8").splitlines()
        triggers = tuple(l.strip().lower() for l in lines
                         if l.strip() and not l.startswith("#"))
    else:
        triggers = _load_triggers(filename)
    # whole-word matches only: "no" must not fire inside "now"
    return tuple(re.compile(r"\b" + re.escape(t) + r"\b") for t in triggers)


def _scoped_by(text: str, span_start: int, patterns) -> bool:
    """True when a trigger precedes the span within its sentence."""
    window_start = 0
    for m in _SENTENCE_BOUNDARY.finditer(text, 0, span_start):
        window_start = m.end()
    window = text[window_start:span_start].lower()
    return any(p.search(window) for p in patterns)


def classify_rules(note_text: str, spans, negation_path=None,
                   speculation_path=None) -> list[Assertion]:
    """Deterministic rule provider; confidence is always 1.0."""
    neg = _trigger_patterns("negation_triggers.txt", negation_path)
    spec = _trigger_patterns("speculation_triggers.txt", speculation_path)
    out = []
    for start, end in spans:
        if not (0 <= start <= end <= len(note_text)):
            raise ValueError(f"span ({start}, {end}) out of bounds")
        if _scoped_by(note_text, start, neg):
            out.append(Assertion("absent"))
        elif _scoped_by(note_text, start, spec):
            out.append(Assertion("possible"))
        else:
            out.append(Assertion("present"))
    return out


def classify_remote(note_text: str, spans, endpoint: str,
                    timeout: float = 30.0, post_fn=None) -> list[Assertion]:
    """One batch call to the assertion service's /assert endpoint."""
    body = {"text": note_text, "entities": [[s, e] for s, e in spans]}
    if post_fn is None:
        import requests

        def post_fn(url, payload):
            resp = requests.post(url, json=payload, timeout=timeout)
            return resp.status_code, resp.json() if resp.content else {}
    try:
        status, payload = post_fn(endpoint.rstrip("/") + "/assert", body)
    except Exception as exc:
        raise AssertionProviderError(f"assertion service unreachable: {exc}") from exc
    if status != 200:
        raise AssertionProviderError(f"assertion service returned HTTP {status}")
    labels = payload.get("labels", [])
    if len(labels) != len(spans):
        raise AssertionProviderError(
            f"label count {len(labels)} != entity count {len(spans)}")
    return [Assertion(l["label"], float(l.get("confidence", 1.0))) for l in labels]


def classify_assertions(note_text: str, spans, provider: str = "rules",
                        endpoint: str = "", fallback_rules: bool = False,
                        post_fn=None) -> list[Assertion]:
    if provider == "rules":
        return classify_rules(note_text, spans)
    if provider != "remote":
        raise ValueError(f"unknown assertion provider {provider!r}")
    try:
        return classify_remote(note_text, spans, endpoint, post_fn=post_fn)
    except AssertionProviderError:
        if not fallback_rules:
            raise
        log.warning("remote assertion provider failed; degraded to rules")
        return classify_rules(note_text, spans)


def scrub_note(note_text: str, spans, assertions: list[Assertion]) -> str:
    """Remove the text of absent spans; never touches the original string.

    Whitespace around each removal collapses to a single space; present
    and possible spans stay untouched.
    """
    if len(spans) != len(assertions):
        raise ValueError("spans and assertions must align")
    absent = [sp for sp, a in zip(spans, assertions) if a.label == "absent"]
    if not absent:
        return note_text
    out = note_text
    for start, end in sorted(absent, reverse=True):
        left, right = out[:start], out[end:]
        if left.endswith(" ") and right.startswith(" "):
            left = left.rstrip(" ") + " "
            right = right.lstrip(" ")
        out = left + right
    return out


@dataclass
class PipelineArtifacts:
    """Intermediate products of the four-step run, persisted for audit."""

    tagged_reply: str
    tagged_note: TaggedNote
    assertions: list[Assertion]
    cleaned_note: str
    extraction_reply: str
    keywords: list[str]


def tag_and_clean(tagged_reply: str, provider: str = "rules", endpoint: str = "",
                  fallback_rules: bool = False, scrub_triggers: bool = False,
                  post_fn=None):
    """Steps 2 and 3 on a tagging reply: classify spans, scrub absents.

    Returns (tagged note, assertions, cleaned text). Tag debris from
    replies with unpaired tokens never survives into the cleaned text.
    """
    tagged = parse_entity_tags(tagged_reply)
    assertions = classify_assertions(tagged.text, tagged.spans, provider,
                                     endpoint, fallback_rules, post_fn=post_fn)
    cleaned = scrub_note(tagged.text, tagged.spans, assertions)
    if scrub_triggers:
        cleaned = _remove_dangling_triggers(cleaned)
    cleaned = ENTITY_TOKEN_RE.sub("", cleaned)
    cleaned = re.sub(r"[ \t]{2,}", " ", cleaned).strip()
    return tagged, assertions, cleaned


def nriemt_pipeline(note_text: str, gateway: Gateway, provider: str = "rules",
                    endpoint: str = "", fallback_rules: bool = False,
                    scrub_triggers: bool = False) -> PipelineArtifacts:
    """Four steps: tag entities, classify, scrub absent ones, re-extract.

    `scrub_triggers` additionally removes the negation trigger phrase
    itself; by default only the entity text goes (the conservative edit).
    """
    tag_strategy = get_strategy("NRIEMT_TAG")
    tagged_reply = gateway.run_conversation(tag_strategy, note_text)[0]
    tagged, assertions, cleaned = tag_and_clean(
        tagged_reply, provider, endpoint, fallback_rules, scrub_triggers)
    if not cleaned:
        cleaned = note_text

    iemt = get_strategy("IEMT")
    extraction_reply = gateway.run_conversation(iemt, cleaned)[0]
    keywords = parse_keyword_list(extraction_reply)
    return PipelineArtifacts(
        tagged_reply=tagged_reply,
        tagged_note=tagged,
        assertions=assertions,
        cleaned_note=cleaned,
        extraction_reply=extraction_reply,
        keywords=keywords,
    )


def _remove_dangling_triggers(text: str) -> str:
    """Drop negation triggers left dangling right before punctuation."""
    patterns = _trigger_patterns("negation_triggers.txt")
    out = text
    for p in patterns:
        out = re.sub(p.pattern + r"(?:\s+any)?\s*(?=[.,;]|$)", "", out,
                     flags=re.IGNORECASE)
    return re.sub(r"[ \t]{2,}", " ", out)
