"""Parsers turning raw model replies into structured query material.

Replies are cached verbatim, so parsers must absorb the formatting quirks
the strategies are known to produce: stray quotes, missing closing tokens,
broken JSON commas, filler values standing in for "N-A". Extracted content
is never rewritten beyond trimming and quote stripping.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

from .textproc import fold_phrases, process

ENTITY_TOKEN = "[entity]"

_QUOTE_CHARS = "\"'`‘’“”"

RECORD_FIELDS = (
    "abbreviations", "diagnosis", "medical_problem", "diseases", "drug",
    "dosages", "symptoms", "treatments", "medications", "medical_history",
    "family_history", "lifestyle_factors", "lab_examinations", "lab_results",
    "vital_signs", "gender", "age", "mesh_terms",
)

# the combination reported to work best: extracted entities plus MeSH,
# demographics and histories excluded
DEFAULT_QUERY_FIELDS = (
    "diagnosis", "medical_problem", "diseases", "drug", "symptoms",
    "treatments", "medications", "lab_examinations",
)

_KEY_ALIASES = {"symptons": "symptoms", "mesh_terms": "mesh_terms"}

_ABSENT_VALUES = {"", "n-a", "n/a", "na", "none", "not applicable", "not available"}


class ParseError(ValueError):
    def __init__(self, message: str, raw_text: str, repairs: list[str] | None = None):
        detail = f"{message}; raw text: {raw_text[:500]!r}"
        if repairs:
            detail += f"; repairs attempted: {repairs}"
        super().__init__(detail)
        self.raw_text = raw_text
        self.repairs = repairs or []


def _strip_quotes(text: str) -> str:
    return text.strip().strip(_QUOTE_CHARS).strip()


_LABEL_RE = re.compile(r"^[^,:\n\"'`]{1,60}:\s*")


def parse_keyword_list(text: str) -> list[str]:
    """Comma-separated keywords, quote-aware.

    Commas inside double-quoted phrases do not split; a leading label
    ("Keywords: ...") is stripped; surrounding quotes are removed and
    empties dropped. Unbalanced quotes fall back to a plain comma split.
    """
    if not re.search(r"\w", text):
        raise ParseError("no parseable keyword content", text)
    body = _LABEL_RE.sub("", text.strip(), count=1)
    if body.count('"') % 2 == 1:
        pieces = body.replace('"', "").split(",")
    else:
        pieces = []
        current = []
        in_quotes = False
        for ch in body:
            if ch == '"':
                in_quotes = not in_quotes
                current.append(ch)
            elif ch == "," and not in_quotes:
                pieces.append("".join(current))
                current = []
            else:
                current.append(ch)
        pieces.append("".join(current))
    keywords = [_strip_quotes(p) for p in pieces]
    return [k for k in keywords if k]


class ParsedQuery(NamedTuple):
    text: str
    truncated: bool  # closing token was missing from the reply


def parse_bracketed(text: str, token: str) -> ParsedQuery:
    """Content between the first and second occurrence of `token`.

    The closing token is sometimes missing from the end of a reply; then
    everything after the opening token is returned, flagged truncated.
    """
    first = text.find(token)
    if first < 0:
        raise ParseError(f"token {token!r} not found", text)
    start = first + len(token)
    second = text.find(token, start)
    if second < 0:
        return ParsedQuery(_strip_quotes(text[start:]), truncated=True)
    return ParsedQuery(_strip_quotes(text[start:second]), truncated=False)


@dataclass(frozen=True)
class PatientRecord:
    """Structured extraction result; a field is None when unanswered."""

    abbreviations: str | None = None
    diagnosis: str | None = None
    medical_problem: str | None = None
    diseases: str | None = None
    drug: str | None = None
    dosages: str | None = None
    symptoms: str | None = None
    treatments: str | None = None
    medications: str | None = None
    medical_history: str | None = None
    family_history: str | None = None
    lifestyle_factors: str | None = None
    lab_examinations: str | None = None
    lab_results: str | None = None
    vital_signs: str | None = None
    gender: str | None = None
    age: str | None = None
    mesh_terms: str | None = None
    repairs: tuple[str, ...] = field(default=(), compare=False)

    def present_fields(self) -> list[str]:
        return [f for f in RECORD_FIELDS if getattr(self, f) is not None]


def _normalize_value(value) -> str | None:
    if value is None:
        return None
    text = str(value).strip()
    if text.lower() in _ABSENT_VALUES or "not explicitly mentioned" in text.lower():
        return None
    return text


def _repair_missing_commas(text: str) -> str:
    # `"value"  "key"` adjacency between fields lost its comma
    return re.sub(r'"(\s+)"', r'",\1"', text)


def _repair_balance(text: str) -> str:
    body = text.rstrip()
    if body.count('"') % 2 == 1:
        body += '"'
    depth = body.count("{") - body.count("}")
    if depth > 0:
        body += "}" * depth
    return body


def _repair_strip_prose(text: str) -> str:
    start = text.find("{")
    end = text.rfind("}")
    if start >= 0 and end > start:
        return text[start:end + 1]
    return text[start:] if start >= 0 else text


def parse_patient_record(text: str) -> PatientRecord:
    """Parse the structured-extraction JSON reply, repairing known damage.

    Repair passes run in order (missing commas, unbalanced braces/quotes,
    trailing prose) with a re-parse after each; applied repairs are kept
    on the returned record so result tables can report repair rates.
    """
    attempts = [("", text)]
    repairs: list[str] = []
    body = text
    for name, fn in (("insert_commas", _repair_missing_commas),
                     ("balance_delimiters", _repair_balance),
                     ("strip_trailing_prose", _repair_strip_prose)):
        body = fn(body)
        attempts.append((name, body))

    obj = None
    applied: list[str] = []
    for name, candidate in attempts:
        if name:
            applied.append(name)
        try:
            obj = json.loads(candidate)
            break
        except json.JSONDecodeError:
            continue
    if obj is None:
        raise ParseError("irreparable structured reply", text, applied)
    if isinstance(obj, dict) and set(obj) == {"answer"}:
        obj = obj["answer"]
    if not isinstance(obj, dict):
        raise ParseError("structured reply is not an object", text, applied)

    values: dict[str, str | None] = {}
    for key, value in obj.items():
        norm_key = key.strip().lower()
        norm_key = _KEY_ALIASES.get(norm_key, norm_key)
        if norm_key in RECORD_FIELDS:
            values[norm_key] = _normalize_value(value)
    return PatientRecord(**values, repairs=tuple(applied))


@dataclass(frozen=True)
class TaggedNote:
    """Note text with entity tags removed; spans index into `text`.

    `pads` remembers whether a single space was swallowed next to each
    removed tag so the original reply can be reconstructed exactly.
    """

    text: str
    spans: tuple[tuple[int, int], ...]
    pads: tuple[tuple[bool, bool], ...] = ()
    dangling_token: bool = False

    def __post_init__(self):
        prev_end = 0
        for start, end in self.spans:
            if not (0 <= start <= end <= len(self.text)):
                raise ValueError(f"span ({start}, {end}) out of bounds")
            if start < prev_end:
                raise ValueError("overlapping spans")
            prev_end = end

    def span_texts(self) -> list[str]:
        return [self.text[s:e] for s, e in self.spans]


def parse_entity_tags(text: str, token: str = ENTITY_TOKEN) -> TaggedNote:
    """Pair tag tokens greedily left to right and record entity spans.

    An odd trailing token is not interpreted as a tag: it stays in the
    text and the result is flagged. One space adjacent to each removed
    token is swallowed so the de-tagged text reads naturally.
    """
    positions = [m.start() for m in re.finditer(re.escape(token), text)]
    dangling = len(positions) % 2 == 1
    if dangling:
        positions = positions[:-1]

    out: list[str] = []
    spans: list[tuple[int, int]] = []
    pads: list[tuple[bool, bool]] = []
    length = 0
    cursor = 0
    for open_pos, close_pos in zip(positions[0::2], positions[1::2]):
        lead = text[cursor:open_pos]
        after_open = open_pos + len(token)
        open_pad = text[after_open:after_open + 1] == " "
        content_start = after_open + (1 if open_pad else 0)
        close_pad = close_pos > content_start and text[close_pos - 1] == " "
        content_end = close_pos - (1 if close_pad else 0)
        content = text[content_start:content_end]
        out.append(lead)
        length += len(lead)
        spans.append((length, length + len(content)))
        pads.append((open_pad, close_pad))
        out.append(content)
        length += len(content)
        cursor = close_pos + len(token)
    out.append(text[cursor:])
    return TaggedNote(text="".join(out), spans=tuple(spans), pads=tuple(pads),
                      dangling_token=dangling)


def reinsert_entity_tags(note: TaggedNote, token: str = ENTITY_TOKEN) -> str:
    """Inverse of parse_entity_tags (exact round-trip)."""
    out = []
    cursor = 0
    pads = note.pads or tuple((True, True) for _ in note.spans)
    for (start, end), (open_pad, close_pad) in zip(note.spans, pads):
        out.append(note.text[cursor:start])
        out.append(token + (" " if open_pad else ""))
        out.append(note.text[start:end])
        out.append((" " if close_pad else "") + token)
        cursor = end
    out.append(note.text[cursor:])
    return "".join(out)


def synthesize_record_query(record: PatientRecord,
                            fields=DEFAULT_QUERY_FIELDS,
                            include_mesh: bool = False) -> list[str]:
    """Keyword list from selected record fields, optionally plus MeSH terms.

    Field values are comma-split and deduplicated case-insensitively,
    preserving first occurrence; MeSH terms are appended the same way.
    """
    ordered = [f for f in fields if f in RECORD_FIELDS]
    unknown = set(fields) - set(RECORD_FIELDS)
    if unknown:
        raise ValueError(f"unknown record fields: {sorted(unknown)}")
    if include_mesh and "mesh_terms" not in ordered:
        ordered.append("mesh_terms")
    seen: set[str] = set()
    keywords: list[str] = []
    for name in ordered:
        value = getattr(record, name)
        if value is None:
            continue
        for part in value.split(","):
            kw = part.strip()
            if kw and kw.casefold() not in seen:
                seen.add(kw.casefold())
                keywords.append(kw)
    return keywords


def build_query_terms(keywords: list[str], stopwords=None) -> list[str]:
    """Single funnel from any parsed reply to retrieval terms."""
    return fold_phrases(keywords, stopwords)


def scrub_clinical_trial_terms(terms: list[str], stopwords=None) -> list[str]:
    """Drop the stems of "clinical trial" from a folded term list.

    The whole corpus is clinical trials, and some strategies can't help
    emitting the phrase, so these terms carry no signal; the raw behavior
    stays available behind a flag.
    """
    banned = set(process("clinical trial", stopwords))
    return [t for t in terms if t not in banned]


def write_sidecar(path: str | Path, strategy: str,
                  queries: dict[int, list[str]]) -> None:
    """Persist parsed queries as `topic<TAB>strategy<TAB>kw, kw, ...` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for topic in sorted(queries):
            fh.write(f"{topic}\t{strategy}\t{', '.join(queries[topic])}\n")


def read_sidecar(path: str | Path) -> tuple[str, dict[int, list[str]]]:
    """Returns (strategy tag, topic -> keywords)."""
    queries: dict[int, list[str]] = {}
    strategy = ""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}: bad sidecar line {lineno}")
            topic = int(parts[0])
            strategy = strategy or parts[1]
            keywords = [k.strip() for k in parts[2].split(",") if k.strip()]
            queries.setdefault(topic, []).extend(keywords)
    return strategy, queries
