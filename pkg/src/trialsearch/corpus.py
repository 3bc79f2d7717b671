"""Ingest and emit external data artifacts.

Readers for registry trial documents (ClinicalTrials.gov XML or the flat
JSON-lines fallback), topic files, graded judgments, run files and
externally authored keyword-query files. All returned structures are
plain immutable values, safe to share across threads.
"""

from __future__ import annotations

import json
import logging
import re
import xml.etree.ElementTree as ET
import zipfile
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)

GENDERS = ("all", "male", "female", "unspecified")


class CorpusFormatError(ValueError):
    """Fatal problem in an input artifact (bad line, duplicate id, rank gap)."""


@dataclass(frozen=True)
class ClinicalTrial:
    id: str
    title: str = ""
    official_title: str | None = None
    condition: tuple[str, ...] = ()
    summary: str = ""
    description: str = ""
    eligibility_criteria: str = ""
    gender: str = "unspecified"
    min_age_months: int | None = None
    max_age_months: int | None = None

    def __post_init__(self):
        if not self.id:
            raise CorpusFormatError("trial id must be nonempty")
        if not (self.title or self.summary or self.description or self.eligibility_criteria):
            raise CorpusFormatError(f"trial {self.id}: all text sections empty")
        if self.gender not in GENDERS:
            raise CorpusFormatError(f"trial {self.id}: bad gender {self.gender!r}")
        if (
            self.min_age_months is not None
            and self.max_age_months is not None
            and self.min_age_months > self.max_age_months
        ):
            raise CorpusFormatError(f"trial {self.id}: min age exceeds max age")

    def full_text(self) -> str:
        """All indexable sections concatenated with equal weight."""
        parts = [self.title, self.official_title or "", *self.condition,
                 self.summary, self.description, self.eligibility_criteria]
        return "\n".join(p for p in parts if p)


@dataclass(frozen=True)
class PatientTopic:
    id: int
    text: str

    def __post_init__(self):
        if self.id <= 0:
            raise CorpusFormatError(f"topic id must be positive, got {self.id}")
        if not self.text:
            raise CorpusFormatError(f"topic {self.id}: empty text")


@dataclass(frozen=True)
class Qrels:
    """Graded judgments: (topic_id, doc_id) -> grade in {0, 1, 2}."""

    entries: dict[tuple[int, str], int]

    def topics(self) -> list[int]:
        return sorted({t for t, _ in self.entries})

    def for_topic(self, topic_id: int) -> dict[str, int]:
        return {d: g for (t, d), g in self.entries.items() if t == topic_id}


@dataclass(frozen=True)
class RunRanking:
    """One topic's ranked list: (doc_id, score, 1-based rank) tuples."""

    topic_id: int
    entries: tuple[tuple[str, float, int], ...]
    run_tag: str = "run"

    def __post_init__(self):
        seen = set()
        prev_score = None
        for i, (doc_id, score, rank) in enumerate(self.entries):
            if rank != i + 1:
                raise CorpusFormatError(
                    f"topic {self.topic_id}: rank {rank} at position {i + 1}")
            if doc_id in seen:
                raise CorpusFormatError(
                    f"topic {self.topic_id}: duplicate doc {doc_id}")
            seen.add(doc_id)
            if prev_score is not None and score > prev_score:
                raise CorpusFormatError(
                    f"topic {self.topic_id}: score increases at rank {rank}")
            prev_score = score

    def doc_ids(self) -> list[str]:
        return [d for d, _, _ in self.entries]


_AGE_RE = re.compile(r"^\s*(\d+)\s*(year|month|week|day)s?\s*$", re.IGNORECASE)

TRIAL_FIELDS = (
    "id", "title", "official_title", "condition", "summary",
    "description", "eligibility_criteria", "gender",
    "min_age_months", "max_age_months",
)


def parse_age_months(value: str | None) -> int | None:
    """Normalize registry age strings to integer months.

    "18 Years" -> 216, "6 Months" -> 6; "N/A" and blanks map to absent.
    Weeks and days are rounded to the nearest month.
    """
    if value is None:
        return None
    text = value.strip()
    if not text or text.upper() in ("N/A", "NA", "NONE"):
        return None
    m = _AGE_RE.match(text)
    if not m:
        raise CorpusFormatError(f"unparseable age string {value!r}")
    n, unit = int(m.group(1)), m.group(2).lower()
    if unit == "year":
        return n * 12
    if unit == "month":
        return n
    if unit == "week":
        return round(n * 12 / 52)
    return round(n * 12 / 365)


def _xml_text(root: ET.Element, path: str) -> str:
    node = root.find(path)
    if node is None:
        return ""
    return " ".join((node.text or "").split()) if path.endswith("textblock") else (node.text or "").strip()


def _trial_from_xml(data: bytes, name: str) -> ClinicalTrial:
    root = ET.fromstring(data)
    trial_id = _xml_text(root, "./id_info/nct_id") or _xml_text(root, "./nct_id")
    if not trial_id:
        raise CorpusFormatError(f"{name}: missing registry id")
    gender = (_xml_text(root, "./eligibility/gender") or "unspecified").lower()
    if gender not in GENDERS:
        gender = "unspecified"
    return ClinicalTrial(
        id=trial_id,
        title=_xml_text(root, "./brief_title"),
        official_title=_xml_text(root, "./official_title") or None,
        condition=tuple(
            (c.text or "").strip() for c in root.findall("./condition") if (c.text or "").strip()
        ),
        summary=_xml_text(root, "./brief_summary/textblock"),
        description=_xml_text(root, "./detailed_description/textblock"),
        eligibility_criteria=_xml_text(root, "./eligibility/criteria/textblock"),
        gender=gender,
        min_age_months=parse_age_months(_xml_text(root, "./eligibility/minimum_age") or None),
        max_age_months=parse_age_months(_xml_text(root, "./eligibility/maximum_age") or None),
    )


def _trial_from_json(obj: dict, name: str) -> ClinicalTrial:
    unknown = set(obj) - set(TRIAL_FIELDS)
    if unknown:
        raise CorpusFormatError(f"{name}: unknown fields {sorted(unknown)}")
    obj = dict(obj)
    if "condition" in obj:
        obj["condition"] = tuple(obj["condition"])
    return ClinicalTrial(**obj)


def _iter_corpus_members(path: Path):
    """Yield (name, bytes) for every corpus file under path.

    Accepts a directory (recursive), a zip archive, or a single file.
    Enumeration order is irrelevant: load_trials merges by id.
    """
    if path.is_dir():
        for p in sorted(path.rglob("*")):
            if p.is_file() and p.suffix in (".xml", ".jsonl", ".json"):
                yield str(p), p.read_bytes()
    elif path.suffix == ".zip":
        with zipfile.ZipFile(path) as zf:
            for info in sorted(zf.infolist(), key=lambda i: i.filename):
                if not info.is_dir() and Path(info.filename).suffix in (".xml", ".jsonl", ".json"):
                    yield f"{path}!{info.filename}", zf.read(info)
    elif path.is_file():
        yield str(path), path.read_bytes()
    else:
        raise OSError(f"corpus path does not exist: {path}")


def load_trials(path: str | Path, fmt: str = "auto") -> list[ClinicalTrial]:
    """Load every well-formed trial document under path.

    Malformed files (or JSONL lines) are logged and skipped; an unreadable
    path is fatal. The result is sorted by registry id and free of
    duplicates (last occurrence wins, with a warning).
    """
    by_id: dict[str, ClinicalTrial] = {}
    for name, raw in _iter_corpus_members(Path(path)):
        is_xml = fmt == "xml" or (fmt == "auto" and raw.lstrip()[:1] == b"<")
        try:
            if is_xml:
                trials = [_trial_from_xml(raw, name)]
            else:
                trials = []
                for lineno, line in enumerate(raw.decode("utf-8").splitlines(), 1):
                    if not line.strip():
                        continue
                    try:
                        trials.append(_trial_from_json(json.loads(line), f"{name}:{lineno}"))
                    except (json.JSONDecodeError, CorpusFormatError, TypeError) as exc:
                        log.warning("skipping %s line %d: %s", name, lineno, exc)
        except (ET.ParseError, CorpusFormatError, UnicodeDecodeError) as exc:
            log.warning("skipping %s: %s", name, exc)
            continue
        for trial in trials:
            if trial.id in by_id:
                log.warning("duplicate trial id %s (from %s)", trial.id, name)
            by_id[trial.id] = trial
    return [by_id[k] for k in sorted(by_id)]


def write_trials(trials: list[ClinicalTrial], path: str | Path) -> None:
    """Emit trials in the flat JSONL format (one record per line)."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            obj = {
                "id": t.id, "title": t.title, "official_title": t.official_title,
                "condition": list(t.condition), "summary": t.summary,
                "description": t.description,
                "eligibility_criteria": t.eligibility_criteria, "gender": t.gender,
                "min_age_months": t.min_age_months, "max_age_months": t.max_age_months,
            }
            fh.write(json.dumps({k: v for k, v in obj.items() if v not in (None, "", [])},
                                sort_keys=True) + "\n")


def load_topics(path: str | Path) -> list[PatientTopic]:
    """Load patient topics from topic XML or tab-separated id<TAB>text."""
    text = Path(path).read_text("utf-8")
    topics: list[PatientTopic] = []
    seen: set[int] = set()

    def add(num: int, body: str):
        if num in seen:
            raise CorpusFormatError(f"duplicate topic number {num}")
        seen.add(num)
        topics.append(PatientTopic(id=num, text=body.strip()))

    if text.lstrip().startswith("<"):
        root = ET.fromstring(text)
        nodes = root.iter("topic") if root.tag != "topic" else [root]
        for node in nodes:
            add(int(node.attrib["number"]), "".join(node.itertext()))
    else:
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                num, body = line.split("\t", 1)
                add(int(num), body)
            except ValueError as exc:
                raise CorpusFormatError(f"bad topic line {lineno}: {exc}") from exc
    return topics


def load_qrels(path: str | Path) -> Qrels:
    """Load judgments from `topic_id 0 doc_id grade` lines."""
    entries: dict[tuple[int, str], int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise CorpusFormatError(f"malformed qrels line {lineno}")
            try:
                topic, doc, grade = int(parts[0]), parts[2], int(parts[3])
            except ValueError:
                raise CorpusFormatError(f"malformed qrels line {lineno}") from None
            if grade not in (0, 1, 2):
                raise CorpusFormatError(f"grade out of range, line {lineno}")
            if (topic, doc) in entries:
                raise CorpusFormatError(f"duplicate judgment, line {lineno}")
            entries[(topic, doc)] = grade
    return Qrels(entries=entries)


def write_run(rankings: list[RunRanking], path: str | Path) -> None:
    """Write rankings in the `topic Q0 doc rank score tag` run format."""
    with open(path, "w", encoding="utf-8") as fh:
        for ranking in rankings:
            for doc_id, score, rank in ranking.entries:
                fh.write(f"{ranking.topic_id} Q0 {doc_id} {rank} {score:.6f} {ranking.run_tag}\n")


def read_run(path: str | Path) -> list[RunRanking]:
    per_topic: dict[int, list[tuple[str, float, int]]] = {}
    tags: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6 or parts[1] != "Q0":
                raise CorpusFormatError(f"malformed run line {lineno}")
            topic = int(parts[0])
            per_topic.setdefault(topic, []).append((parts[2], float(parts[4]), int(parts[3])))
            tags[topic] = parts[5]
    rankings = []
    for topic in sorted(per_topic):
        entries = sorted(per_topic[topic], key=lambda e: e[2])
        try:
            rankings.append(RunRanking(topic_id=topic, entries=tuple(entries),
                                       run_tag=tags[topic]))
        except CorpusFormatError as exc:
            raise CorpusFormatError(f"run file {path}: {exc}") from exc
    return rankings


def load_keyword_queries(path: str | Path) -> dict[int, list[str]]:
    """Load `topic_id<TAB>comma-separated keywords` lines.

    Multiple lines per topic concatenate in file order.
    """
    queries: dict[int, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                num, rest = line.rstrip("\n").split("\t", 1)
                topic = int(num)
            except ValueError:
                raise CorpusFormatError(f"bad keyword-query line {lineno}") from None
            keywords = [k.strip() for k in rest.split(",") if k.strip()]
            queries.setdefault(topic, []).extend(keywords)
    return queries


def concat_assessor_queries(queries: list[list[str]]) -> list[str]:
    """Concatenate assessors' keyword lists into one deduplicated query.

    Uniqueness is case-insensitive; first occurrence (and its casing) wins.
    """
    seen: set[str] = set()
    merged: list[str] = []
    for keywords in queries:
        for kw in keywords:
            key = kw.casefold()
            if key not in seen:
                seen.add(key)
                merged.append(kw)
    return merged
