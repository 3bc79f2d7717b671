"""Prompt strategy registry.

Each strategy bundles a system role, ordered turn templates, decoding
parameters and the parser that consumes each turn's reply. Template text
lives in repo files, hash-pinned by a manifest so silent edits fail loudly
at load time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources

PLACEHOLDER = "{clinical_note}"

STRATEGY_IDS = (
    "QGMT", "QGGT", "IEG", "IEMT", "IEMDMT", "NRIEMT_TAG",
    "FEWSHOT_QG", "TRIAL_TOPIC_GEN", "EXPLICIT_EXPAND",
)

PARSER_IDS = ("keyword_list", "bracketed", "patient_record", "entity_tags")


class PromptConfigError(ValueError):
    """Registry misconfiguration: bad manifest, checksum drift, missing placeholder."""


@dataclass(frozen=True)
class DecodingParams:
    temperature: float
    frequency_penalty: float
    presence_penalty: float

    def __post_init__(self):
        if self.temperature < 0:
            raise PromptConfigError("temperature must be >= 0")
        for name in ("frequency_penalty", "presence_penalty"):
            v = getattr(self, name)
            if not -2.0 <= v <= 2.0:
                raise PromptConfigError(f"{name} must be in [-2, 2], got {v}")

    def as_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "frequency_penalty": self.frequency_penalty,
            "presence_penalty": self.presence_penalty,
        }


@dataclass(frozen=True)
class PromptStrategy:
    id: str
    system_role: str
    turns: tuple[str, ...]
    params: DecodingParams
    parser_ids: tuple[str, ...]

    def __post_init__(self):
        if not self.turns:
            raise PromptConfigError(f"{self.id}: no turns")
        if len(self.parser_ids) != len(self.turns):
            raise PromptConfigError(f"{self.id}: one parser per turn required")
        holders = sum(PLACEHOLDER in t for t in self.turns)
        if holders != 1:
            raise PromptConfigError(
                f"{self.id}: expected exactly one turn with {PLACEHOLDER}, found {holders}")
        for p in self.parser_ids:
            if p not in PARSER_IDS:
                raise PromptConfigError(f"{self.id}: unknown parser {p!r}")


def _template_root():
    return resources.files("trialsearch.prompts").joinpath("templates")


def _read_template(name: str) -> str:
    return _template_root().joinpath(name).read_text("utf-8")


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _load_manifest() -> dict:
    raw = resources.files("trialsearch.prompts").joinpath("manifest.json").read_text("utf-8")
    return json.loads(raw)


_cache: dict[str, PromptStrategy] = {}


def get_strategy(strategy_id: str) -> PromptStrategy:
    """Look up a strategy, verifying template checksums against the manifest."""
    if strategy_id in _cache:
        return _cache[strategy_id]
    manifest = _load_manifest()
    if strategy_id not in manifest:
        raise KeyError(f"unknown prompt strategy {strategy_id!r}")
    entry = manifest[strategy_id]
    texts = {}
    for fname in [entry["role_file"], *entry["turn_files"]]:
        text = _read_template(fname)
        digest = _sha256(text)
        if digest != entry["sha256"][fname]:
            raise PromptConfigError(
                f"{strategy_id}: checksum mismatch for {fname} "
                f"(expected {entry['sha256'][fname][:12]}, got {digest[:12]})")
        texts[fname] = text
    strategy = PromptStrategy(
        id=strategy_id,
        system_role=texts[entry["role_file"]].rstrip("\n"),
        turns=tuple(texts[f].rstrip("\n") for f in entry["turn_files"]),
        params=DecodingParams(**entry["params"]),
        parser_ids=tuple(entry["parsers"]),
    )
    _cache[strategy_id] = strategy
    return strategy


def all_strategies() -> list[PromptStrategy]:
    return [get_strategy(s) for s in STRATEGY_IDS]


def render(strategy: PromptStrategy, note_text: str,
           system_role_override: str | None = None) -> list[list[dict]]:
    """Message sequences for one fresh conversation with this strategy.

    Returns one list per turn: the system message plus that turn's user
    message. The caller interleaves assistant replies (a multi-turn
    strategy sends turn N+1 only after turn N's reply arrived). The note
    is substituted verbatim, never mutated.
    """
    if not note_text:
        raise ValueError("note text must be nonempty")
    role = system_role_override if system_role_override is not None else strategy.system_role
    system = {"role": "system", "content": role}
    return [
        [system, {"role": "user", "content": turn.replace(PLACEHOLDER, note_text)}]
        for turn in strategy.turns
    ]


def build_manifest() -> dict:
    """Recompute the manifest from the declared strategy layout.

    Maintenance helper: run after editing template files, then write the
    result over manifest.json.
    """
    layout = {
        "QGMT": ("qgmt.role.txt", ["qgmt.turn1.txt"], (0.0, 1.5, 1.0), ["keyword_list"]),
        "QGGT": ("generic.role.txt", ["qggt.turn1.txt"], (0.0, 1.5, 1.0), ["bracketed"]),
        "IEG": ("generic.role.txt", ["ieg.turn1.txt", "ieg.turn2.txt"], (0.0, 2.0, 1.0),
                ["keyword_list", "keyword_list"]),
        "IEMT": ("medical.role.txt", ["iemt.turn1.txt"], (0.0, 2.0, 1.0), ["keyword_list"]),
        "IEMDMT": ("iemdmt.role.txt", ["iemdmt.turn1.txt"], (0.0, 0.0, 0.0), ["patient_record"]),
        "NRIEMT_TAG": ("medical.role.txt", ["nriemt_tag.turn1.txt"], (0.0, 0.0, 0.0),
                       ["entity_tags"]),
        "FEWSHOT_QG": ("medical.role.txt", ["fewshot_qg.turn1.txt"], (0.0, 1.5, 1.0),
                       ["keyword_list"]),
        "TRIAL_TOPIC_GEN": ("medical.role.txt", ["trial_topic_gen.turn1.txt"], (0.0, 0.0, 0.0),
                            ["keyword_list"]),
        "EXPLICIT_EXPAND": ("medical.role.txt", ["explicit_expand.turn1.txt"], (0.0, 0.0, 0.0),
                            ["keyword_list"]),
    }
    manifest = {}
    for sid, (role_file, turn_files, (t, fp, pp), parsers) in layout.items():
        sha = {f: _sha256(_read_template(f)) for f in [role_file, *turn_files]}
        manifest[sid] = {
            "role_file": role_file,
            "turn_files": turn_files,
            "params": {"temperature": t, "frequency_penalty": fp, "presence_penalty": pp},
            "parsers": parsers,
            "sha256": sha,
        }
    return manifest
