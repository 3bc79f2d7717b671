"""Classification backends.

The transformer backend wraps the published clinical assertion model: the
target mention is wrapped in the `[entity]` marker tokens the model was
fine-tuned with, and the sequence label (PRESENT / ABSENT / POSSIBLE) is
returned with its softmax confidence. When no model directory is
configured, a deterministic lexicon backend serves the same contract so
the service stays runnable offline.

Inference is pinned: no sampling, fixed truncation window, and /healthz
exposes a hash of the exact weights (or lexicon) in use.
"""

from __future__ import annotations

import hashlib
import os
import re
from importlib import resources
from pathlib import Path

LABELS = ("present", "absent", "possible")

ENV_MODEL_PATH = "ASSERTION_MODEL_PATH"

_SENTENCE_BOUNDARY = re.compile(r"[.!?;\n]")


class Backend:
    """classify() returns one (label, confidence) per span, in order."""

    model_id: str
    weights_sha256: str

    def classify(self, text: str, spans: list[tuple[int, int]]):
        raise NotImplementedError


def _sha256_bytes(*chunks: bytes) -> str:
    digest = hashlib.sha256()
    for chunk in chunks:
        digest.update(chunk)
    return digest.hexdigest()


class LexiconBackend(Backend):
    """Trigger-scope rules: a span is absent when a negation phrase
    precedes it inside the same sentence, possible for speculation
    phrases, present otherwise. Confidence is always 1.0."""

    model_id = "lexicon-rules"

    def __init__(self):
        neg_raw = resources.files("assertion_service.lexicon").joinpath(
            "negation.txt").read_bytes()
        spec_raw = resources.files("assertion_service.lexicon").joinpath(
            "speculation.txt").read_bytes()
        self.weights_sha256 = _sha256_bytes(neg_raw, spec_raw)
        self._negation = self._compile(neg_raw)
        self._speculation = self._compile(spec_raw)

    @staticmethod
    def _compile(raw: bytes):
        phrases = [line.strip().lower() for line in raw.decode("utf-8").splitlines()
                   if line.strip() and not line.startswith("#")]
        return [re.compile(r"\b" + re.escape(p) + r"\b") for p in phrases]

    def _scoped(self, text: str, start: int, patterns) -> bool:
        window_start = 0
        for m in _SENTENCE_BOUNDARY.finditer(text, 0, start):
            window_start = m.end()
        window = text[window_start:start].lower()
        return any(p.search(window) for p in patterns)

    def classify(self, text, spans):
        out = []
        for start, _end in spans:
            if self._scoped(text, start, self._negation):
                out.append(("absent", 1.0))
            elif self._scoped(text, start, self._speculation):
                out.append(("possible", 1.0))
            else:
                out.append(("present", 1.0))
        return out


class TransformerBackend(Backend):
    """Sequence classification over entity-marked text.

    The span is wrapped as `[entity] <mention> [entity]`; inputs longer
    than the window budget are truncated to a character window centered
    on the span before tokenization.
    """

    MARKER = "[entity]"
    WINDOW_CHARS = 1800  # comfortably above the model's token budget

    def __init__(self, model_path: str):
        import torch
        from transformers import (AutoModelForSequenceClassification,
                                  AutoTokenizer)

        self._torch = torch
        path = Path(model_path)
        self.tokenizer = AutoTokenizer.from_pretrained(path)
        self.model = AutoModelForSequenceClassification.from_pretrained(path)
        self.model.eval()
        self.model_id = path.name
        self.weights_sha256 = self._hash_weights(path)
        self._id2label = {
            i: label.lower() for i, label in self.model.config.id2label.items()
        }

    @staticmethod
    def _hash_weights(path: Path) -> str:
        for name in ("model.safetensors", "pytorch_model.bin"):
            weights = path / name
            if weights.exists():
                return _sha256_bytes(weights.read_bytes())
        raise FileNotFoundError(f"no weights file under {path}")

    def _marked_window(self, text: str, start: int, end: int) -> str:
        marked = (f"{text[:start]}{self.MARKER} {text[start:end]} "
                  f"{self.MARKER}{text[end:]}")
        if len(marked) <= self.WINDOW_CHARS:
            return marked
        center = start + (end - start) // 2
        lo = max(0, center - self.WINDOW_CHARS // 2)
        hi = min(len(marked), lo + self.WINDOW_CHARS)
        return marked[lo:hi]

    def classify(self, text, spans):
        out = []
        with self._torch.no_grad():
            for start, end in spans:
                inputs = self.tokenizer(
                    self._marked_window(text, start, end),
                    return_tensors="pt", truncation=True)
                logits = self.model(**inputs).logits[0]
                probs = logits.softmax(dim=-1)
                idx = int(probs.argmax())
                label = self._id2label.get(idx, "present")
                if label not in LABELS:
                    label = "present"
                out.append((label, float(probs[idx])))
        return out


def load_backend() -> Backend:
    """Transformer backend when ASSERTION_MODEL_PATH is set, else lexicon."""
    model_path = os.environ.get(ENV_MODEL_PATH, "").strip()
    if model_path:
        return TransformerBackend(model_path)
    return LexiconBackend()
