"""Chat-completion gateway with retries, rate limiting, and a
content-addressed cache for deterministic offline replay.

The hosted model is non-deterministic even at temperature 0, so every
experiment that must be reproducible runs against recorded exchanges:
`record` persists live responses, `replay` serves them without ever
touching the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .prompts import DecodingParams, PromptStrategy, render

log = logging.getLogger(__name__)

MODES = ("live", "record", "replay")

DEFAULT_MODEL = "gpt-3.5-turbo"
ENV_ENDPOINT = "TRIALSEARCH_LLM_ENDPOINT"
ENV_API_KEY = "TRIALSEARCH_LLM_API_KEY"
ENV_MODEL = "TRIALSEARCH_LLM_MODEL"

RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class GatewayError(RuntimeError):
    pass


class ReplayMissError(GatewayError):
    """Raised in replay mode when no cached exchange matches the request."""

    def __init__(self, key: str):
        super().__init__(f"no cached exchange for key {key}; "
                         f"replay mode never calls the network")
        self.key = key


def canonical_request(model: str, messages: list[dict], params: DecodingParams) -> bytes:
    """Canonical byte serialization used for hashing and cache storage.

    Field-sorted JSON, UTF-8, no insignificant whitespace. Alternate
    implementations that reproduce this layout interoperate with the
    same cache.
    """
    obj = {
        "messages": [{"content": m["content"], "role": m["role"]} for m in messages],
        "model": model,
        "params": params.as_dict(),
    }
    return json.dumps(obj, sort_keys=True, ensure_ascii=True,
                      separators=(",", ":")).encode("utf-8")


def cache_key(model: str, messages: list[dict], params: DecodingParams) -> str:
    return hashlib.sha256(canonical_request(model, messages, params)).hexdigest()


class ResponseCache:
    """One JSON file per exchange under a content-addressed directory.

    Writes are atomic (temp file + rename); concurrent readers are safe.
    An index file accumulates one line per recorded exchange.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if not path.exists():
            return None
        return json.loads(path.read_text("utf-8"))["response_text"]

    def put(self, key: str, request: bytes, response_text: str,
            provider_metadata: dict | None = None) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        record = {
            "key": key,
            "request": json.loads(request.decode("utf-8")),
            "response_text": response_text,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "provider_metadata": provider_metadata or {},
        }
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(record, sort_keys=True, indent=1), "utf-8")
        os.replace(tmp, path)
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.root / "index.tsv", "a", encoding="utf-8") as fh:
            fh.write(f"{key}\t{record['timestamp']}\t{record['request']['model']}\n")

    def keys(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*/*.json"))

    def verify(self) -> list[str]:
        """Keys whose stored request no longer hashes to their filename."""
        bad = []
        for path in sorted(self.root.glob("*/*.json")):
            record = json.loads(path.read_text("utf-8"))
            req = record["request"]
            recomputed = hashlib.sha256(json.dumps(
                req, sort_keys=True, ensure_ascii=True, separators=(",", ":")
            ).encode("utf-8")).hexdigest()
            if recomputed != path.stem or record["key"] != path.stem:
                bad.append(path.stem)
        return bad

    def garbage_collect(self) -> list[str]:
        """Remove corrupt entries and stale temp files; returns removed names."""
        removed = []
        for tmp in self.root.glob("*/*.tmp"):
            tmp.unlink()
            removed.append(tmp.name)
        for key in self.verify():
            self._path(key).unlink()
            removed.append(key)
        return removed


class RateLimiter:
    """Sliding-window limiter: at most `rpm` acquisitions per 60 s.

    Safe for concurrent conversations; acquisition is serialized.
    """

    def __init__(self, rpm: int, clock=time.monotonic, sleep=time.sleep):
        self.rpm = rpm
        self._clock = clock
        self._sleep = sleep
        self._stamps: list[float] = []
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rpm <= 0:
            return
        with self._lock:
            now = self._clock()
            self._stamps = [t for t in self._stamps if now - t < 60.0]
            if len(self._stamps) >= self.rpm:
                wait = 60.0 - (now - self._stamps[0])
                if wait > 0:
                    self._sleep(wait)
                    now = self._clock()
                    self._stamps = [t for t in self._stamps if now - t < 60.0]
            self._stamps.append(now)


def _http_transport(endpoint: str, api_key: str, timeout: float):
    import requests

    def post(body: dict):
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        resp = requests.post(endpoint, json=body, headers=headers, timeout=timeout)
        return resp.status_code, resp.text
    return post


@dataclass
class Gateway:
    """Executes rendered conversations in live, record, or replay mode.

    Endpoint, API key and model id come from the environment (or
    constructor arguments), never from source.
    """

    mode: str = "replay"
    cache: ResponseCache | None = None
    model: str = ""
    endpoint: str = ""
    api_key: str = ""
    max_retries: int = 5
    backoff_base: float = 1.0
    timeout: float = 60.0
    rate_limiter: RateLimiter | None = None
    transport: object = None  # injectable: callable(body) -> (status, text)
    _sleep: object = time.sleep

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown gateway mode {self.mode!r}")
        if self.mode in ("record", "replay") and self.cache is None:
            raise ValueError(f"{self.mode} mode requires a cache directory")
        self.model = self.model or os.environ.get(ENV_MODEL, DEFAULT_MODEL)
        if self.mode in ("live", "record"):
            self.endpoint = self.endpoint or os.environ.get(ENV_ENDPOINT, "")
            self.api_key = self.api_key or os.environ.get(ENV_API_KEY, "")
            if self.transport is None:
                if not self.endpoint:
                    raise ValueError(f"{self.mode} mode requires {ENV_ENDPOINT}")
                self.transport = _http_transport(self.endpoint, self.api_key, self.timeout)

    def chat(self, messages: list[dict], params: DecodingParams) -> str:
        """One completion call. Returns the assistant message content."""
        if not messages or messages[0].get("role") != "system":
            raise ValueError("messages must start with the system role")
        key = cache_key(self.model, messages, params)
        if self.mode == "replay":
            cached = self.cache.get(key)
            if cached is None:
                raise ReplayMissError(key)
            return cached
        text, meta = self._call_provider(messages, params)
        if self.mode == "record":
            self.cache.put(key, canonical_request(self.model, messages, params), text, meta)
        return text

    def _call_provider(self, messages: list[dict], params: DecodingParams):
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": params.temperature,
            "frequency_penalty": params.frequency_penalty,
            "presence_penalty": params.presence_penalty,
        }
        last_status = None
        for attempt in range(self.max_retries + 1):
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            status, text = self.transport(body)
            if status == 200:
                try:
                    payload = json.loads(text)
                    content = payload["choices"][0]["message"]["content"]
                except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
                    raise GatewayError(
                        f"malformed provider payload ({exc}); raw body: {text[:2000]}"
                    ) from exc
                meta = {k: payload[k] for k in ("id", "model", "usage") if k in payload}
                return content, meta
            last_status = status
            if status in RETRYABLE_STATUS and attempt < self.max_retries:
                delay = self.backoff_base * (2 ** attempt)
                log.warning("HTTP %s from provider, retrying in %.1fs", status, delay)
                self._sleep(delay)
                continue
            raise GatewayError(f"provider returned HTTP {status}: {text[:500]}")
        raise GatewayError(f"retry budget exhausted (last status {last_status})")

    def run_conversation(self, strategy: PromptStrategy, note_text: str,
                         system_role_override: str | None = None) -> list[str]:
        """Run all turns of a strategy in one fresh conversation.

        Each turn's user message is appended after the previous assistant
        reply; returns one response text per turn.
        """
        turns = render(strategy, note_text, system_role_override)
        history: list[dict] = [turns[0][0]]  # system message
        replies: list[str] = []
        for turn in turns:
            history.append(turn[1])
            reply = self.chat(history, strategy.params)
            history.append({"role": "assistant", "content": reply})
            replies.append(reply)
        return replies
