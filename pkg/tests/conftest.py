import socket
from pathlib import Path

import pytest

from trialsearch import corpus
from trialsearch.gateway import ResponseCache, cache_key, canonical_request
from trialsearch.negation import tag_and_clean
from trialsearch.prompts import get_strategy, render

FIXTURES = Path(__file__).parent / "fixtures"

MODEL = "gpt-3.5-turbo"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def mini_trials():
    return corpus.load_trials(FIXTURES / "minicorpus")


@pytest.fixture
def mini_topics():
    return corpus.load_topics(FIXTURES / "topics_mini.xml")


@pytest.fixture
def mini_qrels():
    return corpus.load_qrels(FIXTURES / "qrels_mini.txt")


def canned(name: str) -> str:
    return (FIXTURES / "canned" / name).read_text("utf-8")


def paper_output(name: str) -> str:
    return (FIXTURES / "paper_outputs" / name).read_text("utf-8")


def seed_replay_cache(cache_root: Path, model: str = MODEL) -> ResponseCache:
    """Record the bundled canned replies so replay mode can serve them.

    Covers the plain IEMT conversation plus both NRIEMT conversations
    (tagging, then extraction over the cleaned note) for each mini topic.
    """
    cache = ResponseCache(cache_root)
    iemt = get_strategy("IEMT")
    tagger = get_strategy("NRIEMT_TAG")

    def record(strategy, note_text, reply):
        messages = render(strategy, note_text)[0]
        key = cache_key(model, messages, strategy.params)
        cache.put(key, canonical_request(model, messages, strategy.params), reply)

    for topic in corpus.load_topics(FIXTURES / "topics_mini.xml"):
        record(iemt, topic.text, canned(f"iemt_topic{topic.id}.txt"))
        tag_reply = canned(f"tag_topic{topic.id}.txt")
        record(tagger, topic.text, tag_reply)
        _, _, cleaned = tag_and_clean(tag_reply, provider="rules")
        record(iemt, cleaned, canned(f"iemt_cleaned_topic{topic.id}.txt"))
    return cache


@pytest.fixture
def replay_cache(tmp_path) -> Path:
    root = tmp_path / "cache"
    seed_replay_cache(root)
    return root


@pytest.fixture
def no_network(monkeypatch):
    """Any socket construction fails the test."""

    def guard(*args, **kwargs):
        raise AssertionError("network access attempted in a hermetic test")

    monkeypatch.setattr(socket, "socket", guard)
    monkeypatch.setattr(socket, "create_connection", guard)
