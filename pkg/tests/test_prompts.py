import json

import pytest

import trialsearch.prompts as prompts
from trialsearch.prompts import (DecodingParams, PromptConfigError,
                                 PromptStrategy, get_strategy, render)

EXPECTED_PARAMS = {
    "QGMT": (0.0, 1.5, 1.0),
    "QGGT": (0.0, 1.5, 1.0),
    "IEG": (0.0, 2.0, 1.0),
    "IEMT": (0.0, 2.0, 1.0),
    "IEMDMT": (0.0, 0.0, 0.0),
    "NRIEMT_TAG": (0.0, 0.0, 0.0),
}


@pytest.mark.parametrize("sid,expected", sorted(EXPECTED_PARAMS.items()))
def test_decoding_params(sid, expected):
    s = get_strategy(sid)
    assert (s.params.temperature, s.params.frequency_penalty,
            s.params.presence_penalty) == expected


def test_every_strategy_loads_with_valid_parser():
    for s in prompts.all_strategies():
        assert s.parser_ids
        for pid in s.parser_ids:
            assert pid in prompts.PARSER_IDS


def test_qgmt_roles_and_note_verbatim():
    s = get_strategy("QGMT")
    note = "Patient presents with  odd   spacing\nand a newline."
    msgs = render(s, note)
    assert len(msgs) == 1
    system, user = msgs[0]
    assert system["role"] == "system"
    assert system["content"].startswith(
        "You are a helpful medical assistant that needs to retrieve eligible "
        "clinical trials for your medical patient.")
    assert note in user["content"]  # byte-identical substring


def test_role_override_for_ablation():
    s = get_strategy("QGMT")
    msgs = render(s, "note", system_role_override="You are a helpful assistant.")
    assert msgs[0][0]["content"] == "You are a helpful assistant."


def test_ieg_two_turns_one_conversation():
    s = get_strategy("IEG")
    msgs = render(s, "some note")
    assert len(msgs) == 2
    assert "some note" in msgs[0][1]["content"]
    assert "20 additional related keywords" in msgs[1][1]["content"]
    assert s.system_role == "You are a helpful assistant."


def test_iemdmt_template_keeps_json_skeleton():
    s = get_strategy("IEMDMT")
    rendered = render(s, "NOTE")[0][1]["content"]
    assert '"answer":{' in rendered
    assert '"MeSH_terms":""' in rendered
    assert "write 'N-A'" in rendered
    assert rendered.count("NOTE") == 1


def test_nriemt_tag_examples_present():
    s = get_strategy("NRIEMT_TAG")
    text = s.turns[0]
    assert "[entity] shortness of breath [entity]" in text
    assert "[entity] fever [entity] up to 39 C" in text


def test_checksum_guard(monkeypatch):
    manifest = prompts._load_manifest()
    manifest["IEMT"]["sha256"]["iemt.turn1.txt"] = "0" * 64
    monkeypatch.setattr(prompts, "_load_manifest", lambda: manifest)
    prompts._cache.clear()
    try:
        with pytest.raises(PromptConfigError, match="checksum mismatch"):
            get_strategy("IEMT")
    finally:
        prompts._cache.clear()


def test_unknown_strategy():
    with pytest.raises(KeyError):
        get_strategy("NOPE")


def test_manifest_matches_rebuild():
    assert prompts.build_manifest() == prompts._load_manifest()


def test_placeholder_required():
    with pytest.raises(PromptConfigError, match="exactly one turn"):
        PromptStrategy(id="X", system_role="r", turns=("no placeholder",),
                       params=DecodingParams(0, 0, 0), parser_ids=("keyword_list",))


def test_render_rejects_empty_note():
    with pytest.raises(ValueError):
        render(get_strategy("QGMT"), "")


def test_params_range_validation():
    with pytest.raises(PromptConfigError):
        DecodingParams(temperature=0, frequency_penalty=3.0, presence_penalty=0)
    with pytest.raises(PromptConfigError):
        DecodingParams(temperature=-1, frequency_penalty=0, presence_penalty=0)
