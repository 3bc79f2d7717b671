import pytest
from hypothesis import given, strategies as st

from trialsearch import parsing
from trialsearch.parsing import (ParseError, PatientRecord, parse_bracketed,
                                 parse_entity_tags, parse_keyword_list,
                                 parse_patient_record, reinsert_entity_tags,
                                 synthesize_record_query)

from .conftest import paper_output


class TestKeywordList:
    def test_qgmt_example_15_keywords(self):
        kws = parse_keyword_list(paper_output("qgmt_output.txt"))
        assert len(kws) == 15
        assert kws[0] == "anaplastic astrocytoma"
        assert kws[-1] == "chronic pain"

    def test_iemt_example_14_keywords(self):
        kws = parse_keyword_list(paper_output("iemt_output.txt"))
        assert len(kws) == 14
        assert "CPT-11 Weekly" in kws
        assert "Avastin" in kws

    def test_ieg_examples_parse(self):
        first = parse_keyword_list(paper_output("ieg_turn1_output.txt"))
        second = parse_keyword_list(paper_output("ieg_turn2_output.txt"))
        assert len(first) == 22
        assert len(second) == 19
        assert "45-year-old man" in first
        assert "cancer treatment" in second

    def test_nriemt_step4_example_parses_despite_quote_typo(self):
        kws = parse_keyword_list(paper_output("nriemt_step4_output.txt"))
        assert len(kws) == 12
        assert "lower extremity weakness" in kws
        assert "t10-l1 temozolomide" in kws

    def test_dedup_is_downstreams_job(self):
        assert parse_keyword_list('a, "b c", a') == ["a", "b c", "a"]

    def test_leading_label_stripped(self):
        assert parse_keyword_list("Keywords: alpha, beta") == ["alpha", "beta"]

    def test_commas_inside_quotes_do_not_split(self):
        assert parse_keyword_list('"x, y", z') == ["x, y", "z"]

    def test_unparseable(self):
        with pytest.raises(ParseError):
            parse_keyword_list("!!! --- ???")

    def test_content_letters_never_modified(self):
        raw = paper_output("iemt_output.txt")
        for kw in parse_keyword_list(raw):
            assert kw in raw


class TestBracketed:
    def test_qggt_initial_query(self):
        got = parse_bracketed(paper_output("qggt_output.txt"), "[query_keywords]")
        assert got.text == ("clinical trial anaplastic astrocytoma spine radiation "
                            "temozolomide Avastin CPT-11")
        assert not got.truncated

    def test_qggt_expanded_query(self):
        got = parse_bracketed(paper_output("qggt_output.txt"),
                              "[query_keywords_expanded]")
        assert got.text.endswith("urinary retention hypertension")

    def test_missing_closing_token(self):
        got = parse_bracketed('[q] "alpha beta', "[q]")
        assert got.text == "alpha beta"
        assert got.truncated

    def test_token_absent(self):
        with pytest.raises(ParseError):
            parse_bracketed("no tokens here", "[q]")


class TestPatientRecord:
    def test_paper_example(self):
        record = parse_patient_record(paper_output("iemdmt_output.txt"))
        assert record.gender == "male"
        assert record.age == "45"
        assert record.family_history is None
        assert record.lifestyle_factors is None
        assert record.diagnosis == "anaplastic astrocytoma"
        # the reply's misspelled key still lands in the right field
        assert record.symptoms.startswith("lower extremity weakness")
        assert "Bevacizumab" in record.mesh_terms
        assert record.repairs == ()

    def test_not_applicable_synonym(self):
        record = parse_patient_record(
            '{"answer": {"lifestyle_factors": "Not applicable", "age": "30"}}')
        assert record.lifestyle_factors is None
        assert record.age == "30"

    def test_not_explicitly_mentioned(self):
        record = parse_patient_record(
            '{"family_history": "This information is not explicitly mentioned in the text."}')
        assert record.family_history is None

    def test_all_na(self):
        body = ", ".join(f'"{f}": "N-A"' for f in parsing.RECORD_FIELDS)
        record = parse_patient_record("{" + body + "}")
        assert record.present_fields() == []

    def test_repair_missing_comma(self):
        broken = '{"answer": {"diagnosis": "asthma"\n "age": "12"}}'
        record = parse_patient_record(broken)
        assert record.diagnosis == "asthma"
        assert record.age == "12"
        assert "insert_commas" in record.repairs

    def test_repair_truncated_end(self):
        broken = '{"answer": {"diagnosis": "copd", "age": "70'
        record = parse_patient_record(broken)
        assert record.diagnosis == "copd"
        assert record.age == "70"
        assert record.repairs

    def test_repair_trailing_prose(self):
        wrapped = 'Sure! Here you go: {"diagnosis": "flu"} Hope that helps.'
        record = parse_patient_record(wrapped)
        assert record.diagnosis == "flu"

    def test_irreparable(self):
        with pytest.raises(ParseError, match="irreparable"):
            parse_patient_record("totally not structured")


class TestEntityTags:
    def test_paper_example_span(self):
        note = parse_entity_tags(paper_output("entity_example_output.txt"))
        assert note.span_texts() == ["shortness of breath"]
        start, end = note.spans[0]
        assert note.text[start:end] == "shortness of breath"
        assert "[entity]" not in note.text

    def test_long_tagged_note(self):
        note = parse_entity_tags(paper_output("nriemt_tag_output.txt"))
        assert len(note.spans) == 12
        assert "anaplastic astrocytoma" in note.span_texts()
        assert "CPT-11 Weekly x4" in note.span_texts()
        assert not note.dangling_token

    def test_zero_tokens(self):
        note = parse_entity_tags("plain text.")
        assert note.spans == ()
        assert note.text == "plain text."

    def test_three_tokens_one_span(self):
        note = parse_entity_tags("a [entity] b [entity] c [entity]")
        assert note.span_texts() == ["b"]
        assert note.dangling_token

    def test_round_trip_exact(self):
        for fixture in ("entity_example_output.txt", "nriemt_tag_output.txt"):
            raw = paper_output(fixture)
            note = parse_entity_tags(raw)
            assert reinsert_entity_tags(note) == raw

    def test_round_trip_without_padding_spaces(self):
        raw = "x [entity]tight[entity] y"
        note = parse_entity_tags(raw)
        assert note.span_texts() == ["tight"]
        assert reinsert_entity_tags(note) == raw

    @given(st.lists(st.sampled_from(["plain", "[entity]", "spacey ", "x"]),
                    max_size=12))
    def test_round_trip_property(self, parts):
        raw = " ".join(parts)
        note = parse_entity_tags(raw)
        assert reinsert_entity_tags(note) == raw


class TestSynthesizeRecordQuery:
    def record(self):
        return parse_patient_record(paper_output("iemdmt_output.txt"))

    def test_paper_field_set_with_mesh(self):
        kws = synthesize_record_query(self.record(), include_mesh=True)
        assert kws[0] == "anaplastic astrocytoma"
        assert "Bevacizumab" in kws
        lowered = [k.casefold() for k in kws]
        assert len(lowered) == len(set(lowered))

    def test_empty_field_set(self):
        assert synthesize_record_query(self.record(), fields=()) == []

    def test_duplicate_fields_once(self):
        record = PatientRecord(drug="aspirin, ibuprofen", medications="aspirin, ibuprofen")
        kws = synthesize_record_query(record, fields=("drug", "medications"))
        assert kws == ["aspirin", "ibuprofen"]

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError):
            synthesize_record_query(self.record(), fields=("nope",))

    def test_absent_fields_skipped(self):
        record = PatientRecord(diagnosis="asthma")
        assert synthesize_record_query(record, fields=("diagnosis", "symptoms")) == ["asthma"]


class TestQueryFunnel:
    def test_build_query_terms_folds_and_dedupes(self):
        kws = ["anaplastic astrocytoma", "astrocytoma", "urinary retention"]
        assert parsing.build_query_terms(kws) == \
            ["anaplast", "astrocytoma", "urinari", "retent"]

    def test_scrub_clinical_trial(self):
        terms = parsing.build_query_terms(["clinical trial asthma treatment"])
        scrubbed = parsing.scrub_clinical_trial_terms(terms)
        assert "clinic" not in scrubbed and "trial" not in scrubbed
        assert "asthma" in scrubbed

    def test_sidecar_roundtrip(self, tmp_path):
        path = tmp_path / "queries_IEMT.tsv"
        queries = {1: ["a", "b c"], 2: ["d"]}
        parsing.write_sidecar(path, "IEMT", queries)
        strategy, back = parsing.read_sidecar(path)
        assert strategy == "IEMT"
        assert back == queries


def test_all_paper_fixture_outputs_parse_without_error(fixtures_dir):
    """Every bundled strategy example output goes through its parser."""
    parse_keyword_list(paper_output("qgmt_output.txt"))
    parse_bracketed(paper_output("qggt_output.txt"), "[query_keywords]")
    parse_bracketed(paper_output("qggt_output.txt"), "[query_keywords_expanded]")
    parse_keyword_list(paper_output("ieg_turn1_output.txt"))
    parse_keyword_list(paper_output("ieg_turn2_output.txt"))
    parse_keyword_list(paper_output("iemt_output.txt"))
    parse_patient_record(paper_output("iemdmt_output.txt"))
    parse_entity_tags(paper_output("nriemt_tag_output.txt"))
    parse_keyword_list(paper_output("nriemt_step4_output.txt"))
