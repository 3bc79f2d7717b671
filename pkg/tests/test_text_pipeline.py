import string

import pytest
from hypothesis import given, strategies as st

from trialsearch import textproc as tp

# classic Porter behavior, hand-traced against the published rule set
PORTER_VECTORS = [
    ("caresses", "caress"),
    ("ponies", "poni"),
    ("ties", "ti"),
    ("caress", "caress"),
    ("cats", "cat"),
    ("feed", "feed"),
    ("agreed", "agre"),
    ("plastered", "plaster"),
    ("motoring", "motor"),
    ("sing", "sing"),
    ("hopping", "hop"),
    ("tanned", "tan"),
    ("falling", "fall"),
    ("hissing", "hiss"),
    ("failing", "fail"),
    ("filing", "file"),
    ("sized", "size"),
    ("happy", "happi"),
    ("sky", "sky"),
    ("relational", "relat"),
    ("conditional", "condit"),
    ("rational", "ration"),
    ("digitizer", "digit"),
    ("operator", "oper"),
    ("feudalism", "feudal"),
    ("decisiveness", "decis"),
    ("hopefulness", "hope"),
    ("formaliti", "formal"),
    ("formalize", "formal"),
    ("electrical", "electr"),
    ("hopeful", "hope"),
    ("goodness", "good"),
    ("revival", "reviv"),
    ("allowance", "allow"),
    ("inference", "infer"),
    ("airliner", "airlin"),
    ("adjustable", "adjust"),
    ("defensible", "defens"),
    ("irritant", "irrit"),
    ("replacement", "replac"),
    ("adjustment", "adjust"),
    ("dependent", "depend"),
    ("adoption", "adopt"),
    ("activate", "activ"),
    ("angulariti", "angular"),
    ("homologous", "homolog"),
    ("effective", "effect"),
    ("bowdlerize", "bowdler"),
    ("probate", "probat"),
    ("rate", "rate"),
    ("cease", "ceas"),
    ("controll", "control"),
    ("roll", "roll"),
    # clinical vocabulary used across the suite
    ("hypertension", "hypertens"),
    ("urinary", "urinari"),
    ("retention", "retent"),
    ("anaplastic", "anaplast"),
    ("astrocytoma", "astrocytoma"),
    ("spine", "spine"),
    ("weakness", "weak"),
    ("radiation", "radiat"),
    ("clinical", "clinic"),
    ("trials", "trial"),
]


@pytest.mark.parametrize("word,expected", PORTER_VECTORS)
def test_porter_vectors(word, expected):
    assert tp.stem(word) == expected


# classic Porter is not idempotent everywhere (agre -> agr); the checked
# lexicon is the bundled vocabulary minus those known re-stemmable outputs
NON_IDEMPOTENT_STEMS = {"agre", "decis", "defens", "ceas", "hypertens"}


def test_stem_idempotent_on_lexicon():
    for word, _ in PORTER_VECTORS:
        once = tp.stem(word)
        if once in NON_IDEMPOTENT_STEMS:
            continue
        assert tp.stem(once) == once


class TestTokenize:
    def test_hyphens_and_digits(self):
        assert tp.tokenize("CPT-11 Weekly x4") == ["cpt", "11", "weekly", "x4"]

    def test_empty(self):
        assert tp.tokenize("") == []

    def test_hyphenated_abbreviation(self):
        assert tp.tokenize("T-L spine") == ["t", "l", "spine"]

    def test_punctuation_only(self):
        assert tp.tokenize("!!! --- ...") == []


class TestProcess:
    def test_stopwords_removed_before_stemming(self):
        assert tp.process("the patient has hypertension") == ["patient", "hypertens"]

    def test_all_stopwords(self):
        assert tp.process("and or the") == []

    def test_clinical_phrase(self):
        assert tp.process("urinary retention") == ["urinari", "retent"]

    def test_duplicates_preserved(self):
        assert tp.process("pain pain relief") == ["pain", "pain", "relief"]


class TestFoldPhrases:
    def test_dedup_across_phrases(self):
        out = tp.fold_phrases(["anaplastic astrocytoma", "astrocytoma"])
        assert out == ["anaplast", "astrocytoma"]

    def test_single_word_fixed_point(self):
        assert tp.fold_phrases(["spine"]) == ["spine"]

    def test_empty(self):
        assert tp.fold_phrases([]) == []

    def test_no_stopword_stems(self):
        # "having" survives surface stopword removal in some lists but
        # stems to "have"; folded output must never contain such stems
        out = tp.fold_phrases(["having chest pain", "chest pain"])
        banned = {tp.stem(w) for w in tp.load_stopwords()}
        assert not set(out) & banned
        assert len(out) == len(set(out))


def test_stopword_file_is_the_contract(tmp_path):
    custom = tmp_path / "stops.txt"
    custom.write_text("# comment\nzebra\n\nEXTRA\n", "utf-8")
    sw = tp.load_stopwords(custom)
    assert sw == {"zebra", "extra"}
    assert tp.process("zebra stripes", sw) == ["stripe"]


def test_bundled_stopword_list_loads():
    sw = tp.load_stopwords()
    assert {"the", "and", "or", "has", "a"} <= sw
    assert "patient" not in sw


@given(st.text(alphabet=string.printable, max_size=200))
def test_process_is_pure_and_terms_are_clean(text):
    first = tp.process(text)
    assert first == tp.process(text)
    for term in first:
        assert term
        assert term == term.lower()
        assert all(c in string.ascii_lowercase + string.digits for c in term)


@given(st.lists(st.text(alphabet=string.ascii_letters + " -", max_size=30), max_size=10))
def test_fold_phrases_never_duplicates(keywords):
    out = tp.fold_phrases(keywords)
    assert len(out) == len(set(out))
