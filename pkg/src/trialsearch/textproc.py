"""Deterministic text normalization shared by indexing and querying.

Pipeline order is fixed: lowercase tokenization -> stopword removal ->
Porter stemming. Stopword removal happens on surface forms, before
stemming; changing the order changes the vocabulary.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

_TOKEN_RE = re.compile(r"[a-z0-9]+")

_VOWELS = "aeiou"


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every non-alphanumeric character.

    Empty fragments are dropped; digits are retained, so "CPT-11" yields
    ["cpt", "11"].
    """
    return _TOKEN_RE.findall(text.lower())


def _is_consonant(word: str, i: int) -> bool:
    c = word[i]
    if c in _VOWELS:
        return False
    if c == "y":
        # y is a vowel when preceded by a consonant
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _measure(stem: str) -> int:
    """Count of vowel-consonant sequences (Porter's m)."""
    m = 0
    prev_cons = True
    for i in range(len(stem)):
        cons = _is_consonant(stem, i)
        if cons and not prev_cons:
            m += 1
        prev_cons = cons
    return m


def _has_vowel(stem: str) -> bool:
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word: str) -> bool:
    return (
        len(word) >= 2
        and word[-1] == word[-2]
        and _is_consonant(word, len(word) - 1)
    )


def _ends_cvc(word: str) -> bool:
    # consonant-vowel-consonant where the final consonant is not w, x or y
    if len(word) < 3:
        return False
    return (
        _is_consonant(word, len(word) - 3)
        and not _is_consonant(word, len(word) - 2)
        and _is_consonant(word, len(word) - 1)
        and word[-1] not in "wxy"
    )


def _replace_suffix(word: str, rules: list[tuple[str, str, int]]) -> str:
    """Apply the first matching (suffix, replacement, min_m) rule.

    Longest suffix wins: callers list rules longest-first. Once a suffix
    matches, the rule decides (a failed m-condition means no change).
    """
    for suffix, repl, min_m in rules:
        if word.endswith(suffix):
            stem = word[: len(word) - len(suffix)]
            if _measure(stem) > min_m:
                return stem + repl
            return word
    return word


_STEP2 = [
    ("ational", "ate", 0), ("tional", "tion", 0), ("enci", "ence", 0),
    ("anci", "ance", 0), ("izer", "ize", 0), ("abli", "able", 0),
    ("alli", "al", 0), ("entli", "ent", 0), ("eli", "e", 0),
    ("ousli", "ous", 0), ("ization", "ize", 0), ("ation", "ate", 0),
    ("ator", "ate", 0), ("alism", "al", 0), ("iveness", "ive", 0),
    ("fulness", "ful", 0), ("ousness", "ous", 0), ("aliti", "al", 0),
    ("iviti", "ive", 0), ("biliti", "ble", 0),
]
_STEP2.sort(key=lambda r: -len(r[0]))

_STEP3 = [
    ("icate", "ic", 0), ("ative", "", 0), ("alize", "al", 0),
    ("iciti", "ic", 0), ("ical", "ic", 0), ("ful", "", 0), ("ness", "", 0),
]
_STEP3.sort(key=lambda r: -len(r[0]))

_STEP4 = [
    ("al", "", 1), ("ance", "", 1), ("ence", "", 1), ("er", "", 1),
    ("ic", "", 1), ("able", "", 1), ("ible", "", 1), ("ant", "", 1),
    ("ement", "", 1), ("ment", "", 1), ("ent", "", 1), ("ou", "", 1),
    ("ism", "", 1), ("ate", "", 1), ("iti", "", 1), ("ous", "", 1),
    ("ive", "", 1), ("ize", "", 1),
]
_STEP4.sort(key=lambda r: -len(r[0]))


def stem(token: str) -> str:
    """Classic Porter stemmer (the original published rule set).

    Expects a lowercase alphanumeric token; purely functional.
    """
    w = token
    if len(w) <= 2:
        return w

    # step 1a
    if w.endswith("sses"):
        w = w[:-2]
    elif w.endswith("ies"):
        w = w[:-2]
    elif w.endswith("ss"):
        pass
    elif w.endswith("s"):
        w = w[:-1]

    # step 1b
    if w.endswith("eed"):
        if _measure(w[:-3]) > 0:
            w = w[:-1]
    else:
        cleanup = False
        if w.endswith("ed") and _has_vowel(w[:-2]):
            w = w[:-2]
            cleanup = True
        elif w.endswith("ing") and _has_vowel(w[:-3]):
            w = w[:-3]
            cleanup = True
        if cleanup:
            if w.endswith(("at", "bl", "iz")):
                w += "e"
            elif _ends_double_consonant(w) and not w.endswith(("l", "s", "z")):
                w = w[:-1]
            elif _measure(w) == 1 and _ends_cvc(w):
                w += "e"

    # step 1c
    if w.endswith("y") and _has_vowel(w[:-1]):
        w = w[:-1] + "i"

    w = _replace_suffix(w, _STEP2)
    w = _replace_suffix(w, _STEP3)

    # step 4: "ion" only drops after s or t
    if w.endswith("ion") and len(w) > 4 and w[-4] in "st":
        if _measure(w[:-3]) > 1:
            w = w[:-3]
    else:
        w = _replace_suffix(w, _STEP4)

    # step 5a
    if w.endswith("e"):
        m = _measure(w[:-1])
        if m > 1 or (m == 1 and not _ends_cvc(w[:-1])):
            w = w[:-1]

    # step 5b
    if w.endswith("ll") and _measure(w) > 1:
        w = w[:-1]

    return w


@lru_cache(maxsize=None)
def _default_stopwords() -> frozenset[str]:
    text = resources.files("trialsearch.data").joinpath("stopwords.txt").read_text("utf-8")
    return frozenset(_parse_stopword_lines(text.splitlines()))


def _parse_stopword_lines(lines) -> set[str]:
    words = set()
    for line in lines:
        word = line.strip()
        if word and not word.startswith("#"):
            words.add(word.lower())
    return words


def load_stopwords(path=None) -> frozenset[str]:
    """Stopword set: bundled list by default, or one word per line from path."""
    if path is None:
        return _default_stopwords()
    with open(path, encoding="utf-8") as fh:
        return frozenset(_parse_stopword_lines(fh))


@lru_cache(maxsize=4)
def _stopword_stems(stopwords: frozenset[str]) -> frozenset[str]:
    return frozenset(stem(w) for w in stopwords)


def process(text: str, stopwords: frozenset[str] | None = None) -> list[str]:
    """Full pipeline: tokenize, drop stopwords, stem.

    Order and duplicates are preserved.
    """
    sw = stopwords if stopwords is not None else _default_stopwords()
    return [stem(t) for t in tokenize(text) if t not in sw]


def fold_phrases(keywords: list[str], stopwords: frozenset[str] | None = None) -> list[str]:
    """Fold multi-word keyword phrases into deduplicated unigram terms.

    Each phrase runs through process(); the flattened term stream is
    deduplicated preserving first occurrence. Terms equal to a stopword
    stem are dropped as well, so folded queries stay clean even when a
    surface form stems into a stopword.
    """
    sw = stopwords if stopwords is not None else _default_stopwords()
    banned = _stopword_stems(sw)
    seen = set()
    out = []
    for phrase in keywords:
        for term in process(phrase, sw):
            if term in banned or term in seen:
                continue
            seen.add(term)
            out.append(term)
    return out
