"""Pseudo-relevance-feedback query expansion in the RM3 style.

A relevance model is estimated from the top-ranked documents of a first
retrieval pass and interpolated with the original query. Document weights
come from normalized retrieval scores (the usual BM25 hybrid); scores are
shifted when non-positive so the weights stay a valid distribution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .index import InvertedIndex, WeightedQuery, retrieve
from .textproc import _stopword_stems, load_stopwords

log = logging.getLogger(__name__)

SCORE_FLOOR = 1e-6


@dataclass(frozen=True)
class RM3Config:
    fb_docs: int = 10
    fb_terms: int = 20
    lambda_orig: float = 0.5

    def __post_init__(self):
        if self.fb_docs < 1 or self.fb_terms < 1:
            raise ValueError("fb_docs and fb_terms must be positive")
        if not 0.0 <= self.lambda_orig <= 1.0:
            raise ValueError("lambda_orig must be in [0, 1]")


def expand_rm3(index: InvertedIndex, query: WeightedQuery,
               cfg: RM3Config = RM3Config(), stopwords=None) -> WeightedQuery:
    """Expand a query with terms from its pseudo-relevant feedback set.

    Returns the original query unchanged (with a warning) when the
    first pass retrieves nothing. Otherwise the output weights are
    lambda_orig * normalized(original) + (1 - lambda_orig) * expansion
    and sum to 1 for any nonempty original query.
    """
    first_pass = retrieve(index, query, k=cfg.fb_docs)
    if not first_pass:
        log.warning("RM3: empty first-pass ranking, query returned unexpanded")
        return query

    ordinal_of = {doc_id: i for i, doc_id in enumerate(index.doc_ids)}
    fb = [(ordinal_of[doc_id], score) for doc_id, score in first_pass]

    # document weights from scores, shifted so the minimum maps to a
    # small positive floor whenever any score is non-positive
    scores = [s for _, s in fb]
    if min(scores) <= 0.0:
        shift = SCORE_FLOOR - min(scores)
        scores = [s + shift for s in scores]
    total = sum(scores)
    doc_weight = {o: s / total for (o, _), s in zip(fb, scores)}

    banned = _stopword_stems(stopwords if stopwords is not None else load_stopwords())
    vectors = index.doc_vectors(set(doc_weight))
    mass: dict[str, float] = {}
    for ordinal, u in doc_weight.items():
        dl = index.doc_lengths[ordinal]
        if dl == 0:
            continue
        for term, tf in vectors[ordinal].items():
            if term in banned:
                continue
            mass[term] = mass.get(term, 0.0) + u * tf / dl

    # top fb_terms by mass, ties broken lexicographically
    chosen = sorted(mass.items(), key=lambda it: (-it[1], it[0]))[:cfg.fb_terms]
    expansion_total = sum(m for _, m in chosen)

    orig_total = sum(query.terms.values())
    if cfg.lambda_orig == 1.0 or expansion_total == 0.0:
        # interpolation degenerates to the (normalized) original query
        if expansion_total == 0.0 and cfg.lambda_orig < 1.0:
            log.warning("RM3: no usable expansion terms, falling back to original query")
        return WeightedQuery({t: w / orig_total for t, w in query.terms.items()})

    out: dict[str, float] = {
        t: cfg.lambda_orig * w / orig_total for t, w in query.terms.items()
    }
    for term, m in chosen:
        out[term] = out.get(term, 0.0) + (1 - cfg.lambda_orig) * m / expansion_total
    return WeightedQuery(terms=out)
