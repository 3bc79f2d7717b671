"""Inverted index over processed trial text and Okapi BM25 ranking.

A built index is immutable; concurrent retrieval needs no locking.
Document ordinals are assigned by sorted registry id so serialized
indexes and tie-breaking are reproducible bit-for-bit.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import ClinicalTrial
from .textproc import process

K1 = 1.2
B = 0.75

_MAGIC = b"CTIX"
_VERSION = 1


@dataclass(frozen=True)
class WeightedQuery:
    """Query as a term -> nonnegative weight map.

    Free-text queries weight terms by their frequency in the processed
    query; keyword queries use weight 1 after deduplication.
    """

    terms: dict[str, float]

    def __post_init__(self):
        for t, w in self.terms.items():
            if not math.isfinite(w) or w < 0:
                raise ValueError(f"bad weight {w!r} for term {t!r}")

    @classmethod
    def from_terms(cls, terms: list[str]) -> "WeightedQuery":
        weights: dict[str, float] = {}
        for t in terms:
            weights[t] = weights.get(t, 0.0) + 1.0
        return cls(terms=weights)

    def scaled(self, factor: float) -> "WeightedQuery":
        return WeightedQuery({t: w * factor for t, w in self.terms.items()})


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[int, int]]]
    doc_lengths: list[int]
    doc_ids: list[str]
    avg_doc_length: float
    collection_term_counts: dict[str, int] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.doc_ids)

    def doc_frequency(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def term_frequency(self, term: str, doc_ordinal: int) -> int:
        for ordinal, tf in self.postings.get(term, ()):
            if ordinal == doc_ordinal:
                return tf
        return 0

    def doc_vectors(self, ordinals: set[int]) -> dict[int, dict[str, int]]:
        """Term -> frequency maps for a document set, in one postings pass."""
        vecs: dict[int, dict[str, int]] = {o: {} for o in ordinals}
        for term, plist in self.postings.items():
            for ordinal, tf in plist:
                if ordinal in ordinals:
                    vecs[ordinal][term] = tf
        return vecs

    def doc_vector(self, doc_ordinal: int) -> dict[str, int]:
        return self.doc_vectors({doc_ordinal})[doc_ordinal]


def build_index(trials: list[ClinicalTrial], stopwords=None) -> InvertedIndex:
    """Index the concatenated sections of every trial.

    Fatal on an empty collection. Duplicate ids must have been merged by
    the loader.
    """
    if not trials:
        raise ValueError("cannot index an empty collection")
    ordered = sorted(trials, key=lambda t: t.id)
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lengths: list[int] = []
    counts: dict[str, int] = {}
    for ordinal, trial in enumerate(ordered):
        terms = process(trial.full_text(), stopwords)
        doc_lengths.append(len(terms))
        tf: dict[str, int] = {}
        for t in terms:
            tf[t] = tf.get(t, 0) + 1
        for t, n in tf.items():
            postings.setdefault(t, []).append((ordinal, n))
            counts[t] = counts.get(t, 0) + n
    avgdl = sum(doc_lengths) / len(doc_lengths)
    return InvertedIndex(
        postings=postings,
        doc_lengths=doc_lengths,
        doc_ids=[t.id for t in ordered],
        avg_doc_length=avgdl,
        collection_term_counts=counts,
    )


def idf(index: InvertedIndex, term: str) -> float:
    df = index.doc_frequency(term)
    return math.log((index.N - df + 0.5) / (df + 0.5))


def bm25_score(index: InvertedIndex, query: WeightedQuery, doc_ordinal: int) -> float:
    """Okapi BM25 with k1=1.2, b=0.75 and unclamped Robertson idf."""
    if not 0 <= doc_ordinal < index.N:
        raise IndexError(f"doc ordinal {doc_ordinal} out of range")
    dl = index.doc_lengths[doc_ordinal]
    norm = K1 * (1 - B + B * dl / index.avg_doc_length)
    score = 0.0
    for term, weight in query.terms.items():
        if weight == 0.0:
            continue
        tf = index.term_frequency(term, doc_ordinal)
        if tf == 0:
            continue
        score += weight * idf(index, term) * tf * (K1 + 1) / (tf + norm)
    return score


def retrieve(index: InvertedIndex, query: WeightedQuery, k: int = 1000):
    """Top-k (doc_id, score) by descending score, ties by ascending id.

    Candidates are documents matching at least one positive-weight query
    term; negative scores are kept (no clamping). An out-of-vocabulary or
    zero-weight query yields an empty list.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scores: dict[int, float] = {}
    for term, weight in query.terms.items():
        plist = index.postings.get(term)
        if not plist or weight <= 0.0:
            continue
        w_idf = weight * idf(index, term)
        for ordinal, tf in plist:
            dl = index.doc_lengths[ordinal]
            norm = K1 * (1 - B + B * dl / index.avg_doc_length)
            scores[ordinal] = scores.get(ordinal, 0.0) + w_idf * tf * (K1 + 1) / (tf + norm)
    ranked = sorted(scores.items(), key=lambda it: (-it[1], index.doc_ids[it[0]]))
    return [(index.doc_ids[o], s) for o, s in ranked[:k]]


def save_index(index: InvertedIndex, path: str | Path) -> None:
    """Serialize to the versioned little-endian binary format.

    Layout: magic, version:u32, N:u32, avgdl:f64, doc table (id string +
    length:u32 per doc), postings count:u32, then per term (sorted):
    term string, df:u32, (ordinal:u32, tf:u32) pairs. Strings are
    u16-length-prefixed UTF-8. Byte-identical across platforms and runs.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, index.N))
        fh.write(struct.pack("<d", index.avg_doc_length))
        for doc_id, dl in zip(index.doc_ids, index.doc_lengths):
            raw = doc_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", dl))
        fh.write(struct.pack("<I", len(index.postings)))
        for term in sorted(index.postings):
            raw = term.encode("utf-8")
            plist = index.postings[term]
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", len(plist)))
            for ordinal, tf in plist:
                fh.write(struct.pack("<II", ordinal, tf))


def load_index(path: str | Path) -> InvertedIndex:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not an index file")
    off = 4
    version, n = struct.unpack_from("<II", data, off)
    off += 8
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported index version {version}")
    (avgdl,) = struct.unpack_from("<d", data, off)
    off += 8
    doc_ids, doc_lengths = [], []
    for _ in range(n):
        (slen,) = struct.unpack_from("<H", data, off)
        off += 2
        doc_ids.append(data[off:off + slen].decode("utf-8"))
        off += slen
        (dl,) = struct.unpack_from("<I", data, off)
        off += 4
        doc_lengths.append(dl)
    (n_terms,) = struct.unpack_from("<I", data, off)
    off += 4
    postings: dict[str, list[tuple[int, int]]] = {}
    counts: dict[str, int] = {}
    for _ in range(n_terms):
        (slen,) = struct.unpack_from("<H", data, off)
        off += 2
        term = data[off:off + slen].decode("utf-8")
        off += slen
        (df,) = struct.unpack_from("<I", data, off)
        off += 4
        plist = []
        total = 0
        for _ in range(df):
            ordinal, tf = struct.unpack_from("<II", data, off)
            off += 8
            plist.append((ordinal, tf))
            total += tf
        postings[term] = plist
        counts[term] = total
    return InvertedIndex(postings=postings, doc_lengths=doc_lengths, doc_ids=doc_ids,
                         avg_doc_length=avgdl, collection_term_counts=counts)


def dump_index_text(index: InvertedIndex, path: str | Path) -> None:
    """Debug dump: header line then one `term df: ord/tf ...` line per term."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"N={index.N} avgdl={index.avg_doc_length:.6f}\n")
        for ordinal, (doc_id, dl) in enumerate(zip(index.doc_ids, index.doc_lengths)):
            fh.write(f"doc {ordinal} {doc_id} len={dl}\n")
        for term in sorted(index.postings):
            plist = " ".join(f"{o}/{tf}" for o, tf in index.postings[term])
            fh.write(f"{term} df={len(index.postings[term])}: {plist}\n")
