"""Independent reference implementations used to pin expected values.

Everything here recomputes from first principles (token lists, plain
loops) and must stay decoupled from the package's own code paths.
"""

import math


def naive_bm25_scores(doc_tokens: list[list[str]], query: dict[str, float],
                      k1: float = 1.2, b: float = 0.75) -> list[float]:
    """Score every document by evaluating the BM25 formula directly."""
    n = len(doc_tokens)
    avgdl = sum(len(d) for d in doc_tokens) / n
    scores = []
    for tokens in doc_tokens:
        dl = len(tokens)
        s = 0.0
        for term, weight in query.items():
            tf = tokens.count(term)
            if tf == 0 or weight == 0.0:
                continue
            df = sum(1 for d in doc_tokens if term in d)
            idf = math.log((n - df + 0.5) / (df + 0.5))
            s += weight * idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
        scores.append(s)
    return scores


def naive_bm25_ranking(doc_ids: list[str], doc_tokens: list[list[str]],
                       query: dict[str, float], k: int) -> list[tuple[str, float]]:
    """Full sort with the same tie rule: score desc, registry id asc."""
    scores = naive_bm25_scores(doc_tokens, query)
    matched = [i for i, tokens in enumerate(doc_tokens)
               if any(w > 0 and t in tokens for t, w in query.items())]
    ranked = sorted(matched, key=lambda i: (-scores[i], doc_ids[i]))
    return [(doc_ids[i], scores[i]) for i in ranked[:k]]


def rm3_expand(doc_ids, doc_tokens, query: dict[str, float], fb_docs: int,
               fb_terms: int, lam: float, banned_stems=frozenset()) -> dict[str, float]:
    """Step-by-step relevance-model expansion over token lists."""
    first = naive_bm25_ranking(doc_ids, doc_tokens, query, fb_docs)
    assert first, "oracle assumes a nonempty first pass"
    idx = {d: i for i, d in enumerate(doc_ids)}
    scores = [s for _, s in first]
    if min(scores) <= 0:
        scores = [s + (1e-6 - min(scores)) for s in scores]
    total = sum(scores)
    u = {doc: s / total for (doc, _), s in zip(first, scores)}

    mass = {}
    for doc, weight in u.items():
        tokens = doc_tokens[idx[doc]]
        if not tokens:
            continue
        for term in set(tokens):
            if term in banned_stems:
                continue
            mass[term] = mass.get(term, 0.0) + weight * tokens.count(term) / len(tokens)
    top = sorted(mass.items(), key=lambda it: (-it[1], it[0]))[:fb_terms]
    exp_total = sum(m for _, m in top)

    q_total = sum(query.values())
    out = {t: lam * w / q_total for t, w in query.items()}
    for term, m in top:
        out[term] = out.get(term, 0.0) + (1 - lam) * m / exp_total
    return out


# --- metric oracles over (ranked doc id list, {doc: grade}) ---------------


def o_precision(ranked, judg, k):
    return sum(1 for d in ranked[:k] if judg.get(d) == 2) / k


def o_rprec(ranked, judg):
    r = sum(1 for g in judg.values() if g == 2)
    if r == 0:
        return 0.0
    return sum(1 for d in ranked[:r] if judg.get(d) == 2) / r


def o_mrr(ranked, judg):
    for pos, d in enumerate(ranked, 1):
        if judg.get(d) == 2:
            return 1.0 / pos
    return 0.0


def o_bpref(ranked, judg):
    rel = {d for d, g in judg.items() if g == 2}
    nonrel = {d for d, g in judg.items() if g != 2}
    r, n = len(rel), len(nonrel)
    if r == 0:
        return 0.0
    acc = 0.0
    above = 0
    for d in ranked:
        if d in rel:
            acc += 1.0 if n == 0 else 1.0 - min(above, r) / min(r, n)
        elif d in nonrel:
            above += 1
    return acc / r


def o_ndcg(ranked, judg, k):
    dcg = sum(judg.get(d, 0) / math.log2(i + 1)
              for i, d in enumerate(ranked[:k], 1))
    ideal = sorted(judg.values(), reverse=True)[:k]
    idcg = sum(g / math.log2(i + 1) for i, g in enumerate(ideal, 1))
    return 0.0 if idcg == 0 else dcg / idcg


def o_condense(ranked, judg):
    return [d for d in ranked if d in judg]


def o_all_metrics(ranked, judg, condensed=False):
    if condensed:
        ranked = o_condense(ranked, judg)
    return {
        "P@5": o_precision(ranked, judg, 5),
        "P@10": o_precision(ranked, judg, 10),
        "P@25": o_precision(ranked, judg, 25),
        "Rprec": o_rprec(ranked, judg),
        "Bpref": o_bpref(ranked, judg),
        "MRR": o_mrr(ranked, judg),
        "nDCG@5": o_ndcg(ranked, judg, 5),
        "nDCG@10": o_ndcg(ranked, judg, 10),
    }
