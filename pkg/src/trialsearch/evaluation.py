"""Graded and binary retrieval measures, condensed variants, and paired
significance testing.

Conventions follow the standard trec_eval behavior: binary measures count
only grade-2 documents as relevant (grade 1 "excludes" is judged
nonrelevant), nDCG uses raw grades as gains with a log2(i+1) discount,
Rprec with R=0 scores 0 and stays in the mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import betainc

from .corpus import Qrels, RunRanking

METRICS = ("P@5", "P@10", "P@25", "Rprec", "Bpref", "MRR", "nDCG@5", "nDCG@10")

RELEVANT_GRADE = 2


def relevant_docs(judgments: dict[str, int]) -> set[str]:
    """Binary view of graded judgments: relevant means grade 2 exactly
    ("excludes" counts as nonrelevant)."""
    return {d for d, g in judgments.items() if g == RELEVANT_GRADE}


_relevant_docs = relevant_docs


def precision_at_k(ranking: RunRanking, judgments: dict[str, int], k: int) -> float:
    """|relevant in top k| / k; the divisor stays k for short rankings."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = _relevant_docs(judgments)
    hits = sum(1 for d in ranking.doc_ids()[:k] if d in relevant)
    return hits / k


def rprec(ranking: RunRanking, judgments: dict[str, int]) -> float:
    relevant = _relevant_docs(judgments)
    r = len(relevant)
    if r == 0:
        return 0.0
    hits = sum(1 for d in ranking.doc_ids()[:r] if d in relevant)
    return hits / r


def mrr(ranking: RunRanking, judgments: dict[str, int]) -> float:
    relevant = _relevant_docs(judgments)
    for doc_id, _, rank in ranking.entries:
        if doc_id in relevant:
            return 1.0 / rank
    return 0.0


def bpref(ranking: RunRanking, judgments: dict[str, int]) -> float:
    """Binary preference; unjudged retrieved documents are ignored."""
    relevant = _relevant_docs(judgments)
    nonrelevant = {d for d, g in judgments.items() if g != RELEVANT_GRADE}
    r, n = len(relevant), len(nonrelevant)
    if r == 0:
        return 0.0
    total = 0.0
    nonrel_above = 0
    for doc_id in ranking.doc_ids():
        if doc_id in relevant:
            if n == 0:
                total += 1.0
            else:
                total += 1.0 - min(nonrel_above, r) / min(r, n)
        elif doc_id in nonrelevant:
            nonrel_above += 1
    return total / r


def ndcg_at_k(ranking: RunRanking, judgments: dict[str, int], k: int) -> float:
    """Graded nDCG: gain = raw grade, discount log2(i+1), unjudged gain 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    dcg = 0.0
    for i, doc_id in enumerate(ranking.doc_ids()[:k], 1):
        grade = judgments.get(doc_id, 0)
        if grade:
            dcg += grade / math.log2(i + 1)
    ideal = sorted(judgments.values(), reverse=True)[:k]
    idcg = sum(g / math.log2(i + 1) for i, g in enumerate(ideal, 1) if g)
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def condense(ranking: RunRanking, judgments: dict[str, int]) -> RunRanking:
    """Drop unjudged documents and close the rank gaps."""
    kept = [(d, s) for d, s, _ in ranking.entries if d in judgments]
    entries = tuple((d, s, i + 1) for i, (d, s) in enumerate(kept))
    return RunRanking(topic_id=ranking.topic_id, entries=entries,
                      run_tag=ranking.run_tag)


def _empty_ranking(topic_id: int, tag: str) -> RunRanking:
    return RunRanking(topic_id=topic_id, entries=(), run_tag=tag)


def compute_topic_metrics(ranking: RunRanking, judgments: dict[str, int],
                          condensed: bool = False) -> dict[str, float]:
    if condensed:
        ranking = condense(ranking, judgments)
    return {
        "P@5": precision_at_k(ranking, judgments, 5),
        "P@10": precision_at_k(ranking, judgments, 10),
        "P@25": precision_at_k(ranking, judgments, 25),
        "Rprec": rprec(ranking, judgments),
        "Bpref": bpref(ranking, judgments),
        "MRR": mrr(ranking, judgments),
        "nDCG@5": ndcg_at_k(ranking, judgments, 5),
        "nDCG@10": ndcg_at_k(ranking, judgments, 10),
    }


@dataclass
class MetricReport:
    run_tag: str
    per_topic: dict[int, dict[str, float]]
    condensed: bool = False

    @property
    def means(self) -> dict[str, float]:
        if not self.per_topic:
            return {m: 0.0 for m in METRICS}
        n = len(self.per_topic)
        return {m: sum(t[m] for t in self.per_topic.values()) / n for m in METRICS}

    def topic_vector(self, metric: str) -> dict[int, float]:
        return {t: scores[metric] for t, scores in self.per_topic.items()}


def evaluate_run(rankings: list[RunRanking], qrels: Qrels,
                 condensed: bool = False) -> MetricReport:
    """Score a run on every topic present in the qrels.

    Topics missing from the run score 0 on all measures; topics in the
    run but not judged are skipped. Only ranks matter, never file order.
    """
    by_topic = {r.topic_id: r for r in rankings}
    tag = rankings[0].run_tag if rankings else "run"
    per_topic = {}
    for topic in qrels.topics():
        ranking = by_topic.get(topic) or _empty_ranking(topic, tag)
        per_topic[topic] = compute_topic_metrics(ranking, qrels.for_topic(topic),
                                                 condensed)
    return MetricReport(run_tag=tag, per_topic=per_topic, condensed=condensed)


@dataclass(frozen=True)
class TTestResult:
    t: float
    p_two_sided: float
    p_bonferroni: float
    significant_at_05: bool
    n: int
    mean_diff: float


def paired_ttest(a: dict[int, float], b: dict[int, float], m: int = 1) -> TTestResult:
    """Two-sided paired t-test of per-topic scores with Bonferroni factor m.

    Degenerate cases: all-zero differences give t=0, p=1; zero variance
    with a nonzero mean reports an infinite-t sentinel with p=0.
    """
    if set(a) != set(b):
        only_a = sorted(set(a) - set(b))
        only_b = sorted(set(b) - set(a))
        raise ValueError(f"topic sets differ: only in a={only_a}, only in b={only_b}")
    if m < 1:
        raise ValueError("comparison count m must be >= 1")
    topics = sorted(a)
    n = len(topics)
    if n < 2:
        raise ValueError("need at least 2 paired observations")
    diffs = [a[t] - b[t] for t in topics]
    mean = sum(diffs) / n
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    if var == 0.0:
        if mean == 0.0:
            t_stat, p = 0.0, 1.0
        else:
            t_stat = math.inf if mean > 0 else -math.inf
            p = 0.0
    else:
        t_stat = mean / math.sqrt(var / n)
        p = _t_sf_two_sided(t_stat, n - 1)
    p_bonf = min(1.0, m * p)
    return TTestResult(t=t_stat, p_two_sided=p, p_bonferroni=p_bonf,
                       significant_at_05=p_bonf <= 0.05, n=n, mean_diff=mean)


def _t_sf_two_sided(t_stat: float, dof: int) -> float:
    """Two-sided p-value from Student's t via the regularized incomplete beta."""
    if t_stat == 0.0:
        return 1.0
    x = dof / (dof + t_stat * t_stat)
    return float(betainc(dof / 2.0, 0.5, x))


def format_report(report: MetricReport) -> str:
    """Aligned text table: one row per topic plus the mean row."""
    metrics = list(METRICS)
    header = ["topic"] + metrics
    rows = [[str(t)] + [f"{report.per_topic[t][m]:.4f}" for m in metrics]
            for t in sorted(report.per_topic)]
    rows.append(["mean"] + [f"{report.means[m]:.4f}" for m in metrics])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def report_tsv(report: MetricReport) -> str:
    metrics = list(METRICS)
    lines = ["topic\t" + "\t".join(metrics)]
    for t in sorted(report.per_topic):
        lines.append(str(t) + "\t" + "\t".join(f"{report.per_topic[t][m]:.6f}" for m in metrics))
    lines.append("mean\t" + "\t".join(f"{report.means[m]:.6f}" for m in metrics))
    return "\n".join(lines) + "\n"


def format_comparison(baseline: MetricReport, candidates: list[MetricReport],
                      m: int | None = None) -> str:
    """Comparison table, one row per run; dagger marks Bonferroni-corrected
    significance against the baseline (m = number of candidate rows)."""
    m = m if m is not None else len(candidates)
    metrics = list(METRICS)
    header = ["run"] + metrics + ["min-p"]
    rows = [[baseline.run_tag] + [f"{baseline.means[x]:.3f}" for x in metrics] + ["-"]]
    for cand in candidates:
        cells = [cand.run_tag]
        min_p = 1.0
        for metric in metrics:
            res = paired_ttest(cand.topic_vector(metric),
                               baseline.topic_vector(metric), m=m)
            min_p = min(min_p, res.p_bonferroni)
            mark = "†" if res.significant_at_05 else ""
            cells.append(f"{cand.means[metric]:.3f}{mark}")
        cells.append(f"{min_p:.4f}")
        rows.append(cells)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    lines.append(f"(†: paired t-test vs {baseline.run_tag}, "
                 f"Bonferroni m={m}, alpha=0.05)")
    return "\n".join(lines)
