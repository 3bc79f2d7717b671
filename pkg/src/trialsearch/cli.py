"""Operator surface: index building, query generation, retrieval,
evaluation, comparison and cache management.

Every experiment decomposes into a command sequence with no hidden state
beyond declared output files and the cache directory; replay-mode reruns
are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import corpus, evaluation, parsing
from .gateway import Gateway, GatewayError, ReplayMissError, ResponseCache
from .index import WeightedQuery, build_index, load_index, retrieve, save_index
from .negation import AssertionProviderError, nriemt_pipeline
from .prompts import PromptConfigError, get_strategy
from .rm3 import RM3Config, expand_rm3
from .textproc import load_stopwords, process

EXPERIMENTS = ("QGMT", "QGGT", "IEG", "IEMT", "IEMDMT", "NRIEMT",
               "FEWSHOT_QG", "TRIAL_TOPIC_GEN", "EXPLICIT_EXPAND")


class ConfigError(ValueError):
    pass


def load_config_file(path: str | None) -> dict:
    """Flat `key = value` config file; later flags override these values."""
    if not path:
        return {}
    values = {}
    try:
        lines = Path(path).read_text("utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        body = line.strip()
        if not body or body.startswith("#"):
            continue
        if "=" not in body:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = body.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, config: dict, key: str, default=None):
    value = getattr(args, key, None)
    if value is None:
        value = config.get(key, default)
    return value


def _as_bool(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return bool(value)


def _config_hash(parts: dict) -> str:
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:8]


def _make_gateway(args, config) -> Gateway:
    mode = _resolve(args, config, "mode", "replay")
    cache_dir = _resolve(args, config, "cache_dir")
    if cache_dir is None:
        raise ConfigError("--cache-dir is required")
    return Gateway(mode=mode, cache=ResponseCache(cache_dir),
                   model=_resolve(args, config, "model", "") or "")


def cmd_index(args) -> int:
    config = load_config_file(args.config)
    corpus_path = _resolve(args, config, "corpus")
    out = _resolve(args, config, "out")
    if not corpus_path or not out:
        raise ConfigError("index requires --corpus and --out")
    trials = corpus.load_trials(corpus_path, fmt=_resolve(args, config, "format", "auto"))
    if not trials:
        raise ConfigError(f"no trials loaded from {corpus_path}")
    stopwords = load_stopwords(_resolve(args, config, "stopwords"))
    index = build_index(trials, stopwords)
    save_index(index, out)
    print(f"indexed {index.N} trials -> {out} (avgdl {index.avg_doc_length:.2f})")
    return 0


def _generate_for_topic(experiment: str, gateway: Gateway, topic, args, config,
                        audit_dir: Path | None = None):
    """Run one experiment's conversations for one topic.

    Returns {variant_name: keyword list}.
    """
    role_override = _resolve(args, config, "system_role_override")
    if experiment == "NRIEMT":
        artifacts = nriemt_pipeline(
            topic.text, gateway,
            provider=_resolve(args, config, "assertion_provider", "rules"),
            endpoint=_resolve(args, config, "assertion_endpoint", ""),
            fallback_rules=_as_bool(_resolve(args, config, "fallback_rules", False)),
            scrub_triggers=_as_bool(_resolve(args, config, "scrub_triggers", False)),
        )
        if audit_dir is not None:
            audit_dir.mkdir(parents=True, exist_ok=True)
            audit = {
                "topic": topic.id,
                "tagged_reply": artifacts.tagged_reply,
                "spans": [list(s) for s in artifacts.tagged_note.spans],
                "span_texts": artifacts.tagged_note.span_texts(),
                "assertions": [{"label": a.label, "confidence": a.confidence}
                               for a in artifacts.assertions],
                "cleaned_note": artifacts.cleaned_note,
                "extraction_reply": artifacts.extraction_reply,
                "keywords": artifacts.keywords,
            }
            (audit_dir / f"topic_{topic.id}.json").write_text(
                json.dumps(audit, indent=1, sort_keys=True), "utf-8")
        return {"NRIEMT": artifacts.keywords}

    strategy = get_strategy("QGGT" if experiment == "QGGT" else experiment)
    replies = gateway.run_conversation(strategy, topic.text, role_override)
    if experiment == "QGGT":
        initial = parsing.parse_bracketed(replies[0], "[query_keywords]").text
        refined = parsing.parse_bracketed(replies[0], "[query_keywords_expanded]").text
        return {
            "QGGT-initial": [initial],
            "QGGT-refined": [refined],
            "QGGT-combined": [initial, refined],
        }
    if experiment == "IEG":
        extracted = parsing.parse_keyword_list(replies[0])
        expanded = parsing.parse_keyword_list(replies[1])
        return {
            "IEG-extracted": extracted,
            "IEG-expanded": expanded,
            "IEG-combined": extracted + expanded,
        }
    if experiment == "IEMDMT":
        record = parsing.parse_patient_record(replies[0])
        fields = _resolve(args, config, "fields")
        field_list = tuple(f.strip() for f in fields.split(",")) if fields \
            else parsing.DEFAULT_QUERY_FIELDS
        include_mesh = not bool(getattr(args, "no_include_mesh", False))
        keywords = parsing.synthesize_record_query(record, field_list, include_mesh)
        return {"IEMDMT": keywords}
    return {experiment: parsing.parse_keyword_list(replies[0])}


def cmd_genqueries(args) -> int:
    config = load_config_file(args.config)
    topics_path = _resolve(args, config, "topics")
    out_dir = _resolve(args, config, "out")
    if not topics_path or not out_dir:
        raise ConfigError("genqueries requires --topics and --out")
    experiments = [s.strip().upper() for s in args.strategy.split(",")]
    for exp in experiments:
        if exp not in EXPERIMENTS:
            raise ConfigError(f"unknown strategy {exp!r} (choose from {EXPERIMENTS})")
    gateway = _make_gateway(args, config)
    topics = corpus.load_topics(topics_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for exp in experiments:
        per_variant: dict[str, dict[int, list[str]]] = {}
        audit_dir = out / "nriemt_audit" if exp == "NRIEMT" else None
        for topic in topics:
            variants = _generate_for_topic(exp, gateway, topic, args, config,
                                           audit_dir=audit_dir)
            for variant, keywords in variants.items():
                per_variant.setdefault(variant, {})[topic.id] = keywords
        for variant, queries in sorted(per_variant.items()):
            path = out / f"queries_{variant}.tsv"
            parsing.write_sidecar(path, variant, queries)
            print(f"wrote {path} ({len(queries)} topics)")
    return 0


def _queries_from_args(args, config, stopwords):
    """Resolve the query source into {topic: WeightedQuery} plus a tag."""
    sidecar = _resolve(args, config, "queries")
    keyword_files = args.keywords or []
    raw = bool(getattr(args, "raw", False))
    scrub_mode = _resolve(args, config, "scrub_clinical_trial", "auto")

    if sidecar:
        strategy, queries = parsing.read_sidecar(sidecar)
        scrub = scrub_mode == "on" or (scrub_mode == "auto" and strategy.startswith("QGGT"))
        out = {}
        for topic, keywords in queries.items():
            terms = parsing.build_query_terms(keywords, stopwords)
            if scrub:
                terms = parsing.scrub_clinical_trial_terms(terms, stopwords)
            out[topic] = WeightedQuery.from_terms(terms)
        return out, strategy or "sidecar"
    if keyword_files:
        loaded = [corpus.load_keyword_queries(f) for f in keyword_files]
        topics = sorted({t for q in loaded for t in q})
        out = {}
        for topic in topics:
            merged = corpus.concat_assessor_queries([q.get(topic, []) for q in loaded])
            terms = parsing.build_query_terms(merged, stopwords)
            if scrub_mode == "on":
                terms = parsing.scrub_clinical_trial_terms(terms, stopwords)
            out[topic] = WeightedQuery.from_terms(terms)
        return out, "keywords"
    if raw:
        topics_path = _resolve(args, config, "topics")
        if not topics_path:
            raise ConfigError("--raw requires --topics")
        out = {}
        for topic in corpus.load_topics(topics_path):
            counts: dict[str, float] = {}
            for term in process(topic.text, stopwords):
                counts[term] = counts.get(term, 0.0) + 1.0
            out[topic.id] = WeightedQuery(counts)
        return out, "bm25-raw"
    raise ConfigError("search needs one of --queries, --keywords or --raw")


def cmd_search(args) -> int:
    config = load_config_file(args.config)
    index_path = _resolve(args, config, "index")
    out_path = _resolve(args, config, "out")
    if not index_path or not out_path:
        raise ConfigError("search requires --index and --out")
    stopwords = load_stopwords(_resolve(args, config, "stopwords"))
    index = load_index(index_path)
    queries, source_tag = _queries_from_args(args, config, stopwords)

    k = int(_resolve(args, config, "k", 1000))
    use_rm3 = bool(getattr(args, "rm3", False)) or _as_bool(config.get("rm3", False))
    cfg = RM3Config(
        fb_docs=int(_resolve(args, config, "fb_docs", 10)),
        fb_terms=int(_resolve(args, config, "fb_terms", 20)),
        lambda_orig=float(_resolve(args, config, "lambda_orig", 0.5)),
    )
    tag_base = _resolve(args, config, "tag") or source_tag
    tag_base += "+RM3" if use_rm3 else ""
    run_tag = f"{tag_base}#{_config_hash({'k': k, 'rm3': use_rm3, 'cfg': cfg.__dict__ if use_rm3 else None, 'source': source_tag})}"

    rankings = []
    for topic_id in sorted(queries):
        query = queries[topic_id]
        if use_rm3 and query.terms:
            query = expand_rm3(index, query, cfg, stopwords)
        hits = retrieve(index, query, k) if query.terms else []
        entries = tuple((doc, score, rank) for rank, (doc, score) in enumerate(hits, 1))
        rankings.append(corpus.RunRanking(topic_id=topic_id, entries=entries,
                                          run_tag=run_tag))
    corpus.write_run(rankings, out_path)
    print(f"wrote {out_path} ({len(rankings)} topics, tag {run_tag})")
    return 0


def cmd_eval(args) -> int:
    config = load_config_file(args.config)
    run_path = _resolve(args, config, "run")
    qrels_path = _resolve(args, config, "qrels")
    if not run_path or not qrels_path:
        raise ConfigError("eval requires --run and --qrels")
    rankings = corpus.read_run(run_path)
    qrels = corpus.load_qrels(qrels_path)
    report = evaluation.evaluate_run(rankings, qrels,
                                     condensed=bool(args.condensed))
    print(evaluation.format_report(report))
    out = _resolve(args, config, "out")
    if out:
        Path(out).write_text(evaluation.report_tsv(report), "utf-8")
        print(f"wrote {out}")
    return 0


def cmd_compare(args) -> int:
    config = load_config_file(args.config)
    qrels = corpus.load_qrels(_resolve(args, config, "qrels"))
    condensed = bool(args.condensed)
    baseline = evaluation.evaluate_run(corpus.read_run(args.baseline), qrels,
                                       condensed=condensed)
    candidates = [evaluation.evaluate_run(corpus.read_run(p), qrels,
                                          condensed=condensed)
                  for p in args.candidates]
    print(evaluation.format_comparison(baseline, candidates, m=len(candidates)))
    return 0


def cmd_cache(args) -> int:
    cache = ResponseCache(args.cache_dir)
    if args.action == "list":
        for key in cache.keys():
            print(key)
        print(f"{len(cache.keys())} cached exchanges")
    elif args.action == "verify":
        bad = cache.verify()
        for key in bad:
            print(f"corrupt: {key}")
        print(f"{len(bad)} corrupt of {len(cache.keys())} entries")
        return 1 if bad else 0
    elif args.action == "gc":
        removed = cache.garbage_collect()
        print(f"removed {len(removed)} entries")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trialsearch",
        description="Clinical trials retrieval experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")

    p = sub.add_parser("index", help="build an inverted index")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--format", choices=("auto", "xml", "flat"))
    p.add_argument("--stopwords")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("genqueries", help="run prompt strategies over topics")
    common(p)
    p.add_argument("--strategy", required=True,
                   help="comma-separated experiment ids, e.g. IEMT,QGMT")
    p.add_argument("--topics")
    p.add_argument("--out")
    p.add_argument("--mode", choices=("live", "record", "replay"))
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--model")
    p.add_argument("--system-role-override", dest="system_role_override")
    p.add_argument("--fields", help="comma-separated record fields for IEMDMT")
    p.add_argument("--no-include-mesh", action="store_true")
    p.add_argument("--assertion-provider", dest="assertion_provider",
                   choices=("rules", "remote"))
    p.add_argument("--assertion-endpoint", dest="assertion_endpoint")
    p.add_argument("--fallback-rules", dest="fallback_rules", action="store_true")
    p.add_argument("--scrub-triggers", dest="scrub_triggers", action="store_true")
    p.set_defaults(func=cmd_genqueries)

    p = sub.add_parser("search", help="retrieve trials for queries")
    common(p)
    p.add_argument("--index")
    p.add_argument("--queries", help="sidecar TSV from genqueries")
    p.add_argument("--keywords", action="append",
                   help="imported keyword-query TSV (repeatable; merged per topic)")
    p.add_argument("--topics")
    p.add_argument("--raw", action="store_true",
                   help="use full topic text as the query")
    p.add_argument("--rm3", action="store_true")
    p.add_argument("--fb-docs", dest="fb_docs", type=int)
    p.add_argument("--fb-terms", dest="fb_terms", type=int)
    p.add_argument("--lambda", dest="lambda_orig", type=float)
    p.add_argument("-k", dest="k", type=int)
    p.add_argument("--tag")
    p.add_argument("--scrub-clinical-trial", dest="scrub_clinical_trial",
                   choices=("auto", "on", "off"))
    p.add_argument("--stopwords")
    p.add_argument("--out")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="score a run against qrels")
    common(p)
    p.add_argument("--run")
    p.add_argument("--qrels")
    p.add_argument("--condensed", action="store_true")
    p.add_argument("--out", help="TSV report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="significance table vs a baseline run")
    common(p)
    p.add_argument("--baseline", required=True)
    p.add_argument("--qrels")
    p.add_argument("--condensed", action="store_true")
    p.add_argument("candidates", nargs="+")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("cache", help="inspect the response cache")
    p.add_argument("action", choices=("list", "verify", "gc"))
    p.add_argument("--cache-dir", dest="cache_dir", required=True)
    p.set_defaults(func=cmd_cache, config=None)

    return parser


_ERROR_CLASSES = (
    (ConfigError, "config-error", 2),
    (PromptConfigError, "config-error", 2),
    (corpus.CorpusFormatError, "format-error", 3),
    (parsing.ParseError, "parse-error", 4),
    (ReplayMissError, "gateway-error", 5),
    (GatewayError, "gateway-error", 5),
    (AssertionProviderError, "gateway-error", 5),
    (OSError, "io-error", 6),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point
        for etype, label, code in _ERROR_CLASSES:
            if isinstance(exc, etype):
                print(f"{label}: {exc}", file=sys.stderr)
                return code
        print(f"internal-error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 7


if __name__ == "__main__":
    sys.exit(main())
