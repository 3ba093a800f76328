"""Operator command line: validate / annotate / evaluate / run / resume /
report / serve.

Run configs are plain ``key = value`` text files mirroring RunConfig
fields (see docs/run_config.md); command-line flags override file values.
Domain errors exit 1 with a one-line diagnostic on stderr; usage errors
exit 2.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .corpus import (
    Category,
    Corpus,
    CorpusError,
    load_corpus,
    parse_pubtator,
    serialize_pubtator,
)
from .factors import ALL_FACTORS
from .gateway import BackendConfig, Gateway, GatewayError
from .guidelines import GuidelineError, parse_guideline
from .metrics import ALL_MODES, match_annotations, micro_prf, per_category_scores, score
from .moderation import (
    ModerationError,
    ModerationReport,
    ReportItem,
    RunConfig,
    classify_report_factors,
    load_record,
    resume_run,
    run_loop,
)
from .prompting import PromptingError, build_annotator_prompt, parse_annotator_output
from .runstore import RunStoreError
from .tables import category_table, format_score, overall_table

_DOMAIN_ERRORS = (
    CorpusError,
    GuidelineError,
    GatewayError,
    PromptingError,
    ModerationError,
    RunStoreError,
    OSError,
    ValueError,
)


def _cmd_validate(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    print(f"{corpus.n_documents} documents, {corpus.n_annotations} mentions")
    return 0


def _backend_from_args(args: argparse.Namespace) -> BackendConfig:
    return BackendConfig(
        kind=args.backend,
        model=args.model,
        endpoint=args.endpoint,
        cassette_path=args.cassette,
        temperature=args.temperature,
    )


def _cmd_annotate(args: argparse.Namespace) -> int:
    corpus = load_corpus([args.corpus])
    guideline = None
    if args.mode == "guideline":
        if not args.guideline:
            raise ValueError("--mode guideline requires --guideline <path>")
        guideline = parse_guideline(Path(args.guideline).read_text(encoding="utf-8"))
    gateway = Gateway(_backend_from_args(args))
    predicted = Corpus()
    total_warnings = 0
    for doc in corpus.documents:
        prompt = build_annotator_prompt(doc, guideline)
        parsed = parse_annotator_output(gateway.complete(prompt), doc)
        predicted.documents.append(doc)
        predicted.gold[doc.doc_id] = list(parsed.annotations)
        total_warnings += len(parsed.warnings)
        for raw, reason in parsed.warnings:
            print(f"warning: doc {doc.doc_id}: {reason}: {raw}", file=sys.stderr)
    text = serialize_pubtator(predicted)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(
            f"annotated {corpus.n_documents} documents "
            f"({predicted.n_annotations} mentions, {total_warnings} warnings) -> {args.out}",
            file=sys.stderr,
        )
    else:
        sys.stdout.write(text)
    return 0


def _evaluate_tables(pred: Corpus, gold: Corpus, fmt: str) -> str:
    doc_ids = [doc.doc_id for doc in gold.documents]
    missing = [d for d in doc_ids if not any(p.doc_id == d for p in pred.documents)]
    if missing:
        raise ValueError(f"prediction file lacks documents: {', '.join(missing[:5])}")
    overall = {}
    for mode in ALL_MODES:
        per_doc = [
            score(match_annotations(list(pred.gold.get(d, [])), list(gold.gold.get(d, [])), mode))
            for d in doc_ids
        ]
        overall[mode] = micro_prf(per_doc)
    by_category = {
        cat: {} for cat in Category
    }
    for mode in ALL_MODES:
        for cat in Category:
            parts = []
            for d in doc_ids:
                scores = per_category_scores(
                    list(pred.gold.get(d, [])), list(gold.gold.get(d, [])), mode
                )
                parts.append(scores[cat])
            by_category[cat][mode] = micro_prf(parts)
    lines = [
        f"Documents: {len(doc_ids)}  Predicted mentions: {pred.n_annotations}  "
        f"Gold mentions: {gold.n_annotations}",
        "",
        overall_table([("Predictions", overall)], fmt=fmt).rstrip("\n"),
        "",
        category_table(by_category, fmt=fmt).rstrip("\n"),
        "",
    ]
    return "\n".join(lines)


def _cmd_evaluate(args: argparse.Namespace) -> int:
    pred = parse_pubtator(Path(args.pred).read_text(encoding="utf-8"))
    gold = parse_pubtator(Path(args.gold).read_text(encoding="utf-8"))
    sys.stdout.write(_evaluate_tables(pred, gold, args.format))
    return 0


def _parse_run_config_file(path: str) -> dict:
    values: dict[str, object] = {}
    corpus_paths: list[str] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "corpus":
            corpus_paths.append(value)
        else:
            values[key] = value
    values["corpus_paths"] = corpus_paths
    return values


_TRUE = {"1", "true", "yes", "on"}


def _build_run_config(args: argparse.Namespace) -> RunConfig:
    values = _parse_run_config_file(args.config)

    def pick(flag, key, default=None, cast=str):
        if flag is not None:
            return flag
        if key in values:
            return cast(values[key])
        return default

    corpus_paths = list(values.get("corpus_paths") or [])
    if args.corpus:
        corpus_paths = list(args.corpus)
    if not corpus_paths:
        raise ValueError("no corpus files: add 'corpus = <path>' lines or --corpus")
    guideline = pick(args.guideline, "guideline")
    if not guideline:
        raise ValueError("no guideline file: add 'guideline = <path>' or --guideline")
    backend = BackendConfig(
        kind=pick(args.backend, "backend", "replay"),
        model=pick(args.model, "model", "gpt-4o"),
        endpoint=pick(args.endpoint, "endpoint"),
        cassette_path=pick(args.cassette, "cassette"),
        temperature=pick(args.temperature, "temperature", 0.0, float),
    )
    return RunConfig(
        corpus_paths=tuple(corpus_paths),
        guideline_path=guideline,
        backend=backend,
        run_root=pick(args.root, "run_root", "runs"),
        run_id=pick(args.run_id, "run_id"),
        batch_size=pick(args.batch_size, "batch_size", 5, int),
        gate_threshold=pick(args.threshold, "threshold", 0.8, float),
        max_iterations_per_batch=pick(args.max_iterations, "max_iterations", 3, int),
        review_mode=pick(args.review, "review", "auto"),
        seed=pick(args.seed, "seed", 0, int),
        use_guidelines=pick(
            None if args.prompt_mode is None else args.prompt_mode == "guideline",
            "use_guidelines",
            True,
            lambda v: str(v).lower() in _TRUE,
        ),
        gate_aggregation=pick(args.gate_aggregation, "gate_aggregation", "macro"),
    )


def _print_trajectory(record) -> None:
    print(f"run {record.run_id}: {record.status}")
    for it in record.iterations:
        marks = []
        if it.report is not None:
            marks.append("report")
        if it.applied_revision_version:
            marks.append(f"revision -> {it.applied_revision_version[:12]}")
        if it.review_decision:
            marks.append(f"review: {it.review_decision}")
        if it.partial:
            marks.append("partial")
        suffix = f"  [{', '.join(marks)}]" if marks else ""
        print(
            f"  batch {it.batch_index} iteration {it.iteration_index}: "
            f"gate {format_score(it.gate_value)} "
            f"(guideline {it.guideline_version[:12]}){suffix}"
        )


def _cmd_run(args: argparse.Namespace) -> int:
    config = _build_run_config(args)
    record = run_loop(config)
    _print_trajectory(record)
    if record.status == "AwaitingReview":
        print(
            f"awaiting review: resume with the console or "
            f"'gforge resume {record.run_id} --root {config.run_root}' after deciding"
        )
    return 0


def _cmd_resume(args: argparse.Namespace) -> int:
    record = resume_run(args.root, args.run_id)
    _print_trajectory(record)
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    record = load_record(args.root, args.run_id)
    _print_trajectory(record)
    items: list[ReportItem] = []
    for it in record.iterations:
        if it.report is not None:
            items.extend(it.report.items)
    if not items:
        print("no moderation reports in this run")
        return 0
    combined = ModerationReport(
        items=tuple(items), proposed_revision=record.iterations[0].report.proposed_revision
    )
    distribution = classify_report_factors(combined)
    print()
    print(f"influencing factors over {len(items)} report items:")
    for name in ALL_FACTORS:
        share = distribution[name]
        if share > 0:
            print(f"  {name}: {format_score(share)}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    serve(
        args.root,
        host=args.host,
        port=args.port,
        read_only=args.read_only,
        console_dir=args.console_dir,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gforge",
        description="LLM annotation workbench with moderation-driven guideline revision",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse corpora and print document/mention counts")
    p.add_argument("corpus", nargs="+", help="PubTator file(s)")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("annotate", help="one-shot annotation pass over a corpus file")
    p.add_argument("corpus")
    p.add_argument("--mode", choices=["baseline", "guideline"], default="baseline")
    p.add_argument("--guideline", help="guideline text file (guideline mode)")
    p.add_argument("--backend", choices=["live", "replay", "record"], default="replay")
    p.add_argument("--cassette", help="cassette path for replay/record")
    p.add_argument("--endpoint", help="chat-completion endpoint URL (live/record)")
    p.add_argument("--model", default="gpt-4o")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--out", help="write predictions to this file instead of stdout")
    p.set_defaults(func=_cmd_annotate)

    p = sub.add_parser("evaluate", help="score predictions against gold under all criteria")
    p.add_argument("pred")
    p.add_argument("gold")
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("run", help="run the moderation loop from a config file")
    p.add_argument("config")
    p.add_argument("--corpus", nargs="*", help="override corpus files")
    p.add_argument("--guideline")
    p.add_argument("--backend", choices=["live", "replay", "record"])
    p.add_argument("--cassette")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--threshold", type=float)
    p.add_argument("--max-iterations", type=int, dest="max_iterations")
    p.add_argument("--review", choices=["auto", "hitl"])
    p.add_argument("--mode", choices=["baseline", "guideline"], dest="prompt_mode")
    p.add_argument("--gate-aggregation", choices=["macro", "micro"], dest="gate_aggregation")
    p.add_argument("--root", help="run store root")
    p.add_argument("--run-id", dest="run_id")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("resume", help="continue a persisted run")
    p.add_argument("run_id")
    p.add_argument("--root", default="runs")
    p.set_defaults(func=_cmd_resume)

    p = sub.add_parser("report", help="trajectory summary and factor distribution")
    p.add_argument("run_id")
    p.add_argument("--root", default="runs")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("serve", help="serve the HTTP API and console")
    p.add_argument("--root", default="runs")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--read-only", action="store_true")
    p.add_argument("--console-dir", help="directory of built console assets")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _DOMAIN_ERRORS as exc:
        print(f"gforge {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
