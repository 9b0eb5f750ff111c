"""Command-line entry point: build, query, eval, stats, serve.

Exit codes: 0 success, 1 usage error (bad arguments, missing files),
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from factrag.config import load_config
from factrag.engine import Engine
from factrag.evaluation import load_dataset, run_eval
from factrag.extraction import ConfigError
from factrag.gateway import report_metrics


class UsageError(Exception):
    pass


def _flag_overrides(args: argparse.Namespace) -> dict:
    overrides: dict = {}
    if getattr(args, "store", None):
        overrides["store_dir"] = args.store
    if getattr(args, "provider", None):
        overrides["provider_kind"] = args.provider
    if getattr(args, "mock_script", None):
        overrides["mock_script"] = args.mock_script
    for flag, key in (
        ("k_entities", "retrieval.k_entities"),
        ("k_hyperedges", "retrieval.k_hyperedges"),
        ("k_chunks", "retrieval.k_chunks"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return overrides


def _engine(args: argparse.Namespace) -> Engine:
    config = load_config(args.config, overrides=_flag_overrides(args))
    return Engine(config)


def _require_store(engine: Engine) -> None:
    if not engine.store.graph.hyperedges and not engine.store.chunks:
        raise UsageError(
            f"store at {engine.config.store_dir} is empty; run 'factrag build' first"
        )


def cmd_build(args: argparse.Namespace) -> int:
    corpus = Path(args.corpus)
    if not corpus.exists():
        raise UsageError(f"corpus path {corpus} does not exist")
    engine = _engine(args)
    report = engine.build(corpus)
    if report.documents == 0:
        print("warning: corpus is empty; store unchanged", file=sys.stderr)
    print(f"documents:        {report.documents}")
    print(f"chunks total:     {report.chunks_total}")
    print(f"chunks processed: {report.chunks_processed}")
    print(f"chunks skipped:   {report.chunks_skipped}")
    print(f"chunks failed:    {report.chunks_failed}")
    print(f"facts extracted:  {report.facts}")
    print(f"entities:         {report.entities}")
    print(f"hyperedges:       {report.hyperedges}")
    print(f"incidences:       {report.incidences}")
    for name, value in sorted(report.metrics.items()):
        print(f"{name}: {value:.6f}")
    if args.verbose:
        for line in report.diagnostics:
            print(f"diag: {line}", file=sys.stderr)
    return 0


def cmd_query(args: argparse.Namespace) -> int:
    engine = _engine(args)
    _require_store(engine)
    outcome = engine.answer(args.question)
    if args.json:
        print(
            json.dumps(
                {
                    "ok": True,
                    "data": {
                        "answer": outcome.result.answer,
                        "reasoning": outcome.result.reasoning,
                        "facts": [
                            {
                                "id": a.fact.hyperedge.id,
                                "description": a.fact.hyperedge.description,
                                "score": a.score,
                                "via": sorted(a.via),
                            }
                            for a in outcome.bundle.facts
                        ],
                    },
                    "error": None,
                    "usage": outcome.usage,
                },
                ensure_ascii=False,
            )
        )
        return 0
    if args.trace:
        if outcome.query_entities is not None:
            print(f"query entities: {outcome.query_entities.entities}")
        print("entity hits:")
        for hit in outcome.entity_hits:
            ent = engine.store.graph.entities[hit.id]
            print(f"  {hit.rank:>3} {hit.combined:10.4f} {ent.name}")
        print("hyperedge hits:")
        for hit in outcome.hyperedge_hits:
            edge = engine.store.graph.hyperedges[hit.id]
            print(f"  {hit.rank:>3} {hit.combined:10.4f} {edge.description}")
        print("fused bundle:")
        for admitted in outcome.bundle.facts:
            print(f"  [{'/'.join(sorted(admitted.via))}] {admitted.fact.hyperedge.description}")
        for chunk in outcome.bundle.chunks:
            print(f"  [chunk {chunk.similarity:.3f}] {chunk.text[:80]}")
        print(f"usage: {outcome.usage}")
        print()
    print(outcome.result.answer)
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    engine = _engine(args)
    stats = engine.stats()
    if args.dot:
        Path(args.dot).write_text(engine.to_dot(), encoding="utf-8")
        print(f"wrote graph description to {args.dot}")
    print(f"entities:         {stats['entities']}")
    print(f"hyperedges:       {stats['hyperedges']}")
    print(f"incidences:       {stats['incidences']}")
    print(f"chunks:           {stats['chunks']}")
    print(f"knowledge tokens: {stats['knowledge_tokens']}")
    print("arity histogram:")
    for arity, count in stats["arity_histogram"].items():
        print(f"  {arity}: {count}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    dataset_path = Path(args.dataset)
    if not dataset_path.exists():
        raise UsageError(f"dataset file {dataset_path} does not exist")
    engine = _engine(args)
    _require_store(engine)
    dataset = load_dataset(dataset_path)
    report = run_eval(dataset, engine, limit=args.limit)
    out_path = Path(args.output) if args.output else dataset_path.with_suffix(".report.json")
    out_path.write_text(report.to_json(), encoding="utf-8")
    print(report.table())
    print(f"report written to {out_path}")
    query_count = len(report.items)
    metrics = report_metrics(
        engine.gateway.meter.by_phase("generation"), query_count=query_count
    )
    for name, value in sorted(metrics.items()):
        print(f"{name}: {value:.6f}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from factrag.server import create_app

    engine = _engine(args)
    _require_store(engine)
    app = create_app(engine)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except SystemExit as exc:  # port bind failure surfaces here
        return 2 if exc.code else 0
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="factrag",
        description="Retrieval-augmented generation over n-ary relational facts",
    )
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--store", help="store directory (overrides config)")
    parser.add_argument("--provider", choices=["mock", "openai"], help="provider kind")
    parser.add_argument("--mock-script", dest="mock_script", help="mock chat script JSON")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="build the knowledge store from a corpus")
    p_build.add_argument("corpus", help="corpus directory or JSON-lines file")
    p_build.set_defaults(func=cmd_build)

    p_query = sub.add_parser("query", help="answer a question against the store")
    p_query.add_argument("question")
    p_query.add_argument("--trace", action="store_true", help="print retrieval trace")
    p_query.add_argument("--json", action="store_true", help="machine-readable output")
    for flag in ("--k-entities", "--k-hyperedges", "--k-chunks"):
        p_query.add_argument(flag, type=int, dest=flag.lstrip("-").replace("-", "_"))
    p_query.set_defaults(func=cmd_query)

    p_stats = sub.add_parser("stats", help="print store statistics")
    p_stats.add_argument("--dot", help="also write a DOT graph description file")
    p_stats.set_defaults(func=cmd_stats)

    p_eval = sub.add_parser("eval", help="run the evaluation harness")
    p_eval.add_argument("dataset", help="JSON-lines dataset file")
    p_eval.add_argument("--limit", type=int, help="evaluate only the first N items")
    p_eval.add_argument("--output", help="report JSON path")
    p_eval.set_defaults(func=cmd_eval)

    p_serve = sub.add_parser("serve", help="run the HTTP query service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
