"""Command-line interface. Every command prints JSON to stdout.

State lives in ``--data-dir`` (pages, summaries, pending findings) and is
reloaded by each invocation, so commands compose across processes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .engine import Engine, EngineConfig, load_questions, load_transcript, read_records, write_records
from .errors import MemoryEngineError
from .evaluation import (
    compute_metrics,
    counterfactual_matrix,
    judge_records,
    replay,
    two_path_run,
    write_metrics,
    hindsight_labels,
)
from .writeback import EpochLog, VARIANTS, apply_epoch_batch


def _engine(args) -> Engine:
    config = EngineConfig.load(args.config) if args.config else EngineConfig()
    if args.mock_script:
        config.backend, config.mock_script = "mock", args.mock_script
    return Engine.load(args.data_dir, config)


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_ingest(args) -> int:
    engine = _engine(args)
    result = engine.ingest(args.session, load_transcript(args.file), defer_summaries=args.defer)
    engine.save()
    _emit(result)
    return 0


def cmd_ask(args) -> int:
    engine = _engine(args)
    if args.session not in engine.pages.sessions():
        raise MemoryEngineError(f"unknown session {args.session!r}")
    _, rec = engine.answer(args.question, query_id=args.query_id)
    engine.save()
    _emit(rec.to_json())
    return 0


def cmd_run_batch(args) -> int:
    engine = _engine(args)
    questions = load_questions(args.questions)
    engine.epoch = args.epoch
    if args.two_path:
        records = two_path_run(engine, questions)
    else:
        records = engine.run_batch(questions, epoch=args.epoch)
        if args.judge:
            judge_records(engine.gateway, records, engine.config.workers)
    out = Path(args.out)
    write_records(records, out / "records.jsonl")
    if engine.events:
        with open(out / "events.jsonl", "w", encoding="utf-8") as fh:
            for ev in engine.events:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")
    engine.save()
    report = compute_metrics(records, config=engine.config.to_json())
    write_metrics(report, out / "metrics.json")
    _emit({"records": len(records), "r_rate": report.r_rate, "accuracy": report.accuracy,
           "pending_findings": len(engine.findings)})
    return 0


def cmd_consolidate(args) -> int:
    engine = _engine(args)
    if args.log:
        summary = apply_epoch_batch(engine.index, EpochLog.load(args.log), engine.epoch + 1)
    else:
        log, summary = engine.consolidate(args.variant)
        if args.out:
            log.save(Path(args.out) / "epoch_log.jsonl")
    engine.epoch += 1
    engine.save()
    _emit({"epoch": engine.epoch, **summary.to_json()})
    return 0


def cmd_replay(args) -> int:
    engine = _engine(args)
    rows = replay(
        engine,
        load_questions(args.questions),
        args.epochs,
        args.variant,
        consolidate_last=args.consolidate_last,
        out_dir=args.out,
    )
    _emit([r.to_json() for r in rows])
    return 0


def cmd_stats(args) -> int:
    records = read_records(args.records)
    labels = None
    if args.labels:
        labels = {k: v.label for k, v in hindsight_labels(read_records(args.labels)).items()}
    report = compute_metrics(records, labels)
    if args.out:
        out = Path(args.out)
        write_metrics(report, out / "metrics.json")
        (out / "counterfactual.json").write_text(
            json.dumps(counterfactual_matrix(records).to_json(), indent=2, sort_keys=True) + "\n"
        )
    _emit(report.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tiered-memory", description=__doc__)
    p.add_argument("--config", help="engine config (.toml or .json)")
    p.add_argument("--data-dir", default="tm-data", help="state directory (default: %(default)s)")
    p.add_argument("--mock-script", help="mock_script.jsonl; forces the mock backend")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="page a transcript JSONL into memory")
    s.add_argument("--session", required=True)
    s.add_argument("--file", required=True)
    s.add_argument("--defer", action="store_true", help="skip on-seal summaries; summarize at the end")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("ask", help="answer one question")
    s.add_argument("--session", required=True)
    s.add_argument("--question", required=True)
    s.add_argument("--query-id")
    s.set_defaults(func=cmd_ask)

    s = sub.add_parser("run-batch", help="answer a question file with Tier-1 frozen")
    s.add_argument("--questions", required=True)
    s.add_argument("--epoch", type=int, default=1)
    s.add_argument("--out", default=".")
    s.add_argument("--judge", action="store_true", help="judge answers against gold_answer")
    s.add_argument("--two-path", action="store_true", help="also run both S and R paths per query")
    s.set_defaults(func=cmd_run_batch)

    s = sub.add_parser("consolidate", help="write pending findings into Tier-1")
    s.add_argument("--variant", choices=VARIANTS, default="retrieve-edit")
    s.add_argument("--log", help="replay a saved epoch_log.jsonl instead")
    s.add_argument("--out")
    s.set_defaults(func=cmd_consolidate)

    s = sub.add_parser("replay", help="multi-epoch replay with between-epoch write-back; runs on an in-memory copy and leaves --data-dir unchanged")
    s.add_argument("--questions", required=True)
    s.add_argument("--epochs", type=int, default=3)
    s.add_argument("--variant", choices=VARIANTS, default="retrieve-edit")
    s.add_argument("--consolidate-last", action="store_true")
    s.add_argument("--out", default="replay")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("stats", help="metrics from records.jsonl")
    s.add_argument("--records", required=True)
    s.add_argument("--labels", help="two-path records.jsonl used as hard-case oracle")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (MemoryEngineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
