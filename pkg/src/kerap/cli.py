"""``kerap`` command line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from collections.abc import Sequence
from pathlib import Path

from .cohort import load_cohort, synth_cohort, write_cohort
from .config import PipelineConfig
from .evaluation import evaluate, render_table, report
from .gateway import Mode
from .kg_store import ingest
from .pipeline import Pipeline
from .prediction import Strategy

logger = logging.getLogger("kerap")

_RESERVED = set(logging.LogRecord("", 0, "", 0, "", (), None).__dict__) | {"message", "asctime"}


class JsonFormatter(logging.Formatter):
    """One JSON object per line; ``extra=`` fields are merged in."""

    def format(self, record: logging.LogRecord) -> str:
        out = {
            "ts": round(record.created, 3),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        for k, v in record.__dict__.items():
            if k not in _RESERVED and not k.startswith("_"):
                out[k] = v
        if record.exc_info:
            out["exc"] = self.formatException(record.exc_info)
        return json.dumps(out, default=str, ensure_ascii=False)


def setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    logging.getLogger("httpx").setLevel(logging.WARNING)


def _dump(doc, out: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    return cfg.with_overrides(
        mode=Mode(args.mode) if getattr(args, "mode", None) else None,
        cassette=Path(args.cassette) if getattr(args, "cassette", None) else None,
    )


def _write_echo(cfg: PipelineConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.echo.json").write_text(
        json.dumps(cfg.echo(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def cmd_ingest_kg(args) -> int:
    cfg = _config(args)
    store = ingest(cfg.entities, cfg.triples, categories=cfg.categories, on_error="skip" if args.skip_bad_rows else "raise")
    stats = store.stats
    doc = {
        "entities": stats.entities,
        "triples": stats.triples,
        "dangling": stats.dangling,
        "issues": [{"path": i.path, "line": i.line, "message": i.message} for i in stats.issues],
        "predicates": len(store.predicates),
    }
    if args.export_dir:
        out = Path(args.export_dir)
        out.mkdir(parents=True, exist_ok=True)
        store.export(out / "entities.tsv", out / "triples.tsv")
    _dump(doc, args.out)
    return 0


def cmd_link(args) -> int:
    pipe = Pipeline.from_config(_config(args))
    try:
        result = pipe.linker.link(args.mention)
    finally:
        pipe.close()
    _dump(result.to_dict(), args.out)
    return 0


def cmd_retrieve(args) -> int:
    pipe = Pipeline.from_config(_config(args))
    try:
        k = pipe.knowledge(args.disease)
    finally:
        pipe.close()
    _dump({"link": k.link.to_dict(), "bundle": k.bundle.to_dict()}, args.out)
    return 0


def cmd_predict(args) -> int:
    cfg = _config(args)
    cohort = load_cohort(args.cohort)
    pipe = Pipeline.from_config(cfg)
    try:
        outcomes = pipe.predict_cohort(cohort, args.strategy, args.disease)
    finally:
        pipe.close()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    _write_echo(cfg, out.parent)
    logger.info("predictions written", extra={"path": str(out), "count": len(outcomes)})
    return 0


def _strategies(name: str) -> list[Strategy]:
    return list(Strategy) if name == "all" else [Strategy(name)]


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    cohort = load_cohort(args.cohort)
    pipe = Pipeline.from_config(cfg)
    t0 = time.perf_counter()
    try:
        results = [evaluate(pipe, cohort, s, args.runs) for s in _strategies(args.strategy)]
    finally:
        pipe.close()
    settings = {
        "model": cfg.model,
        "temperature": cfg.temperature,
        "candidate_count": cfg.candidate_count,
        "neighborhood_cap": cfg.neighborhood_cap,
        "embedding_provider": cfg.embedding_provider,
        "embedding_dimension": cfg.embedding_dimension,
        "mode": cfg.mode.value,
    }
    if cohort.disease and any(s.uses_kg for s in _strategies(args.strategy)):
        k = pipe.knowledge(cohort.disease)
        settings["linked_entity"] = {"id": k.link.chosen, "name": k.link.chosen_name, "fallback": k.link.fallback}
        settings["knowledge_triples"] = list(k.bundle.source_counts)
    doc, table = report(results, cohort, settings)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    (out / "report.txt").write_text(table, encoding="utf-8")
    _write_echo(cfg, out)
    sys.stdout.write(table)
    logger.info("evaluation finished", extra={"out_dir": str(out), "elapsed_s": round(time.perf_counter() - t0, 3)})
    return 0


def cmd_report(args) -> int:
    docs = [json.loads(Path(p).read_text(encoding="utf-8")) for p in args.input]
    merged = dict(docs[0])
    merged["strategies"] = [row for d in docs for row in d["strategies"]]
    table = render_table(merged)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    else:
        sys.stdout.write(table)
    return 0


def cmd_synth_cohort(args) -> int:
    vocab = [line.strip() for line in Path(args.vocab).read_text(encoding="utf-8").splitlines() if line.strip()]
    risk = []
    if args.risk_vocab:
        risk = [line.strip() for line in Path(args.risk_vocab).read_text(encoding="utf-8").splitlines() if line.strip()]
    cohort = synth_cohort(args.seed, args.n, args.prevalence, vocab, disease=args.disease, risk_vocab=risk)
    write_cohort(cohort, args.out)
    logger.info("cohort written", extra={"path": args.out, "visits": len(cohort), "prevalence": cohort.prevalence})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kerap", description="Knowledge-graph-guided zero-shot diagnosis prediction.")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def with_config(sp, gateway=True):
        sp.add_argument("--config", required=True, help="pipeline YAML config")
        if gateway:
            sp.add_argument("--mode", choices=[m.value for m in Mode], help="override gateway.mode")
            sp.add_argument("--cassette", help="override gateway.cassette")
        return sp

    sp = with_config(sub.add_parser("ingest-kg", help="load the KG files and report counts"), gateway=False)
    sp.add_argument("--skip-bad-rows", action="store_true", help="record malformed rows instead of failing")
    sp.add_argument("--export-dir", help="write the cleaned KG back out as TSV")
    sp.add_argument("--out", help="write stats JSON here instead of stdout")
    sp.set_defaults(func=cmd_ingest_kg)

    sp = with_config(sub.add_parser("link", help="link a disease mention to a KG entity"))
    sp.add_argument("--mention", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_link)

    sp = with_config(sub.add_parser("retrieve", help="link a disease and summarize its KG knowledge"))
    sp.add_argument("--disease", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_retrieve)

    sp = with_config(sub.add_parser("predict", help="predict every visit of a cohort"))
    sp.add_argument("--cohort", required=True)
    sp.add_argument("--disease", help="defaults to the cohort header")
    sp.add_argument("--strategy", required=True, choices=[s.value for s in Strategy])
    sp.add_argument("--out", required=True, help="JSON-lines output path")
    sp.set_defaults(func=cmd_predict)

    sp = with_config(sub.add_parser("evaluate", help="repeated runs with metrics and cost tables"))
    sp.add_argument("--cohort", required=True)
    sp.add_argument("--strategy", default="all", choices=[s.value for s in Strategy] + ["all"])
    sp.add_argument("--runs", type=int, default=5)
    sp.add_argument("--out-dir", default="out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="re-render report.json file(s) as a text table")
    sp.add_argument("--input", required=True, nargs="+")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("synth-cohort", help="write a seeded synthetic cohort")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--prevalence", type=float, required=True)
    sp.add_argument("--vocab", required=True, help="text file, one attribute per line")
    sp.add_argument("--risk-vocab", help="text file of attributes enriched among positives")
    sp.add_argument("--disease", default="Post-stroke cognitive impairment")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth_cohort)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    setup_logging(args.log_level)
    try:
        return args.func(args)
    except Exception as exc:
        logger.error("command failed", extra={"command": args.command, "error": f"{type(exc).__name__}: {exc}"})
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
