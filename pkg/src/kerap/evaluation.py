"""Accuracy / weighted-F1 scoring, repeated runs, and comparison tables."""

from __future__ import annotations

import logging
import math
import statistics
import time
from collections.abc import Sequence
from dataclasses import dataclass, field

from .cohort import Cohort
from .gateway import CostReport, PricingTable, TokenUsage, meter
from .prediction import PredictionOutcome, Strategy, Verdict
from .templates import TEMPLATE_VERSION

logger = logging.getLogger(__name__)

STD_NOTE = "std is the sample standard deviation (denominator R-1; 0 when R=1)"
TIME_NOTE = "time is the summed per-call LLM latency (recorded latency under replay)"


class InvalidInputError(ValueError):
    pass


class EvaluationError(RuntimeError):
    def __init__(self, run_index: int, cause: BaseException) -> None:
        super().__init__(f"run {run_index} failed: {cause}")
        self.run_index = run_index


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _f1(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class RunMetrics:
    accuracy: float
    f1_weighted: float
    confusion: Confusion
    usage: TokenUsage = field(default_factory=TokenUsage)
    wall_time: float = 0.0
    call_time: float = 0.0
    run_index: int = 0
    unlabeled: int = 0
    parse_fallbacks: int = 0

    def to_dict(self) -> dict:
        c = self.confusion
        return {
            "run": self.run_index,
            "accuracy": self.accuracy,
            "f1_weighted": self.f1_weighted,
            "confusion": {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn},
            "unlabeled": self.unlabeled,
            "parse_fallbacks": self.parse_fallbacks,
            "usage": self.usage.to_dict(),
        }


def score(outcomes: Sequence[PredictionOutcome], cohort: Cohort) -> RunMetrics:
    """Accuracy and support-weighted F1 over the labeled visits of ``cohort``.

    YES is the positive class. Unlabeled visits are skipped and counted.
    """
    by_id: dict[str, PredictionOutcome] = {}
    for o in outcomes:
        if o.visit_id in by_id:
            raise InvalidInputError(f"duplicate outcome for visit {o.visit_id!r}")
        by_id[o.visit_id] = o
    tp = fp = tn = fn = unlabeled = 0
    for v in cohort.visits:
        if v.label is None:
            unlabeled += 1
            continue
        o = by_id.get(v.visit_id)
        if o is None:
            raise InvalidInputError(f"no outcome for labeled visit {v.visit_id!r}")
        yes = o.final is Verdict.YES
        if v.label:
            tp, fn = tp + yes, fn + (not yes)
        else:
            fp, tn = fp + yes, tn + (not yes)
    n = tp + fp + tn + fn
    if n == 0:
        raise InvalidInputError("cohort has no labeled visits")
    if unlabeled:
        logger.warning("unlabeled visits excluded from metrics", extra={"unlabeled": unlabeled})
    n_pos, n_neg = tp + fn, tn + fp
    f1_pos = _f1(tp, fp, fn)
    f1_neg = _f1(tn, fn, fp)
    return RunMetrics(
        accuracy=(tp + tn) / n,
        f1_weighted=(n_pos * f1_pos + n_neg * f1_neg) / n,
        confusion=Confusion(tp, fp, tn, fn),
        usage=TokenUsage.sum(o.usage for o in outcomes),
        call_time=math.fsum(o.latency_s for o in outcomes),
        unlabeled=unlabeled,
        parse_fallbacks=sum(o.parse_fallbacks for o in outcomes),
    )


def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    if len(xs) == 1:
        return xs[0], 0.0
    return statistics.fmean(xs), statistics.stdev(xs)


@dataclass(frozen=True)
class AggregateMetrics:
    runs: tuple[RunMetrics, ...]

    def __post_init__(self) -> None:
        if not self.runs:
            raise InvalidInputError("at least one run is required")

    @property
    def repetitions(self) -> int:
        return len(self.runs)

    @property
    def accuracy(self) -> tuple[float, float]:
        return _mean_std([r.accuracy for r in self.runs])

    @property
    def f1_weighted(self) -> tuple[float, float]:
        return _mean_std([r.f1_weighted for r in self.runs])


@dataclass(frozen=True)
class StrategyResult:
    strategy: Strategy
    metrics: AggregateMetrics
    cost: CostReport
    knowledge_cost: CostReport | None = None
    outcomes: tuple[PredictionOutcome, ...] = ()


def evaluate(pipeline, cohort: Cohort, strategy: Strategy | str, runs: int = 5) -> StrategyResult:
    """Run ``strategy`` over ``cohort`` ``runs`` times and aggregate.

    Any failing run aborts the whole evaluation with :class:`EvaluationError`.
    ``outcomes`` holds the final run's outcomes.
    """
    if runs < 1:
        raise InvalidInputError("runs must be >= 1")
    strategy = Strategy(strategy)
    pricing = pipeline.pricing or PricingTable({})
    model = pipeline.cfg.model
    results: list[RunMetrics] = []
    usages: list[TokenUsage] = []
    call_time = 0.0
    outcomes: list[PredictionOutcome] = []
    for r in range(runs):
        t0 = time.perf_counter()
        try:
            outcomes = pipeline.predict_cohort(cohort, strategy)
            m = score(outcomes, cohort)
        except Exception as exc:
            raise EvaluationError(r, exc) from exc
        wall = time.perf_counter() - t0
        results.append(
            RunMetrics(m.accuracy, m.f1_weighted, m.confusion, m.usage, wall, m.call_time, r, m.unlabeled, m.parse_fallbacks)
        )
        usages.extend(o.usage for o in outcomes)
        call_time += m.call_time
        logger.info(
            "run finished",
            extra={"strategy": strategy.value, "run": r, "accuracy": m.accuracy, "f1": m.f1_weighted, "wall_s": round(wall, 3)},
        )
    cost = meter(usages, pricing, model, round(call_time, 6))
    knowledge_cost = None
    if strategy.uses_kg:
        k = pipeline.knowledge(cohort.disease)
        knowledge_cost = meter([k.usage], pricing, model, 0.0)
    return StrategyResult(strategy, AggregateMetrics(tuple(results)), cost, knowledge_cost, tuple(outcomes))


def format_pct(mean: float, std: float) -> str:
    """``0.724415, 0.0071`` -> ``"72.44±0.71"``."""
    return f"{mean * 100:.2f}±{std * 100:.2f}"


def report(results: Sequence[StrategyResult], cohort: Cohort | None = None, settings: dict | None = None) -> tuple[dict, str]:
    """Machine-readable report plus an aligned text table."""
    if not results:
        raise InvalidInputError("at least one strategy result is required")
    rows = []
    for res in results:
        acc, f1 = res.metrics.accuracy, res.metrics.f1_weighted
        row = {
            "strategy": res.strategy.value,
            "runs": res.metrics.repetitions,
            "accuracy": {"mean": acc[0], "std": acc[1], "formatted": format_pct(*acc)},
            "f1_weighted": {"mean": f1[0], "std": f1[1], "formatted": format_pct(*f1)},
            "cost": _cost_dict(res.cost),
            "knowledge_cost": _cost_dict(res.knowledge_cost) if res.knowledge_cost else None,
            "per_run": [r.to_dict() for r in res.metrics.runs],
        }
        rows.append(row)
    doc = {
        "template_version": TEMPLATE_VERSION,
        "settings": settings or {},
        "cohort": _cohort_dict(cohort) if cohort else None,
        "strategies": rows,
        "notes": [STD_NOTE, TIME_NOTE],
    }
    return doc, render_table(doc)


def _cost_dict(c: CostReport) -> dict:
    return {
        "prompt_tokens": c.prompt_tokens,
        "completion_tokens": c.completion_tokens,
        "total_tokens": c.total_tokens,
        "token_cost": round(c.token_cost, 10),
        "time_s": c.wall_time,
    }


def _cohort_dict(cohort: Cohort) -> dict:
    return {
        "disease": cohort.disease,
        "visits": len(cohort),
        "labeled": len(cohort.labeled),
        "prevalence": cohort.prevalence,
    }


def render_table(doc: dict) -> str:
    """Text table from a report document (as produced by :func:`report`)."""
    header = ["Method", "ACC (%)", "F1 (%)", "Tokens", "Cost ($)", "Time (s)", "Fallbacks"]
    body = []
    for row in doc["strategies"]:
        c = row["cost"]
        k = row.get("knowledge_cost") or {}
        tokens = c["total_tokens"] + k.get("total_tokens", 0)
        cost = c["token_cost"] + k.get("token_cost", 0.0)
        fallbacks = sum(r.get("parse_fallbacks", 0) for r in row["per_run"])
        body.append(
            [
                row["strategy"],
                row["accuracy"]["formatted"],
                row["f1_weighted"]["formatted"],
                str(tokens),
                f"{cost:.4f}",
                f"{c['time_s']:.1f}",
                str(fallbacks),
            ]
        )
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    fmt = lambda r: "  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(r, widths)))  # noqa: E731
    lines = []
    cohort = doc.get("cohort")
    if cohort:
        prev = cohort["prevalence"]
        prev_s = f"{prev * 100:.2f}%" if prev is not None else "n/a"
        lines.append(f"{cohort['disease']} (visits: {cohort['visits']}, prevalence: {prev_s})")
    lines += [fmt(header), fmt(["-" * w for w in widths]), *map(fmt, body)]
    runs = sorted({row["runs"] for row in doc["strategies"]})
    lines.append("")
    lines.append(f"mean±std over {'/'.join(map(str, runs))} run(s); tokens and cost include linkage and retrieval")
    lines += doc.get("notes", [])
    return "\n".join(lines) + "\n"
