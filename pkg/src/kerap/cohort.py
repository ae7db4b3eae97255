"""Patient-visit cohorts: JSON-lines I/O and seeded synthetic generation."""

from __future__ import annotations

import json
import math
import random
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from .prediction import PatientVisit


class CohortError(ValueError):
    def __init__(self, message: str, line: int | None = None) -> None:
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class Cohort:
    disease: str
    visits: tuple[PatientVisit, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "visits", tuple(self.visits))
        seen: set[str] = set()
        for v in self.visits:
            if v.visit_id in seen:
                raise CohortError(f"duplicate visit_id {v.visit_id!r}")
            seen.add(v.visit_id)

    def __len__(self) -> int:
        return len(self.visits)

    @property
    def labeled(self) -> tuple[PatientVisit, ...]:
        return tuple(v for v in self.visits if v.label is not None)

    @property
    def prevalence(self) -> float | None:
        """Positive fraction among labeled visits; None when nothing is labeled."""
        labeled = self.labeled
        if not labeled:
            return None
        return sum(1 for v in labeled if v.label) / len(labeled)


def load_cohort(path: str | Path) -> Cohort:
    disease = None
    visits: list[PatientVisit] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CohortError(f"malformed JSON: {exc.msg}", lineno) from None
            if not isinstance(obj, dict):
                raise CohortError("expected a JSON object", lineno)
            if disease is None:
                if not isinstance(obj.get("disease"), str) or not obj["disease"].strip():
                    raise CohortError('first line must be {"disease": "<mention>"}', lineno)
                disease = obj["disease"]
                continue
            vid = obj.get("visit_id")
            attrs = obj.get("attributes")
            label = obj.get("label")
            if not isinstance(vid, str) or not vid:
                raise CohortError("visit_id must be a nonempty string", lineno)
            if vid in seen:
                raise CohortError(f"duplicate visit_id {vid!r}", lineno)
            if not isinstance(attrs, list) or not attrs or not all(isinstance(a, str) and a for a in attrs):
                raise CohortError(f"visit {vid!r}: attributes must be a nonempty list of strings", lineno)
            if label is not None and not isinstance(label, bool):
                raise CohortError(f"visit {vid!r}: label must be true, false or null", lineno)
            seen.add(vid)
            visits.append(PatientVisit(vid, tuple(attrs), label))
    if disease is None:
        raise CohortError("empty cohort file: missing disease header")
    return Cohort(disease, tuple(visits))


def write_cohort(cohort: Cohort, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"disease": cohort.disease}, ensure_ascii=False) + "\n")
        for v in cohort.visits:
            row = {"visit_id": v.visit_id, "attributes": list(v.attributes), "label": v.label}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def positive_count(n: int, prevalence: float) -> int:
    """``n * prevalence`` rounded half up."""
    return math.floor(n * prevalence + 0.5)


def synth_cohort(
    seed: int,
    n: int,
    prevalence: float,
    vocab: Sequence[str],
    *,
    disease: str = "Post-stroke cognitive impairment",
    risk_vocab: Sequence[str] = (),
    attributes_per_visit: tuple[int, int] = (3, 8),
    risk_per_positive: tuple[int, int] = (1, 3),
    risk_rate_negative: float = 0.15,
) -> Cohort:
    """Seeded cohort with exactly ``positive_count(n, prevalence)`` positive labels.

    Positives draw extra attributes from ``risk_vocab`` so label-bearing signal
    exists for downstream checks; negatives receive one with probability
    ``risk_rate_negative``.
    """
    if not 0.0 <= prevalence <= 1.0:
        raise ValueError("prevalence must be within [0, 1]")
    if n < 0:
        raise ValueError("n must be >= 0")
    vocab = list(dict.fromkeys(vocab))
    risk = [r for r in dict.fromkeys(risk_vocab) if r not in vocab]
    if not vocab:
        raise ValueError("vocab must be nonempty")
    rng = random.Random(seed)
    positives = set(rng.sample(range(n), positive_count(n, prevalence)))
    lo, hi = attributes_per_visit
    visits = []
    width = max(5, len(str(n)))
    for i in range(n):
        attrs = rng.sample(vocab, min(len(vocab), rng.randint(lo, hi)))
        label = i in positives
        if risk:
            k = rng.randint(*risk_per_positive) if label else int(rng.random() < risk_rate_negative)
            for r in rng.sample(risk, min(k, len(risk))):
                attrs.insert(rng.randint(0, len(attrs)), r)
        visits.append(PatientVisit(f"v{i:0{width}d}", tuple(attrs), label))
    return Cohort(disease, tuple(visits))
