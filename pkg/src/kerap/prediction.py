"""Prediction agent: YES/NO diagnosis verdicts under five prompting strategies."""

from __future__ import annotations

import logging
import re
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum

from .gateway import Gateway, LlmSettings, TokenUsage
from .retrieval import KnowledgeBundle
from .templates import TEMPLATE_VERSION, render

logger = logging.getLogger(__name__)

STAGE2_INSTRUCTION = "Check your prediction cautiously."
REASK_SUFFIX = "Answer strictly YES or NO."

_VERDICT_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


class Verdict(str, Enum):
    YES = "YES"
    NO = "NO"


class Strategy(str, Enum):
    DIRECT = "direct"
    STEP_BY_STEP = "step_by_step"
    KG_AUGMENTED = "kg_augmented"
    ITERATIVE = "iterative"
    KERAP = "kerap"

    @property
    def uses_kg(self) -> bool:
        return self in (Strategy.KG_AUGMENTED, Strategy.KERAP)

    @property
    def two_stage(self) -> bool:
        return self in (Strategy.ITERATIVE, Strategy.KERAP)


@dataclass(frozen=True)
class PatientVisit:
    visit_id: str
    attributes: tuple[str, ...]
    label: bool | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if not self.visit_id:
            raise ValueError("visit_id must be nonempty")
        if not self.attributes:
            raise ValueError(f"visit {self.visit_id!r} has no attributes")


@dataclass(frozen=True)
class StageRecord:
    prompt: str
    response: str
    verdict: Verdict
    reasked: bool = False
    fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "response": self.response,
            "verdict": self.verdict.value,
            "reasked": self.reasked,
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, d: dict) -> StageRecord:
        return cls(d["prompt"], d["response"], Verdict(d["verdict"]), d.get("reasked", False), d.get("fallback", False))


@dataclass(frozen=True)
class PredictionOutcome:
    visit_id: str
    disease: str
    strategy: Strategy
    stage1: StageRecord
    stage2: StageRecord | None
    final: Verdict
    usage: TokenUsage = field(default_factory=TokenUsage)
    parse_fallbacks: int = 0
    latency_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "visit_id": self.visit_id,
            "disease": self.disease,
            "strategy": self.strategy.value,
            "stage1": self.stage1.to_dict(),
            "stage2": self.stage2.to_dict() if self.stage2 else None,
            "final": self.final.value,
            "usage": self.usage.to_dict(),
            "parse_fallbacks": self.parse_fallbacks,
            "latency_s": self.latency_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> PredictionOutcome:
        return cls(
            d["visit_id"],
            d["disease"],
            Strategy(d["strategy"]),
            StageRecord.from_dict(d["stage1"]),
            StageRecord.from_dict(d["stage2"]) if d.get("stage2") else None,
            Verdict(d["final"]),
            TokenUsage.from_dict(d["usage"]),
            int(d.get("parse_fallbacks", 0)),
            float(d.get("latency_s", 0.0)),
        )


def parse_verdict(response: str) -> Verdict | None:
    """First standalone YES/NO token in the first line, else anywhere.

    Returns None when neither token occurs; callers decide what that means.
    """
    first_line = response.strip().split("\n", 1)[0]
    m = _VERDICT_RE.search(first_line) or _VERDICT_RE.search(response)
    return Verdict(m.group(1).upper()) if m else None


def render_verdict(v: Verdict) -> str:
    return f"Prediction: {v.value}"


def render_ehr(attributes: Sequence[str]) -> str:
    return "; ".join(attributes) + "."


def question(disease: str) -> str:
    return f'Will the patient develop "{disease}" at the next visit?'


class _Session:
    """One visit's calls; accumulates usage and fallback counts."""

    def __init__(self, gateway: Gateway, llm: LlmSettings, version: str, fallback_verdict: Verdict) -> None:
        self.gateway = gateway
        self.llm = llm
        self.version = version
        self.fallback_verdict = fallback_verdict
        self.system = render("prediction.system", version)
        self.usage = TokenUsage()
        self.latency = 0.0
        self.fallbacks = 0

    def _call(self, prompt: str) -> str:
        out = self.gateway.complete(self.llm.request(("system", self.system), ("user", prompt)))
        self.usage = self.usage + out.usage
        self.latency += out.latency_s
        return out.text

    def ask(self, prompt: str) -> StageRecord:
        response = self._call(prompt)
        verdict = parse_verdict(response)
        if verdict is not None:
            return StageRecord(prompt, response, verdict)
        prompt = f"{prompt}\n\n{REASK_SUFFIX}"
        response = self._call(prompt)
        verdict = parse_verdict(response)
        if verdict is not None:
            return StageRecord(prompt, response, verdict, reasked=True)
        self.fallbacks += 1
        logger.warning("verdict parse failed twice; using fallback", extra={"fallback": self.fallback_verdict.value})
        return StageRecord(prompt, response, self.fallback_verdict, reasked=True, fallback=True)


def predict(
    gateway: Gateway,
    visit: PatientVisit,
    disease: str,
    bundle: KnowledgeBundle | None,
    strategy: Strategy | str,
    llm: LlmSettings = LlmSettings(),
    *,
    version: str = TEMPLATE_VERSION,
    fallback_verdict: Verdict = Verdict.YES,
) -> PredictionOutcome:
    strategy = Strategy(strategy)
    if strategy.uses_kg and bundle is None:
        raise ValueError(f"strategy {strategy.value} needs a knowledge bundle")
    s = _Session(gateway, llm, version, fallback_verdict)
    common = {
        "ehr": render_ehr(visit.attributes),
        "question": question(disease),
        "answer_format": render("answer_format", version),
    }

    stage2 = None
    if strategy is Strategy.DIRECT:
        stage1 = s.ask(render("direct", version, **common))
    elif strategy is Strategy.STEP_BY_STEP:
        stage1 = s.ask(render("step_by_step", version, disease=disease, **common))
    elif strategy is Strategy.KG_AUGMENTED:
        stage1 = s.ask(
            render("kg_augmented", version, positive=bundle.positive_summary, negative=bundle.negative_summary, **common)
        )
    else:
        prefix = "kerap" if strategy is Strategy.KERAP else "iterative"
        extra1 = {"positive": bundle.positive_summary} if strategy is Strategy.KERAP else {}
        stage1 = s.ask(render(f"{prefix}.stage1", version, **extra1, **common))
        extra2 = {"negative": bundle.negative_summary} if strategy is Strategy.KERAP else {}
        stage2 = s.ask(
            render(
                f"{prefix}.stage2",
                version,
                stage1_prompt=stage1.prompt,
                stage1_response=stage1.response,
                instruction=STAGE2_INSTRUCTION,
                answer_format=common["answer_format"],
                **extra2,
            )
        )

    final = stage2.verdict if stage2 else stage1.verdict
    return PredictionOutcome(
        visit.visit_id, disease, strategy, stage1, stage2, final, s.usage, s.fallbacks, round(s.latency, 6)
    )
