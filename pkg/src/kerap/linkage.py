"""Linkage agent: map an EHR disease mention to one knowledge-graph entity.

Embedding similarity proposes the top candidates; the LLM picks one of them.
"""

from __future__ import annotations

import logging
import re
import threading
from collections.abc import Sequence
from dataclasses import dataclass, field

from .embedding import EmbeddingIndex, LinkCandidate, LinkerConfig, top_candidates
from .gateway import Gateway, LlmSettings, TokenUsage
from .templates import TEMPLATE_VERSION, render

logger = logging.getLogger(__name__)

_INDEX_ONLY = re.compile(r"^\W*(\d+)\W*$")
_NAME_STRIP = " \t\r\n\"'`.*"


def parse_selection(text: str, names: Sequence[str]) -> int | None:
    """0-based index of the chosen candidate, or None when the reply is unusable.

    Accepts a bare 1-based index, an index wrapped in punctuation such as
    ``"2."`` or ``"(2)"``, or a candidate name matched case-insensitively.
    """
    stripped = text.strip()
    m = _INDEX_ONLY.match(stripped)
    if m:
        k = int(m.group(1))
        return k - 1 if 1 <= k <= len(names) else None
    wanted = stripped.strip(_NAME_STRIP).lower()
    if not wanted:
        return None
    for i, name in enumerate(names):
        if name.lower() == wanted:
            return i
    return None


@dataclass(frozen=True)
class LinkResult:
    mention: str
    chosen: str
    chosen_name: str
    rank_of_chosen: int
    candidates: tuple[LinkCandidate, ...]
    transcript: tuple[dict, ...] = ()
    usage: TokenUsage = field(default_factory=TokenUsage)
    fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "mention": self.mention,
            "chosen": self.chosen,
            "chosen_name": self.chosen_name,
            "rank_of_chosen": self.rank_of_chosen,
            "fallback": self.fallback,
            "candidates": [{"entity": c.entity, "name": c.name, "score": c.score} for c in self.candidates],
            "transcript": list(self.transcript),
            "usage": self.usage.to_dict(),
        }


def render_candidates(candidates: Sequence[LinkCandidate]) -> str:
    return "\n".join(f"{i}. {c.name}" for i, c in enumerate(candidates, 1))


def choose(
    gateway: Gateway,
    mention: str,
    candidates: Sequence[LinkCandidate],
    llm: LlmSettings = LlmSettings(),
    version: str = TEMPLATE_VERSION,
) -> LinkResult:
    if not candidates:
        raise ValueError("candidates must be nonempty")
    candidates = tuple(candidates)
    if len(candidates) == 1:
        only = candidates[0]
        return LinkResult(mention, only.entity, only.name, 1, candidates)

    system = render("linkage.system", version)
    user = render("linkage.user", version, mention=mention, candidates=render_candidates(candidates))
    names = [c.name for c in candidates]
    transcript = [{"role": "system", "content": system}, {"role": "user", "content": user}]

    first = gateway.complete(llm.request(("system", system), ("user", user)))
    usage = first.usage
    transcript.append({"role": "assistant", "content": first.text})
    pick = parse_selection(first.text, names)
    fallback = False
    if pick is None:
        reask = render("linkage.reask", version, count=len(candidates))
        second = gateway.complete(
            llm.request(("system", system), ("user", user), ("assistant", first.text or "(empty)"), ("user", reask))
        )
        usage = usage + second.usage
        transcript += [{"role": "user", "content": reask}, {"role": "assistant", "content": second.text}]
        pick = parse_selection(second.text, names)
        if pick is None:
            logger.warning("linkage fell back to top candidate", extra={"mention": mention})
            pick, fallback = 0, True

    chosen = candidates[pick]
    return LinkResult(mention, chosen.entity, chosen.name, pick + 1, candidates, tuple(transcript), usage, fallback)


class Linker:
    """Links each distinct mention once and caches the result."""

    def __init__(
        self,
        gateway: Gateway,
        index: EmbeddingIndex,
        cfg: LinkerConfig = LinkerConfig(),
        llm: LlmSettings = LlmSettings(),
        version: str = TEMPLATE_VERSION,
    ) -> None:
        self.gateway = gateway
        self.index = index
        self.cfg = cfg
        self.llm = llm
        self.version = version
        self._cache: dict[str, LinkResult] = {}
        self._lock = threading.Lock()

    def link(self, mention: str) -> LinkResult:
        if not mention or not mention.strip():
            raise ValueError("mention must be nonempty")
        with self._lock:
            hit = self._cache.get(mention)
            if hit is None:
                candidates = top_candidates(self.index, mention, self.cfg)
                hit = self._cache[mention] = choose(self.gateway, mention, candidates, self.llm, self.version)
        return hit


def link(
    gateway: Gateway,
    store,
    index: EmbeddingIndex,
    mention: str,
    cfg: LinkerConfig = LinkerConfig(),
    llm: LlmSettings = LlmSettings(),
) -> LinkResult:
    result = Linker(gateway, index, cfg, llm).link(mention)
    store.entity(result.chosen)
    return result
