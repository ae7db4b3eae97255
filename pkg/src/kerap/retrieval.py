"""Retrieval agent: summarize a linked entity's positive and negative relations."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

from .gateway import Gateway, LlmSettings, TokenUsage
from .kg_store import DEFAULT_NEIGHBORHOOD_CAP, KgStore, PolarityLexicon, RelationTriple
from .linkage import LinkResult
from .templates import TEMPLATE_VERSION, render

logger = logging.getLogger(__name__)

EMPTY_KNOWLEDGE = "No curated knowledge available for this criterion."


class RetrievalError(RuntimeError):
    pass


@dataclass(frozen=True)
class KnowledgeBundle:
    disease: str
    entity: str
    entity_name: str
    positive_summary: str
    negative_summary: str
    source_counts: tuple[int, int]
    usage: TokenUsage = field(default_factory=TokenUsage)
    template_version: str = TEMPLATE_VERSION

    def to_dict(self) -> dict:
        return {
            "disease": self.disease,
            "entity": self.entity,
            "entity_name": self.entity_name,
            "positive_summary": self.positive_summary,
            "negative_summary": self.negative_summary,
            "source_counts": list(self.source_counts),
            "usage": self.usage.to_dict(),
            "template_version": self.template_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> KnowledgeBundle:
        return cls(
            d["disease"],
            d["entity"],
            d["entity_name"],
            d["positive_summary"],
            d["negative_summary"],
            tuple(d["source_counts"]),
            TokenUsage.from_dict(d["usage"]),
            d.get("template_version", TEMPLATE_VERSION),
        )


def render_triple(store: KgStore, t: RelationTriple) -> str:
    return f"({store.entity(t.head).name}, {t.predicate}, {store.entity(t.tail).name})"


def render_triples(store: KgStore, triples) -> str:
    return "\n".join(render_triple(store, t) for t in triples)


class Retriever:
    """Builds knowledge bundles, caching them in memory and optionally on disk.

    The cache key covers everything that shapes the prompts: entity, lexicon,
    cap, template version, model and temperature. The disease mention is not
    part of any prompt, so bundles are shared between mentions of one entity.
    """

    def __init__(
        self,
        gateway: Gateway,
        store: KgStore,
        lexicon: PolarityLexicon,
        cap: int | None = DEFAULT_NEIGHBORHOOD_CAP,
        llm: LlmSettings = LlmSettings(),
        cache_dir: str | Path | None = None,
        version: str = TEMPLATE_VERSION,
    ) -> None:
        self.gateway = gateway
        self.store = store
        self.lexicon = lexicon
        self.cap = cap
        self.llm = llm
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.version = version
        self._cache: dict[str, KnowledgeBundle] = {}
        self._lock = threading.Lock()

    def cache_key(self, entity_id: str) -> str:
        blob = json.dumps(
            [entity_id, self.lexicon.digest(), self.cap, self.version, self.llm.model, self.llm.temperature],
            separators=(",", ":"),
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:24]

    def _summarize(self, template: str, entity_name: str, lines: str) -> tuple[str, TokenUsage]:
        system = render("retrieval.system", self.version)
        user = render(template, self.version, entity=entity_name, triples=lines)
        out = self.gateway.complete(self.llm.request(("system", system), ("user", user)))
        text = out.text.strip()
        if not text:
            raise RetrievalError(f"empty summary for {entity_name!r} ({template})")
        return text, out.usage

    def _build(self, disease: str, entity_id: str) -> KnowledgeBundle:
        entity = self.store.entity(entity_id)
        hood = self.store.neighborhood(entity_id, self.lexicon, self.cap)
        usage = TokenUsage()
        pos_text = neg_text = EMPTY_KNOWLEDGE
        if hood.positive:
            pos_text, u = self._summarize("retrieval.positive", entity.name, render_triples(self.store, hood.positive))
            usage = usage + u
        if hood.negative:
            neg_text, u = self._summarize("retrieval.negative", entity.name, render_triples(self.store, hood.negative))
            usage = usage + u
        return KnowledgeBundle(
            disease, entity.id, entity.name, pos_text, neg_text, (len(hood.positive), len(hood.negative)), usage, self.version
        )

    def retrieve(self, link: LinkResult) -> KnowledgeBundle:
        key = self.cache_key(link.chosen)
        with self._lock:
            bundle = self._cache.get(key)
            if bundle is None:
                bundle = self._load(key)
            if bundle is None:
                bundle = self._build(link.mention, link.chosen)
                self._store(key, bundle)
            self._cache[key] = bundle
        if bundle.disease != link.mention:
            bundle = replace(bundle, disease=link.mention)
        return bundle

    def _path(self, key: str) -> Path | None:
        return self.cache_dir / f"{key}.json" if self.cache_dir else None

    def _load(self, key: str) -> KnowledgeBundle | None:
        path = self._path(key)
        if path is None or not path.exists():
            return None
        with open(path, encoding="utf-8") as fh:
            return KnowledgeBundle.from_dict(json.load(fh))

    def _store(self, key: str, bundle: KnowledgeBundle) -> None:
        path = self._path(key)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(bundle.to_dict(), fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
        os.replace(tmp, path)


def retrieve(
    gateway: Gateway,
    store: KgStore,
    link: LinkResult,
    lexicon: PolarityLexicon,
    cap: int | None = DEFAULT_NEIGHBORHOOD_CAP,
    llm: LlmSettings = LlmSettings(),
) -> KnowledgeBundle:
    return Retriever(gateway, store, lexicon, cap, llm).retrieve(link)
