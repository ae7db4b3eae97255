"""Wires the store, index, gateway and the three agents together."""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .cohort import Cohort
from .config import PipelineConfig
from .embedding import EmbeddingIndex, HashEmbeddingProvider, HttpEmbeddingProvider, LinkerConfig
from .gateway import Gateway, LlmSettings, Mode, PricingTable, TokenUsage, make_gateway
from .kg_store import KgStore, PolarityLexicon, ingest
from .linkage import Linker, LinkResult
from .prediction import PatientVisit, PredictionOutcome, Strategy, predict
from .retrieval import KnowledgeBundle, Retriever
from .transport import RetryPolicy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Knowledge:
    link: LinkResult
    bundle: KnowledgeBundle

    @property
    def usage(self) -> TokenUsage:
        return self.link.usage + self.bundle.usage


class Pipeline:
    def __init__(
        self,
        cfg: PipelineConfig,
        store: KgStore,
        index: EmbeddingIndex,
        gateway: Gateway,
        lexicon: PolarityLexicon,
        pricing: PricingTable | None = None,
    ) -> None:
        self.cfg = cfg
        self.store = store
        self.index = index
        self.gateway = gateway
        self.lexicon = lexicon
        self.pricing = pricing
        self.llm = LlmSettings(cfg.model, cfg.temperature, cfg.max_tokens)
        self.linker = Linker(gateway, index, LinkerConfig(cfg.candidate_count, cfg.embedding_provider), self.llm)
        self.retriever = Retriever(gateway, store, lexicon, cfg.neighborhood_cap, self.llm, cfg.bundle_cache_dir)
        self._knowledge: dict[str, Knowledge] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_config(cls, cfg: PipelineConfig, *, inner_backend=None) -> Pipeline:
        """Build everything ``cfg`` describes. ``inner_backend`` stands in for
        the HTTP client in live/record mode (offline fixture generation)."""
        cfg.validate_paths()
        store = ingest(cfg.entities, cfg.triples, categories=cfg.categories)
        lexicon = PolarityLexicon.load(cfg.lexicon) if cfg.lexicon else PolarityLexicon()
        if cfg.embedding_provider == "http":
            provider = HttpEmbeddingProvider(
                cfg.embedding_base_url or cfg.base_url or "", cfg.embedding_model or "", cfg.embedding_dimension
            )
        else:
            provider = HashEmbeddingProvider(cfg.embedding_dimension, cfg.seed)
        index = EmbeddingIndex.from_store(store, provider)
        gateway = make_gateway(
            cfg.mode,
            cfg.cassette,
            base_url=cfg.base_url,
            retry=RetryPolicy(cfg.max_attempts, cfg.backoff_base_s, cfg.backoff_max_s),
            rate_limit_per_minute=cfg.rate_limit_per_minute,
            max_in_flight=cfg.parallelism,
            inner=inner_backend,
        )
        pricing = PricingTable.load(cfg.pricing) if cfg.pricing else None
        logger.info(
            "pipeline ready",
            extra={"entities": len(store), "triples": store.triple_count, "mode": cfg.mode.value, "model": cfg.model},
        )
        return cls(cfg, store, index, gateway, lexicon, pricing)

    @property
    def mode(self) -> Mode:
        return self.cfg.mode

    def knowledge(self, disease: str) -> Knowledge:
        with self._lock:
            hit = self._knowledge.get(disease)
            if hit is None:
                link = self.linker.link(disease)
                hit = self._knowledge[disease] = Knowledge(link, self.retriever.retrieve(link))
        return hit

    def predict_visit(self, visit: PatientVisit, disease: str, strategy: Strategy | str) -> PredictionOutcome:
        strategy = Strategy(strategy)
        bundle = self.knowledge(disease).bundle if strategy.uses_kg else None
        return predict(self.gateway, visit, disease, bundle, strategy, self.llm)

    def predict_cohort(self, cohort: Cohort, strategy: Strategy | str, disease: str | None = None) -> list[PredictionOutcome]:
        """Outcomes in cohort order; visits run on up to ``parallelism`` threads."""
        strategy = Strategy(strategy)
        disease = disease or cohort.disease
        if strategy.uses_kg:
            self.knowledge(disease)
        if self.cfg.parallelism == 1:
            return [self.predict_visit(v, disease, strategy) for v in cohort.visits]
        with ThreadPoolExecutor(max_workers=self.cfg.parallelism) as pool:
            return list(pool.map(lambda v: self.predict_visit(v, disease, strategy), cohort.visits))

    def close(self) -> None:
        self.gateway.close()
