"""Knowledge-graph-guided, multi-agent zero-shot diagnosis prediction."""

from .cohort import Cohort, load_cohort, synth_cohort, write_cohort
from .embedding import EmbeddingIndex, HashEmbeddingProvider, LinkCandidate, LinkerConfig, cosine, embed, top_candidates
from .evaluation import evaluate, format_pct, report, score
from .gateway import CompletionRequest, Gateway, LlmSettings, PricingTable, TokenUsage, make_gateway, meter
from .kg_store import Entity, KgStore, Polarity, PolarityLexicon, RelationTriple, classify_polarity, ingest
from .linkage import LinkResult, Linker, link
from .pipeline import Pipeline
from .prediction import PatientVisit, PredictionOutcome, Strategy, Verdict, parse_verdict, predict
from .retrieval import KnowledgeBundle, Retriever, retrieve

__version__ = "0.1.0"
