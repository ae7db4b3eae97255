"""Pipeline configuration loaded from one YAML file.

Relative paths resolve against the config file's directory. The API key is
never read from the file; it comes from the ``KERAP_API_KEY`` environment
variable.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path

import yaml

from .embedding import DEFAULT_CANDIDATE_COUNT, DEFAULT_DIMENSION
from .gateway import Mode
from .kg_store import DEFAULT_NEIGHBORHOOD_CAP

_SECRET_KEY = re.compile(r"(^|_)(api_?key|key|secret|password|token)$", re.IGNORECASE)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    entities: Path
    triples: Path
    categories: tuple[str, ...] | None = None
    lexicon: Path | None = None
    embedding_provider: str = "hash"
    embedding_dimension: int = DEFAULT_DIMENSION
    embedding_model: str | None = None
    embedding_base_url: str | None = None
    candidate_count: int = DEFAULT_CANDIDATE_COUNT
    neighborhood_cap: int | None = DEFAULT_NEIGHBORHOOD_CAP
    bundle_cache_dir: Path | None = None
    model: str = "gpt-4o-mini"
    temperature: float = 0.0
    max_tokens: int = 512
    base_url: str | None = None
    rate_limit_per_minute: float | None = None
    max_attempts: int = 5
    backoff_base_s: float = 1.0
    backoff_max_s: float = 30.0
    pricing: Path | None = None
    mode: Mode = Mode.REPLAY
    cassette: Path | None = None
    parallelism: int = 4
    seed: int = 0
    memory_budget_mb: int = 2048
    source: Path | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.candidate_count < 1:
            raise ConfigError("linker.candidate_count must be >= 1")
        if self.embedding_dimension < 1:
            raise ConfigError("embedding.dimension must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.temperature < 0:
            raise ConfigError("llm.temperature must be >= 0")
        if self.embedding_provider not in ("hash", "http"):
            raise ConfigError(f"unknown embedding provider {self.embedding_provider!r}")

    @classmethod
    def from_dict(cls, data: dict, base: Path = Path(".")) -> PipelineConfig:
        def path(v):
            if v is None:
                return None
            p = Path(v)
            return p if p.is_absolute() else base / p

        kg = data.get("kg") or {}
        emb = data.get("embedding") or {}
        linker = data.get("linker") or {}
        retrieval = data.get("retrieval") or {}
        llm = data.get("llm") or {}
        gw = data.get("gateway") or {}
        if "entities" not in kg or "triples" not in kg:
            raise ConfigError("kg.entities and kg.triples are required")
        cats = kg.get("categories")
        return cls(
            entities=path(kg["entities"]),
            triples=path(kg["triples"]),
            categories=tuple(cats) if cats else None,
            lexicon=path(data.get("lexicon")),
            embedding_provider=emb.get("provider", "hash"),
            embedding_dimension=int(emb.get("dimension", DEFAULT_DIMENSION)),
            embedding_model=emb.get("model"),
            embedding_base_url=emb.get("base_url"),
            candidate_count=int(linker.get("candidate_count", DEFAULT_CANDIDATE_COUNT)),
            neighborhood_cap=retrieval.get("cap", DEFAULT_NEIGHBORHOOD_CAP),
            bundle_cache_dir=path(retrieval.get("bundle_cache_dir")),
            model=llm.get("model", "gpt-4o-mini"),
            temperature=float(llm.get("temperature", 0.0)),
            max_tokens=int(llm.get("max_tokens", 512)),
            base_url=llm.get("base_url"),
            rate_limit_per_minute=llm.get("rate_limit_per_minute"),
            max_attempts=int(llm.get("max_attempts", 5)),
            backoff_base_s=float(llm.get("backoff_base_s", 1.0)),
            backoff_max_s=float(llm.get("backoff_max_s", 30.0)),
            pricing=path(data.get("pricing")),
            mode=Mode(gw.get("mode", "replay")),
            cassette=path(gw.get("cassette")),
            parallelism=int(data.get("parallelism", 4)),
            seed=int(data.get("seed", 0)),
            memory_budget_mb=int(data.get("memory_budget_mb", 2048)),
        )

    @classmethod
    def load(cls, path: str | Path) -> PipelineConfig:
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        for section in data.values():
            if isinstance(section, dict) and any(_SECRET_KEY.search(k) for k in section):
                raise ConfigError("secrets do not belong in the config file; set KERAP_API_KEY instead")
        return replace(cls.from_dict(data, path.parent), source=path)

    def with_overrides(self, **kw) -> PipelineConfig:
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def validate_paths(self) -> None:
        required = [("kg.entities", self.entities), ("kg.triples", self.triples)]
        required += [(n, p) for n, p in (("lexicon", self.lexicon), ("pricing", self.pricing)) if p is not None]
        if self.mode is Mode.REPLAY:
            if self.cassette is None:
                raise ConfigError("gateway.cassette is required in replay mode")
            required.append(("gateway.cassette", self.cassette))
        missing = [f"{n}={p}" for n, p in required if not Path(p).exists()]
        if missing:
            raise ConfigError("missing paths: " + ", ".join(missing))

    def echo(self) -> dict:
        """JSON-safe copy with anything secret-looking redacted."""
        root = self.source.parent if self.source else None
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if _SECRET_KEY.search(f.name):
                v = "***"
            elif isinstance(v, Path):
                v = Path(os.path.relpath(v, root)).as_posix() if root else v.as_posix()
            elif isinstance(v, Mode):
                v = v.value
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

