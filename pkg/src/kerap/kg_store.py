"""Read-only multi-relational knowledge graph with polarity-partitioned neighborhoods.

Entities and triples are ingested from tab-separated files and kept in compact
integer arrays so that dumps with tens of millions of triples stay tractable.
"""

from __future__ import annotations

import hashlib
import json
import logging
from array import array
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

logger = logging.getLogger(__name__)

ENTITY_HEADER = ("id", "name", "category")
TRIPLE_HEADER = ("head", "predicate", "tail")
DEFAULT_NEGATIVE_MARKERS = ("not", "no_", "contraindicat", "rules out")
DEFAULT_NEIGHBORHOOD_CAP = 200


class KgError(Exception):
    pass


class KgParseError(KgError):
    """A malformed row. Carries the file and 1-based line number."""

    def __init__(self, path: str, line: int, message: str) -> None:
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line
        self.message = message


class DuplicateEntityError(KgError):
    pass


class EntityNotFoundError(KgError, KeyError):
    def __str__(self) -> str:
        return f"entity not found: {self.args[0]!r}"


class Polarity(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class Entity:
    id: str
    name: str
    category: str


@dataclass(frozen=True, order=True)
class RelationTriple:
    head: str
    predicate: str
    tail: str


@dataclass(frozen=True)
class PolarityLexicon:
    negative_markers: tuple[str, ...] = DEFAULT_NEGATIVE_MARKERS
    overrides: Mapping[str, Polarity] = field(default_factory=dict)

    def __post_init__(self) -> None:
        markers = tuple(m.lower() for m in self.negative_markers)
        if any(not m for m in markers):
            raise ValueError("negative markers must be nonempty")
        object.__setattr__(self, "negative_markers", markers)
        object.__setattr__(
            self,
            "overrides",
            {k.lower(): Polarity(v) for k, v in dict(self.overrides).items()},
        )

    @classmethod
    def from_dict(cls, data: Mapping) -> PolarityLexicon:
        markers = data.get("negative_markers", DEFAULT_NEGATIVE_MARKERS)
        overrides = {str(k): Polarity(str(v).lower()) for k, v in (data.get("overrides") or {}).items()}
        return cls(negative_markers=tuple(markers), overrides=overrides)

    @classmethod
    def load(cls, path: str | Path) -> PolarityLexicon:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def to_dict(self) -> dict:
        return {
            "negative_markers": list(self.negative_markers),
            "overrides": {k: v.value for k, v in sorted(self.overrides.items())},
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def classify_polarity(predicate: str, lexicon: PolarityLexicon) -> Polarity:
    """Overrides first, then case-insensitive marker substrings, else positive."""
    if not predicate:
        raise ValueError("predicate must be nonempty")
    key = predicate.lower()
    hit = lexicon.overrides.get(key)
    if hit is not None:
        return hit
    if any(marker in key for marker in lexicon.negative_markers):
        return Polarity.NEGATIVE
    return Polarity.POSITIVE


@dataclass(frozen=True)
class PolarizedNeighborhood:
    entity: str
    positive: tuple[RelationTriple, ...]
    negative: tuple[RelationTriple, ...]


@dataclass(frozen=True)
class ParseIssue:
    path: str
    line: int
    message: str


@dataclass(frozen=True)
class IngestStats:
    entities: int
    triples: int
    dangling: int
    issues: tuple[ParseIssue, ...] = ()


class KgStore:
    """Immutable after construction; safe to share between reader threads."""

    def __init__(
        self,
        entities: list[Entity],
        predicates: list[str],
        heads: np.ndarray,
        preds: np.ndarray,
        tails: np.ndarray,
        stats: IngestStats,
    ) -> None:
        self._entities = tuple(entities)
        self._pos = {e.id: i for i, e in enumerate(self._entities)}
        self._predicates = tuple(predicates)
        self._heads, self._preds, self._tails = heads, preds, tails
        for arr in (heads, preds, tails):
            arr.setflags(write=False)
        self.stats = stats
        self._build_incidence()

    def _build_incidence(self) -> None:
        n = len(self._heads)
        idx = np.arange(n, dtype=np.int64)
        not_loop = self._tails != self._heads
        ends = np.concatenate([self._heads, self._tails[not_loop]]).astype(np.int64)
        owners = np.concatenate([idx, idx[not_loop]])
        order = np.argsort(ends, kind="stable")
        self._inc = owners[order]
        counts = np.bincount(ends, minlength=len(self._entities))
        self._inc_off = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self._inc.setflags(write=False)
        self._inc_off.setflags(write=False)

    def __len__(self) -> int:
        return len(self._entities)

    def __contains__(self, entity_id: object) -> bool:
        return entity_id in self._pos

    @property
    def triple_count(self) -> int:
        return len(self._heads)

    @property
    def predicates(self) -> tuple[str, ...]:
        return self._predicates

    def entities(self) -> tuple[Entity, ...]:
        return self._entities

    def entity(self, entity_id: str) -> Entity:
        try:
            return self._entities[self._pos[entity_id]]
        except KeyError:
            raise EntityNotFoundError(entity_id) from None

    def _triple(self, k: int) -> RelationTriple:
        return RelationTriple(
            self._entities[self._heads[k]].id,
            self._predicates[self._preds[k]],
            self._entities[self._tails[k]].id,
        )

    def triples(self) -> Iterator[RelationTriple]:
        for k in range(len(self._heads)):
            yield self._triple(k)

    def incident(self, entity_id: str) -> list[RelationTriple]:
        if entity_id not in self._pos:
            raise EntityNotFoundError(entity_id)
        i = self._pos[entity_id]
        lo, hi = self._inc_off[i], self._inc_off[i + 1]
        return [self._triple(int(k)) for k in self._inc[lo:hi]]

    def neighborhood(
        self,
        entity_id: str,
        lexicon: PolarityLexicon,
        cap: int | None = DEFAULT_NEIGHBORHOOD_CAP,
    ) -> PolarizedNeighborhood:
        """Incident triples (entity as head or tail), split by predicate polarity.

        Each side is ordered by (predicate, tail id, head id) and truncated to
        ``cap``; ``cap=None`` keeps everything.
        """
        if cap is not None and cap < 0:
            raise ValueError("cap must be >= 0")
        labels: dict[str, Polarity] = {}
        pos: list[RelationTriple] = []
        neg: list[RelationTriple] = []
        for t in self.incident(entity_id):
            label = labels.get(t.predicate)
            if label is None:
                label = labels[t.predicate] = classify_polarity(t.predicate, lexicon)
            (neg if label is Polarity.NEGATIVE else pos).append(t)
        key = lambda t: (t.predicate, t.tail, t.head)  # noqa: E731
        pos.sort(key=key)
        neg.sort(key=key)
        if cap is not None:
            pos, neg = pos[:cap], neg[:cap]
        return PolarizedNeighborhood(entity_id, tuple(pos), tuple(neg))

    def export(self, entity_path: str | Path, triple_path: str | Path) -> None:
        with open(entity_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\t".join(ENTITY_HEADER) + "\n")
            for e in self._entities:
                fh.write(f"{e.id}\t{e.name}\t{e.category}\n")
        with open(triple_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\t".join(TRIPLE_HEADER) + "\n")
            for t in self.triples():
                fh.write(f"{t.head}\t{t.predicate}\t{t.tail}\n")


def _rows(path: str | Path, header: tuple[str, ...]) -> Iterator[tuple[int, list[str] | None, str]]:
    """Yield (line number, fields or None if malformed, message)."""
    seen_header = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if not seen_header:
                if tuple(f.strip().lower() for f in fields) != header:
                    raise KgParseError(str(path), lineno, f"expected header {'<TAB>'.join(header)}")
                seen_header = True
                continue
            if len(fields) != len(header):
                yield lineno, None, f"expected {len(header)} fields, got {len(fields)}"
            elif any(not f.strip() for f in fields):
                yield lineno, None, "empty field"
            else:
                yield lineno, [f.strip() for f in fields], ""


def ingest(
    entity_file: str | Path,
    triple_file: str | Path,
    *,
    categories: Iterable[str] | None = None,
    on_error: str = "raise",
) -> KgStore:
    """Stream both files into a :class:`KgStore`.

    Malformed rows raise :class:`KgParseError` unless ``on_error="skip"``, in
    which case they are recorded in ``store.stats.issues``. Duplicate entity ids
    always raise. Triples whose head or tail is unknown are dropped and counted.
    """
    if on_error not in ("raise", "skip"):
        raise ValueError("on_error must be 'raise' or 'skip'")
    vocab = None if categories is None else {c.lower() for c in categories}
    issues: list[ParseIssue] = []

    def bad(path, lineno, msg):
        if on_error == "raise":
            raise KgParseError(str(path), lineno, msg)
        issues.append(ParseIssue(str(path), lineno, msg))

    entities: list[Entity] = []
    pos: dict[str, int] = {}
    for lineno, fields, msg in _rows(entity_file, ENTITY_HEADER):
        if fields is None:
            bad(entity_file, lineno, msg)
            continue
        eid, name, category = fields
        if vocab is not None and category.lower() not in vocab:
            bad(entity_file, lineno, f"unknown category {category!r}")
            continue
        if eid in pos:
            raise DuplicateEntityError(f"{entity_file}:{lineno}: duplicate entity id {eid!r}")
        pos[eid] = len(entities)
        entities.append(Entity(eid, name, category))

    predicates: list[str] = []
    pred_ix: dict[str, int] = {}
    heads, preds, tails = array("i"), array("i"), array("i")
    dangling = 0
    for lineno, fields, msg in _rows(triple_file, TRIPLE_HEADER):
        if fields is None:
            bad(triple_file, lineno, msg)
            continue
        h, p, t = fields
        hi, ti = pos.get(h), pos.get(t)
        if hi is None or ti is None:
            dangling += 1
            continue
        pi = pred_ix.get(p)
        if pi is None:
            pi = pred_ix[p] = len(predicates)
            predicates.append(p)
        heads.append(hi)
        preds.append(pi)
        tails.append(ti)

    stats = IngestStats(len(entities), len(heads), dangling, tuple(issues))
    logger.info(
        "kg ingested",
        extra={"entities": stats.entities, "triples": stats.triples, "dangling": dangling},
    )
    return KgStore(
        entities,
        predicates,
        np.array(heads, dtype=np.int32),
        np.array(preds, dtype=np.int32),
        np.array(tails, dtype=np.int32),
        stats,
    )
