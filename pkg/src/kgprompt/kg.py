"""In-memory knowledge graph: triple store with dense ids and adjacency indexes.

The graph is built once from a TSV dump and is immutable afterwards, so every
other module can read it concurrently without locking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

EntityId = int
RelationId = int
Triple = tuple[int, int, int]  # (head, relation, tail)

Direction = str  # "forward" | "backward" | "both"
_DIRECTIONS = ("forward", "backward", "both")


class GraphFormatError(ValueError):
    """Raised when a triple file violates the TSV contract."""


def normalize_name(name: str) -> str:
    """Canonical vocabulary form: lowercase, spaces replaced by underscores."""
    return name.strip().lower().replace(" ", "_")


@dataclass
class LoadStats:
    lines: int = 0
    triples: int = 0
    duplicates: int = 0


@dataclass
class KnowledgeGraph:
    """Immutable triple store with forward/backward adjacency.

    ``fwd_adj[h]`` lists ``(relation, tail)`` pairs in triple insertion order;
    ``bwd_adj[t]`` mirrors them as ``(relation, head)``. Treat all fields as
    read-only after construction.
    """

    entity_names: list[str]
    relation_names: list[str]
    triples: list[Triple]
    fwd_adj: list[list[tuple[RelationId, EntityId]]]
    bwd_adj: list[list[tuple[RelationId, EntityId]]]
    stats: LoadStats = field(default_factory=LoadStats)
    _entity_index: dict[str, int] = field(default_factory=dict, repr=False)
    _relation_index: dict[str, int] = field(default_factory=dict, repr=False)

    @property
    def entity_count(self) -> int:
        return len(self.entity_names)

    @property
    def relation_count(self) -> int:
        return len(self.relation_names)

    def entity_id(self, name: str) -> int | None:
        return self._entity_index.get(normalize_name(name))

    def relation_id(self, name: str) -> int | None:
        return self._relation_index.get(normalize_name(name))

    def check_entity(self, e: EntityId) -> None:
        if not 0 <= e < self.entity_count:
            raise IndexError(f"entity id {e} out of range [0, {self.entity_count})")


def build_graph(raw_triples: Iterable[tuple[str, str, str]]) -> KnowledgeGraph:
    """Build a graph from (head, relation, tail) name triples.

    Vocabularies get dense ids in first-appearance order; exact duplicate
    triples are stored once (count kept in ``stats.duplicates``).
    """
    entity_index: dict[str, int] = {}
    relation_index: dict[str, int] = {}
    entity_names: list[str] = []
    relation_names: list[str] = []
    triples: list[Triple] = []
    seen: set[Triple] = set()
    stats = LoadStats()

    def entity(name: str) -> int:
        key = normalize_name(name)
        idx = entity_index.get(key)
        if idx is None:
            idx = len(entity_names)
            entity_index[key] = idx
            entity_names.append(key)
        return idx

    def relation(name: str) -> int:
        key = normalize_name(name)
        idx = relation_index.get(key)
        if idx is None:
            idx = len(relation_names)
            relation_index[key] = idx
            relation_names.append(key)
        return idx

    for head, rel, tail in raw_triples:
        t = (entity(head), relation(rel), entity(tail))
        if t in seen:
            stats.duplicates += 1
            continue
        seen.add(t)
        triples.append(t)

    stats.triples = len(triples)
    fwd: list[list[tuple[int, int]]] = [[] for _ in entity_names]
    bwd: list[list[tuple[int, int]]] = [[] for _ in entity_names]
    for h, r, t in triples:
        fwd[h].append((r, t))
        bwd[t].append((r, h))

    return KnowledgeGraph(
        entity_names=entity_names,
        relation_names=relation_names,
        triples=triples,
        fwd_adj=fwd,
        bwd_adj=bwd,
        stats=stats,
        _entity_index=entity_index,
        _relation_index=relation_index,
    )


def load_graph_tsv(path: str | Path) -> KnowledgeGraph:
    """Load a graph from a TSV file: ``head<TAB>relation<TAB>tail`` per line.

    Blank lines and ``#``-prefixed comment lines are skipped. A malformed line
    raises :class:`GraphFormatError` naming its 1-based line number; an empty
    file (zero triples) is also an error.
    """
    path = Path(path)
    raw: list[tuple[str, str, str]] = []
    lines = 0
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            lines += 1
            stripped = line.rstrip("\n").rstrip("\r")
            if not stripped.strip() or stripped.lstrip().startswith("#"):
                continue
            fields = stripped.split("\t")
            if len(fields) != 3 or any(not f.strip() for f in fields):
                raise GraphFormatError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            raw.append((fields[0], fields[1], fields[2]))
    if not raw:
        raise GraphFormatError(f"{path}: no triples found; a graph needs at least one")
    g = build_graph(raw)
    g.stats.lines = lines
    if g.stats.duplicates:
        logger.info("dropped %d duplicate triples while loading %s", g.stats.duplicates, path)
    return g


def neighbors(
    g: KnowledgeGraph, e: EntityId, direction: Direction = "forward"
) -> list[tuple[RelationId, EntityId]]:
    """Adjacent (relation, entity) pairs of ``e`` in insertion order.

    ``both`` returns the forward list followed by the backward list. Isolated
    vertices yield an empty list.
    """
    g.check_entity(e)
    if direction == "forward":
        return list(g.fwd_adj[e])
    if direction == "backward":
        return list(g.bwd_adj[e])
    if direction == "both":
        return list(g.fwd_adj[e]) + list(g.bwd_adj[e])
    raise ValueError(f"direction must be one of {_DIRECTIONS}, got {direction!r}")


def link_entities(
    g: KnowledgeGraph, names: Sequence[str]
) -> tuple[list[EntityId], list[str]]:
    """Resolve surface names to entity ids.

    Matching is exact after normalization (case-insensitive, spaces become
    underscores). Returns ``(ids, unresolved_names)``; unresolved names are
    omitted from the id list, never fatal.
    """
    ids: list[EntityId] = []
    unresolved: list[str] = []
    for name in names:
        idx = g.entity_id(name)
        if idx is None:
            unresolved.append(name)
        else:
            ids.append(idx)
    return ids, unresolved


@dataclass
class QuestionContext:
    """A multiple-choice question grounded in graph entities.

    ``source_entities`` come from the question text, ``target_entities`` maps
    each choice label to the entities mentioned by that choice.
    """

    id: str
    question_text: str
    choices: list[tuple[str, str]]  # (label, text)
    source_entities: list[EntityId]
    target_entities: dict[str, list[EntityId]]
    gold_label: str | None = None

    def __post_init__(self) -> None:
        labels = [label for label, _ in self.choices]
        if len(set(labels)) != len(labels):
            raise ValueError(f"question {self.id}: duplicate choice labels {labels}")
        if self.gold_label is not None and self.gold_label not in labels:
            raise ValueError(
                f"question {self.id}: gold label {self.gold_label!r} not among {labels}"
            )

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.choices]

    def all_targets(self) -> list[EntityId]:
        """Union of every choice's target entities, deduplicated, order kept."""
        seen: set[int] = set()
        out: list[EntityId] = []
        for label, _ in self.choices:
            for e in self.target_entities.get(label, []):
                if e not in seen:
                    seen.add(e)
                    out.append(e)
        return out
