"""Heuristic knowledge extraction: 2-hop subgraph around question entities.

Bridge entities lying on short undirected paths between question/answer
entities are collected, scored against the question context, and pruned to a
node budget; the surviving edge set is the full closure over the kept nodes.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from kgprompt.embeddings import EmbeddingTable, cosine
from kgprompt.kg import EntityId, KnowledgeGraph, QuestionContext, Triple

logger = logging.getLogger(__name__)

TAG_TOPIC = "topic"
TAG_ANSWER = "answer"
TAG_BRIDGE = "bridge"


class EmptySubgraphError(ValueError):
    """Raised when a question has no entity to anchor extraction on."""


@dataclass
class Subgraph:
    nodes: set[EntityId]
    node_tags: dict[EntityId, str]
    edges: set[Triple]

    def tagged(self, tag: str) -> set[EntityId]:
        return {e for e, t in self.node_tags.items() if t == tag}


def _undirected_adj(g: KnowledgeGraph, e: EntityId) -> set[EntityId]:
    out = {t for _, t in g.fwd_adj[e]}
    out.update(h for _, h in g.bwd_adj[e])
    return out


def _closure_edges(g: KnowledgeGraph, nodes: set[EntityId]) -> set[Triple]:
    edges: set[Triple] = set()
    for h in nodes:
        for r, t in g.fwd_adj[h]:
            if t in nodes:
                edges.add((h, r, t))
    return edges


def _bfs_depths(g: KnowledgeGraph, start: EntityId, max_depth: int) -> dict[EntityId, int]:
    depths = {start: 0}
    frontier = deque([start])
    while frontier:
        e = frontier.popleft()
        d = depths[e]
        if d == max_depth:
            continue
        for n in _undirected_adj(g, e):
            if n not in depths:
                depths[n] = d + 1
                frontier.append(n)
    return depths


def extract_two_hop(g: KnowledgeGraph, q: QuestionContext, hops: int = 2) -> Subgraph:
    """Subgraph spanning question entities plus their short-path bridges.

    Anchor nodes are the question's source entities and every choice's target
    entities. A non-anchor entity becomes a bridge when it lies on an
    undirected path of length <= ``hops`` between two distinct anchors. Edges
    are every graph triple with both endpoints in the node set.
    """
    anchors: list[EntityId] = []
    tags: dict[EntityId, str] = {}
    for e in q.source_entities:
        if e not in tags:
            tags[e] = TAG_TOPIC
            anchors.append(e)
    for e in q.all_targets():
        if e not in tags:
            tags[e] = TAG_ANSWER
            anchors.append(e)
    if not anchors:
        raise EmptySubgraphError(f"question {q.id}: no source or target entities")

    # an intermediate node sits at depth >= 1 from both endpoints, so search
    # radius hops-1 suffices
    depths = {a: _bfs_depths(g, a, max(hops - 1, 0)) for a in anchors}
    bridges: set[EntityId] = set()
    anchor_list = list(depths)
    for i, u in enumerate(anchor_list):
        du = depths[u]
        for v in anchor_list[i + 1 :]:
            dv = depths[v]
            smaller, larger = (du, dv) if len(du) <= len(dv) else (dv, du)
            for x, dx in smaller.items():
                if x in tags:
                    continue
                dy = larger.get(x)
                if dy is not None and dx >= 1 and dy >= 1 and dx + dy <= hops:
                    bridges.add(x)

    nodes = set(tags) | bridges
    for b in bridges:
        tags[b] = TAG_BRIDGE
    return Subgraph(nodes=nodes, node_tags=tags, edges=_closure_edges(g, nodes))


@dataclass
class RelevanceScore:
    entity: EntityId
    score: float


def score_and_prune(
    sub: Subgraph,
    c: np.ndarray,
    table: EmbeddingTable,
    g: KnowledgeGraph,
    k: int = 200,
) -> Subgraph:
    """Keep at most ``k`` nodes: all topic/answer nodes plus top-scoring bridges.

    Relevance is the cosine between a node's embedding and the question
    context; entities without a vector score 0. Ties at the cut go to the
    lower entity id. Edges are restricted to the surviving nodes.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    protected = [e for e in sub.nodes if sub.node_tags.get(e) != TAG_BRIDGE]
    bridges = [e for e in sub.nodes if sub.node_tags.get(e) == TAG_BRIDGE]
    budget = k - len(protected)
    if budget < 0:
        logger.warning(
            "prune budget k=%d below %d protected nodes; keeping no bridges", k, len(protected)
        )
        budget = 0
    if len(bridges) <= budget:
        return sub

    def score(e: EntityId) -> float:
        vec = table.get(g.entity_names[e])
        return 0.0 if vec is None else cosine(vec, c)

    ranked = sorted(bridges, key=lambda e: (-score(e), e))
    keep = set(protected) | set(ranked[:budget])
    tags = {e: t for e, t in sub.node_tags.items() if e in keep}
    edges = {(h, r, t) for (h, r, t) in sub.edges if h in keep and t in keep}
    return Subgraph(nodes=keep, node_tags=tags, edges=edges)


def to_triples(sub: Subgraph, max_triples: int) -> list[Triple]:
    """Deterministic linearization: topic-touching edges, then answer, then rest.

    Within each class edges are sorted by (head, relation, tail); the list is
    truncated to ``max_triples``.
    """
    if max_triples < 1:
        raise ValueError("max_triples must be >= 1")
    topic = sub.tagged(TAG_TOPIC)
    answer = sub.tagged(TAG_ANSWER)

    def edge_class(e: Triple) -> int:
        h, _, t = e
        if h in topic or t in topic:
            return 0
        if h in answer or t in answer:
            return 1
        return 2

    ordered = sorted(sub.edges, key=lambda e: (edge_class(e), e))
    return ordered[:max_triples]
