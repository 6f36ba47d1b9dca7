"""Prompt construction: three knowledge renderings plus the question frame.

Template modes are deterministic string functions; the graph-description
renderer can optionally delegate the rewrite to the LLM gateway, falling back
to the template on any failure.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

from kgprompt.kg import KnowledgeGraph, QuestionContext, Triple

logger = logging.getLogger(__name__)

ORIGIN_SUBGRAPH = "subgraph"
ORIGIN_POLICY = "policy"

TEMPLATE_TRIPLES = "triples"
TEMPLATE_SENTENCES = "sentences"
TEMPLATE_GRAPH = "graph_description"
TEMPLATES = (TEMPLATE_TRIPLES, TEMPLATE_SENTENCES, TEMPLATE_GRAPH)

# Verbalization patterns for ConceptNet-style relations, keyed by the relation
# name lowercased with underscores removed, so both "is_a" and "IsA" resolve.
_REL_PATTERNS = {
    "isa": "is a",
    "partof": "is part of",
    "hasa": "has",
    "usedfor": "is used for",
    "capableof": "is capable of",
    "atlocation": "is located at",
    "causes": "causes",
    "causesdesire": "makes someone want",
    "createdby": "is created by",
    "definedas": "is defined as",
    "desires": "desires",
    "notdesires": "does not desire",
    "hascontext": "appears in the context of",
    "hasfirstsubevent": "begins with",
    "haslastsubevent": "ends with",
    "hasprerequisite": "requires",
    "hasproperty": "has the property",
    "hassubevent": "involves",
    "instanceof": "is an instance of",
    "locatednear": "is located near",
    "madeof": "is made of",
    "motivatedbygoal": "is motivated by",
    "notcapableof": "is not capable of",
    "receivesaction": "can receive the action",
    "relatedto": "is related to",
    "similarto": "is similar to",
    "symbolof": "is a symbol of",
    "synonym": "is a synonym of",
    "antonym": "is the opposite of",
    "distinctfrom": "is distinct from",
    "entails": "entails",
    "mannerof": "is a manner of",
    "formof": "is a form of",
    "derivedfrom": "is derived from",
    "etymologicallyrelatedto": "shares word origins with",
}


@dataclass
class KnowledgeBundle:
    """Ordered, deduplicated triples handed to a renderer."""

    triples: list[Triple]
    origin: str  # ORIGIN_SUBGRAPH | ORIGIN_POLICY

    @classmethod
    def from_triples(cls, triples: Sequence[Triple], origin: str) -> "KnowledgeBundle":
        seen: set[Triple] = set()
        uniq: list[Triple] = []
        for t in triples:
            if t not in seen:
                seen.add(t)
                uniq.append(t)
        return cls(triples=uniq, origin=origin)


@dataclass
class RenderedPrompt:
    text: str
    template: str
    token_estimate: int


def _spaced(name: str) -> str:
    return name.replace("_", " ")


def _pattern(relation_name: str) -> str | None:
    return _REL_PATTERNS.get(relation_name.lower().replace("_", ""))


def render_triples(b: KnowledgeBundle, g: KnowledgeGraph) -> str:
    """Raw triple rendering: ``(head, relation, tail)`` items joined by ", "."""
    items = [
        f"({g.entity_names[h]}, {g.relation_names[r]}, {g.entity_names[t]})"
        for h, r, t in b.triples
    ]
    return ", ".join(items)


def verbalize_triple(h_name: str, rel_name: str, t_name: str) -> str:
    """One sentence for a triple; unknown relations use a generic fallback."""
    pattern = _pattern(rel_name)
    head = _spaced(h_name)
    tail = _spaced(t_name)
    if pattern is None:
        return f"{head} is related to {tail} via {_spaced(rel_name)}."
    return f"{head} {pattern} {tail}."


def render_sentences(b: KnowledgeBundle, g: KnowledgeGraph) -> str:
    """Colloquial rendering: one sentence per triple, joined by single spaces."""
    sentences = [
        verbalize_triple(g.entity_names[h], g.relation_names[r], g.entity_names[t])
        for h, r, t in b.triples
    ]
    return " ".join(sentences)


def _center_entity(b: KnowledgeBundle) -> int:
    degree: dict[int, int] = {}
    for h, _, t in b.triples:
        degree[h] = degree.get(h, 0) + 1
        degree[t] = degree.get(t, 0) + 1
    # max degree, ties to the lower entity id
    return min(degree, key=lambda e: (-degree[e], e))


def render_graph_description(
    b: KnowledgeBundle,
    g: KnowledgeGraph,
    gateway=None,
) -> str:
    """Graph-structured rendering anchored on the highest-degree entity.

    With a gateway the triple list is sent out for a free-prose rewrite;
    any gateway failure falls back to the deterministic template.
    """
    if not b.triples:
        return ""
    center = _center_entity(b)
    if gateway is not None:
        instruction = (
            "Rewrite the following knowledge graph triples as a short paragraph "
            f"describing the graph, highlighting the center entity "
            f"{_spaced(g.entity_names[center])}: " + render_triples(b, g)
        )
        try:
            reply = gateway.complete(instruction)
            if reply.text.strip():
                return reply.text.strip()
        except Exception as exc:  # pragma: no cover - exercised via stub gateways
            logger.warning("graph-description rewrite failed (%s); using template", exc)
    parts = [f"{_spaced(g.entity_names[center])} stands central in the network."]
    incident = [t for t in b.triples if t[0] == center or t[2] == center]
    rest = [t for t in b.triples if t[0] != center and t[2] != center]
    for h, r, t in incident + rest:
        parts.append(
            verbalize_triple(g.entity_names[h], g.relation_names[r], g.entity_names[t])
        )
    return " ".join(parts)


def render_knowledge(b: KnowledgeBundle, g: KnowledgeGraph, template: str, gateway=None) -> str:
    if template == TEMPLATE_TRIPLES:
        return render_triples(b, g)
    if template == TEMPLATE_SENTENCES:
        return render_sentences(b, g)
    if template == TEMPLATE_GRAPH:
        return render_graph_description(b, g, gateway)
    raise ValueError(f"unknown template {template!r}")


def assemble_prompt(q: QuestionContext, knowledge_text: str, template: str) -> RenderedPrompt:
    """Final prompt frame; empty knowledge omits the background section."""
    if not q.choices:
        raise ValueError(f"question {q.id}: no choices to assemble")
    lines: list[str] = []
    if knowledge_text:
        lines.append("Background knowledge:")
        lines.append(knowledge_text)
        lines.append("")
    lines.append(f"Question: {q.question_text}")
    for label, text in q.choices:
        lines.append(f"({label}) {text}")
    lines.append("Answer with the letter of the correct choice only.")
    text = "\n".join(lines)
    return RenderedPrompt(
        text=text,
        template=template,
        token_estimate=math.ceil(len(text.encode("utf-8")) / 4),
    )
