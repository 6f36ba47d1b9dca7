"""Synthetic graphs, embeddings, and datasets shared across the test suite."""

from __future__ import annotations

from collections import deque

import numpy as np

from kgprompt.embeddings import EmbeddingTable
from kgprompt.harness import QaExample
from kgprompt.kg import KnowledgeGraph, QuestionContext, build_graph, link_entities
from kgprompt.render import verbalize_triple


def chain_graph(names: list[str], rel: str = "r") -> KnowledgeGraph:
    """a -> b -> c ... single relation chain."""
    return build_graph([(names[i], rel, names[i + 1]) for i in range(len(names) - 1)])


def undirected_distance(g: KnowledgeGraph, a: int, b: int, cap: int = 10) -> int:
    """BFS hop count ignoring edge direction; cap+1 when unreachable."""
    if a == b:
        return 0
    seen = {a}
    frontier = deque([(a, 0)])
    while frontier:
        e, d = frontier.popleft()
        if d >= cap:
            continue
        for r, t in list(g.fwd_adj[e]) + list(g.bwd_adj[e]):
            if t == b:
                return d + 1
            if t not in seen:
                seen.add(t)
                frontier.append((t, d + 1))
    return cap + 1


def geometric_graph(
    n: int = 500, k_nn: int = 3, seed: int = 7
) -> tuple[KnowledgeGraph, EmbeddingTable]:
    """k-nearest-neighbor graph over random unit vectors in R^3.

    Entity embeddings are the coordinates themselves, so embedding similarity
    tracks graph proximity and goal-directed navigation is learnable.
    Relation vectors are zero: relations carry no routing information here.
    """
    rng = np.random.default_rng(seed)
    coords = rng.standard_normal((n, 3))
    coords /= np.linalg.norm(coords, axis=1, keepdims=True)
    names = [f"n{i:03d}" for i in range(n)]
    rels = ["r0", "r1", "r2", "r3"]
    triples = []
    for i in range(n):
        sims = coords @ coords[i]
        sims[i] = -np.inf
        for j in np.argsort(-sims)[:k_nn]:
            triples.append((names[i], rels[(i + int(j)) % len(rels)], names[int(j)]))
    g = build_graph(triples)

    vocab = list(g.entity_names) + list(g.relation_names)
    rows = np.zeros((len(vocab), 3), dtype=np.float32)
    for i, name in enumerate(g.entity_names):
        rows[i] = coords[names.index(name)]
    return g, EmbeddingTable(rows=rows, vocab=vocab)


def goal_contexts(g: KnowledgeGraph, table: EmbeddingTable, questions) -> EmbeddingTable:
    """Per-question context vector = the goal entity's embedding."""
    rows = np.stack(
        [table.vector(g.entity_names[q.target_entities["A"][0]]) for q in questions]
    )
    return EmbeddingTable(rows=rows, vocab=[q.id for q in questions])


def navigation_questions(
    g: KnowledgeGraph,
    n_queries: int,
    seed: int,
    distances: tuple[int, ...] = (2, 3),
    exclude: set[tuple[int, int]] | None = None,
) -> list[QuestionContext]:
    """(source, target) navigation queries at controlled graph distance."""
    rng = np.random.default_rng(seed)
    exclude = exclude or set()
    out: list[QuestionContext] = []
    used: set[tuple[int, int]] = set()
    attempts = 0
    while len(out) < n_queries and attempts < n_queries * 200:
        attempts += 1
        s = int(rng.integers(g.entity_count))
        t = int(rng.integers(g.entity_count))
        if s == t or (s, t) in used or (s, t) in exclude:
            continue
        if undirected_distance(g, s, t, cap=max(distances)) not in distances:
            continue
        used.add((s, t))
        out.append(
            QuestionContext(
                id=f"nav{len(out)}_{s}_{t}",
                question_text=f"navigate from {g.entity_names[s]} to {g.entity_names[t]}",
                choices=[("A", g.entity_names[t])],
                source_entities=[s],
                target_entities={"A": [t]},
                gold_label="A",
            )
        )
    if len(out) < n_queries:
        raise RuntimeError(f"only found {len(out)} of {n_queries} queries")
    return out


def query_pairs(questions: list[QuestionContext]) -> set[tuple[int, int]]:
    return {(q.source_entities[0], q.target_entities["A"][0]) for q in questions}


def routes_graph(n_pairs: int = 8) -> tuple[KnowledgeGraph, list[QuestionContext]]:
    """Per pair: one direct source->target edge plus three 3-hop detours.

    With no shortness pressure a policy stays near-uniform over the four
    first moves (mean successful length ~2.5); with it the direct edge wins.
    """
    triples = []
    questions = []
    for i in range(n_pairs):
        s, t = f"s{i}", f"t{i}"
        triples.append((s, "direct", t))
        for route in range(3):
            a, b = f"a{i}_{route}", f"b{i}_{route}"
            triples.append((s, "hop", a))
            triples.append((a, "hop", b))
            triples.append((b, "hop", t))
    g = build_graph(triples)
    for i in range(n_pairs):
        s = g.entity_id(f"s{i}")
        t = g.entity_id(f"t{i}")
        questions.append(
            QuestionContext(
                id=f"route{i}",
                question_text=f"route {i}",
                choices=[("A", f"t{i}")],
                source_entities=[s],
                target_entities={"A": [t]},
                gold_label="A",
            )
        )
    return g, questions


def random_graph(n_nodes: int, n_edges: int, n_rels: int, seed: int) -> KnowledgeGraph:
    rng = np.random.default_rng(seed)
    names = [f"e{i}" for i in range(n_nodes)]
    triples = []
    for _ in range(n_edges):
        h = int(rng.integers(n_nodes))
        t = int(rng.integers(n_nodes))
        if h == t:
            continue
        triples.append((names[h], f"r{int(rng.integers(n_rels))}", names[t]))
    if not triples:
        triples = [(names[0], "r0", names[-1])]
    return build_graph(triples)


def fact_dataset(
    n_questions: int = 200, n_distractors: int = 120, seed: int = 11
) -> tuple[KnowledgeGraph, list[QaExample]]:
    """Questions whose gold fact sits within two hops of the source entity.

    Half the questions plant a direct edge source->answer, half a two-hop
    path through a per-question middle entity; the gold fact string is the
    sentence rendering of the distinctive final edge.
    """
    rng = np.random.default_rng(seed)
    triples: list[tuple[str, str, str]] = []
    records: list[dict] = []
    labels = ["A", "B", "C", "D"]
    rels = ["is_a", "part_of", "causes", "used_for", "at_location"]

    for i in range(n_questions):
        src = f"topic_{i}"
        answer = f"answer_{i}"
        distract = [f"foil_{i}_{j}" for j in range(3)]
        rel = rels[int(rng.integers(len(rels)))]
        if i % 2 == 0:
            triples.append((src, rel, answer))
            fact_head = src
        else:
            mid = f"mid_{i}"
            triples.append((src, rels[int(rng.integers(len(rels)))], mid))
            triples.append((mid, rel, answer))
            fact_head = mid
        gold_fact = verbalize_triple(fact_head, rel, answer)
        # distractor edges pull the foils into the graph without touching src
        for j, d in enumerate(distract):
            triples.append((d, "related_to", f"noise_{i}_{j}"))
        gold_idx = int(rng.integers(len(labels)))
        choice_names = distract[:gold_idx] + [answer] + distract[gold_idx:]
        records.append(
            {
                "id": f"q{i:04d}",
                "question": f"what does {src} lead to?",
                "choices": [
                    {"label": lab, "text": name.replace("_", " ")}
                    for lab, name in zip(labels, choice_names)
                ],
                "answer": labels[gold_idx],
                "source_entities": [src],
                "target_entities": {
                    lab: [name] for lab, name in zip(labels, choice_names)
                },
                "gold_fact": gold_fact,
            }
        )
    for j in range(n_distractors):
        triples.append((f"bg_{j}", "related_to", f"bg_{(j + 1) % n_distractors}"))

    g = build_graph(triples)
    examples = []
    for rec in records:
        src_ids, _ = link_entities(g, rec["source_entities"])
        targets = {}
        for lab, names in rec["target_entities"].items():
            ids, _ = link_entities(g, names)
            targets[lab] = ids
        ctx = QuestionContext(
            id=rec["id"],
            question_text=rec["question"],
            choices=[(c["label"], c["text"]) for c in rec["choices"]],
            source_entities=src_ids,
            target_entities=targets,
            gold_label=rec["answer"],
        )
        examples.append(
            QaExample(
                context=ctx,
                raw_source_names=rec["source_entities"],
                raw_target_names=rec["target_entities"],
                gold_fact=rec["gold_fact"],
            )
        )
    return g, examples


def write_graph_tsv(g: KnowledgeGraph, path) -> None:
    lines = [
        f"{g.entity_names[h]}\t{g.relation_names[r]}\t{g.entity_names[t]}"
        for h, r, t in g.triples
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_dataset_jsonl(examples: list[QaExample], path) -> None:
    import json

    records = []
    for ex in examples:
        rec = {
            "id": ex.id,
            "question": ex.context.question_text,
            "choices": [{"label": l, "text": t} for l, t in ex.context.choices],
            "answer": ex.context.gold_label,
            "source_entities": ex.raw_source_names,
            "target_entities": ex.raw_target_names,
        }
        if ex.gold_fact is not None:
            rec["gold_fact"] = ex.gold_fact
        if ex.cluster is not None:
            rec["cluster"] = ex.cluster
        records.append(rec)
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")


def tiny_qa_graph() -> tuple[KnowledgeGraph, list[QaExample]]:
    """A small fixed KG + questions for bandit-loop tests (content unused by
    the bernoulli oracles, so extraction just needs to be cheap)."""
    triples = []
    for i in range(30):
        triples.append((f"c{i}", "related_to", f"c{(i + 1) % 30}"))
        triples.append((f"c{i}", "is_a", f"k{i % 5}"))
    g = build_graph(triples)
    examples = []
    for i in range(30):
        ctx = QuestionContext(
            id=f"t{i:03d}",
            question_text=f"which concept follows c{i}?",
            choices=[("A", f"c{(i + 1) % 30}"), ("B", f"k{i % 5}")],
            source_entities=[g.entity_id(f"c{i}")],
            target_entities={
                "A": [g.entity_id(f"c{(i + 1) % 30}")],
                "B": [g.entity_id(f"k{i % 5}")],
            },
            gold_label="A" if i % 2 == 0 else "B",
        )
        examples.append(
            QaExample(context=ctx, raw_source_names=[f"c{i}"], raw_target_names={})
        )
    return g, examples


def bernoulli_examples(
    n: int, seed: int = 3, dim: int = 4, noise: float = 0.05
) -> tuple[KnowledgeGraph, list[QaExample], EmbeddingTable]:
    """n cheap examples plus mean-dominated context vectors.

    Encoder embeddings live in a cone rather than spreading over the whole
    sphere; the shared mean direction is what lets the intercept-free linear
    reward model represent a context-independent success rate.
    """
    g, base = tiny_qa_graph()
    rng = np.random.default_rng(seed)
    examples = []
    rows = []
    for i in range(n):
        proto = base[int(rng.integers(len(base)))]
        ctx = QuestionContext(
            id=f"b{i:04d}",
            question_text=f"{proto.context.question_text} (variant {i})",
            choices=list(proto.context.choices),
            source_entities=list(proto.context.source_entities),
            target_entities=dict(proto.context.target_entities),
            gold_label=proto.context.gold_label,
        )
        examples.append(QaExample(context=ctx, raw_source_names=[], raw_target_names={}))
        vec = np.zeros(dim)
        vec[0] = 1.0
        vec += noise * rng.standard_normal(dim)
        rows.append(vec / np.linalg.norm(vec))
    table = EmbeddingTable(
        rows=np.asarray(rows, dtype=np.float32), vocab=[ex.id for ex in examples]
    )
    return g, examples, table


def clustered_examples(
    n: int, dim: int, seed: int = 5, id_prefix: str = "x"
) -> tuple[KnowledgeGraph, list[QaExample], EmbeddingTable]:
    """Two-cluster examples with separable context embeddings.

    Cluster contexts are noisy copies of near-orthogonal centroids, so a
    linear reward model can tell the clusters apart.
    """
    g, base = tiny_qa_graph()
    rng = np.random.default_rng(seed)
    centroids = np.zeros((2, dim))
    centroids[0, 0] = 1.0
    centroids[1, 1] = 1.0
    examples = []
    rows = []
    ids = []
    for i in range(n):
        cluster = i % 2
        proto = base[int(rng.integers(len(base)))]
        ex_id = f"{id_prefix}{i:05d}"
        ctx = QuestionContext(
            id=ex_id,
            question_text=f"{proto.context.question_text} (case {i})",
            choices=list(proto.context.choices),
            source_entities=list(proto.context.source_entities),
            target_entities=dict(proto.context.target_entities),
            gold_label=proto.context.gold_label,
        )
        examples.append(
            QaExample(
                context=ctx,
                raw_source_names=[],
                raw_target_names={},
                cluster=f"cluster{cluster}",
            )
        )
        vec = centroids[cluster] + 0.05 * rng.standard_normal(dim)
        rows.append(vec / np.linalg.norm(vec))
        ids.append(ex_id)
    table = EmbeddingTable(rows=np.asarray(rows, dtype=np.float32), vocab=ids)
    return g, examples, table
