import math

import pytest

from kgprompt.kg import QuestionContext, build_graph
from kgprompt.render import (
    KnowledgeBundle,
    assemble_prompt,
    render_graph_description,
    render_sentences,
    render_triples,
    verbalize_triple,
)


@pytest.fixture
def google_graph():
    # mixed-case vocabulary built directly (build_graph would normalize
    # the names, and the golden string preserves capitalization)
    from kgprompt.kg import KnowledgeGraph, LoadStats

    entity_names = ["Sergey_Brin", "Google", "Sundar_Pichai", "High-tech Company"]
    relation_names = ["founder_of", "ceo_of", "is_a"]
    triples = [(0, 0, 1), (2, 1, 1), (1, 2, 3)]
    fwd = [[] for _ in entity_names]
    bwd = [[] for _ in entity_names]
    for h, r, t in triples:
        fwd[h].append((r, t))
        bwd[t].append((r, h))
    return KnowledgeGraph(
        entity_names=entity_names,
        relation_names=relation_names,
        triples=triples,
        fwd_adj=fwd,
        bwd_adj=bwd,
        stats=LoadStats(),
    )


@pytest.fixture
def google_bundle(google_graph):
    return KnowledgeBundle.from_triples(google_graph.triples, "subgraph")


class TestRenderTriples:
    def test_golden_string(self, google_graph, google_bundle):
        got = render_triples(google_bundle, google_graph)
        assert got == (
            "(Sergey_Brin, founder_of, Google), "
            "(Sundar_Pichai, ceo_of, Google), "
            "(Google, is_a, High-tech Company)"
        )

    def test_empty_bundle(self, google_graph):
        assert render_triples(KnowledgeBundle([], "subgraph"), google_graph) == ""

    def test_single_triple(self):
        g = build_graph([("a", "r", "b")])
        got = render_triples(KnowledgeBundle.from_triples(g.triples, "subgraph"), g)
        assert got == "(a, r, b)"

    def test_round_trip_parse(self):
        g = build_graph([("a", "r", "b"), ("c", "s", "d")])
        bundle = KnowledgeBundle.from_triples(g.triples, "subgraph")
        text = render_triples(bundle, g)
        parsed = []
        for item in text.split("), ("):
            h, r, t = item.strip("()").split(", ")
            parsed.append((g.entity_id(h), g.relation_id(r), g.entity_id(t)))
        assert parsed == bundle.triples


class TestRenderSentences:
    def test_known_pattern(self):
        g = build_graph([("Google", "is_a", "High-tech_Company")])
        got = render_sentences(KnowledgeBundle.from_triples(g.triples, "subgraph"), g)
        assert got == "google is a high-tech company."

    def test_unknown_relation_fallback(self):
        g = build_graph([("a", "zorps", "b")])
        got = render_sentences(KnowledgeBundle.from_triples(g.triples, "subgraph"), g)
        assert got == "a is related to b via zorps."

    def test_two_sentences_single_space_join(self):
        g = build_graph([("a", "is_a", "b"), ("b", "part_of", "c")])
        got = render_sentences(KnowledgeBundle.from_triples(g.triples, "subgraph"), g)
        assert got == "a is a b. b is part of c."

    def test_camelcase_relation_matches_pattern(self):
        assert verbalize_triple("x", "IsA", "y") == "x is a y."
        assert verbalize_triple("x", "AtLocation", "y") == "x is located at y."


class TestGraphDescription:
    def test_center_is_max_degree(self, google_graph, google_bundle):
        got = render_graph_description(google_bundle, google_graph)
        assert got.startswith("Google stands central in the network.")

    def test_empty_bundle(self, google_graph):
        assert render_graph_description(KnowledgeBundle([], "subgraph"), google_graph) == ""

    def test_deterministic(self, google_graph, google_bundle):
        a = render_graph_description(google_bundle, google_graph)
        b = render_graph_description(google_bundle, google_graph)
        assert a == b

    def test_incident_triples_before_rest(self):
        g = build_graph([
            ("hub", "is_a", "x"), ("hub", "is_a", "y"), ("far", "is_a", "away"),
        ])
        got = render_graph_description(KnowledgeBundle.from_triples(g.triples, "subgraph"), g)
        assert got.index("hub is a x.") < got.index("far is a away.")

    def test_degree_tie_goes_to_lower_id(self):
        g = build_graph([("a", "r", "b")])
        got = render_graph_description(KnowledgeBundle.from_triples(g.triples, "subgraph"), g)
        assert got.startswith("a stands central")

    def test_llm_mode_failure_falls_back(self, google_graph, google_bundle, caplog):
        class FailingGateway:
            def complete(self, prompt, meta=None):
                raise RuntimeError("boom")

        with caplog.at_level("WARNING"):
            got = render_graph_description(google_bundle, google_graph, gateway=FailingGateway())
        assert got.startswith("Google stands central in the network.")
        assert "falling back" in caplog.text or "using template" in caplog.text

    def test_llm_mode_uses_gateway_reply(self, google_graph, google_bundle):
        class EchoGateway:
            def complete(self, prompt, meta=None):
                from kgprompt.gateway import LlmReply
                return LlmReply(text="A rewrite.", prompt_tokens_est=1, latency_ms=0)

        got = render_graph_description(google_bundle, google_graph, gateway=EchoGateway())
        assert got == "A rewrite."


@pytest.fixture
def question():
    return QuestionContext(
        id="q1",
        question_text="What is Google?",
        choices=[("A", "a company"), ("B", "a fruit"), ("C", "a country")],
        source_entities=[],
        target_entities={},
        gold_label="A",
    )


class TestAssemblePrompt:
    def test_frame_with_knowledge(self, question):
        p = assemble_prompt(question, "Google is a company.", "sentences")
        lines = p.text.splitlines()
        assert lines[0] == "Background knowledge:"
        assert lines[1] == "Google is a company."
        assert "Question: What is Google?" in lines
        assert "(A) a company" in lines
        assert lines[-1] == "Answer with the letter of the correct choice only."

    def test_empty_knowledge_omits_background(self, question):
        p = assemble_prompt(question, "", "none")
        assert "Background" not in p.text
        assert p.text.startswith("Question: ")

    def test_choices_in_order(self, question):
        p = assemble_prompt(question, "", "none")
        a = p.text.index("(A) a company")
        b = p.text.index("(B) a fruit")
        c = p.text.index("(C) a country")
        assert a < b < c

    def test_token_estimate(self, question):
        p = assemble_prompt(question, "k" * 10, "sentences")
        assert p.token_estimate == math.ceil(len(p.text.encode("utf-8")) / 4)

    def test_labels_and_question_exactly_once(self, question):
        p = assemble_prompt(question, "background text", "sentences")
        assert p.text.count("What is Google?") == 1
        for label in "ABC":
            assert p.text.count(f"({label}) ") == 1

    def test_no_choices_rejected(self):
        q = QuestionContext(id="q", question_text="?", choices=[],
                            source_entities=[], target_entities={})
        with pytest.raises(ValueError):
            assemble_prompt(q, "", "none")

    def test_deterministic_repeats(self, question):
        texts = {assemble_prompt(question, "fact.", "sentences").text for _ in range(100)}
        assert len(texts) == 1
