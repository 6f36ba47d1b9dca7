import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kgprompt.embeddings import (
    EmbeddingFormatError,
    EmbeddingTable,
    ProjectionMatrix,
    cosine,
    load_embeddings,
    mock_embed,
    mock_table,
    path_embedding,
    project,
    save_embeddings,
)
from kgprompt.kg import build_graph
from kgprompt.policy import ReasoningChain


def make_table(rows, vocab):
    return EmbeddingTable(rows=np.asarray(rows, dtype=np.float32), vocab=vocab)


def write_kgeb(path, dim, count, floats, version=1, magic=b"KGEB"):
    header = struct.pack("<4sIIQ", magic, version, dim, count)
    body = np.asarray(floats, dtype="<f4").tobytes()
    path.write_bytes(header + body)


class TestKgebIo:
    def test_load_echoes_format(self, tmp_path):
        vec = tmp_path / "v.kgeb"
        voc = tmp_path / "v.vocab"
        write_kgeb(vec, 4, 2, [1, 2, 3, 4, 5, 6, 7, 8])
        voc.write_text("alpha\nbeta\n", encoding="utf-8")
        table = load_embeddings(vec, voc)
        assert table.dim == 4 and table.count == 2
        assert np.allclose(table.vector("beta"), [5, 6, 7, 8])

    def test_vocab_count_mismatch(self, tmp_path):
        vec = tmp_path / "v.kgeb"
        voc = tmp_path / "v.vocab"
        write_kgeb(vec, 2, 2, [1, 2, 3, 4])
        voc.write_text("a\nb\nc\n", encoding="utf-8")
        with pytest.raises(EmbeddingFormatError, match="3 names"):
            load_embeddings(vec, voc)

    def test_nan_row_rejected_with_index(self, tmp_path):
        vec = tmp_path / "v.kgeb"
        voc = tmp_path / "v.vocab"
        write_kgeb(vec, 2, 2, [1, 2, float("nan"), 4])
        voc.write_text("a\nb\n", encoding="utf-8")
        with pytest.raises(EmbeddingFormatError, match="row 1"):
            load_embeddings(vec, voc)

    def test_bad_magic(self, tmp_path):
        vec = tmp_path / "v.kgeb"
        voc = tmp_path / "v.vocab"
        write_kgeb(vec, 2, 1, [1, 2], magic=b"NOPE")
        voc.write_text("a\n", encoding="utf-8")
        with pytest.raises(EmbeddingFormatError, match="magic"):
            load_embeddings(vec, voc)

    def test_bad_version(self, tmp_path):
        vec = tmp_path / "v.kgeb"
        voc = tmp_path / "v.vocab"
        write_kgeb(vec, 2, 1, [1, 2], version=9)
        voc.write_text("a\n", encoding="utf-8")
        with pytest.raises(EmbeddingFormatError, match="version"):
            load_embeddings(vec, voc)

    def test_save_load_round_trip_bitwise(self, tmp_path):
        table = mock_table(["x", "y", "z"], 6, seed=4)
        v1, n1 = tmp_path / "a.kgeb", tmp_path / "a.vocab"
        v2, n2 = tmp_path / "b.kgeb", tmp_path / "b.vocab"
        save_embeddings(table, v1, n1)
        loaded = load_embeddings(v1, n1)
        save_embeddings(loaded, v2, n2)
        assert v1.read_bytes() == v2.read_bytes()
        assert n1.read_bytes() == n2.read_bytes()
        assert loaded.rows.tobytes() == table.rows.tobytes()


class TestCosine:
    def test_self_similarity_is_one(self):
        v = np.array([0.3, -1.2, 4.0])
        assert cosine(v, v) == pytest.approx(1.0)

    def test_orthogonal_is_zero(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.0)

    def test_hand_value(self):
        got = cosine(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
        assert got == pytest.approx(0.70710678, abs=1e-6)

    def test_zero_vector_degenerate(self):
        assert cosine(np.zeros(3), np.array([1.0, 2.0, 3.0])) == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            cosine(np.zeros(2), np.zeros(3))


finite_vecs = arrays(
    np.float64, st.integers(min_value=1, max_value=8),
    elements=st.floats(min_value=-100, max_value=100, allow_nan=False),
)


@given(finite_vecs.flatmap(
    lambda a: st.tuples(st.just(a), arrays(np.float64, a.shape,
                        elements=st.floats(min_value=-100, max_value=100, allow_nan=False)))
))
@settings(max_examples=100, deadline=None)
def test_cosine_symmetry(pair):
    a, b = pair
    assert cosine(a, b) == cosine(b, a)


@given(
    finite_vecs.filter(lambda v: np.linalg.norm(v) > 1e-3),
    st.floats(min_value=0.01, max_value=50),
)
@settings(max_examples=100, deadline=None)
def test_cosine_scale_invariance(a, k):
    b = np.arange(1, len(a) + 1, dtype=np.float64)
    assert cosine(k * a, b) == pytest.approx(cosine(a, b), abs=1e-6)


class TestPathEmbedding:
    @pytest.fixture
    def g(self):
        return build_graph([("s", "r", "m"), ("m", "r", "t")])

    def test_bare_source_is_own_vector(self, g):
        table = make_table([[1, 0], [0, 1], [1, 1], [2, 2]], ["s", "m", "t", "r"])
        chain = ReasoningChain(source=g.entity_id("s"), steps=[], reached_target=False)
        assert np.allclose(path_embedding(chain, table, g), [1, 0])

    def test_one_step_three_term_mean(self, g):
        table = make_table([[1, 0], [1, 0], [0, 0], [0, 1]], ["s", "m", "t", "r"])
        chain = ReasoningChain(
            source=g.entity_id("s"),
            steps=[(g.entity_id("s"), g.relation_id("r"), g.entity_id("m"))],
            reached_target=False,
        )
        assert np.allclose(path_embedding(chain, table, g), [2 / 3, 1 / 3])

    def test_zero_vectors_propagate_degenerate_cosine(self, g):
        table = make_table([[0, 0]] * 4, ["s", "m", "t", "r"])
        chain = ReasoningChain(
            source=g.entity_id("s"),
            steps=[(g.entity_id("s"), g.relation_id("r"), g.entity_id("m"))],
            reached_target=False,
        )
        emb = path_embedding(chain, table, g)
        assert np.allclose(emb, 0.0)
        assert cosine(emb, np.array([1.0, 1.0])) == 0.0

    def test_missing_vocab_reports_name(self, g):
        table = make_table([[1, 0]], ["s"])
        chain = ReasoningChain(
            source=g.entity_id("s"),
            steps=[(g.entity_id("s"), g.relation_id("r"), g.entity_id("m"))],
            reached_target=False,
        )
        with pytest.raises(KeyError, match="r"):
            path_embedding(chain, table, g)

    def test_matches_bruteforce_mean(self, g):
        table = mock_table(["s", "m", "t", "r"], 5, seed=1)
        chain = ReasoningChain(
            source=g.entity_id("s"),
            steps=[
                (g.entity_id("s"), g.relation_id("r"), g.entity_id("m")),
                (g.entity_id("m"), g.relation_id("r"), g.entity_id("t")),
            ],
            reached_target=True,
        )
        names = ["s", "r", "m", "r", "t"]
        brute = np.mean([table.vector(n) for n in names], axis=0)
        assert np.allclose(path_embedding(chain, table, g), brute, atol=1e-6)


class TestProject:
    def test_identity(self):
        w = ProjectionMatrix.identity(3)
        p = np.array([1.0, -2.0, 0.5])
        assert np.allclose(project(w, p), p)

    def test_swap_matrix(self):
        w = ProjectionMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert np.allclose(project(w, np.array([2.0, 3.0])), [3.0, 2.0])

    def test_zero_matrix(self):
        w = ProjectionMatrix(np.zeros((2, 2)))
        assert np.allclose(project(w, np.array([5.0, 6.0])), 0.0)

    def test_dim_mismatch(self):
        w = ProjectionMatrix(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            project(w, np.zeros(3))


class TestMockEmbed:
    def test_deterministic(self):
        a = mock_embed("hello", 16, 7)
        b = mock_embed("hello", 16, 7)
        assert a.tobytes() == b.tobytes()

    def test_unit_norm(self):
        for text in ("a", "b", "long text with spaces"):
            assert np.linalg.norm(mock_embed(text, 12, 0)) == pytest.approx(1.0, abs=1e-6)

    def test_no_collisions_at_dim_16(self):
        vecs = [mock_embed(f"text-{i}", 16, 0) for i in range(1000)]
        sims = [cosine(vecs[i], vecs[i + 1]) for i in range(999)]
        assert max(sims) < 0.999999

    def test_seed_changes_vector(self):
        assert not np.allclose(mock_embed("x", 8, 0), mock_embed("x", 8, 1))

    def test_dim_validated(self):
        with pytest.raises(ValueError):
            mock_embed("x", 0, 0)
