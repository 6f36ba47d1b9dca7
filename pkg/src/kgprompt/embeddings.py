"""Dense vector tables for entities, relations, and question contexts.

Vectors are stored as float32 rows (KGEB files are bit-exact on disk); all
dot products and means accumulate in float64.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

KGEB_MAGIC = b"KGEB"
KGEB_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")  # magic, version, dim, count


class EmbeddingFormatError(ValueError):
    """Raised when an embedding file violates the KGEB contract."""


@dataclass
class EmbeddingTable:
    """count x dim float32 matrix with a name per row."""

    rows: np.ndarray
    vocab: list[str]
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if self.rows.ndim != 2:
            raise EmbeddingFormatError(f"rows must be 2-D, got shape {self.rows.shape}")
        if self.rows.shape[0] != len(self.vocab):
            raise EmbeddingFormatError(
                f"row count {self.rows.shape[0]} != vocab length {len(self.vocab)}"
            )
        bad = np.flatnonzero(~np.isfinite(self.rows).all(axis=1))
        if bad.size:
            raise EmbeddingFormatError(f"non-finite value in row {int(bad[0])}")
        if not self._index:
            self._index = {name: i for i, name in enumerate(self.vocab)}

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    @property
    def count(self) -> int:
        return int(self.rows.shape[0])

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def vector(self, name: str) -> np.ndarray:
        idx = self._index.get(name)
        if idx is None:
            raise KeyError(f"no embedding for {name!r}")
        return self.rows[idx]

    def get(self, name: str) -> np.ndarray | None:
        idx = self._index.get(name)
        return None if idx is None else self.rows[idx]


def load_embeddings(vectors_path: str | Path, vocab_path: str | Path) -> EmbeddingTable:
    """Load a KGEB vector file plus its companion vocab file.

    KGEB layout: magic ``KGEB``, u32 LE version=1, u32 LE dim, u64 LE count,
    then count*dim float32 LE values row-major. The vocab file holds one name
    per line, line i naming row i.
    """
    vectors_path = Path(vectors_path)
    data = vectors_path.read_bytes()
    if len(data) < _HEADER.size:
        raise EmbeddingFormatError(f"{vectors_path}: truncated header")
    magic, version, dim, count = _HEADER.unpack_from(data)
    if magic != KGEB_MAGIC:
        raise EmbeddingFormatError(f"{vectors_path}: bad magic {magic!r}")
    if version != KGEB_VERSION:
        raise EmbeddingFormatError(f"{vectors_path}: unsupported version {version}")
    expected = _HEADER.size + 4 * dim * count
    if len(data) != expected:
        raise EmbeddingFormatError(
            f"{vectors_path}: expected {expected} bytes for dim={dim} count={count}, got {len(data)}"
        )
    rows = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(count, dim).copy()

    vocab = Path(vocab_path).read_text(encoding="utf-8").splitlines()
    if len(vocab) != count:
        raise EmbeddingFormatError(
            f"{vocab_path}: {len(vocab)} names but vector file stores {count} rows"
        )
    return EmbeddingTable(rows=rows, vocab=vocab)


def save_embeddings(
    table: EmbeddingTable, vectors_path: str | Path, vocab_path: str | Path
) -> None:
    """Write a table back out in the same bit-exact KGEB + vocab layout."""
    header = _HEADER.pack(KGEB_MAGIC, KGEB_VERSION, table.dim, table.count)
    body = np.ascontiguousarray(table.rows, dtype="<f4").tobytes()
    Path(vectors_path).write_bytes(header + body)
    Path(vocab_path).write_text("\n".join(table.vocab) + "\n", encoding="utf-8")


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with float64 accumulation.

    A zero vector on either side is degenerate and yields 0.0 (neutral) rather
    than an error; long-tail entities can legitimately carry zero rows.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.dot(a, a))
    nb = float(np.dot(b, b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    val = float(np.dot(a, b)) / (np.sqrt(na) * np.sqrt(nb))
    return max(-1.0, min(1.0, val))


@dataclass
class ProjectionMatrix:
    """Linear map from path-embedding space to context-embedding space."""

    w: np.ndarray

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, dtype=np.float32)
        if self.w.ndim != 2:
            raise ValueError(f"projection must be 2-D, got shape {self.w.shape}")
        if not np.isfinite(self.w).all():
            raise ValueError("projection matrix contains non-finite values")

    @classmethod
    def identity(cls, dim: int) -> "ProjectionMatrix":
        return cls(np.eye(dim, dtype=np.float32))

    @property
    def is_identity(self) -> bool:
        return self.w.shape[0] == self.w.shape[1] and bool(
            np.array_equal(self.w, np.eye(self.w.shape[0], dtype=self.w.dtype))
        )


def project(w: ProjectionMatrix, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape[0] != w.w.shape[1]:
        raise ValueError(f"projection expects dim {w.w.shape[1]}, got {p.shape[0]}")
    return w.w.astype(np.float64) @ p


def path_embedding(chain, table: EmbeddingTable, g) -> np.ndarray:
    """Mean of the interleaved entity/relation vectors along a walk.

    For a chain with steps [(e0,r1,e1), (e1,r2,e2), ...] the sequence is
    [v(e0), v(r1), v(e1), v(r2), v(e2), ...]; a bare source contributes just
    its own vector. Missing vocabulary entries raise KeyError with the name.
    """
    names = [g.entity_names[chain.source]]
    for _, r, t in chain.steps:
        names.append(g.relation_names[r])
        names.append(g.entity_names[t])
    acc = np.zeros(table.dim, dtype=np.float64)
    for name in names:
        acc += np.asarray(table.vector(name), dtype=np.float64)
    return acc / len(names)


def mock_embed(name_or_text: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic pseudo-random unit vector for a string.

    Stands in for a pre-trained encoder in tests and offline runs: the vector
    depends only on ``(seed, name_or_text, dim)``, never on process state.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    digest = hashlib.sha256(f"{seed}\x1f{name_or_text}".encode("utf-8")).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
    v = rng.standard_normal(dim)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:  # astronomically unlikely; keep the unit-norm contract
        v[0] = 1.0
        norm = 1.0
    return (v / norm).astype(np.float32)


def mock_table(names: Sequence[str], dim: int, seed: int) -> EmbeddingTable:
    """Build an EmbeddingTable from mock_embed over a vocabulary."""
    uniq: list[str] = []
    seen: set[str] = set()
    for n in names:
        if n not in seen:
            seen.add(n)
            uniq.append(n)
    rows = np.stack([mock_embed(n, dim, seed) for n in uniq]) if uniq else np.zeros((0, dim), np.float32)
    return EmbeddingTable(rows=rows, vocab=uniq)


def align_to_graph(table: EmbeddingTable, g) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Gather table rows into graph-id order for fast indexed access.

    Returns ``(ent_mat, ent_ok, rel_mat, rel_ok)`` where the ``*_mat`` arrays
    are float64 with one row per graph id (zeros where missing) and the
    ``*_ok`` boolean masks flag which ids had a vector.
    """
    ent_mat = np.zeros((g.entity_count, table.dim), dtype=np.float64)
    ent_ok = np.zeros(g.entity_count, dtype=bool)
    for i, name in enumerate(g.entity_names):
        row = table.get(name)
        if row is not None:
            ent_mat[i] = row
            ent_ok[i] = True
    rel_mat = np.zeros((g.relation_count, table.dim), dtype=np.float64)
    rel_ok = np.zeros(g.relation_count, dtype=bool)
    for i, name in enumerate(g.relation_names):
        row = table.get(name)
        if row is not None:
            rel_mat[i] = row
            rel_ok[i] = True
    return ent_mat, ent_ok, rel_mat, rel_ok
