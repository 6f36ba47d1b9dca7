"""Contextual bandit over the six extraction x template arms.

Each arm keeps a ridge-regression model of its binary reward as a linear
function of the question-context embedding; arm selection maximizes the
ridge estimate plus an upper-confidence exploration bonus. Accumulators are
float64 and the per-arm system is solved by Cholesky factorization (which
doubles as the positive-definiteness certificate) rather than kept as an
explicit inverse.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from kgprompt.render import (
    ORIGIN_POLICY,
    ORIGIN_SUBGRAPH,
    TEMPLATE_GRAPH,
    TEMPLATE_SENTENCES,
    TEMPLATE_TRIPLES,
)

KGMB_MAGIC = b"KGMB"
KGMB_VERSION = 1
_STATE_HEADER = struct.Struct("<4sIIIdd")  # magic, version, d, arm_count, lambda, delta

ARM_COUNT = 6
_EXTRACTORS = (ORIGIN_SUBGRAPH, ORIGIN_POLICY)
_TEMPLATES = (TEMPLATE_TRIPLES, TEMPLATE_SENTENCES, TEMPLATE_GRAPH)


def arm_decode(arm: int) -> tuple[str, str]:
    """Map an arm index to its (extractor, template) pair, row-major."""
    if not 0 <= arm < ARM_COUNT:
        raise ValueError(f"arm index {arm} out of range [0, {ARM_COUNT})")
    return _EXTRACTORS[arm // 3], _TEMPLATES[arm % 3]


def arm_encode(extractor: str, template: str) -> int:
    return _EXTRACTORS.index(extractor) * 3 + _TEMPLATES.index(template)


def arm_name(arm: int) -> str:
    extractor, template = arm_decode(arm)
    return f"{extractor}+{template}"


def gamma_of_delta(delta: float) -> float:
    """Exploration constant: 1 + sqrt(ln(2/delta)/2)."""
    if not 0.0 < delta <= 2.0:
        raise ValueError(f"delta must be in (0, 2], got {delta}")
    return 1.0 + math.sqrt(math.log(2.0 / delta) / 2.0)


@dataclass
class ArmState:
    """Ridge accumulators: a_mat = lambda*I + sum c c^T, b_vec = sum r c."""

    a_mat: np.ndarray
    b_vec: np.ndarray
    n_obs: int = 0

    @classmethod
    def fresh(cls, dim: int, lam: float) -> "ArmState":
        return cls(a_mat=lam * np.eye(dim, dtype=np.float64), b_vec=np.zeros(dim), n_obs=0)

    def _factor(self):
        try:
            return cho_factor(self.a_mat, lower=True)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
            raise RuntimeError(f"arm covariance not positive definite: {exc}") from exc


def alpha(arm: ArmState) -> np.ndarray:
    """Ridge weight vector: solve a_mat @ alpha = b_vec."""
    if arm.n_obs == 0:
        return np.zeros_like(arm.b_vec)
    sol = cho_solve(arm._factor(), arm.b_vec)
    if not np.isfinite(sol).all():
        raise RuntimeError(
            f"non-finite ridge solution (n_obs={arm.n_obs}, "
            f"|b|={float(np.linalg.norm(arm.b_vec))})"
        )
    return sol


@dataclass
class BanditModel:
    """Six-arm contextual bandit with shared dimension and regularizer."""

    dim: int
    lam: float = 1.0
    delta: float = 0.1
    arms: list[ArmState] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise ValueError("lambda must be > 0")
        self.gamma = gamma_of_delta(self.delta)
        if not self.arms:
            self.arms = [ArmState.fresh(self.dim, self.lam) for _ in range(ARM_COUNT)]

    def _check_context(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        if c.shape != (self.dim,):
            raise ValueError(f"context dim {c.shape} != model dim ({self.dim},)")
        return c

    def ucb_width(self, arm: int, c: np.ndarray) -> float:
        """Exploration term sqrt(c^T a_mat^{-1} c) for one arm."""
        c = self._check_context(c)
        state = self.arms[arm]
        quad = float(c @ cho_solve(state._factor(), c))
        return math.sqrt(max(quad, 0.0))

    def expectation(self, arm: int, c: np.ndarray) -> float:
        """Estimated reward plus the gamma-weighted confidence bonus."""
        c = self._check_context(c)
        state = self.arms[arm]
        factor = state._factor()
        est = float(c @ cho_solve(factor, state.b_vec)) if state.n_obs else 0.0
        quad = float(c @ cho_solve(factor, c))
        return est + self.gamma * math.sqrt(max(quad, 0.0))

    def select_arm(self, c: np.ndarray, allowed: Sequence[int] | None = None) -> int:
        """Argmax of the expectations; ties go to the lowest arm index."""
        c = self._check_context(c)
        indices = range(len(self.arms)) if allowed is None else sorted(set(allowed))
        if not indices:
            raise ValueError("no arms allowed")
        best_arm = -1
        best_val = -math.inf
        for arm in indices:
            val = self.expectation(arm, c)
            if val > best_val:
                best_val = val
                best_arm = arm
        return best_arm

    def update(self, arm: int, c: np.ndarray, r: int) -> None:
        """Rank-one accumulate one observation into a single arm."""
        if r not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {r!r}")
        if not 0 <= arm < len(self.arms):
            raise ValueError(f"arm index {arm} out of range [0, {len(self.arms)})")
        c = self._check_context(c)
        state = self.arms[arm]
        state.a_mat += np.outer(c, c)
        if r:
            state.b_vec += c
        state.n_obs += 1


def save_bandit(m: BanditModel, path: str | Path) -> None:
    """Persist: magic KGMB, version, d, arm count, lambda, delta, then per arm
    u64 n_obs + f64 LE a_mat (row-major) + f64 LE b_vec."""
    chunks = [_STATE_HEADER.pack(KGMB_MAGIC, KGMB_VERSION, m.dim, len(m.arms), m.lam, m.delta)]
    for arm in m.arms:
        chunks.append(struct.pack("<Q", arm.n_obs))
        chunks.append(np.ascontiguousarray(arm.a_mat, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(arm.b_vec, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_bandit(path: str | Path) -> BanditModel:
    data = Path(path).read_bytes()
    if len(data) < _STATE_HEADER.size:
        raise ValueError(f"{path}: truncated bandit state")
    magic, version, dim, arm_count, lam, delta = _STATE_HEADER.unpack_from(data)
    if magic != KGMB_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != KGMB_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    per_arm = 8 + 8 * dim * dim + 8 * dim
    expected = _STATE_HEADER.size + arm_count * per_arm
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, got {len(data)}")
    arms = []
    off = _STATE_HEADER.size
    for _ in range(arm_count):
        (n_obs,) = struct.unpack_from("<Q", data, off)
        off += 8
        a_mat = np.frombuffer(data, dtype="<f8", count=dim * dim, offset=off).reshape(dim, dim).copy()
        off += 8 * dim * dim
        b_vec = np.frombuffer(data, dtype="<f8", count=dim, offset=off).copy()
        off += 8 * dim
        arms.append(ArmState(a_mat=a_mat, b_vec=b_vec, n_obs=n_obs))
    return BanditModel(dim=dim, lam=lam, delta=delta, arms=arms)
