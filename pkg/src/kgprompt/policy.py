"""Goal-conditioned path extraction over the knowledge graph.

A two-layer policy network scores outgoing edges given the current entity and
a goal embedding; it is trained with episodic policy gradients (Monte-Carlo
returns, running-mean baseline, global-norm gradient clipping) to walk from a
question's source entities to its answer entities within a step budget. Three
reward terms shape the walks: reaching a target, staying semantically close
to the question context, and keeping the path short.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from kgprompt import _kernels
from kgprompt.embeddings import EmbeddingTable, ProjectionMatrix, align_to_graph, cosine
from kgprompt.kg import EntityId, KnowledgeGraph, QuestionContext, RelationId, Triple, neighbors

KGPL_MAGIC = b"KGPL"
KGPL_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIII")  # magic, version, d, h, d_a


@dataclass
class RewardBreakdown:
    r_reach: float
    r_cr: float
    r_cs: float
    total: float


@dataclass
class ReasoningChain:
    """A walk from a source entity; steps are (from, relation, to) triples.

    Steps are oriented along the walk, so a backward edge (h, r, t) traversed
    t -> h is recorded as (t, r, h).
    """

    source: EntityId
    steps: list[Triple]
    reached_target: bool
    rewards: RewardBreakdown | None = None

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def last_entity(self) -> EntityId:
        return self.steps[-1][2] if self.steps else self.source

    def key(self) -> tuple:
        return (self.source, tuple(self.steps))


@dataclass
class CandidateAction:
    rel: RelationId
    tail: EntityId


@dataclass
class RolloutState:
    current: EntityId
    target: EntityId  # representative target (lowest id of the goal set)
    step: int
    visited: list[tuple[EntityId, RelationId]]


@dataclass
class TrainConfig:
    K: int = 4
    episodes: int = 1000
    learning_rate: float = 0.02
    clip_norm: float = 5.0
    w_reach: float = 1.0
    w_cr: float = 0.5
    w_cs: float = 0.5
    discount: float = 0.99
    seed: int = 0
    hidden: int = 64
    direction: str = "both"
    optimizer: str = "adam"  # "adam" | "sgd"; gradient and clipping are identical

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")


@dataclass
class PolicyParams:
    """Weights of the action-scoring network (all float64 in memory)."""

    w1: np.ndarray  # (h, 2d)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (d_a, h)
    b2: np.ndarray  # (d_a,)

    def __post_init__(self) -> None:
        self.w1 = np.ascontiguousarray(self.w1, dtype=np.float64)
        self.b1 = np.ascontiguousarray(self.b1, dtype=np.float64)
        self.w2 = np.ascontiguousarray(self.w2, dtype=np.float64)
        self.b2 = np.ascontiguousarray(self.b2, dtype=np.float64)
        h, ds = self.w1.shape
        da, h2 = self.w2.shape
        if h2 != h or self.b1.shape != (h,) or self.b2.shape != (da,):
            raise ValueError("inconsistent policy parameter shapes")
        for a in (self.w1, self.b1, self.w2, self.b2):
            if not np.isfinite(a).all():
                raise ValueError("policy parameters contain non-finite values")

    @property
    def dim(self) -> int:
        return self.w1.shape[1] // 2

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def action_dim(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def zeros(cls, dim: int, hidden: int = 64) -> "PolicyParams":
        return cls(
            w1=np.zeros((hidden, 2 * dim)),
            b1=np.zeros(hidden),
            w2=np.zeros((2 * dim, hidden)),
            b2=np.zeros(2 * dim),
        )

    @classmethod
    def init(cls, dim: int, hidden: int = 64, seed: int = 0) -> "PolicyParams":
        rng = np.random.Generator(np.random.PCG64(seed))
        return cls(
            w1=rng.standard_normal((hidden, 2 * dim)) / np.sqrt(2 * dim),
            b1=np.zeros(hidden),
            w2=rng.standard_normal((2 * dim, hidden)) / np.sqrt(hidden),
            b2=np.zeros(2 * dim),
        )

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


def save_policy(p: PolicyParams, path: str | Path) -> None:
    """Write a checkpoint: magic KGPL, version, dims, then w1,b1,w2,b2 as f32 LE."""
    header = _CKPT_HEADER.pack(KGPL_MAGIC, KGPL_VERSION, p.dim, p.hidden, p.action_dim)
    body = b"".join(
        np.ascontiguousarray(a, dtype="<f4").tobytes() for a in (p.w1, p.b1, p.w2, p.b2)
    )
    Path(path).write_bytes(header + body)


def load_policy(path: str | Path) -> PolicyParams:
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEADER.size:
        raise ValueError(f"{path}: truncated policy checkpoint")
    magic, version, d, h, da = _CKPT_HEADER.unpack_from(data)
    if magic != KGPL_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != KGPL_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    counts = [h * 2 * d, h, da * h, da]
    expected = _CKPT_HEADER.size + 4 * sum(counts)
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, got {len(data)}")
    flat = np.frombuffer(data, dtype="<f4", offset=_CKPT_HEADER.size)
    offs = np.cumsum([0] + counts)
    return PolicyParams(
        w1=flat[offs[0] : offs[1]].reshape(h, 2 * d),
        b1=flat[offs[1] : offs[2]],
        w2=flat[offs[2] : offs[3]].reshape(da, h),
        b2=flat[offs[3] : offs[4]],
    )


class PolicyRuntime:
    """Graph + embedding views shared across rollouts.

    Precomputes id-aligned vector matrices and caches deduplicated neighbor
    lists, so the per-step work is two gathers and one kernel call.
    """

    def __init__(self, g: KnowledgeGraph, table: EmbeddingTable, direction: str = "both"):
        self.g = g
        self.direction = direction
        self.ent_mat, self.ent_ok, self.rel_mat, self.rel_ok = align_to_graph(table, g)
        self.dim = table.dim
        self._adj: dict[int, list[tuple[int, int]]] = {}

    def require_entity(self, e: EntityId) -> None:
        if not self.ent_ok[e]:
            raise KeyError(f"no embedding for entity {self.g.entity_names[e]!r}")

    def candidates(self, e: EntityId, visited: set[int]) -> list[tuple[int, int]]:
        adj = self._adj.get(e)
        if adj is None:
            seen: set[tuple[int, int]] = set()
            adj = []
            for pair in neighbors(self.g, e, self.direction):
                if pair not in seen:
                    seen.add(pair)
                    adj.append(pair)
            self._adj[e] = adj
        return [(r, t) for r, t in adj if t not in visited]

    def goal_vector(self, targets: Sequence[EntityId]) -> np.ndarray:
        for t in targets:
            self.require_entity(t)
        return self.ent_mat[list(targets)].mean(axis=0)

    def state(self, current: EntityId, goal_vec: np.ndarray) -> np.ndarray:
        self.require_entity(current)
        cur = self.ent_mat[current]
        return np.concatenate([cur, goal_vec - cur])

    def feats(self, cands: list[tuple[int, int]]) -> np.ndarray:
        rels = [r for r, _ in cands]
        tails = [t for _, t in cands]
        for r in rels:
            if not self.rel_ok[r]:
                raise KeyError(f"no embedding for relation {self.g.relation_names[r]!r}")
        for t in tails:
            self.require_entity(t)
        return np.ascontiguousarray(
            np.concatenate([self.rel_mat[rels], self.ent_mat[tails]], axis=1)
        )


def state_vector(current: EntityId, target: EntityId, table: EmbeddingTable, g: KnowledgeGraph) -> np.ndarray:
    """Concatenation (e_current, e_target - e_current)."""
    cur = np.asarray(table.vector(g.entity_names[current]), dtype=np.float64)
    tgt = np.asarray(table.vector(g.entity_names[target]), dtype=np.float64)
    return np.concatenate([cur, tgt - cur])


def action_feature(a: CandidateAction, table: EmbeddingTable, g: KnowledgeGraph) -> np.ndarray:
    """Concatenation (relation vector, tail vector)."""
    rel = np.asarray(table.vector(g.relation_names[a.rel]), dtype=np.float64)
    tail = np.asarray(table.vector(g.entity_names[a.tail]), dtype=np.float64)
    return np.concatenate([rel, tail])


def policy_forward(
    p: PolicyParams,
    s: np.ndarray,
    actions: Sequence[CandidateAction],
    table: EmbeddingTable,
    g: KnowledgeGraph,
) -> np.ndarray:
    """Probability distribution over the candidate actions for state ``s``."""
    if not actions:
        raise ValueError("policy_forward needs at least one candidate action")
    feats = np.ascontiguousarray(
        np.stack([action_feature(a, table, g) for a in actions])
    )
    s = np.ascontiguousarray(s, dtype=np.float64)
    probs, _, _ = _kernels.policy_forward(p.w1, p.b1, p.w2, p.b2, s, feats)
    return probs


def reach_reward(chain: ReasoningChain, K: int) -> float:
    """+1 if the walk reached a target within K steps, else -1."""
    return 1.0 if chain.reached_target and len(chain) <= K else -1.0


def concise_reward(chain: ReasoningChain) -> float:
    """1 / path length; a zero-length chain degenerates to 1.0."""
    return 1.0 if len(chain) == 0 else 1.0 / len(chain)


def context_reward(
    chain: ReasoningChain,
    c: np.ndarray | None,
    w: ProjectionMatrix | None,
    table: EmbeddingTable,
    g: KnowledgeGraph,
) -> float:
    """Mean cosine between each step-prefix path embedding and the context.

    The prefix embedding after step i is the running mean of the 2i+1 entity
    and relation vectors walked so far, mapped through ``w`` before comparing
    to ``c``. Empty chains and missing contexts contribute 0.
    """
    if c is None or len(chain) == 0:
        return 0.0
    c = np.asarray(c, dtype=np.float64)
    acc = np.asarray(table.vector(g.entity_names[chain.source]), dtype=np.float64).copy()
    count = 1
    total = 0.0
    wm = None if w is None or w.is_identity else w.w.astype(np.float64)
    for _, r, t in chain.steps:
        acc = acc + table.vector(g.relation_names[r])
        acc = acc + table.vector(g.entity_names[t])
        count += 2
        prefix = acc / count
        total += cosine(prefix if wm is None else wm @ prefix, c)
    return total / len(chain)


def episode_return(
    chain: ReasoningChain,
    cfg: TrainConfig,
    c: np.ndarray | None,
    w: ProjectionMatrix | None,
    table: EmbeddingTable,
    g: KnowledgeGraph,
) -> RewardBreakdown:
    """Weighted combination of the three reward terms."""
    r_reach = reach_reward(chain, cfg.K)
    r_cr = context_reward(chain, c, w, table, g) if cfg.w_cr != 0.0 else 0.0
    r_cs = concise_reward(chain)
    total = cfg.w_reach * r_reach + cfg.w_cr * r_cr + cfg.w_cs * r_cs
    return RewardBreakdown(r_reach=r_reach, r_cr=r_cr, r_cs=r_cs, total=total)


@dataclass
class RolloutTrace:
    """Per-step tensors retained for the gradient pass."""

    states: list[np.ndarray] = field(default_factory=list)
    feats: list[np.ndarray] = field(default_factory=list)
    hiddens: list[np.ndarray] = field(default_factory=list)
    probs: list[np.ndarray] = field(default_factory=list)
    chosen: list[int] = field(default_factory=list)


def sample_rollout(
    g: KnowledgeGraph,
    policy: PolicyParams,
    source: EntityId,
    targets: Sequence[EntityId],
    cfg: TrainConfig,
    rng: np.random.Generator,
    table: EmbeddingTable | None = None,
    runtime: PolicyRuntime | None = None,
    greedy: bool = False,
    trace: RolloutTrace | None = None,
) -> ReasoningChain:
    """Walk up to ``cfg.K`` steps from ``source`` toward any of ``targets``.

    Visited entities are masked out of the candidate set, so walks are simple
    paths; a dead end terminates the episode early with ``reached_target``
    False. A source already in the target set yields an empty, reached chain.
    """
    if runtime is None:
        if table is None:
            raise ValueError("sample_rollout needs a table or a prepared runtime")
        runtime = PolicyRuntime(g, table, cfg.direction)
    target_set = set(targets)
    if not target_set:
        raise ValueError("sample_rollout needs at least one target entity")
    if source in target_set:
        return ReasoningChain(source=source, steps=[], reached_target=True)

    goal_vec = runtime.goal_vector(sorted(target_set))
    state = RolloutState(current=source, target=min(target_set), step=0, visited=[])
    visited: set[int] = {source}
    steps: list[Triple] = []
    reached = False
    for _ in range(cfg.K):
        cands = runtime.candidates(state.current, visited)
        if not cands:
            break
        s = runtime.state(state.current, goal_vec)
        feats = runtime.feats(cands)
        probs, hidden, _ = _kernels.policy_forward(
            policy.w1, policy.b1, policy.w2, policy.b2, s, feats
        )
        if greedy:
            idx = int(np.argmax(probs))
        else:
            idx = int(rng.choice(len(cands), p=probs / probs.sum()))
        if trace is not None:
            trace.states.append(s)
            trace.feats.append(feats)
            trace.hiddens.append(hidden)
            trace.probs.append(probs)
            trace.chosen.append(idx)
        r, t = cands[idx]
        steps.append((state.current, r, t))
        visited.add(t)
        state.visited.append((state.current, r))
        state.current = t
        state.step += 1
        if t in target_set:
            reached = True
            break
    return ReasoningChain(source=source, steps=steps, reached_target=reached)


@dataclass
class TrainLogRow:
    epoch: int
    mean_reward: float
    success_rate: float
    mean_len: float


@dataclass
class TrainResult:
    params: PolicyParams
    log: list[TrainLogRow]
    grad_norms: list[float]


def write_training_log(rows: Sequence[TrainLogRow], path: str | Path) -> None:
    lines = ["epoch,mean_reward,success_rate,mean_len"]
    lines += [
        f"{r.epoch},{r.mean_reward:.6f},{r.success_rate:.6f},{r.mean_len:.6f}" for r in rows
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _trainable(q: QuestionContext) -> bool:
    return bool(q.source_entities) and bool(_train_targets(q))


def _train_targets(q: QuestionContext) -> list[EntityId]:
    if q.gold_label is not None:
        gold = q.target_entities.get(q.gold_label, [])
        if gold:
            return gold
    return q.all_targets()


def train_reinforce(
    g: KnowledgeGraph,
    questions: Sequence[QuestionContext],
    cfg: TrainConfig,
    table: EmbeddingTable,
    w: ProjectionMatrix | None = None,
    contexts: EmbeddingTable | None = None,
    params: PolicyParams | None = None,
    log_window: int = 100,
) -> TrainResult:
    """Episodic policy-gradient training over the question pool.

    Each episode samples a question and a source entity, rolls out the
    current policy, scores the walk with the combined reward, and applies one
    update: per-step coefficients are the discounted episode return minus a
    running-mean baseline, and the summed gradient is clipped to
    ``cfg.clip_norm`` before the ascent step.
    """
    pool = [q for q in questions if _trainable(q)]
    if not pool:
        raise ValueError("no trainable question: need >=1 source and >=1 target entity")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    runtime = PolicyRuntime(g, table, cfg.direction)
    if params is None:
        params = PolicyParams.init(runtime.dim, cfg.hidden, cfg.seed)
    else:
        params = params.copy()

    weights = (params.w1, params.b1, params.w2, params.b2)
    grads = tuple(np.zeros_like(a) for a in weights)
    gw1, gb1, gw2, gb2 = grads
    adam_m = tuple(np.zeros_like(a) for a in weights)
    adam_v = tuple(np.zeros_like(a) for a in weights)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    updates = 0

    baseline = 0.0
    episodes_seen = 0
    window: list[tuple[float, bool, int]] = []
    log: list[TrainLogRow] = []
    grad_norms: list[float] = []

    for episode in range(1, cfg.episodes + 1):
        q = pool[int(rng.integers(len(pool)))]
        source = q.source_entities[int(rng.integers(len(q.source_entities)))]
        targets = _train_targets(q)
        c = contexts.get(q.id) if contexts is not None else None

        trace = RolloutTrace()
        chain = sample_rollout(
            g, params, source, targets, cfg, rng, runtime=runtime, trace=trace
        )
        breakdown = episode_return(chain, cfg, c, w, table, g)
        chain.rewards = breakdown

        advantage = breakdown.total - baseline
        episodes_seen += 1
        baseline += (breakdown.total - baseline) / episodes_seen

        norm = 0.0
        if trace.chosen and cfg.learning_rate != 0.0:
            for a in grads:
                a[:] = 0.0
            n_steps = len(trace.chosen)
            for t in range(n_steps):
                coeff = (cfg.discount ** (n_steps - 1 - t)) * advantage
                _kernels.logprob_grad(
                    params.w1, params.w2,
                    trace.states[t], trace.feats[t],
                    trace.hiddens[t], trace.probs[t],
                    trace.chosen[t], coeff,
                    gw1, gb1, gw2, gb2,
                )
            norm = float(np.sqrt(sum(np.sum(a * a) for a in grads)))
            if not np.isfinite(norm):
                raise RuntimeError(
                    f"non-finite gradient at episode {episode} "
                    f"(question {q.id}, return {breakdown.total})"
                )
            if norm > cfg.clip_norm:
                scale = cfg.clip_norm / norm
                for a in grads:
                    a *= scale
                norm = cfg.clip_norm
            updates += 1
            if cfg.optimizer == "adam":
                for p, a, m, v in zip(weights, grads, adam_m, adam_v):
                    m *= beta1
                    m += (1.0 - beta1) * a
                    v *= beta2
                    v += (1.0 - beta2) * a * a
                    m_hat = m / (1.0 - beta1**updates)
                    v_hat = v / (1.0 - beta2**updates)
                    p += cfg.learning_rate * m_hat / (np.sqrt(v_hat) + adam_eps)
            else:
                for p, a in zip(weights, grads):
                    p += cfg.learning_rate * a
        grad_norms.append(norm)

        window.append((breakdown.total, chain.reached_target, len(chain)))
        if len(window) > log_window:
            window.pop(0)
        log.append(
            TrainLogRow(
                epoch=episode,
                mean_reward=float(np.mean([r for r, _, _ in window])),
                success_rate=float(np.mean([1.0 if s else 0.0 for _, s, _ in window])),
                mean_len=float(np.mean([n for _, _, n in window])),
            )
        )
    return TrainResult(params=params, log=log, grad_norms=grad_norms)


def extract_paths(
    g: KnowledgeGraph,
    policy: PolicyParams,
    q: QuestionContext,
    cfg: TrainConfig,
    table: EmbeddingTable,
    w: ProjectionMatrix | None = None,
    c: np.ndarray | None = None,
    n_rollouts: int = 8,
    rng: np.random.Generator | None = None,
    runtime: PolicyRuntime | None = None,
) -> list[ReasoningChain]:
    """Best reasoning chain per (source, choice) pair, deduplicated.

    For every source entity and every choice's target set this runs
    ``n_rollouts`` sampled walks plus one greedy walk and keeps the chain
    with the highest combined reward.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
    if runtime is None:
        runtime = PolicyRuntime(g, table, cfg.direction)
    kept: list[ReasoningChain] = []
    seen: set[tuple] = set()
    for source in q.source_entities:
        for label in q.labels:
            targets = q.target_entities.get(label, [])
            if not targets:
                continue
            best: ReasoningChain | None = None
            for i in range(n_rollouts + 1):
                chain = sample_rollout(
                    g, policy, source, targets, cfg, rng,
                    runtime=runtime, greedy=(i == n_rollouts),
                )
                chain.rewards = episode_return(chain, cfg, c, w, table, g)
                if best is None or chain.rewards.total > best.rewards.total:
                    best = chain
            if best is not None and best.key() not in seen:
                seen.add(best.key())
                kept.append(best)
    return kept
