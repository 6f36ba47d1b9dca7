"""Dataset handling and the end-to-end answer pipeline.

Ties everything together: pick an arm (bandit or fixed), extract knowledge
with that arm's strategy, render it with the arm's template, call the LLM,
parse the reply, and score it. Also hosts bandit training against LLM
feedback and batch evaluation with cost accounting.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from kgprompt.bandit import BanditModel, arm_decode
from kgprompt.embeddings import EmbeddingTable, ProjectionMatrix, mock_embed
from kgprompt.gateway import LlmGateway, LlmReply, ParsedAnswer, parse_answer
from kgprompt.kg import KnowledgeGraph, QuestionContext, link_entities
from kgprompt.policy import PolicyParams, PolicyRuntime, TrainConfig, extract_paths
from kgprompt.render import (
    ORIGIN_POLICY,
    ORIGIN_SUBGRAPH,
    KnowledgeBundle,
    RenderedPrompt,
    assemble_prompt,
    render_knowledge,
)
from kgprompt.subgraph import extract_two_hop, score_and_prune, to_triples

logger = logging.getLogger(__name__)

MODE_KNOWGPT = "knowgpt"
MODE_FIXED = "fixed"
MODE_NO_KG = "no_kg"
MODES = (MODE_KNOWGPT, MODE_FIXED, MODE_NO_KG)


class DatasetFormatError(ValueError):
    """Raised when a dataset JSONL record violates the schema."""


@dataclass
class QaExample:
    """A question plus the raw names and oracle hooks the pipeline needs."""

    context: QuestionContext
    raw_source_names: list[str]
    raw_target_names: dict[str, list[str]]
    gold_fact: str | None = None
    cluster: str | None = None

    @property
    def id(self) -> str:
        return self.context.id


def _require(cond: bool, where: str, msg: str) -> None:
    if not cond:
        raise DatasetFormatError(f"{where}: {msg}")


def load_dataset(path: str | Path, g: KnowledgeGraph) -> list[QaExample]:
    """Load JSONL examples, resolving entity names against the graph.

    A record is kept when at least one source entity resolves; unresolved
    names are logged. Schema violations raise with the offending line number.
    """
    path = Path(path)
    examples: list[QaExample] = []
    skipped = 0
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{where}: invalid JSON ({exc})") from exc
            _require(isinstance(rec, dict), where, "record must be an object")
            for key in ("id", "question", "choices", "source_entities", "target_entities"):
                _require(key in rec, where, f"missing field {key!r}")
            _require(isinstance(rec["id"], str) and rec["id"], where, "id must be a nonempty string")
            _require(isinstance(rec["question"], str), where, "question must be a string")
            _require(
                isinstance(rec["choices"], list) and rec["choices"],
                where,
                "choices must be a nonempty list",
            )
            choices: list[tuple[str, str]] = []
            for ch in rec["choices"]:
                _require(
                    isinstance(ch, dict) and isinstance(ch.get("label"), str)
                    and isinstance(ch.get("text"), str),
                    where,
                    "each choice needs string label and text",
                )
                choices.append((ch["label"], ch["text"]))
            answer = rec.get("answer")
            _require(
                answer is None or isinstance(answer, str), where, "answer must be a string"
            )
            _require(
                isinstance(rec["source_entities"], list), where, "source_entities must be a list"
            )
            _require(
                isinstance(rec["target_entities"], dict), where, "target_entities must be a map"
            )

            src_ids, unresolved = link_entities(g, rec["source_entities"])
            if unresolved:
                logger.debug("%s: unresolved source entities %s", where, unresolved)
            if not src_ids:
                logger.info("%s: skipped, no source entity resolves", where)
                skipped += 1
                continue
            targets: dict[str, list[int]] = {}
            for label, names in rec["target_entities"].items():
                _require(isinstance(names, list), where, f"target_entities[{label!r}] must be a list")
                ids, missing = link_entities(g, names)
                if missing:
                    logger.debug("%s: unresolved target entities %s", where, missing)
                targets[label] = ids
            try:
                ctx = QuestionContext(
                    id=rec["id"],
                    question_text=rec["question"],
                    choices=choices,
                    source_entities=src_ids,
                    target_entities=targets,
                    gold_label=answer,
                )
            except ValueError as exc:
                raise DatasetFormatError(f"{where}: {exc}") from exc
            examples.append(
                QaExample(
                    context=ctx,
                    raw_source_names=list(rec["source_entities"]),
                    raw_target_names={k: list(v) for k, v in rec["target_entities"].items()},
                    gold_fact=rec.get("gold_fact"),
                    cluster=rec.get("cluster"),
                )
            )
    if not examples:
        logger.warning("%s: no usable examples (%d skipped)", path, skipped)
    elif skipped:
        logger.info("%s: skipped %d of %d records", path, skipped, skipped + len(examples))
    return examples


@dataclass
class Prediction:
    example_id: str
    arm: int | None
    prompt: RenderedPrompt
    parsed: ParsedAnswer
    correct: bool
    fallback_used: bool
    reply: LlmReply | None = None


@dataclass
class Components:
    """Everything the pipeline needs, wired once and shared across questions."""

    g: KnowledgeGraph
    table: EmbeddingTable
    gateway: LlmGateway
    policy: PolicyParams | None = None
    ctx_table: EmbeddingTable | None = None
    projection: ProjectionMatrix | None = None
    cfg: TrainConfig = field(default_factory=TrainConfig)
    context_dim: int = 16
    n_rollouts: int = 8
    prune_k: int = 200
    max_triples: int = 64
    hops: int = 2
    seed: int = 0
    graph_via_llm: bool = False
    _runtime: PolicyRuntime | None = field(default=None, repr=False)

    def runtime(self) -> PolicyRuntime:
        if self._runtime is None:
            self._runtime = PolicyRuntime(self.g, self.table, self.cfg.direction)
        return self._runtime

    def context_vector(self, ex: QaExample) -> np.ndarray:
        if self.ctx_table is not None:
            vec = self.ctx_table.get(ex.id)
            if vec is not None:
                return np.asarray(vec, dtype=np.float64)
        return np.asarray(
            mock_embed(ex.context.question_text, self.context_dim, self.seed),
            dtype=np.float64,
        )


def _example_rng(seed: int, example_id: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}\x1f{example_id}".encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))


def build_subgraph_bundle(ex: QaExample, comps: Components, c: np.ndarray) -> KnowledgeBundle:
    sub = extract_two_hop(comps.g, ex.context, hops=comps.hops)
    sub = score_and_prune(sub, c, comps.table, comps.g, k=comps.prune_k)
    return KnowledgeBundle.from_triples(to_triples(sub, comps.max_triples), ORIGIN_SUBGRAPH)


def build_policy_bundle(
    ex: QaExample, comps: Components, c: np.ndarray
) -> tuple[KnowledgeBundle | None, list]:
    if comps.policy is None:
        raise ValueError("policy arm selected but no policy checkpoint is loaded")
    # the context-relatedness term needs a projection into the context space;
    # without one (and with mismatched dims) chains rank on reach + length only
    if comps.projection is not None:
        path_ctx = c if comps.projection.w.shape[0] == c.shape[0] else None
    else:
        path_ctx = c if c.shape[0] == comps.table.dim else None
    chains = extract_paths(
        comps.g,
        comps.policy,
        ex.context,
        comps.cfg,
        comps.table,
        w=comps.projection,
        c=path_ctx,
        n_rollouts=comps.n_rollouts,
        rng=_example_rng(comps.seed, ex.id),
        runtime=comps.runtime(),
    )
    reaching = [ch for ch in chains if ch.reached_target and ch.steps]
    if not reaching:
        return None, chains
    triples = [step for ch in reaching for step in ch.steps]
    return KnowledgeBundle.from_triples(triples, ORIGIN_POLICY), chains


def answer_question(
    ex: QaExample,
    comps: Components,
    bandit: BanditModel | None = None,
    fixed_arm: int | None = None,
    no_kg: bool = False,
    allowed_arms: Sequence[int] | None = None,
) -> Prediction:
    """Run the full pipeline for one example and score the reply.

    When the walk-policy extractor yields no target-reaching chain, the
    heuristic subgraph bundle is substituted and the prediction is flagged
    (``fallback_used``).
    """
    c = comps.context_vector(ex)
    fallback_used = False
    if no_kg:
        arm = None
        knowledge_text = ""
        template = "none"
    else:
        if fixed_arm is not None:
            arm = fixed_arm
        elif bandit is not None:
            arm = bandit.select_arm(c, allowed=allowed_arms)
        else:
            raise ValueError("need a bandit, a fixed arm, or no_kg mode")
        extractor, template = arm_decode(arm)
        if extractor == ORIGIN_SUBGRAPH:
            bundle = build_subgraph_bundle(ex, comps, c)
        else:
            bundle, _ = build_policy_bundle(ex, comps, c)
            if bundle is None:
                bundle = build_subgraph_bundle(ex, comps, c)
                fallback_used = True
        knowledge_text = render_knowledge(
            bundle, comps.g, template,
            gateway=comps.gateway if comps.graph_via_llm else None,
        )
    prompt = assemble_prompt(ex.context, knowledge_text, template)
    reply = comps.gateway.complete(prompt.text, meta=(ex, arm))
    parsed = parse_answer(
        reply.text, ex.context.labels, [text for _, text in ex.context.choices]
    )
    correct = bool(
        parsed.parse_ok
        and ex.context.gold_label is not None
        and parsed.label == ex.context.gold_label
    )
    return Prediction(
        example_id=ex.id,
        arm=arm,
        prompt=prompt,
        parsed=parsed,
        correct=correct,
        fallback_used=fallback_used,
        reply=reply,
    )


def reward_from_prediction(p: Prediction) -> int:
    """Binary LLM feedback: 1 for a correct parse-and-answer, else 0."""
    return 1 if p.correct else 0


@dataclass
class CurveRow:
    round: int
    running_accuracy: float
    arm: int


def run_bandit_training(
    train: Sequence[QaExample],
    comps: Components,
    rounds: int,
    bandit: BanditModel | None = None,
    allowed_arms: Sequence[int] | None = None,
) -> tuple[BanditModel, list[CurveRow]]:
    """Optimize arm selection from LLM feedback, one call per round.

    Examples are sampled uniformly with replacement; each round selects an
    arm, answers the question, converts correctness to a binary reward, and
    updates that arm's ridge state.
    """
    if not train:
        raise ValueError("bandit training needs a nonempty train set")
    if bandit is None:
        dim = comps.ctx_table.dim if comps.ctx_table is not None else comps.context_dim
        bandit = BanditModel(dim=dim)
    rng = np.random.Generator(np.random.PCG64(comps.seed))
    curve: list[CurveRow] = []
    correct = 0
    for rnd in range(1, rounds + 1):
        ex = train[int(rng.integers(len(train)))]
        c = comps.context_vector(ex)
        arm = bandit.select_arm(c, allowed=allowed_arms)
        pred = answer_question(ex, comps, fixed_arm=arm)
        r = reward_from_prediction(pred)
        bandit.update(arm, c, r)
        correct += r
        curve.append(CurveRow(round=rnd, running_accuracy=correct / rnd, arm=arm))
    return bandit, curve


@dataclass
class CostLedger:
    prompts: int = 0
    total_tokens_est: int = 0
    wall_clock_s: float = 0.0

    @property
    def mean_tokens_est(self) -> float:
        return self.total_tokens_est / self.prompts if self.prompts else 0.0


@dataclass
class EvalReport:
    accuracy: float
    examples: int
    correct: int
    per_arm_counts: dict[int, int]
    per_template_accuracy: dict[str, float]
    parse_failure_rate: float
    fallback_count: int
    cost: CostLedger
    mode: str
    seed: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "examples": self.examples,
            "correct": self.correct,
            "per_arm_counts": {str(k): v for k, v in sorted(self.per_arm_counts.items())},
            "per_template_accuracy": dict(sorted(self.per_template_accuracy.items())),
            "parse_failure_rate": self.parse_failure_rate,
            "fallback_count": self.fallback_count,
            "cost": {
                "prompts": self.cost.prompts,
                "total_tokens_est": self.cost.total_tokens_est,
                "mean_tokens_est": self.cost.mean_tokens_est,
                "wall_clock_s": self.cost.wall_clock_s,
            },
            "mode": self.mode,
            "seed": self.seed,
        }


def evaluate(
    test: Sequence[QaExample],
    comps: Components,
    mode: str = MODE_KNOWGPT,
    bandit: BanditModel | None = None,
    fixed_arm: int | None = None,
    jobs: int = 1,
    allowed_arms: Sequence[int] | None = None,
) -> tuple[EvalReport, list[Prediction]]:
    """Frozen-model evaluation: no bandit updates, deterministic per seed."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == MODE_KNOWGPT and bandit is None:
        raise ValueError("knowgpt mode needs a trained bandit")
    if mode == MODE_FIXED and fixed_arm is None:
        raise ValueError("fixed mode needs --arm")

    def run(ex: QaExample) -> Prediction:
        if mode == MODE_NO_KG:
            return answer_question(ex, comps, no_kg=True)
        if mode == MODE_FIXED:
            return answer_question(ex, comps, fixed_arm=fixed_arm)
        return answer_question(ex, comps, bandit=bandit, allowed_arms=allowed_arms)

    start = time.perf_counter()
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            predictions = list(pool.map(run, test))
    else:
        predictions = [run(ex) for ex in test]
    wall = time.perf_counter() - start

    correct = sum(1 for p in predictions if p.correct)
    per_arm: dict[int, int] = {}
    per_template: dict[str, list[int]] = {}
    parse_failures = 0
    fallbacks = 0
    tokens = 0
    for p in predictions:
        if p.arm is not None:
            per_arm[p.arm] = per_arm.get(p.arm, 0) + 1
        bucket = per_template.setdefault(p.prompt.template, [0, 0])
        bucket[0] += 1 if p.correct else 0
        bucket[1] += 1
        parse_failures += 0 if p.parsed.parse_ok else 1
        fallbacks += 1 if p.fallback_used else 0
        tokens += p.prompt.token_estimate
    n = len(predictions)
    report = EvalReport(
        accuracy=correct / n if n else 0.0,
        examples=n,
        correct=correct,
        per_arm_counts=per_arm,
        per_template_accuracy={
            t: (c / total if total else 0.0) for t, (c, total) in per_template.items()
        },
        parse_failure_rate=parse_failures / n if n else 0.0,
        fallback_count=fallbacks,
        cost=CostLedger(prompts=n, total_tokens_est=tokens, wall_clock_s=wall),
        mode=mode,
        seed=comps.seed,
    )
    return report, predictions


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")


def write_curve_csv(rows: Sequence[CurveRow], path: str | Path) -> None:
    lines = ["round,running_accuracy,arm"]
    lines += [f"{r.round},{r.running_accuracy:.6f},{r.arm}" for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
