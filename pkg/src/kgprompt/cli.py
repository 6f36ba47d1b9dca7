"""Command-line surface: train-policy, train-bandit, evaluate, answer.

Exit codes are a stable contract: 0 success, 1 runtime failure, 2 usage
error. An optional ``key=value`` config file (``--config``) supplies defaults
at lower precedence than flags, and one ``--seed`` funnels all randomness.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from kgprompt.bandit import ARM_COUNT, arm_decode, arm_name, load_bandit, save_bandit
from kgprompt.embeddings import (
    EmbeddingTable,
    ProjectionMatrix,
    load_embeddings,
    mock_table,
)
from kgprompt.gateway import (
    DEFAULT_KEY_ENV,
    GatewayError,
    LlmGateway,
    ProviderConfig,
    ResponseCache,
    SimOracleConfig,
    parse_answer,
)
from kgprompt.harness import (
    MODES,
    Components,
    DatasetFormatError,
    QaExample,
    answer_question,
    build_policy_bundle,
    build_subgraph_bundle,
    evaluate,
    load_dataset,
    run_bandit_training,
    write_curve_csv,
    write_report,
)
from kgprompt.kg import GraphFormatError, KnowledgeGraph, QuestionContext, link_entities, load_graph_tsv
from kgprompt.policy import (
    TrainConfig,
    load_policy,
    save_policy,
    train_reinforce,
    write_training_log,
)
from kgprompt.render import ORIGIN_SUBGRAPH, assemble_prompt, render_knowledge

logger = logging.getLogger(__name__)

SUBGRAPH_ARMS = (0, 1, 2)


def _coerce(value: str):
    low = value.strip()
    if low.lower() in ("true", "false"):
        return low.lower() == "true"
    for cast in (int, float):
        try:
            return cast(low)
        except ValueError:
            pass
    return low


def read_config_file(path: str | Path) -> dict:
    """Parse a flat key=value file; keys use flag names without the dashes."""
    out: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, _, value = stripped.partition("=")
        out[key.strip().replace("-", "_")] = _coerce(value)
    return out


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value defaults file (lower precedence than flags)")
    p.add_argument("--graph", help="knowledge graph TSV")
    p.add_argument("--embeddings", help="KGEB vector file for graph entities/relations")
    p.add_argument("--embeddings-vocab", help="vocab file (default: <embeddings>.vocab)")
    p.add_argument("--ctx-embeddings", help="KGEB vector file for question contexts")
    p.add_argument("--ctx-embeddings-vocab", help="vocab file (default: <ctx-embeddings>.vocab)")
    p.add_argument("--mock-dim", type=int, default=16,
                   help="dimension of generated mock embeddings when no file is given")
    p.add_argument("--dataset", help="JSONL question file")
    p.add_argument("--policy", help="policy checkpoint path")
    p.add_argument("--bandit", help="bandit state path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--report", help="write a JSON report here")
    # provider
    p.add_argument("--provider", choices=["http", "sim"], default="sim")
    p.add_argument("--endpoint", default="")
    p.add_argument("--model", default="")
    p.add_argument("--api-key-env", default=DEFAULT_KEY_ENV)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--max-concurrent", type=int, default=4)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--cache", help="response cache JSONL (default on for http)")
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--sim-mode", choices=["fact_match", "per_arm_bernoulli", "contextual"],
                   default="fact_match")
    p.add_argument("--sim-probs", default="0.5,0.5,0.5,0.5,0.5,0.5",
                   help="per-arm success probabilities for the bernoulli oracle")
    # pipeline knobs
    p.add_argument("--n-rollouts", type=int, default=8)
    p.add_argument("--prune-k", type=int, default=200)
    p.add_argument("--max-triples", type=int, default=64)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--direction", choices=["forward", "backward", "both"], default="both")
    p.add_argument("--k-steps", type=int, default=4, help="rollout step budget K")


def _apply_config(args: argparse.Namespace, subparser: argparse.ArgumentParser) -> None:
    """Fill in config-file values for any flag left at its parser default."""
    if not getattr(args, "config", None):
        return
    config = read_config_file(args.config)
    defaults = {
        a.dest: a.default for a in subparser._actions if a.dest != argparse.SUPPRESS
    }
    for key, value in config.items():
        if key not in defaults:
            continue
        if getattr(args, key) == defaults[key]:
            setattr(args, key, value)


def _load_table(args, vectors_attr: str, vocab_attr: str) -> EmbeddingTable | None:
    vectors = getattr(args, vectors_attr)
    if not vectors:
        return None
    vocab = getattr(args, vocab_attr) or vectors + ".vocab"
    return load_embeddings(vectors, vocab)


def _build_gateway(args) -> LlmGateway:
    provider = ProviderConfig(
        kind=args.provider,
        endpoint=args.endpoint,
        model=args.model,
        api_key_env=args.api_key_env,
        timeout_s=args.timeout,
        max_retries=args.max_retries,
        max_concurrent=args.max_concurrent,
        temperature=args.temperature,
    )
    sim = None
    if args.provider == "sim":
        probs = [float(x) for x in str(args.sim_probs).split(",")]
        sim = SimOracleConfig(mode=args.sim_mode, arm_probs=probs, seed=args.seed)
    cache = None
    if not args.no_cache:
        if args.cache:
            cache = ResponseCache(args.cache)
        elif args.provider == "http":
            base = args.report or "llm_cache"
            cache = ResponseCache(str(base) + ".cache.jsonl")
    return LlmGateway(provider, sim=sim, cache=cache)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        K=args.k_steps,
        episodes=getattr(args, "episodes", 1000),
        learning_rate=getattr(args, "lr", 0.05),
        clip_norm=getattr(args, "clip_norm", 5.0),
        w_reach=getattr(args, "w_reach", 1.0),
        w_cr=getattr(args, "w_cr", 0.5),
        w_cs=getattr(args, "w_cs", 0.5),
        discount=getattr(args, "discount", 0.99),
        seed=args.seed,
        hidden=getattr(args, "hidden", 64),
        direction=args.direction,
    )


def _build_components(args, g: KnowledgeGraph, require_policy: bool) -> Components:
    table = _load_table(args, "embeddings", "embeddings_vocab")
    if table is None:
        table = mock_table(g.entity_names + g.relation_names, args.mock_dim, args.seed)
    ctx_table = _load_table(args, "ctx_embeddings", "ctx_embeddings_vocab")
    policy = None
    if args.policy and Path(args.policy).exists():
        policy = load_policy(args.policy)
    if require_policy and policy is None:
        raise FileNotFoundError(
            f"policy checkpoint {args.policy!r} not found (use --no-rl to skip walk arms)"
        )
    projection = None
    if policy is not None and ctx_table is not None and ctx_table.dim != table.dim:
        logger.warning(
            "context dim %d != path embedding dim %d; without a projection the "
            "context-relatedness term is skipped when ranking chains",
            ctx_table.dim, table.dim,
        )
    return Components(
        g=g,
        table=table,
        gateway=_build_gateway(args),
        policy=policy,
        ctx_table=ctx_table,
        projection=projection,
        cfg=_train_config(args),
        context_dim=(ctx_table.dim if ctx_table is not None else args.mock_dim),
        n_rollouts=args.n_rollouts,
        prune_k=args.prune_k,
        max_triples=args.max_triples,
        hops=args.hops,
        seed=args.seed,
    )


def cmd_train_policy(args) -> int:
    g = load_graph_tsv(args.graph)
    table = _load_table(args, "embeddings", "embeddings_vocab")
    if table is None:
        table = mock_table(g.entity_names + g.relation_names, args.mock_dim, args.seed)
    ctx_table = _load_table(args, "ctx_embeddings", "ctx_embeddings_vocab")
    examples = load_dataset(args.dataset, g)
    questions = [ex.context for ex in examples]
    cfg = _train_config(args)
    w = None
    if ctx_table is not None and ctx_table.dim != table.dim:
        logger.warning(
            "context dim %d != embedding dim %d; no projection available, so the "
            "context-relatedness reward is disabled for this run",
            ctx_table.dim, table.dim,
        )
        ctx_table = None
    elif ctx_table is not None:
        w = ProjectionMatrix.identity(table.dim)
    result = train_reinforce(g, questions, cfg, table, w=w, contexts=ctx_table)
    save_policy(result.params, args.policy)
    log_path = args.log or args.policy + ".log.csv"
    write_training_log(result.log, log_path)
    if args.report:
        Path(args.report).write_text(json.dumps({
            "seed": args.seed,
            "episodes": cfg.episodes,
            "final_success_rate": result.log[-1].success_rate if result.log else 0.0,
            "final_mean_reward": result.log[-1].mean_reward if result.log else 0.0,
        }, indent=2) + "\n", encoding="utf-8")
    print(f"policy written to {args.policy} (log: {log_path}, seed={args.seed})")
    return 0


def cmd_train_bandit(args) -> int:
    g = load_graph_tsv(args.graph)
    comps = _build_components(args, g, require_policy=not args.no_rl)
    examples = load_dataset(args.dataset, g)
    allowed = SUBGRAPH_ARMS if args.no_rl else None
    bandit = None
    if args.resume:
        bandit = load_bandit(args.bandit)
    bandit, curve = run_bandit_training(
        examples, comps, rounds=args.rounds, bandit=bandit, allowed_arms=allowed
    )
    save_bandit(bandit, args.bandit)
    if args.curve:
        write_curve_csv(curve, args.curve)
    if args.report:
        Path(args.report).write_text(json.dumps({
            "seed": args.seed,
            "rounds": args.rounds,
            "final_running_accuracy": curve[-1].running_accuracy if curve else 0.0,
            "arm_obs": [a.n_obs for a in bandit.arms],
        }, indent=2) + "\n", encoding="utf-8")
    print(f"bandit state written to {args.bandit} (seed={args.seed})")
    return 0


def cmd_evaluate(args) -> int:
    g = load_graph_tsv(args.graph)
    needs_policy = args.mode != "no_kg" and not args.no_rl and (
        args.mode == "knowgpt" or (args.mode == "fixed" and args.arm >= 3)
    )
    comps = _build_components(args, g, require_policy=needs_policy)
    examples = load_dataset(args.dataset, g)
    bandit = load_bandit(args.bandit) if args.mode == "knowgpt" else None
    allowed = SUBGRAPH_ARMS if args.no_rl else None
    report, _ = evaluate(
        examples,
        comps,
        mode=args.mode,
        bandit=bandit,
        fixed_arm=args.arm if args.mode == "fixed" else None,
        jobs=args.jobs,
        allowed_arms=allowed,
    )
    if args.report:
        write_report(report, args.report)
    print(f"accuracy={report.accuracy:.4f}")
    return 0


def _parse_choices(pairs: list[str]) -> list[tuple[str, str]]:
    out = []
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--choice expects LABEL=TEXT, got {pair!r}")
        label, _, text = pair.partition("=")
        out.append((label.strip(), text.strip()))
    return out


def cmd_answer(args) -> int:
    g = load_graph_tsv(args.graph)
    comps = _build_components(args, g, require_policy=args.arm >= 3)
    if args.id and args.dataset:
        examples = [ex for ex in load_dataset(args.dataset, g) if ex.id == args.id]
        if not examples:
            raise ValueError(f"example {args.id!r} not found in {args.dataset}")
        ex = examples[0]
    else:
        if not args.question or not args.choice:
            raise ValueError("need --question and --choice pairs, or --dataset with --id")
        choices = _parse_choices(args.choice)
        src_ids, unresolved = link_entities(g, args.source_entities.split(",") if args.source_entities else [])
        if unresolved:
            print(f"warning: unresolved entities {unresolved}", file=sys.stderr)
        targets: dict[str, list[int]] = {}
        for pair in args.target or []:
            label, _, names = pair.partition("=")
            ids, missing = link_entities(g, [n for n in names.split(",") if n])
            if missing:
                print(f"warning: unresolved entities {missing}", file=sys.stderr)
            targets[label.strip()] = ids
        ctx = QuestionContext(
            id="inline", question_text=args.question, choices=choices,
            source_entities=src_ids, target_entities=targets, gold_label=args.answer,
        )
        ex = QaExample(context=ctx, raw_source_names=[], raw_target_names={},
                       gold_fact=args.gold_fact)
    c = comps.context_vector(ex)
    arm = args.arm
    entity_free = not ex.context.source_entities and not ex.context.all_targets()
    print(f"== arm\n{arm} ({arm_name(arm)})")
    if entity_free:
        print("warning: no resolvable entities; using baseline prompt", file=sys.stderr)
        prompt = assemble_prompt(ex.context, "", "none")
        print(f"== prompt\n{prompt.text}")
        if args.dry_run:
            return 0
        reply = comps.gateway.complete(prompt.text, meta=(ex, None))
        parsed = parse_answer(reply.text, ex.context.labels,
                              [t for _, t in ex.context.choices])
        print(f"== reply\n{reply.text}")
        print(f"== parsed\n{parsed.label if parsed.parse_ok else '<parse failure>'}")
        return 0
    if args.dry_run:
        extractor, template = arm_decode(arm)
        if extractor == ORIGIN_SUBGRAPH:
            bundle = build_subgraph_bundle(ex, comps, c)
        else:
            bundle, _ = build_policy_bundle(ex, comps, c)
            if bundle is None:
                bundle = build_subgraph_bundle(ex, comps, c)
        text = render_knowledge(bundle, g, template)
        prompt = assemble_prompt(ex.context, text, template)
        print(f"== prompt\n{prompt.text}")
        return 0
    pred = answer_question(ex, comps, fixed_arm=arm)
    print(f"== prompt\n{pred.prompt.text}")
    print(f"== reply\n{pred.reply.text}")
    print(f"== parsed\n{pred.parsed.label if pred.parsed.parse_ok else '<parse failure>'}")
    return 0


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="kgprompt")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers: dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("train-policy", help="train the walk policy with policy gradients")
    _add_shared(p)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--discount", type=float, default=0.99)
    p.add_argument("--w-reach", type=float, default=1.0)
    p.add_argument("--w-cr", type=float, default=0.5)
    p.add_argument("--w-cs", type=float, default=0.5)
    p.add_argument("--log", help="training log CSV (default <policy>.log.csv)")
    p.set_defaults(func=cmd_train_policy)
    subparsers["train-policy"] = p

    p = sub.add_parser("train-bandit", help="optimize arm selection from LLM feedback")
    _add_shared(p)
    p.add_argument("--rounds", type=int, default=1000)
    p.add_argument("--curve", help="learning-curve CSV output")
    p.add_argument("--no-rl", action="store_true", help="restrict arms to the subgraph rows")
    p.add_argument("--resume", action="store_true", help="continue from the existing state file")
    p.set_defaults(func=cmd_train_bandit)
    subparsers["train-bandit"] = p

    p = sub.add_parser("evaluate", help="frozen evaluation over a dataset")
    _add_shared(p)
    p.add_argument("--mode", choices=list(MODES), default="knowgpt")
    p.add_argument("--arm", type=int, default=0, choices=range(ARM_COUNT))
    p.add_argument("--no-rl", action="store_true")
    p.set_defaults(func=cmd_evaluate)
    subparsers["evaluate"] = p

    p = sub.add_parser("answer", help="answer one question (debugging aid)")
    _add_shared(p)
    p.add_argument("--question")
    p.add_argument("--choice", action="append", help="LABEL=TEXT, repeatable")
    p.add_argument("--source-entities", help="comma-separated entity names")
    p.add_argument("--target", action="append", help="LABEL=name1,name2 (repeatable)")
    p.add_argument("--answer", help="gold label, for scoring")
    p.add_argument("--gold-fact", help="gold fact string for the fact_match oracle")
    p.add_argument("--id", help="pick an example from --dataset by id")
    p.add_argument("--arm", type=int, default=1, choices=range(ARM_COUNT))
    p.add_argument("--dry-run", action="store_true", help="print the prompt, skip the provider")
    p.set_defaults(func=cmd_answer)
    subparsers["answer"] = p

    return parser, subparsers


_REQUIRED = {
    "train-policy": ("graph", "dataset", "policy"),
    "train-bandit": ("graph", "dataset", "bandit"),
    "evaluate": ("graph", "dataset"),
    "answer": ("graph",),
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    _apply_config(args, subparsers[args.command])
    for field_name in _REQUIRED[args.command]:
        if not getattr(args, field_name, None):
            parser.error(f"--{field_name.replace('_', '-')} is required for {args.command}")
    try:
        return args.func(args)
    except (GraphFormatError, DatasetFormatError, GatewayError, ValueError,
            FileNotFoundError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
