"""Compare the compiled policy kernels against the numpy fallback.

Times the raw kernel calls at rollout-realistic shapes, then a full
policy-gradient training run with each backend swapped in.

Run: python benchmarks/bench_kernels.py
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

import synth  # noqa: E402

import kgprompt._kernels as kernels  # noqa: E402
from kgprompt._kernels import _pykernels  # noqa: E402
from kgprompt.policy import TrainConfig, train_reinforce  # noqa: E402

try:
    from kgprompt._kernels import _speedups
except ImportError:
    _speedups = None


def bench_kernel_calls(backend, reps=20_000, h=64, d=3, n=6):
    rng = np.random.default_rng(0)
    ds, da = 2 * d, 2 * d
    w1 = rng.standard_normal((h, ds))
    b1 = np.zeros(h)
    w2 = rng.standard_normal((da, h))
    b2 = np.zeros(da)
    state = rng.standard_normal(ds)
    feats = np.ascontiguousarray(rng.standard_normal((n, da)))
    grads = [np.zeros_like(w1), np.zeros_like(b1), np.zeros_like(w2), np.zeros_like(b2)]

    start = time.perf_counter()
    for _ in range(reps):
        probs, hidden, _ = backend.policy_forward(w1, b1, w2, b2, state, feats)
    forward_s = time.perf_counter() - start

    start = time.perf_counter()
    for _ in range(reps):
        backend.logprob_grad(w1, w2, state, feats, hidden, probs, 2, 0.5, *grads)
    grad_s = time.perf_counter() - start
    return forward_s / reps * 1e6, grad_s / reps * 1e6


def bench_training(backend_module, episodes=2000):
    # swap the backend the policy module dispatches through
    saved = (kernels.policy_forward, kernels.logprob_grad, kernels.BACKEND)
    kernels.policy_forward = backend_module.policy_forward
    kernels.logprob_grad = backend_module.logprob_grad
    kernels.BACKEND = backend_module.BACKEND
    try:
        g, table = synth.geometric_graph(500, 3, seed=7)
        questions = synth.navigation_questions(g, 200, seed=1)
        contexts = synth.goal_contexts(g, table, questions)
        cfg = TrainConfig(K=5, episodes=episodes, learning_rate=0.01, w_cr=0.5,
                          w_cs=0.5, seed=0, hidden=64)
        start = time.perf_counter()
        train_reinforce(g, questions, cfg, table, contexts=contexts)
        return time.perf_counter() - start
    finally:
        kernels.policy_forward, kernels.logprob_grad, kernels.BACKEND = saved


def main() -> int:
    backends = [("python", _pykernels)]
    if _speedups is not None:
        backends.insert(0, ("c", _speedups))
    else:
        print("compiled extension not built; benchmarking the fallback only")

    print(f"{'backend':<8} {'forward us/call':>16} {'grad us/call':>14} "
          f"{'train 2k eps (s)':>18}")
    rows = {}
    for name, module in backends:
        fwd, grad = bench_kernel_calls(module)
        train_s = bench_training(module)
        rows[name] = (fwd, grad, train_s)
        print(f"{name:<8} {fwd:>16.2f} {grad:>14.2f} {train_s:>18.2f}")
    if "c" in rows and "python" in rows:
        speedup = rows["python"][2] / rows["c"][2]
        print(f"\ncompiled end-to-end training speedup: {speedup:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
