"""Pure numpy implementation of the policy-network hot kernels.

Mirrors the compiled extension in `_speedups.pyx` operation for operation;
both compute in float64 so results agree to machine-epsilon level.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def policy_forward(w1, b1, w2, b2, state, feats):
    """Score candidate actions with the two-layer head network.

    Returns ``(probs, hidden, head)``: softmax over the candidate logits
    ``feats @ head``, where ``head = w2 @ tanh(w1 @ state + b1) + b2``.
    """
    hidden = np.tanh(w1 @ state + b1)
    head = w2 @ hidden + b2
    logits = feats @ head
    logits -= logits.max()
    probs = np.exp(logits)
    probs /= probs.sum()
    return probs, hidden, head


def logprob_grad(w1, w2, state, feats, hidden, probs, chosen, coeff, gw1, gb1, gw2, gb2):
    """Accumulate ``coeff * d log probs[chosen] / d params`` into the g buffers."""
    g_head = coeff * (feats[chosen] - probs @ feats)
    gb2 += g_head
    gw2 += np.outer(g_head, hidden)
    g_z = (w2.T @ g_head) * (1.0 - hidden * hidden)
    gb1 += g_z
    gw1 += np.outer(g_z, state)
