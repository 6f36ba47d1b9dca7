"""Hot-kernel backend selection.

The compiled extension is preferred when present; set ``KGPROMPT_PURE_PYTHON=1``
to force the numpy fallback (used by the parity tests and the benchmark).
"""

from __future__ import annotations

import os

if os.environ.get("KGPROMPT_PURE_PYTHON", "") not in ("", "0"):
    from kgprompt._kernels._pykernels import BACKEND, logprob_grad, policy_forward
else:
    try:
        from kgprompt._kernels._speedups import BACKEND, logprob_grad, policy_forward
    except ImportError:
        from kgprompt._kernels._pykernels import BACKEND, logprob_grad, policy_forward

__all__ = ["BACKEND", "policy_forward", "logprob_grad"]
