"""Knowledge-graph grounded prompting for black-box LLM question answering.

Pipeline: extract question-specific evidence from a triple store (heuristic
2-hop subgraph or a trained walk policy), render it with one of three prompt
templates, and learn per-question which extraction x template combination to
use via a contextual bandit driven by LLM feedback.
"""

from kgprompt._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
