"""Uniform access to the answering LLM.

Two providers share one interface: an HTTP chat-completion endpoint (bearer
auth, retries with exponential backoff, bounded concurrency, optional response
cache) and a deterministic simulated oracle used by tests and offline runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_KEY_ENV = "KNOWGPT_API_KEY"

SIM_FACT_MATCH = "fact_match"
SIM_PER_ARM = "per_arm_bernoulli"
SIM_CONTEXTUAL = "contextual"


class GatewayError(RuntimeError):
    """Provider configuration or transport failure."""


@dataclass
class ProviderConfig:
    kind: str = "sim"  # "http" | "sim"
    endpoint: str = ""
    model: str = ""
    api_key_env: str = DEFAULT_KEY_ENV
    timeout_s: float = 30.0
    max_retries: int = 3
    max_concurrent: int = 4
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("http", "sim"):
            raise ValueError(f"provider kind must be http or sim, got {self.kind!r}")
        if self.kind == "http" and (not self.endpoint or not self.model):
            raise ValueError("http provider requires endpoint and model")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")


@dataclass
class SimOracleConfig:
    mode: str = SIM_FACT_MATCH
    arm_probs: Sequence[float] = (0.5,) * 6
    cluster_probs: dict[str, Sequence[float]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in (SIM_FACT_MATCH, SIM_PER_ARM, SIM_CONTEXTUAL):
            raise ValueError(f"unknown sim mode {self.mode!r}")
        for p in list(self.arm_probs):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"arm probability {p} outside [0, 1]")
        for probs in self.cluster_probs.values():
            for p in probs:
                if not 0.0 <= p <= 1.0:
                    raise ValueError(f"cluster probability {p} outside [0, 1]")


@dataclass
class LlmReply:
    text: str
    prompt_tokens_est: int
    latency_ms: int


@dataclass
class ParsedAnswer:
    label: str | None
    parse_ok: bool
    raw: str


def parse_answer(
    reply: str, labels: Sequence[str], choice_texts: Sequence[str] | None = None
) -> ParsedAnswer:
    """Extract a choice label from free-form model output.

    Cascade: a parenthesized label like ``(B)`` (case-insensitive), then a
    standalone label token (case-sensitive, to keep single letters from
    matching English words), then a verbatim choice text (case-insensitive).
    Failure is encoded in ``parse_ok``, never raised.
    """
    if not labels:
        raise ValueError("parse_answer needs at least one label")

    best: tuple[int, str] | None = None
    lowered = reply.lower()
    for label in labels:
        pos = lowered.find(f"({label.lower()})")
        if pos >= 0 and (best is None or pos < best[0]):
            best = (pos, label)
    if best is not None:
        return ParsedAnswer(label=best[1], parse_ok=True, raw=reply)

    for label in labels:
        m = re.search(rf"(?<![A-Za-z0-9]){re.escape(label)}(?![A-Za-z0-9])", reply)
        if m and (best is None or m.start() < best[0]):
            best = (m.start(), label)
    if best is not None:
        return ParsedAnswer(label=best[1], parse_ok=True, raw=reply)

    if choice_texts is not None:
        for label, text in zip(labels, choice_texts):
            if not text:
                continue
            pos = lowered.find(text.lower())
            if pos >= 0 and (best is None or pos < best[0]):
                best = (pos, label)
        if best is not None:
            return ParsedAnswer(label=best[1], parse_ok=True, raw=reply)

    return ParsedAnswer(label=None, parse_ok=False, raw=reply)


def _seeded_rng(*parts) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))


def _wrong_label(cfg: SimOracleConfig, example, arm: int | None = None) -> str:
    gold = example.context.gold_label
    others = [label for label in example.context.labels if label != gold]
    if not others:
        return gold
    rng = _seeded_rng(cfg.seed, example.id, "wrong", arm if arm is not None else "")
    return others[int(rng.integers(len(others)))]


def simulate_oracle(cfg: SimOracleConfig, prompt: str, example, arm: int | None) -> str:
    """Deterministic stand-in for the answering LLM.

    fact_match answers correctly iff the example's gold-fact string occurs in
    the prompt; the Bernoulli modes answer correctly with a per-arm (or per
    cluster x arm) probability, seeded by example id and arm.
    """
    gold = example.context.gold_label
    if gold is None:
        raise GatewayError(f"example {example.id}: sim oracle needs a gold label")

    if cfg.mode == SIM_FACT_MATCH:
        if not example.gold_fact:
            raise GatewayError(
                f"example {example.id}: fact_match oracle needs a gold_fact string"
            )
        if example.gold_fact in prompt:
            return f"({gold})"
        return f"({_wrong_label(cfg, example)})"

    if cfg.mode == SIM_PER_ARM:
        if arm is None:
            raise GatewayError("per_arm_bernoulli oracle needs the arm index")
        p = float(cfg.arm_probs[arm])
    else:  # contextual
        if arm is None:
            raise GatewayError("contextual oracle needs the arm index")
        cluster = getattr(example, "cluster", None)
        if cluster is None or cluster not in cfg.cluster_probs:
            raise GatewayError(f"example {example.id}: unknown cluster {cluster!r}")
        p = float(cfg.cluster_probs[cluster][arm])

    draw = float(_seeded_rng(cfg.seed, example.id, "draw", arm).random())
    if draw < p:
        return f"({gold})"
    return f"({_wrong_label(cfg, example, arm)})"


def backoff_delay(attempt: int, base_s: float = 1.0, rng: np.random.Generator | None = None) -> float:
    """Delay before retry ``attempt`` (1-based): base * 2^(attempt-1) plus jitter."""
    if attempt < 1:
        raise ValueError("attempt is 1-based")
    jitter = float(rng.random()) * base_s * 0.1 if rng is not None else 0.0
    return base_s * (2.0 ** (attempt - 1)) + jitter


class ResponseCache:
    """Append-only JSONL cache of replies keyed by (model, prompt hash)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, str], str] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                self._entries[(rec["model"], rec["hash"])] = rec["reply"]

    @staticmethod
    def prompt_hash(prompt: str) -> str:
        return hashlib.sha256(prompt.encode("utf-8")).hexdigest()

    def get(self, model: str, prompt: str) -> str | None:
        return self._entries.get((model, self.prompt_hash(prompt)))

    def put(self, model: str, prompt: str, reply: str) -> None:
        key = (model, self.prompt_hash(prompt))
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = reply
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps({"hash": key[1], "model": model, "reply": reply}) + "\n")


def _tokens_est(prompt: str) -> int:
    return -(-len(prompt.encode("utf-8")) // 4)


class LlmGateway:
    """Shared front door to the provider: caching, retries, concurrency cap."""

    def __init__(
        self,
        provider: ProviderConfig,
        sim: SimOracleConfig | None = None,
        cache: ResponseCache | None = None,
        backoff_base_s: float = 1.0,
        sleep=time.sleep,
    ):
        self.provider = provider
        self.sim = sim
        self.cache = cache
        self.backoff_base_s = backoff_base_s
        self._sleep = sleep
        self._sem = threading.Semaphore(provider.max_concurrent)
        self._gauge_lock = threading.Lock()
        self._inflight = 0
        self.peak_inflight = 0
        self._jitter_rng = np.random.Generator(np.random.PCG64(0))
        if provider.kind == "sim" and sim is None:
            raise ValueError("sim provider requires a SimOracleConfig")

    def complete(self, prompt: str, meta: tuple | None = None) -> LlmReply:
        """Send one prompt; ``meta=(example, arm)`` routes the sim oracle."""
        if not prompt:
            raise ValueError("prompt must be nonempty")
        if self.cache is not None:
            hit = self.cache.get(self.provider.model, prompt)
            if hit is not None:
                return LlmReply(text=hit, prompt_tokens_est=_tokens_est(prompt), latency_ms=0)

        start = time.perf_counter()
        with self._sem:
            with self._gauge_lock:
                self._inflight += 1
                self.peak_inflight = max(self.peak_inflight, self._inflight)
            try:
                text = self._dispatch(prompt, meta)
            finally:
                with self._gauge_lock:
                    self._inflight -= 1
        latency_ms = int((time.perf_counter() - start) * 1000)
        if self.cache is not None:
            self.cache.put(self.provider.model, prompt, text)
        return LlmReply(text=text, prompt_tokens_est=_tokens_est(prompt), latency_ms=latency_ms)

    def _dispatch(self, prompt: str, meta: tuple | None) -> str:
        if self.provider.kind == "sim":
            if meta is None:
                raise GatewayError("sim provider needs (example, arm) metadata")
            example, arm = meta
            return simulate_oracle(self.sim, prompt, example, arm)
        return self._http_complete(prompt)

    def _http_complete(self, prompt: str) -> str:
        import requests

        key = os.environ.get(self.provider.api_key_env, "")
        if not key:
            raise GatewayError(
                f"api key env var {self.provider.api_key_env!r} is not set"
            )
        body = {
            "model": self.provider.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.provider.temperature,
        }
        headers = {"Authorization": f"Bearer {key}"}
        last_error: Exception | None = None
        for attempt in range(self.provider.max_retries + 1):
            if attempt > 0:
                self._sleep(backoff_delay(attempt, self.backoff_base_s, self._jitter_rng))
            try:
                resp = requests.post(
                    self.provider.endpoint,
                    json=body,
                    headers=headers,
                    timeout=self.provider.timeout_s,
                )
            except requests.RequestException as exc:
                last_error = exc
                logger.warning("transport error (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = GatewayError(f"HTTP {resp.status_code}")
                logger.warning("retryable status %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code != 200:
                raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise GatewayError(f"malformed response body: {exc}") from exc
            if not isinstance(content, str) or not content:
                raise GatewayError("malformed response body: empty or non-string content")
            return content
        raise GatewayError(f"retries exhausted: {last_error}")
