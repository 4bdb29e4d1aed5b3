"""Completion backends for rationale generation.

All backends speak one minimal protocol: prompt in, greedy-decoded text
out. The HTTP backend posts {"prompt", "max_new_tokens", "stop", "greedy"}
and expects {"text": ...}; the mock and oracle backends implement the same
call signature in process so every pipeline stage is testable offline.
"""

from __future__ import annotations

import hashlib
import logging
import re
import time
from abc import ABC, abstractmethod
from typing import Optional, Sequence

import numpy as np

from .data import SyntheticScheme

logger = logging.getLogger(__name__)

DEFAULT_STOP_SEQUENCES = ("\n\nQ:", "\n\n")
DEFAULT_MAX_NEW_TOKENS = 64


class BackendError(Exception):
    pass


class BackendUnavailable(BackendError):
    """Transport-level failure after retries; safe to retry later."""


class CompletionBackend(ABC):
    """Frozen text-completion model under greedy decoding.

    Implementations must be deterministic: identical (prompt, parameters)
    yield identical text.
    """

    @property
    @abstractmethod
    def identity(self) -> str:
        """Stable identifier used in cache keys and generator tags."""

    @abstractmethod
    def complete(
        self,
        prompt: str,
        max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
        stop: Sequence[str] = DEFAULT_STOP_SEQUENCES,
    ) -> str:
        """Return the raw completion text (untrimmed)."""


class HTTPCompletionBackend(CompletionBackend):
    """Client for a hosted completion endpoint speaking the wire protocol."""

    def __init__(
        self,
        url: str,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        retry_wait: float = 1.0,
    ):
        self.url = url
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.retry_wait = retry_wait

    @property
    def identity(self) -> str:
        return f"http:{self.url}"

    def complete(
        self,
        prompt: str,
        max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
        stop: Sequence[str] = DEFAULT_STOP_SEQUENCES,
    ) -> str:
        import requests

        payload = {
            "prompt": prompt,
            "max_new_tokens": max_new_tokens,
            "stop": list(stop),
            "greedy": True,
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_exc: Optional[Exception] = None
        for attempt in range(self.max_retries):
            try:
                resp = requests.post(
                    self.url, json=payload, headers=headers, timeout=self.timeout
                )
                resp.raise_for_status()
                body = resp.json()
                if "text" not in body:
                    raise BackendError(f"malformed response from {self.url}")
                return str(body["text"])
            except BackendError:
                raise
            except Exception as exc:  # connection/timeout/HTTP errors
                last_exc = exc
                if attempt + 1 < self.max_retries:
                    time.sleep(self.retry_wait * (2**attempt))
        raise BackendUnavailable(f"backend {self.url} unreachable: {last_exc}")


_MOCK_WORDS = (
    "because", "therefore", "implies", "relates", "supports", "contrasts",
    "objects", "contains", "causes", "prevents", "follows", "matches",
)


def _final_block(prompt: str) -> str:
    return prompt.rstrip().split("\n\n")[-1]


def _parse_stub(prompt: str) -> tuple[str, str]:
    """Extract (question, target) from the final block of a rendered prompt."""
    block = _final_block(prompt)
    lines = [ln for ln in block.splitlines() if ln.strip()]
    question = ""
    target = ""
    for ln in lines:
        if ln.startswith("Q:"):
            question = ln[2:].strip()
    stub = lines[-1] if lines else ""
    if stub.startswith("A:"):
        target = stub[2:].strip().rstrip(".")
        # drop any leading prefix words ("The answer is ...")
        m = re.search(r"\bis\b\s+(.*)$", target)
        if m:
            target = m.group(1)
    return question, target


class MockCompletionBackend(CompletionBackend):
    """Deterministic in-process backend for tests and reproducibility runs.

    An explicit table maps sha256(prompt) hex digests to fixed completions.
    Prompts not in the table get a pseudo-rationale derived from the final
    block's (question, target) pair only, so reordering the choice list does
    not change any completion.
    """

    def __init__(self, table: Optional[dict[str, str]] = None):
        self.table = dict(table or {})
        self.calls = 0

    @staticmethod
    def prompt_key(prompt: str) -> str:
        return hashlib.sha256(prompt.encode("utf-8")).hexdigest()

    @property
    def identity(self) -> str:
        table_tag = hashlib.sha256(
            "|".join(sorted(self.table)).encode("utf-8")
        ).hexdigest()[:8]
        return f"mock:{table_tag}"

    def complete(
        self,
        prompt: str,
        max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
        stop: Sequence[str] = DEFAULT_STOP_SEQUENCES,
    ) -> str:
        self.calls += 1
        key = self.prompt_key(prompt)
        if key in self.table:
            return self.table[key]
        question, target = _parse_stub(prompt)
        seed = hashlib.sha256(f"{question}|{target}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(seed[:8], "big"))
        words = [_MOCK_WORDS[i] for i in rng.integers(0, len(_MOCK_WORDS), 4)]
        return " ".join([target.split()[0] if target else "it"] + words)


class SyntheticOracleBackend(CompletionBackend):
    """Backend that rationalizes synthetic instances by construction rule.

    It parses the rendered stub (default template only), applies the
    scheme's support rule to the (question, target choice) pair, and emits
    the same rationale text the corpus generator attaches. Because the
    rule reads the question-choice pair, it stays well defined when the
    stress test swaps in a question from another instance - for such
    incoherent pairs it almost always reports no support.
    """

    def __init__(self, scheme: SyntheticScheme, leak_mode: str = "deterministic"):
        if leak_mode not in ("deterministic", "none"):
            raise ValueError(f"unknown leak_mode {leak_mode!r}")
        self.scheme = scheme
        self.leak_mode = leak_mode
        self.calls = 0

    @property
    def identity(self) -> str:
        s = self.scheme
        return (
            f"synthetic-oracle:{self.leak_mode}:{s.n_choices}:{s.vocab_size}:"
            f"{s.match_space}:{s.silence_rate}:{s.pool_tag or '-'}"
        )

    def complete(
        self,
        prompt: str,
        max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
        stop: Sequence[str] = DEFAULT_STOP_SEQUENCES,
    ) -> str:
        self.calls += 1
        question, target = _parse_stub(prompt)
        if not question or not target:
            raise BackendError("oracle backend could not parse the prompt stub")
        block = _final_block(prompt)
        choices: list[str] = []
        for ln in block.splitlines():
            if ln.startswith("Answer Choices:"):
                parts = re.split(r"\s*\([a-z]\)\s*", ln.split(":", 1)[1])
                choices = [p.strip() for p in parts if p.strip()]
        if target not in choices:
            raise BackendError(f"target {target!r} missing from parsed choices")
        return self.scheme.rationalizer_output(
            question, choices, target, leak=self.leak_mode == "deterministic"
        )


def make_backend(
    url: Optional[str] = None,
    mock: bool = False,
    api_key: Optional[str] = None,
) -> CompletionBackend:
    if mock:
        return MockCompletionBackend()
    if url:
        return HTTPCompletionBackend(url, api_key=api_key)
    raise BackendError("no backend configured: pass a URL or enable the mock")
