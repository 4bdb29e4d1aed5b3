"""Rationale perturbations used by counterfactual training.

Token masking zeroes the attention mask over the rationale span (token ids
untouched, no special mask tokens, so a pretrained mask-filling ability
could never help). Token replacement resamples a fixed fraction of the
span's token ids from the vocabulary. Both leave every position outside
the span bit-identical.
"""

from __future__ import annotations

from dataclasses import replace
from typing import FrozenSet, Sequence

import numpy as np

from .reasoner import EncodedInput

STRATEGY_MASK = "mask"
STRATEGY_REPLACE = "replace"
STRATEGIES = (STRATEGY_MASK, STRATEGY_REPLACE)


def _require_span(enc: EncodedInput) -> tuple[int, int]:
    start, end = enc.rationale_span
    if end <= start:
        raise ValueError("perturbation requires a non-degenerate rationale span")
    return start, end


def perturb_mask(enc: EncodedInput) -> EncodedInput:
    """Zero the attention mask exactly over the rationale span (idempotent)."""
    start, end = _require_span(enc)
    mask = tuple(
        0 if start <= i < end else m for i, m in enumerate(enc.attention_mask)
    )
    return replace(enc, attention_mask=mask)


def mask_question(enc: EncodedInput) -> EncodedInput:
    """Zero the attention mask over the question span (context-dropout)."""
    start, end = enc.question_span
    mask = tuple(
        0 if start <= i < end else m for i, m in enumerate(enc.attention_mask)
    )
    return replace(enc, attention_mask=mask)


def perturb_replace(
    enc: EncodedInput,
    k: float,
    vocab_size: int,
    rng: np.random.Generator,
    excluded_ids: FrozenSet[int] = frozenset(),
) -> EncodedInput:
    """Resample round(k * span_length) in-span token ids.

    Positions are drawn uniformly without replacement; each drawn position
    gets a uniform draw over [0, vocab_size) excluding special/reserved ids
    and its current id, so every touched position actually changes. The
    attention mask and all out-of-span positions are untouched.
    """
    if not 0.0 <= k <= 1.0:
        raise ValueError("replacement rate must be in [0, 1]")
    start, end = _require_span(enc)
    span_len = end - start
    count = int(np.floor(k * span_len + 0.5))
    if count == 0:
        return enc
    positions = rng.choice(span_len, size=count, replace=False)
    ids = list(enc.token_ids)
    for offset in sorted(int(p) for p in positions):
        pos = start + offset
        candidates = [
            t for t in range(vocab_size) if t not in excluded_ids and t != ids[pos]
        ]
        ids[pos] = candidates[int(rng.integers(0, len(candidates)))]
    return replace(enc, token_ids=tuple(ids))


def select_strategy(
    strategies: Sequence[str], rng: np.random.Generator
) -> str:
    """Uniform draw over the enabled strategies (one draw per batch)."""
    if not strategies:
        raise ValueError("strategies must be non-empty")
    ordered = [s for s in STRATEGIES if s in strategies]
    if len(ordered) != len(set(strategies)):
        unknown = set(strategies) - set(STRATEGIES)
        raise ValueError(f"unknown strategies: {sorted(unknown)}")
    return ordered[int(rng.integers(0, len(ordered)))]
