"""Input encoding and teacher-forced choice scoring.

One scoring pass encodes (question, all choices, one rationale) with fixed
separator tokens and tracks exactly which positions hold the rationale.
The plausibility of a choice is the mean log-probability of its tokens
when teacher-forced through the decoder; probabilities across choices come
from a max-subtracted softmax over those plausibilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import torch

from .data import QAInstance
from .model import SequenceScorer, ToyReasoner
from .rationalize import RationaleSet

LOG_PROB_FLOOR = math.log(1e-12)


class SequenceTooLong(Exception):
    pass


@dataclass(frozen=True)
class EncodedInput:
    """Token-level view of one (instance, choice, rationale) triple.

    attention_mask is all ones at construction; perturbations downstream
    zero parts of it. Tokens outside rationale_span never depend on the
    rationale text. question_span supports the context-dropout baseline.
    """

    token_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    rationale_span: tuple[int, int]
    answer_token_ids: tuple[int, ...]
    question_span: tuple[int, int]
    truncated: bool = False

    def __post_init__(self):
        start, end = self.rationale_span
        if not (0 <= start <= end <= len(self.token_ids)):
            raise ValueError("rationale_span out of bounds")
        if len(self.attention_mask) != len(self.token_ids):
            raise ValueError("attention_mask length mismatch")
        if not self.answer_token_ids:
            raise ValueError("answer_token_ids must be non-empty")

    @property
    def span_length(self) -> int:
        return self.rationale_span[1] - self.rationale_span[0]


def encode(
    instance: QAInstance,
    rationale: Optional[str],
    choice_index: int,
    model: ToyReasoner,
) -> EncodedInput:
    """Encode question + all choices (+ one rationale) for one choice.

    Layout: q <sep> a_1 <sep> ... <sep> a_n [<sep> r]. Over-long rationales
    are truncated from the right (questions and choices never are); the
    truncation is recorded on the result.
    """
    if not (0 <= choice_index < len(instance.choices)):
        raise ValueError(f"choice_index {choice_index} out of range")
    tok = model.tokenizer
    sep = tok.sep_id
    prefix: list[int] = list(tok.encode(instance.question))
    question_span = (0, len(prefix))
    for choice in instance.choices:
        prefix.append(sep)
        prefix.extend(tok.encode(choice))
    answer_ids = tuple(tok.encode(instance.choices[choice_index]))
    truncated = False
    if rationale is None:
        ids = prefix
        span = (len(ids), len(ids))
    else:
        if not rationale.strip():
            raise ValueError("rationale must be non-empty (placeholder allowed)")
        r_ids = tok.encode(rationale)
        budget = model.max_len - len(prefix) - 1  # 1 for the separator
        if budget <= 0:
            raise SequenceTooLong(
                f"{instance.id}: question+choices occupy {len(prefix)} of "
                f"{model.max_len} positions"
            )
        if len(r_ids) > budget:
            r_ids = r_ids[:budget]
            truncated = True
        ids = prefix + [sep] + r_ids
        span = (len(prefix) + 1, len(prefix) + 1 + len(r_ids))
    if len(ids) > model.max_len:
        raise SequenceTooLong(f"{instance.id}: {len(ids)} > {model.max_len}")
    return EncodedInput(
        token_ids=tuple(ids),
        attention_mask=tuple(1 for _ in ids),
        rationale_span=span,
        answer_token_ids=answer_ids,
        question_span=question_span,
        truncated=truncated,
    )


def plausibility(model: SequenceScorer, enc: EncodedInput) -> float:
    """Mean log-probability of the forced answer tokens (floored, finite)."""
    dists = model.output_distributions(
        enc.token_ids, enc.attention_mask, enc.answer_token_ids
    )
    logs = [
        math.log(max(float(dists[j, t]), 1e-12))
        for j, t in enumerate(enc.answer_token_ids)
    ]
    return math.fsum(logs) / len(logs)


def softmax_probabilities(scores: Sequence[float]) -> tuple[float, ...]:
    """Max-subtracted softmax in float64."""
    arr = np.asarray(scores, dtype=np.float64)
    shifted = arr - arr.max()
    exp = np.exp(shifted)
    return tuple((exp / exp.sum()).tolist())


@dataclass(frozen=True)
class ChoiceScores:
    plausibilities: tuple[float, ...]
    probabilities: tuple[float, ...]
    predicted_index: int

    def __post_init__(self):
        if abs(math.fsum(self.probabilities) - 1.0) > 1e-6:
            raise ValueError("probabilities must sum to 1")
        best = max(
            range(len(self.probabilities)), key=lambda i: (self.probabilities[i], -i)
        )
        if best != self.predicted_index:
            raise ValueError("predicted_index must be the (lowest) argmax")

    @classmethod
    def from_plausibilities(cls, scores: Sequence[float]) -> "ChoiceScores":
        probs = softmax_probabilities(scores)
        predicted = max(range(len(probs)), key=lambda i: (probs[i], -i))
        return cls(
            plausibilities=tuple(float(s) for s in scores),
            probabilities=probs,
            predicted_index=predicted,
        )


def score_choices(
    model: SequenceScorer,
    instance: QAInstance,
    rationales: Optional[RationaleSet],
    reasoner: Optional[ToyReasoner] = None,
) -> ChoiceScores:
    """Score every choice with its own rationale (or none) and predict.

    Ties break to the lowest choice index. `reasoner` defaults to `model`
    when the scorer itself carries the tokenizer (the usual case); a
    separate encoding model is only needed for stub scorers in tests.
    """
    enc_model = reasoner if reasoner is not None else model
    if rationales is not None and len(rationales.rationales) != len(instance.choices):
        raise ValueError(
            f"{instance.id}: {len(rationales.rationales)} rationales for "
            f"{len(instance.choices)} choices"
        )
    scores = []
    for i in range(len(instance.choices)):
        text = rationales.rationales[i] if rationales is not None else None
        enc = encode(instance, text, i, enc_model)
        scores.append(plausibility(model, enc))
    return ChoiceScores.from_plausibilities(scores)


# -- batched scoring -------------------------------------------------------


def collate(
    encs: Sequence[EncodedInput], pad_id: int
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Pad encodings into (src, src_mask, tgt, tgt_mask) tensors."""
    s_max = max(len(e.token_ids) for e in encs)
    t_max = max(len(e.answer_token_ids) for e in encs)
    b = len(encs)
    src = torch.full((b, s_max), pad_id, dtype=torch.long)
    src_mask = torch.zeros((b, s_max), dtype=torch.bool)
    tgt = torch.full((b, t_max), pad_id, dtype=torch.long)
    tgt_mask = torch.zeros((b, t_max), dtype=torch.float32)
    for r, e in enumerate(encs):
        s, t = len(e.token_ids), len(e.answer_token_ids)
        src[r, :s] = torch.tensor(e.token_ids, dtype=torch.long)
        src_mask[r, :s] = torch.tensor(e.attention_mask, dtype=torch.bool)
        tgt[r, :t] = torch.tensor(e.answer_token_ids, dtype=torch.long)
        tgt_mask[r, :t] = 1.0
    return src, src_mask, tgt, tgt_mask


@torch.no_grad()
def batched_plausibilities(
    model: ToyReasoner, encs: Sequence[EncodedInput]
) -> np.ndarray:
    """Eval-mode plausibilities for many encodings in one padded forward."""
    was_training = model.training
    model.eval()
    try:
        src, src_mask, tgt, tgt_mask = collate(encs, model.tokenizer.pad_id)
        picked = model.answer_log_probs(src, src_mask, tgt, tgt_mask)
        picked = picked.clamp(min=LOG_PROB_FLOOR) * tgt_mask
        scores = picked.sum(dim=1) / tgt_mask.sum(dim=1)
    finally:
        if was_training:
            model.train()
    return scores.double().numpy()


def score_instances(
    model: ToyReasoner,
    instances: Sequence[QAInstance],
    rationales: Optional[dict[str, RationaleSet]],
    batch_instances: int = 16,
) -> list[ChoiceScores]:
    """Batched scoring over many instances (deterministic batching).

    With rationales=None the rationale segment is omitted entirely, which
    is how models trained in no_rationale mode are evaluated.
    """
    out: list[ChoiceScores] = []
    for start in range(0, len(instances), batch_instances):
        chunk = instances[start : start + batch_instances]
        encs: list[EncodedInput] = []
        for inst in chunk:
            rset = rationales.get(inst.id) if rationales is not None else None
            if rationales is not None and rset is None:
                raise KeyError(f"missing rationales for instance {inst.id}")
            for i in range(len(inst.choices)):
                text = rset.rationales[i] if rset is not None else None
                encs.append(encode(inst, text, i, model))
        scores = batched_plausibilities(model, encs)
        cursor = 0
        for inst in chunk:
            n = len(inst.choices)
            out.append(
                ChoiceScores.from_plausibilities(scores[cursor : cursor + n].tolist())
            )
            cursor += n
    return out
