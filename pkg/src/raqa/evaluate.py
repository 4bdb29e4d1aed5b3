"""Evaluation orchestration: prediction dumps, the LAS simulator, the
sensitivity stress test, oracle-rationale evaluation, and OOD transfer.

The simulator mirrors the reasoner's own input format: the with-rationale
condition scores each choice paired with that choice's rationale, the
without-rationale condition omits the rationale segment. Both are trained
on the reasoner's predicted labels, never on gold.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .backends import CompletionBackend, DEFAULT_MAX_NEW_TOKENS, DEFAULT_STOP_SEQUENCES
from .data import DatasetSplit, QAInstance
from .metrics import EmptyPredictions, EvalReport, PredictionRecord, accuracy
from .model import ToyReasoner
from .prompts import PromptSpec
from .rationalize import RationaleCache, RationaleSet, generate_rationales
from .reasoner import score_instances
from .training import TrainConfig, train

logger = logging.getLogger(__name__)


class EvaluationError(Exception):
    pass


class MissingAnnotatedRationale(EvaluationError):
    def __init__(self, instance_id: str):
        super().__init__(f"instance {instance_id} has no annotated rationale")
        self.instance_id = instance_id


class SameSourceTarget(EvaluationError):
    pass


def predict_split(
    model: ToyReasoner,
    split: DatasetSplit,
    rationales: Optional[dict[str, RationaleSet]],
    batch_instances: int = 16,
) -> list[PredictionRecord]:
    """Score a split and dump one record per instance.

    Models trained in no_rationale mode are scored without a rationale
    segment regardless; any provided rationale texts are still recorded in
    the dump so downstream metrics can inspect them.
    """
    uses_rationales = model.meta.get("encode_mode", "with_rationale") == "with_rationale"
    scoring_rsets = rationales if uses_rationales else None
    scores = score_instances(model, split.instances, scoring_rsets, batch_instances)
    records = []
    for inst, sc in zip(split.instances, scores):
        rset = rationales.get(inst.id) if rationales else None
        records.append(
            PredictionRecord(
                id=inst.id,
                predicted_index=sc.predicted_index,
                gold_index=inst.gold_index,
                rationale_texts=rset.rationales if rset else (),
                probabilities=sc.probabilities,
            )
        )
    return records


@dataclass
class TrainedSimulator:
    """Two simulator conditions sharing one model family."""

    with_model: ToyReasoner
    without_model: ToyReasoner

    def predict_with(self, instance: QAInstance, rationale_texts: Sequence[str]) -> int:
        rset = RationaleSet(
            instance_id=instance.id,
            rationales=tuple(rationale_texts),
            generator_tag="simulator-view",
        )
        scores = score_instances(self.with_model, [instance], {instance.id: rset})
        return scores[0].predicted_index

    def predict_without(self, instance: QAInstance) -> int:
        scores = score_instances(self.without_model, [instance], None)
        return scores[0].predicted_index


def train_simulator(
    preds_train: Sequence[PredictionRecord],
    instances: dict[str, QAInstance],
    seed: int,
    base_model: ToyReasoner,
    epochs: int = 8,
    learning_rate: float = 3e-4,
    batch_size: int = 16,
) -> TrainedSimulator:
    """Fit the two simulator conditions on the reasoner's predicted labels.

    The training targets come exclusively from PredictionRecord.predicted_index;
    gold labels are never consulted.
    """
    if not preds_train:
        raise EmptyPredictions("cannot train a simulator on an empty dump")
    shadow_instances = []
    rsets = {}
    for rec in preds_train:
        inst = instances[rec.id]
        shadow = QAInstance(
            id=inst.id,
            question=inst.question,
            choices=inst.choices,
            gold_index=rec.predicted_index,
        )
        shadow_instances.append(shadow)
        rsets[inst.id] = RationaleSet(
            instance_id=inst.id,
            rationales=tuple(rec.rationale_texts),
            generator_tag="simulator-train",
        )
    shadow_split = DatasetSplit("train", shadow_instances, "simulator")

    def fit(mode: str, rationales):
        model = base_model.clone_initial(seed=seed)
        cfg = TrainConfig(
            mode=mode,
            strategies=(),
            learning_rate=learning_rate,
            batch_size=batch_size,
            epochs=epochs,
            seed=seed,
        )
        model, _ = train(model, shadow_split, rationales, cfg)
        return model

    with_model = fit("standard", rsets)
    without_model = fit("no_rationale", None)
    return TrainedSimulator(with_model=with_model, without_model=without_model)


@dataclass
class StressResult:
    clean_accuracy: float
    perturbed_accuracy: float
    drop: float


def stress_test(
    model: ToyReasoner,
    backend: CompletionBackend,
    spec: PromptSpec,
    test: DatasetSplit,
    seed: int,
    clean_rationales: dict[str, RationaleSet],
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
    stop: Sequence[str] = DEFAULT_STOP_SEQUENCES,
    cache: Optional[RationaleCache] = None,
) -> StressResult:
    """Accuracy drop when rationales come from substituted questions.

    Each test question is swapped for a uniformly sampled different test
    question; the backend re-rationalizes (substituted question, original
    choices); scoring then pairs the original question with the perturbed
    rationales. The drop is clean minus perturbed accuracy.
    """
    if len(test.instances) < 2:
        raise EvaluationError("stress test needs at least 2 instances")
    rng = np.random.default_rng(seed)
    perturbed: dict[str, RationaleSet] = {}
    n = len(test.instances)
    for i, inst in enumerate(test.instances):
        j = int(rng.integers(0, n - 1))
        if j >= i:
            j += 1
        donor = test.instances[j]
        shadow = QAInstance(
            id=f"{inst.id}::stress{seed}",
            question=donor.question,
            choices=inst.choices,
            gold_index=inst.gold_index,
        )
        rset = generate_rationales(
            backend, spec, shadow, max_new_tokens=max_new_tokens, stop=stop, cache=cache
        )
        perturbed[inst.id] = RationaleSet(
            instance_id=inst.id,
            rationales=rset.rationales,
            generator_tag=rset.generator_tag,
            perturbed=True,
            placeholder_flags=rset.placeholder_flags,
            truncated_flags=rset.truncated_flags,
        )
    clean_preds = predict_split(model, test, clean_rationales)
    stress_preds = predict_split(model, test, perturbed)
    clean_acc = accuracy(clean_preds)
    stress_acc = accuracy(stress_preds)
    return StressResult(
        clean_accuracy=clean_acc,
        perturbed_accuracy=stress_acc,
        drop=clean_acc - stress_acc,
    )


@dataclass
class OracleEvalResult:
    oracle_accuracy: float
    generated_accuracy: float
    delta: float
    # The annotated rationale substitutes for every choice's rationale; a
    # gold-only substitution rule is a plausible alternative reading.
    substitution_rule: str = "all_choices"


def oracle_eval(
    model: ToyReasoner,
    test: DatasetSplit,
    generated_rationales: dict[str, RationaleSet],
) -> OracleEvalResult:
    """Accuracy when annotated rationales replace the generated ones."""
    oracle_rsets = {}
    for inst in test.instances:
        if not inst.annotated_rationale or not inst.annotated_rationale.strip():
            raise MissingAnnotatedRationale(inst.id)
        oracle_rsets[inst.id] = RationaleSet(
            instance_id=inst.id,
            rationales=tuple(inst.annotated_rationale for _ in inst.choices),
            generator_tag="annotated",
        )
    oracle_acc = accuracy(predict_split(model, test, oracle_rsets))
    gen_acc = accuracy(predict_split(model, test, generated_rationales))
    return OracleEvalResult(
        oracle_accuracy=oracle_acc,
        generated_accuracy=gen_acc,
        delta=oracle_acc - gen_acc,
    )


def ood_eval(
    model: ToyReasoner,
    target: DatasetSplit,
    backend: CompletionBackend,
    spec: PromptSpec,
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
    stop: Sequence[str] = DEFAULT_STOP_SEQUENCES,
    cache: Optional[RationaleCache] = None,
) -> EvalReport:
    """Zero-shot transfer: rationalize and score a foreign dataset.

    Refuses to run when the target shares the model's training source tag;
    in-distribution data must not be reported as OOD.
    """
    source = model.meta.get("source_dataset")
    if source is not None and source == target.source_dataset:
        raise SameSourceTarget(
            f"model was trained on {source!r}; target is the same dataset"
        )
    rsets = {}
    for inst in target.instances:
        rsets[inst.id] = generate_rationales(
            backend, spec, inst, max_new_tokens=max_new_tokens, stop=stop, cache=cache
        )
    preds = predict_split(model, target, rsets)
    fingerprint = hashlib.sha256(
        json.dumps(
            {
                "source": source,
                "target": target.source_dataset,
                "backend": backend.identity,
                "prompt": spec.prompt_hash,
            },
            sort_keys=True,
        ).encode("utf-8")
    ).hexdigest()[:16]
    return EvalReport(
        accuracy=accuracy(preds),
        n=len(preds),
        config_fingerprint=fingerprint,
        extras={"source_dataset": source, "target_dataset": target.source_dataset},
    )
