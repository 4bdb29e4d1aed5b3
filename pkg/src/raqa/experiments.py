"""Desk-scale experiment protocols on the synthetic leak corpus.

The faithfulness corpus plants three carefully calibrated properties:
  - per-choice marker rationales whose support rule binds question text to
    choice words, so substituted questions honestly yield garbled,
    unsupportive rationales (the stress test's perturbation),
  - a silenced fraction of train questions (the rationalizer fails them),
    which teaches every model a fallback for marker-less inputs,
  - a weak lexical prior over choice words, valid on every split but worth
    only chance-level accuracy to a model without rationale access.

Counterfactually regularized training, having seen corrupted rationale
spans with smoothed targets, flattens its predictions on garbled inputs;
standard training extrapolates its fallback prior instead. That is what
separates their stress-test drops, mirroring the full-scale finding that
counterfactual regularization increases sensitivity to rationale
perturbations.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .backends import SyntheticOracleBackend
from .data import DatasetSplit, SyntheticScheme, generate_synthetic
from .evaluate import StressResult, predict_split, stress_test, train_simulator
from .metrics import PredictionRecord, accuracy, las
from .model import ToyReasoner
from .prompts import Demonstration, PromptSpec
from .rationalize import RationaleSet, rationalize_split
from .reasoner import encode, score_instances
from .perturb import perturb_mask
from .tokenizer import WordTokenizer
from .training import TrainConfig, TrainLog, train

logger = logging.getLogger(__name__)

# Calibrated constants for the faithfulness corpus (see module docstring).
FAITHFUL_VOCAB = 200
FAITHFUL_SILENCE = 0.30
FAITHFUL_GOLD_BIAS = 0.70
FAITHFUL_OTHER_BIAS = 0.50
FAITHFUL_TEST_INCOHERENT = 0.20
FAITHFUL_EPSILON = 1.0
DEFAULT_SEEDS = (0, 1, 2, 3)


@dataclass
class FaithfulnessCorpus:
    train: DatasetSplit
    dev: DatasetSplit
    test: DatasetSplit
    train_scheme: SyntheticScheme
    eval_scheme: SyntheticScheme
    tokenizer: WordTokenizer
    prompt_spec: PromptSpec

    def backends(self):
        """(train backend with silencing, eval backend without)."""
        return (
            SyntheticOracleBackend(self.train_scheme),
            SyntheticOracleBackend(self.eval_scheme),
        )


def synthetic_prompt_spec(scheme: SyntheticScheme, seed: int = 1234) -> PromptSpec:
    """Demonstrations for prompting a backend about synthetic instances."""
    demo_split = generate_synthetic(
        2,
        scheme.n_choices,
        scheme.vocab_size,
        seed=seed,
        name="train",
        id_prefix="demo",
        scheme=scheme,
    )
    demos = []
    for inst in demo_split.instances:
        demos.append(
            Demonstration(
                question=inst.question,
                choices=inst.choices,
                gold_answer=inst.choices[inst.gold_index],
                rationale=inst.annotated_rationale,
            )
        )
    return PromptSpec(demonstrations=tuple(demos), template_id="default")


def build_faithfulness_corpus(
    n_train: int = 500,
    n_dev: int = 100,
    n_test: int = 100,
    n_choices: int = 4,
    seed: int = 7,
) -> FaithfulnessCorpus:
    """Train/dev/test splits plus schemes for the faithfulness experiment.

    Train rationalization is noisier (silenced questions); dev and test are
    fully marked so marker-faithful models can be selected and measured
    cleanly. The lexical prior is planted identically on every split.
    """
    train_scheme = SyntheticScheme(
        n_choices=n_choices, vocab_size=FAITHFUL_VOCAB, silence_rate=FAITHFUL_SILENCE
    )
    eval_scheme = SyntheticScheme(n_choices=n_choices, vocab_size=FAITHFUL_VOCAB)
    bias = dict(
        gold_bias_prob=FAITHFUL_GOLD_BIAS, other_bias_prob=FAITHFUL_OTHER_BIAS
    )
    train = generate_synthetic(
        n_train, n_choices, FAITHFUL_VOCAB, seed=seed, name="train",
        id_prefix="ftr", source_dataset="synthetic-faithfulness", **bias,
    )
    dev = generate_synthetic(
        n_dev, n_choices, FAITHFUL_VOCAB, seed=seed + 1, name="dev",
        id_prefix="fdv", source_dataset="synthetic-faithfulness", **bias,
    )
    test = generate_synthetic(
        n_test, n_choices, FAITHFUL_VOCAB, seed=seed + 2, name="test",
        id_prefix="fts", source_dataset="synthetic-faithfulness",
        incoherent_rate=FAITHFUL_TEST_INCOHERENT, **bias,
    )
    tokenizer = WordTokenizer(eval_scheme.all_words())
    return FaithfulnessCorpus(
        train=train,
        dev=dev,
        test=test,
        train_scheme=train_scheme,
        eval_scheme=eval_scheme,
        tokenizer=tokenizer,
        prompt_spec=synthetic_prompt_spec(eval_scheme),
    )


def make_config(mode: str, seed: int, epochs: int = 16, epsilon: float = FAITHFUL_EPSILON) -> TrainConfig:
    strategies = ("mask", "replace") if mode == "counterfactual" else ()
    return TrainConfig(
        mode=mode,
        epsilon=epsilon,
        replace_rate=0.30,
        strategies=strategies,
        learning_rate=3e-4,
        batch_size=16,
        epochs=epochs,
        seed=seed,
    )


def train_mode_model(
    corpus: FaithfulnessCorpus,
    mode: str,
    seed: int,
    train_rationales: dict[str, RationaleSet],
    dev_rationales: dict[str, RationaleSet],
    epochs: int = 16,
    epsilon: float = FAITHFUL_EPSILON,
    d_model: int = 48,
) -> tuple[ToyReasoner, TrainLog]:
    model = ToyReasoner(corpus.tokenizer, d_model=d_model, max_len=64, seed=seed)
    cfg = make_config(mode, seed, epochs=epochs, epsilon=epsilon)
    rsets = None if mode == "no_rationale" else train_rationales
    dsets = None if mode == "no_rationale" else dev_rationales
    return train(model, corpus.train, rsets, cfg, dev=corpus.dev, dev_rationales=dsets)


@dataclass
class ModeOutcome:
    mode: str
    seed: int
    dev_accuracy: float
    clean_accuracy: float
    stress: Optional[StressResult]
    las_value: Optional[float]
    records: list[PredictionRecord] = field(default_factory=list)


@dataclass
class FaithfulnessReport:
    outcomes: list[ModeOutcome]

    def seed_mean(self, mode: str, attr: str) -> float:
        vals = []
        for o in self.outcomes:
            if o.mode != mode:
                continue
            if attr == "drop":
                vals.append(o.stress.drop if o.stress else float("nan"))
            else:
                vals.append(getattr(o, attr))
        return float(np.mean(vals))

    def to_dict(self) -> dict:
        return {
            "outcomes": [
                {
                    "mode": o.mode,
                    "seed": o.seed,
                    "dev_accuracy": o.dev_accuracy,
                    "clean_accuracy": o.clean_accuracy,
                    "stress_drop": o.stress.drop if o.stress else None,
                    "stress_clean": o.stress.clean_accuracy if o.stress else None,
                    "stress_perturbed": o.stress.perturbed_accuracy if o.stress else None,
                    "las": o.las_value,
                }
                for o in self.outcomes
            ]
        }


def run_faithfulness_experiment(
    corpus: Optional[FaithfulnessCorpus] = None,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    modes: Sequence[str] = ("counterfactual", "standard", "no_rationale"),
    epochs: int = 16,
    epsilon: float = FAITHFUL_EPSILON,
    compute_las: bool = True,
    simulator_epochs: int = 14,
) -> FaithfulnessReport:
    """Train every (mode, seed) pair and evaluate accuracy/stress/LAS.

    The LAS simulator for each trained model is fitted on the model's
    train-split predictions and evaluated on its test predictions
    (disjoint records). The no_rationale arm pairs its predictions with
    marker-free noise rationales, giving the no-signal LAS reference.
    """
    corpus = corpus or build_faithfulness_corpus()
    train_backend, eval_backend = corpus.backends()
    train_rsets = rationalize_split(train_backend, corpus.prompt_spec, corpus.train)
    dev_rsets = rationalize_split(eval_backend, corpus.prompt_spec, corpus.dev)
    test_rsets = rationalize_split(eval_backend, corpus.prompt_spec, corpus.test)
    noise_train = {
        i.id: RationaleSet(i.id, tuple(corpus.eval_scheme.rationale_text(
            i.question, c, False, leak=False) for c in i.choices), "noise")
        for i in corpus.train.instances
    }
    noise_test = {
        i.id: RationaleSet(i.id, tuple(corpus.eval_scheme.rationale_text(
            i.question, c, False, leak=False) for c in i.choices), "noise")
        for i in corpus.test.instances
    }

    outcomes = []
    for mode in modes:
        for seed in seeds:
            model, log = train_mode_model(
                corpus, mode, seed, train_rsets, dev_rsets,
                epochs=epochs, epsilon=epsilon,
            )
            clean_preds = predict_split(
                model, corpus.test,
                test_rsets if mode != "no_rationale" else noise_test,
            )
            clean_acc = accuracy(clean_preds)
            stress = None
            if mode != "no_rationale":
                stress = stress_test(
                    model, eval_backend, corpus.prompt_spec, corpus.test,
                    seed=1000 + seed, clean_rationales=test_rsets,
                )
            else:
                base = predict_split(model, corpus.test, noise_test)
                stress = StressResult(
                    clean_accuracy=accuracy(base),
                    perturbed_accuracy=accuracy(base),
                    drop=0.0,
                )
            las_value = None
            if compute_las:
                sim_preds = predict_split(
                    model, corpus.train,
                    train_rsets if mode != "no_rationale" else noise_train,
                )
                simulator = train_simulator(
                    sim_preds, corpus.train.by_id(), seed=seed,
                    base_model=model, epochs=simulator_epochs,
                )
                las_value = las(simulator, clean_preds, corpus.test.by_id())
            outcomes.append(
                ModeOutcome(
                    mode=mode,
                    seed=seed,
                    dev_accuracy=log.best_dev_accuracy,
                    clean_accuracy=clean_acc,
                    stress=stress,
                    las_value=las_value,
                    records=clean_preds,
                )
            )
            logger.info(
                "mode=%s seed=%d dev=%.3f clean=%.3f drop=%s las=%s",
                mode, seed, log.best_dev_accuracy, clean_acc,
                f"{stress.drop:.3f}" if stress else "-",
                f"{las_value:.3f}" if las_value is not None else "-",
            )
    return FaithfulnessReport(outcomes=outcomes)


# -- smoothing sweep --------------------------------------------------------


def perturbed_prediction_entropy(
    model: ToyReasoner,
    split: DatasetSplit,
    rationales: dict[str, RationaleSet],
) -> float:
    """Mean entropy of the model's choice distribution under masked
    rationales (the counterfactual branch's view of the inputs)."""
    entropies = []
    for inst in split.instances:
        rset = rationales[inst.id]
        scores = []
        for c in range(len(inst.choices)):
            enc = perturb_mask(encode(inst, rset.rationales[c], c, model))
            from .reasoner import plausibility

            scores.append(plausibility(model, enc))
        arr = np.asarray(scores, dtype=np.float64)
        arr = arr - arr.max()
        p = np.exp(arr)
        p /= p.sum()
        entropies.append(float(-(p * np.log(np.clip(p, 1e-12, None))).sum()))
    return float(np.mean(entropies))


@dataclass
class SweepPoint:
    epsilon: float
    seed: int
    accuracy: float
    las_value: Optional[float]
    perturbed_entropy: float


def epsilon_sweep(
    corpus: Optional[FaithfulnessCorpus] = None,
    epsilons: Sequence[float] = tuple(round(0.1 * k, 1) for k in range(1, 11)),
    seeds: Sequence[int] = DEFAULT_SEEDS,
    epochs: int = 10,
    compute_las: bool = True,
    simulator_epochs: int = 4,
) -> list[SweepPoint]:
    """Counterfactual training at each smoothing factor; per run, report
    test accuracy, LAS, and prediction entropy on masked inputs."""
    corpus = corpus or build_faithfulness_corpus()
    train_backend, eval_backend = corpus.backends()
    train_rsets = rationalize_split(train_backend, corpus.prompt_spec, corpus.train)
    dev_rsets = rationalize_split(eval_backend, corpus.prompt_spec, corpus.dev)
    test_rsets = rationalize_split(eval_backend, corpus.prompt_spec, corpus.test)
    points = []
    for eps in epsilons:
        for seed in seeds:
            model, _ = train_mode_model(
                corpus, "counterfactual", seed, train_rsets, dev_rsets,
                epochs=epochs, epsilon=eps,
            )
            preds = predict_split(model, corpus.test, test_rsets)
            las_value = None
            if compute_las:
                dev_preds = predict_split(model, corpus.dev, dev_rsets)
                simulator = train_simulator(
                    dev_preds, corpus.dev.by_id(), seed=seed,
                    base_model=model, epochs=simulator_epochs,
                )
                las_value = las(simulator, preds, corpus.test.by_id())
            points.append(
                SweepPoint(
                    epsilon=eps,
                    seed=seed,
                    accuracy=accuracy(preds),
                    las_value=las_value,
                    perturbed_entropy=perturbed_prediction_entropy(
                        model, corpus.test, test_rsets
                    ),
                )
            )
    return points


@dataclass
class LowResourcePoint:
    fraction: float
    mode: str
    seed: int
    accuracy: float


def low_resource_curve(
    corpus: Optional[FaithfulnessCorpus] = None,
    fractions: Sequence[float] = (0.2, 0.4, 0.6, 0.8, 1.0),
    modes: Sequence[str] = ("counterfactual", "standard"),
    seeds: Sequence[int] = DEFAULT_SEEDS,
    epochs: int = 16,
) -> list[LowResourcePoint]:
    """Accuracy per training-set fraction for the compared modes."""
    from .data import subsample_train

    corpus = corpus or build_faithfulness_corpus()
    train_backend, eval_backend = corpus.backends()
    train_rsets = rationalize_split(train_backend, corpus.prompt_spec, corpus.train)
    dev_rsets = rationalize_split(eval_backend, corpus.prompt_spec, corpus.dev)
    test_rsets = rationalize_split(eval_backend, corpus.prompt_spec, corpus.test)
    points = []
    for fraction in fractions:
        for mode in modes:
            for seed in seeds:
                sub = subsample_train(corpus.train, fraction, seed=seed)
                model = ToyReasoner(corpus.tokenizer, d_model=48, max_len=64, seed=seed)
                cfg = make_config(mode, seed, epochs=epochs)
                rsets = None if mode == "no_rationale" else train_rsets
                model, _ = train(
                    model, sub, rsets, cfg, dev=corpus.dev,
                    dev_rationales=dev_rsets if mode != "no_rationale" else None,
                )
                preds = predict_split(
                    model, corpus.test,
                    test_rsets if mode != "no_rationale" else None,
                )
                points.append(
                    LowResourcePoint(
                        fraction=fraction, mode=mode, seed=seed,
                        accuracy=accuracy(preds),
                    )
                )
    return points
