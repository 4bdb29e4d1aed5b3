"""Rationale-augmented multi-choice question answering.

Pipeline: a frozen, prompted completion backend writes one free-text
rationale per answer choice; a small trainable reasoner scores each choice
by teacher-forcing its tokens given (question, choices, that choice's
rationale); counterfactual regularization trains the reasoner to lose
confidence when rationales are masked or corrupted; the evaluation suite
measures accuracy, leakage-adjusted simulatability, normalized relative
gain, and sensitivity to rationale perturbation.
"""

__version__ = "0.1.0"

from .data import DatasetSplit, QAInstance, generate_synthetic, load_dataset
from .metrics import EvalReport, PredictionRecord, accuracy, las, nrg
from .model import ToyReasoner
from .prompts import Demonstration, PromptSpec, render_prompt
from .rationalize import RationaleCache, RationaleSet, generate_rationales
from .reasoner import ChoiceScores, EncodedInput, encode, plausibility, score_choices
from .training import TrainConfig, train

__all__ = [
    "ChoiceScores",
    "DatasetSplit",
    "Demonstration",
    "EncodedInput",
    "EvalReport",
    "PredictionRecord",
    "PromptSpec",
    "QAInstance",
    "RationaleCache",
    "RationaleSet",
    "ToyReasoner",
    "TrainConfig",
    "accuracy",
    "encode",
    "generate_rationales",
    "generate_synthetic",
    "las",
    "load_dataset",
    "nrg",
    "plausibility",
    "render_prompt",
    "score_choices",
    "train",
]
