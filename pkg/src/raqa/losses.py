"""Training objectives over per-choice probability distributions.

The standard objective is cross-entropy against the one-hot gold choice.
The counterfactual objective is cross-entropy of the *perturbed-rationale*
distribution against a label-smoothed target, which pushes the model to be
less confident whenever its rationales are masked or corrupted.

All functions here are pure float64 computations; the trainer reproduces
the same formulas on torch tensors for the differentiable path, and tests
pin the two against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class TargetDistribution:
    values: tuple[float, ...]
    smoothed: bool

    def __post_init__(self):
        if any(v < 0 for v in self.values):
            raise ValueError("target values must be non-negative")
        if abs(math.fsum(self.values) - 1.0) > 1e-9:
            raise ValueError("target values must sum to 1")


def _check_distribution(probabilities: Sequence[float]) -> None:
    if not probabilities:
        raise ValueError("empty probability vector")
    if any(p < 0 for p in probabilities):
        raise ValueError("probabilities must be non-negative")
    if abs(math.fsum(probabilities) - 1.0) > 1e-6:
        raise ValueError("probabilities must sum to 1")


def standard_loss(probabilities: Sequence[float], gold_index: int) -> float:
    """Negative log-likelihood of the gold choice."""
    _check_distribution(probabilities)
    if not (0 <= gold_index < len(probabilities)):
        raise ValueError("gold_index out of range")
    return -math.log(max(float(probabilities[gold_index]), 1e-300))


def smooth_targets(
    gold_index: int, n_choices: int, epsilon: float
) -> TargetDistribution:
    """Mix the one-hot gold target with the uniform distribution.

    The gold entry becomes (1 - epsilon) + epsilon/n, every other entry
    epsilon/n.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if not (0 <= gold_index < n_choices):
        raise ValueError("gold_index out of range")
    base = epsilon / n_choices
    values = tuple(
        (1.0 - epsilon) + base if i == gold_index else base for i in range(n_choices)
    )
    return TargetDistribution(values=values, smoothed=epsilon > 0.0)


def counterfactual_loss(
    probabilities_perturbed: Sequence[float], targets: TargetDistribution
) -> float:
    """Cross-entropy of the perturbed-rationale prediction against the
    smoothed target; minimized exactly when the prediction equals it."""
    if not targets.smoothed:
        raise ValueError("counterfactual loss requires smoothed targets")
    _check_distribution(probabilities_perturbed)
    if len(probabilities_perturbed) != len(targets.values):
        raise ValueError("length mismatch between prediction and targets")
    terms = [
        -q * math.log(max(float(p), 1e-300))
        for q, p in zip(targets.values, probabilities_perturbed)
        if q > 0.0
    ]
    return math.fsum(terms)
