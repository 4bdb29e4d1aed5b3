"""Evaluation metrics: accuracy, leakage-adjusted simulatability, NRG.

LAS asks how much rationales help a simulator predict the *reasoner's*
labels (never the gold ones). Records are split into a leaking group
(the without-rationale simulator already gets the label right) and a
non-leaking group; each group contributes the difference between the
with-rationale and without-rationale simulator accuracy inside that
group, and LAS is the unweighted mean of the two deltas, a value in
[-1, 1] (multiply by 100 for percentage-style reporting).

NRG (normalized relative gain) min-max normalizes accuracy and LAS
separately across the compared methods and averages the two normalized
scores per method, so it is invariant to any positive affine rescaling of
either metric.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

logger = logging.getLogger(__name__)


class MetricError(Exception):
    pass


class EmptyPredictions(MetricError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    """One evaluated instance: what the reasoner predicted and with what."""

    id: str
    predicted_index: int
    gold_index: int
    rationale_texts: tuple[str, ...]
    probabilities: tuple[float, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "predicted_index": self.predicted_index,
                "gold_index": self.gold_index,
                "rationale_texts": list(self.rationale_texts),
                "probabilities": list(self.probabilities),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, raw: str) -> "PredictionRecord":
        obj = json.loads(raw)
        return cls(
            id=obj["id"],
            predicted_index=obj["predicted_index"],
            gold_index=obj["gold_index"],
            rationale_texts=tuple(obj["rationale_texts"]),
            probabilities=tuple(obj["probabilities"]),
        )


def save_predictions(records: Sequence[PredictionRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        "".join(r.to_json() + "\n" for r in records), encoding="utf-8"
    )


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if raw:
                out.append(PredictionRecord.from_json(raw))
    return out


@dataclass
class EvalReport:
    accuracy: float
    n: int
    config_fingerprint: str = ""
    las: Optional[float] = None
    nrg: Optional[float] = None
    sensitivity_drop: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


def accuracy(preds: Sequence[PredictionRecord]) -> float:
    """Exact fraction of records whose prediction matches gold."""
    if not preds:
        raise EmptyPredictions("no prediction records")
    hits = sum(1 for r in preds if r.predicted_index == r.gold_index)
    return hits / len(preds)


class Simulator(Protocol):
    """Label predictor used inside LAS; trained elsewhere.

    predict_with sees the instance plus the reasoner's rationale texts,
    predict_without sees only the instance. Both return a choice index.
    """

    def predict_with(self, instance, rationale_texts: Sequence[str]) -> int: ...

    def predict_without(self, instance) -> int: ...


def las(
    simulator: Simulator,
    preds_eval: Sequence[PredictionRecord],
    instances: dict,
) -> float:
    """Leakage-adjusted simulatability of the rationales w.r.t. predictions.

    Returns the unweighted mean over the leaking/non-leaking groups of
    (with-rationale accuracy - without-rationale accuracy), each accuracy
    measured against the reasoner's predicted labels inside the group. An
    empty group contributes 0 and logs a warning.
    """
    if not preds_eval:
        raise EmptyPredictions("no prediction records")
    groups: dict[bool, list[tuple[bool, bool]]] = {True: [], False: []}
    for rec in preds_eval:
        inst = instances[rec.id]
        without_ok = simulator.predict_without(inst) == rec.predicted_index
        with_ok = (
            simulator.predict_with(inst, rec.rationale_texts) == rec.predicted_index
        )
        groups[without_ok].append((with_ok, without_ok))
    deltas = []
    for leaked in (True, False):
        rows = groups[leaked]
        if not rows:
            logger.warning(
                "LAS: %s group is empty; it contributes 0",
                "leaking" if leaked else "non-leaking",
            )
            deltas.append(0.0)
            continue
        acc_with = sum(1 for w, _ in rows if w) / len(rows)
        acc_without = sum(1 for _, wo in rows if wo) / len(rows)
        deltas.append(acc_with - acc_without)
    return sum(deltas) / 2.0


def nrg(
    metrics_by_method: dict[str, tuple[float, float]]
) -> dict[str, float]:
    """Normalized relative gain per method from (accuracy, las) pairs.

    Min-max normalizes each metric across methods and averages the two
    normalized values. If all methods tie on one metric it contributes 0.5
    to every method (logged).
    """
    if len(metrics_by_method) < 2:
        raise MetricError("NRG needs at least 2 methods")
    names = list(metrics_by_method)
    out = {name: 0.0 for name in names}
    for idx, metric_name in enumerate(("accuracy", "las")):
        values = {name: float(metrics_by_method[name][idx]) for name in names}
        lo, hi = min(values.values()), max(values.values())
        if hi == lo:
            logger.warning(
                "NRG: all methods tie on %s; contributing 0.5 each", metric_name
            )
            for name in names:
                out[name] += 0.5
            continue
        for name in names:
            out[name] += (values[name] - lo) / (hi - lo)
    return {name: out[name] / 2.0 for name in names}
