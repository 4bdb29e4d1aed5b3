"""Training loop for the reasoning model.

Four modes:
  counterfactual  standard loss on clean rationales plus the counterfactual
                  loss on perturbed rationales (one strategy drawn per
                  batch), the two combined by plain addition
  standard        standard loss on clean rationales only
  dropout_context standard loss, but each instance's question span is
                  attention-masked with probability dropout_context_rate
  no_rationale    standard loss with the rationale segment omitted

All randomness (batch order, strategy draws, replacement positions and
values, context-dropout coin flips) comes from one seeded generator in a
fixed consumption order, so runs are bit-reproducible. The optimizer is
Adam with a fixed learning rate; name and hyperparameters are recorded in
the training log.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .data import DatasetSplit
from .losses import smooth_targets
from .model import ToyReasoner
from .perturb import (
    STRATEGIES,
    STRATEGY_MASK,
    STRATEGY_REPLACE,
    mask_question,
    perturb_mask,
    perturb_replace,
    select_strategy,
)
from .rationalize import RationaleSet
from .reasoner import collate, encode, score_instances

logger = logging.getLogger(__name__)

MODES = ("counterfactual", "standard", "dropout_context", "no_rationale")

# Hyperparameter grid reported for the original experiments; TrainConfig
# accepts arbitrary values but can be checked against it.
PAPER_LEARNING_RATES = (1e-5, 3e-5, 1e-4, 3e-4)
PAPER_BATCH_SIZES = (8, 16, 32, 64)


class TrainingError(Exception):
    pass


class MissingRationales(TrainingError):
    def __init__(self, instance_id: str):
        super().__init__(f"no rationales for instance {instance_id}")
        self.instance_id = instance_id


class NonFiniteLoss(TrainingError):
    pass


@dataclass
class TrainConfig:
    mode: str = "counterfactual"
    epsilon: float = 0.1
    replace_rate: float = 0.30
    strategies: tuple[str, ...] = (STRATEGY_MASK, STRATEGY_REPLACE)
    learning_rate: float = 3e-4
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    dropout_context_rate: float = 0.5

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "counterfactual":
            if not self.strategies:
                raise ValueError("counterfactual mode needs at least one strategy")
            # epsilon=1.0 (fully uniform perturbed targets) is permitted so
            # the smoothing sweep can cover its full range.
            if not 0.0 < self.epsilon <= 1.0:
                raise ValueError("epsilon must be in (0, 1]")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        if not 0.0 <= self.replace_rate <= 1.0:
            raise ValueError("replace_rate must be in [0, 1]")
        if not 0.0 <= self.dropout_context_rate <= 1.0:
            raise ValueError("dropout_context_rate must be in [0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")

    def on_paper_grid(self) -> bool:
        return (
            self.learning_rate in PAPER_LEARNING_RATES
            and self.batch_size in PAPER_BATCH_SIZES
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategies"] = list(self.strategies)
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        if "strategies" in obj:
            obj["strategies"] = tuple(obj["strategies"])
        return cls(**obj)


@dataclass
class TrainLog:
    config: dict
    optimizer: str
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_accuracy: float = 0.0

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {"config": self.config, "optimizer": self.optimizer,
                 "best_epoch": self.best_epoch,
                 "best_dev_accuracy": self.best_dev_accuracy},
                sort_keys=True,
            )
        ]
        lines.extend(json.dumps(e, sort_keys=True) for e in self.epochs)
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def _batch_encodings(
    model: ToyReasoner,
    instances,
    rationales: Optional[dict[str, RationaleSet]],
    mode: str,
    rng: np.random.Generator,
    dropout_rate: float,
):
    """Clean encodings for a batch, in (instance, choice) order."""
    encs = []
    for inst in instances:
        drop_question = mode == "dropout_context" and rng.random() < dropout_rate
        if mode == "no_rationale":
            rset = None
        else:
            rset = rationales.get(inst.id) if rationales else None
            if rset is None:
                raise MissingRationales(inst.id)
        for c in range(len(inst.choices)):
            text = rset.rationales[c] if rset is not None else None
            enc = encode(inst, text, c, model)
            if drop_question:
                enc = mask_question(enc)
            encs.append(enc)
    return encs


def _choice_log_probs(model, encs, n_choices, pad_id):
    src, sm, tgt, tm = collate(encs, pad_id)
    rho = model.sequence_scores(src, sm, tgt, tm)
    rho = rho.view(-1, n_choices)
    return torch.log_softmax(rho, dim=1)


def dev_accuracy(
    model: ToyReasoner,
    dev: DatasetSplit,
    rationales: Optional[dict[str, RationaleSet]],
) -> float:
    preds = score_instances(model, dev.instances, rationales)
    hits = [p.predicted_index == inst.gold_index for p, inst in zip(preds, dev.instances)]
    return float(np.mean(hits))


def train(
    model: ToyReasoner,
    data: DatasetSplit,
    rationales: Optional[dict[str, RationaleSet]],
    config: TrainConfig,
    dev: Optional[DatasetSplit] = None,
    dev_rationales: Optional[dict[str, RationaleSet]] = None,
) -> tuple[ToyReasoner, TrainLog]:
    """Train in place and return (model restored to its best-dev state, log).

    The checkpoint with the best dev accuracy is retained (ties keep the
    earlier epoch). With epochs=0 the model is returned unchanged. Without
    a dev split the final state is kept.
    """
    config.validate()
    if not data.instances:
        raise TrainingError("empty training split")
    if config.mode != "no_rationale" and rationales is not None:
        for inst in data.instances:
            if inst.id not in rationales:
                raise MissingRationales(inst.id)
    if config.mode != "no_rationale" and rationales is None:
        raise MissingRationales(data.instances[0].id)

    n_choices = data.n_choices
    tok = model.tokenizer
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    log = TrainLog(
        config=config.to_dict(),
        optimizer=f"adam(lr={config.learning_rate})",
    )
    use_dev = dev is not None and len(dev.instances) > 0
    dev_rsets = dev_rationales if config.mode != "no_rationale" else None
    best_state = None
    best_acc = -1.0
    model.meta.setdefault("source_dataset", data.source_dataset)
    model.meta["encode_mode"] = (
        "no_rationale" if config.mode == "no_rationale" else "with_rationale"
    )
    model.meta["train_mode"] = config.mode

    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(len(data.instances))
        epoch_loss = 0.0
        n_batches = 0
        strategy_counts = {STRATEGY_MASK: 0, STRATEGY_REPLACE: 0}
        for start in range(0, len(order), config.batch_size):
            batch = [data.instances[i] for i in order[start : start + config.batch_size]]
            encs = _batch_encodings(
                model, batch, rationales, config.mode, rng, config.dropout_context_rate
            )
            logp = _choice_log_probs(model, encs, n_choices, tok.pad_id)
            gold = torch.tensor([inst.gold_index for inst in batch], dtype=torch.long)
            loss = -logp[torch.arange(len(batch)), gold].mean()

            if config.mode == "counterfactual" and config.strategies:
                strategy = select_strategy(config.strategies, rng)
                strategy_counts[strategy] += 1
                if strategy == STRATEGY_MASK:
                    perturbed = [perturb_mask(e) for e in encs]
                else:
                    perturbed = [
                        perturb_replace(
                            e,
                            config.replace_rate,
                            tok.vocab_size,
                            rng,
                            excluded_ids=tok.special_ids,
                        )
                        for e in encs
                    ]
                plogp = _choice_log_probs(model, perturbed, n_choices, tok.pad_id)
                targets = torch.tensor(
                    [
                        smooth_targets(inst.gold_index, n_choices, config.epsilon).values
                        for inst in batch
                    ],
                    dtype=plogp.dtype,
                )
                loss = loss + (-(targets * plogp).sum(dim=1).mean())

            if not torch.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}: {loss}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item()
            n_batches += 1

        model.eval()
        acc = dev_accuracy(model, dev, dev_rsets) if use_dev else float("nan")
        log.epochs.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / max(n_batches, 1),
                "dev_acc": acc,
                "strategy_counts": dict(strategy_counts),
            }
        )
        if use_dev and acc > best_acc:
            best_acc = acc
            log.best_epoch = epoch
            best_state = {k: v.clone() for k, v in model.state_dict().items()}

    if best_state is not None:
        model.load_state_dict(best_state)
        log.best_dev_accuracy = best_acc
    model.eval()
    return model, log
