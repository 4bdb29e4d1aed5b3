"""Multi-choice QA datasets: loading, splitting, and synthetic corpora.

On-disk format is JSONL, one record per line:
    {"id": str, "question": str, "choices": [str], "gold_index": int,
     "rationale": str | null}

The synthetic generator builds desk-scale corpora whose per-choice
rationales deterministically leak the gold answer through a marker word,
which is what makes faithfulness properties checkable without real data.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

SPLIT_NAMES = ("train", "dev", "test")

# Marker words used by deterministic-leak rationales. They are reserved:
# the generator never emits them inside questions or choices.
MARKER_GOLD = "supported"
MARKER_OTHER = "unrelated"

_HASH_SALT = b"raqa-synthetic-v1|"


class DatasetError(Exception):
    """Base class for dataset loading/validation failures."""


class MalformedRecord(DatasetError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class DuplicateId(DatasetError):
    def __init__(self, instance_id: str):
        super().__init__(f"duplicate instance id {instance_id!r}")
        self.instance_id = instance_id


class ChoiceCountMismatch(DatasetError):
    pass


class EmptySplit(DatasetError):
    pass


@dataclass(frozen=True)
class QAInstance:
    """One multi-choice question.

    gold_index is an index into choices rather than an answer string so
    that repeated tokens across choices stay unambiguous.
    """

    id: str
    question: str
    choices: tuple[str, ...]
    gold_index: int
    annotated_rationale: Optional[str] = None

    def validate(self) -> None:
        if not self.id:
            raise MalformedRecord(-1, "empty id")
        if len(self.choices) < 2:
            raise MalformedRecord(-1, f"{self.id}: needs >= 2 choices")
        if any(not c.strip() for c in self.choices):
            raise MalformedRecord(-1, f"{self.id}: empty choice text")
        if len(set(self.choices)) != len(self.choices):
            raise MalformedRecord(-1, f"{self.id}: duplicate choice text")
        if not (0 <= self.gold_index < len(self.choices)):
            raise MalformedRecord(
                -1, f"{self.id}: gold_index {self.gold_index} out of range"
            )

    @property
    def gold_answer(self) -> str:
        return self.choices[self.gold_index]


@dataclass
class DatasetSplit:
    name: str
    instances: list[QAInstance]
    source_dataset: str = "unknown"

    def __post_init__(self):
        if self.name not in SPLIT_NAMES:
            raise ValueError(f"split name must be one of {SPLIT_NAMES}")

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    @property
    def ids(self) -> list[str]:
        return [inst.id for inst in self.instances]

    @property
    def n_choices(self) -> int:
        return len(self.instances[0].choices) if self.instances else 0

    def by_id(self) -> dict[str, QAInstance]:
        return {inst.id: inst for inst in self.instances}


def _parse_record(line_no: int, raw: str) -> QAInstance:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(line_no, f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedRecord(line_no, "record is not an object")
    for key in ("id", "question", "choices", "gold_index"):
        if key not in obj:
            raise MalformedRecord(line_no, f"missing field {key!r}")
    if not isinstance(obj["choices"], list) or not all(
        isinstance(c, str) for c in obj["choices"]
    ):
        raise MalformedRecord(line_no, "choices must be a list of strings")
    if not isinstance(obj["gold_index"], int) or isinstance(obj["gold_index"], bool):
        raise MalformedRecord(line_no, "gold_index must be an integer")
    inst = QAInstance(
        id=str(obj["id"]),
        question=str(obj["question"]),
        choices=tuple(obj["choices"]),
        gold_index=obj["gold_index"],
        annotated_rationale=obj.get("rationale"),
    )
    try:
        inst.validate()
    except MalformedRecord as exc:
        raise MalformedRecord(line_no, exc.reason) from exc
    return inst


def load_dataset(
    path: str | Path,
    format: str = "jsonl",
    name: str = "train",
    source_dataset: Optional[str] = None,
) -> DatasetSplit:
    """Load and validate a JSONL dataset; rejects the file on any bad record."""
    if format != "jsonl":
        raise ValueError(f"unsupported format {format!r}")
    path = Path(path)
    instances: list[QAInstance] = []
    seen_ids: set[str] = set()
    n_choices: Optional[int] = None
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            inst = _parse_record(line_no, raw)
            if inst.id in seen_ids:
                raise DuplicateId(inst.id)
            seen_ids.add(inst.id)
            if n_choices is None:
                n_choices = len(inst.choices)
            elif len(inst.choices) != n_choices:
                raise ChoiceCountMismatch(
                    f"line {line_no}: {len(inst.choices)} choices, expected {n_choices}"
                )
            instances.append(inst)
    return DatasetSplit(
        name=name,
        instances=instances,
        source_dataset=source_dataset or path.stem,
    )


def serialize_dataset(split: DatasetSplit) -> str:
    """Inverse of load_dataset at the record level (field-for-field)."""
    lines = []
    for inst in split.instances:
        lines.append(
            json.dumps(
                {
                    "id": inst.id,
                    "question": inst.question,
                    "choices": list(inst.choices),
                    "gold_index": inst.gold_index,
                    "rationale": inst.annotated_rationale,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def save_dataset(split: DatasetSplit, path: str | Path) -> None:
    Path(path).write_text(serialize_dataset(split), encoding="utf-8")


def write_split_manifest(split: DatasetSplit, path: str | Path) -> None:
    payload = {
        "name": split.name,
        "source_dataset": split.source_dataset,
        "ids": split.ids,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def split_train_dev(
    split: DatasetSplit, dev_fraction: float = 0.1, seed: int = 0
) -> tuple[DatasetSplit, DatasetSplit]:
    """Deterministic train/dev partition; dev gets round(dev_fraction * N)."""
    if not 0.0 < dev_fraction < 1.0:
        raise ValueError("dev_fraction must be in (0, 1)")
    n = len(split.instances)
    if n < 2:
        raise EmptySplit("need at least 2 instances to split")
    dev_size = int(np.floor(dev_fraction * n + 0.5))
    if dev_size == 0 or dev_size == n:
        raise EmptySplit(
            f"dev_fraction {dev_fraction} leaves an empty side for n={n}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    dev_idx = set(order[:dev_size].tolist())
    train_insts = [inst for i, inst in enumerate(split.instances) if i not in dev_idx]
    dev_insts = [inst for i, inst in enumerate(split.instances) if i in dev_idx]
    return (
        DatasetSplit("train", train_insts, split.source_dataset),
        DatasetSplit("dev", dev_insts, split.source_dataset),
    )


def subsample_train(
    split: DatasetSplit, fraction: float, seed: int = 0
) -> DatasetSplit:
    """Deterministic subsample of a train split; size max(1, round(f * N))."""
    if split.name != "train":
        raise ValueError("subsample_train expects a train split")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n = len(split.instances)
    if fraction == 1.0:
        return DatasetSplit("train", list(split.instances), split.source_dataset)
    size = max(1, int(np.floor(fraction * n + 0.5)))
    rng = np.random.default_rng(seed)
    keep = sorted(rng.choice(n, size=size, replace=False).tolist())
    return DatasetSplit(
        "train", [split.instances[i] for i in keep], split.source_dataset
    )


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticScheme:
    """Construction rules shared by the corpus generator and the oracle
    completion backend.

    Word pools are prefix-disjoint: question noise ("q###"), choice content
    words ("c###"), rationale noise ("r###"), and positional option words
    ("opt#", always the first word of choice i).

    Support rule: a choice supports a question iff the keyed hashes of the
    question's noise words and of the choice's content word agree modulo
    match_space. The generator constructs the gold choice to match and the
    distractors not to, so on generated instances the supported choice is
    exactly the gold one; for an arbitrary (question, choice) pair - e.g.
    the substituted questions of the sensitivity stress test - the rule
    rarely fires, and the backend honestly emits all-unsupported rationale
    sets. The hash is unlearnable for a desk-scale model, so questions
    carry no extractable answer signal.

    silence_rate mimics a rationalizer that fails on a fraction of
    questions (deterministically chosen per question): every rationale it
    writes for them is unsupportive. Corpora use it on the train split
    only.
    """

    n_choices: int = 4
    vocab_size: int = 200
    question_len: int = 6
    rationale_noise_len: int = 2
    match_space: int = 50
    silence_rate: float = 0.0
    pool_tag: str = ""

    def question_pool(self) -> list[str]:
        return [f"q{self.pool_tag}{i:03d}" for i in range(self.vocab_size)]

    def choice_pool(self) -> list[str]:
        return [f"c{self.pool_tag}{i:03d}" for i in range(self.vocab_size)]

    def rationale_pool(self) -> list[str]:
        return [f"r{self.pool_tag}{i:03d}" for i in range(self.vocab_size)]

    def option_words(self) -> list[str]:
        return [f"opt{i}" for i in range(self.n_choices)]

    def bias_half(self) -> frozenset[str]:
        """Choice words whose presence the spurious lexical prior tracks."""
        pool = self.choice_pool()
        return frozenset(pool[: len(pool) // 2])

    def garble_text(self, question: str, choice: str) -> str:
        """Deterministic degraded text a rationalizer writes for an
        incoherent (question, choices) pairing: an unsupportive template
        whose words are partially trampled by out-of-place vocabulary."""
        base = self.rationale_text(question, choice, supported=False, leak=True)
        words = base.split()
        key = hashlib.sha256(
            _HASH_SALT + f"garble|{question}|{choice}".encode("utf-8")
        ).digest()
        rng = np.random.default_rng(int.from_bytes(key[:8], "big"))
        mixed = self.question_pool() + self.choice_pool() + self.rationale_pool()
        n_junk = max(1, int(np.floor(0.3 * len(words) + 0.5)))
        positions = rng.choice(len(words), size=n_junk, replace=False)
        for pos in positions:
            words[int(pos)] = mixed[int(rng.integers(0, len(mixed)))]
        return " ".join(words)

    def all_words(self) -> list[str]:
        return (
            self.question_pool()
            + self.choice_pool()
            + self.rationale_pool()
            + self.option_words()
            + [MARKER_GOLD, MARKER_OTHER]
        )

    def core_words(self, question: str) -> list[str]:
        return [w for w in question.split() if not w.startswith("opt")]

    def question_slot(self, question: str) -> int:
        core = " ".join(self.core_words(question))
        digest = hashlib.sha256(_HASH_SALT + core.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big") % self.match_space

    def word_slot(self, word: str) -> int:
        """Slot of a choice word: its pool index modulo match_space.

        Structural rather than hashed so every slot holds the same number
        of words per pool half; unequal slot sizes would give individual
        words unequal gold frequencies, an unintended lexical signal.
        Out-of-pool words fall back to a keyed hash.
        """
        prefix = f"c{self.pool_tag}"
        if word.startswith(prefix):
            suffix = word[len(prefix):]
            if suffix.isdigit() and int(suffix) < self.vocab_size:
                return int(suffix) % self.match_space
        digest = hashlib.sha256(_HASH_SALT + b"w|" + word.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big") % self.match_space

    def content_word(self, choice: str) -> str:
        words = [w for w in choice.split() if not w.startswith("opt")]
        return words[-1] if words else choice

    def matches(self, question: str, choice: str) -> bool:
        return self.question_slot(question) == self.word_slot(
            self.content_word(choice)
        )

    def is_silent(self, question: str) -> bool:
        if self.silence_rate <= 0.0:
            return False
        core = " ".join(self.core_words(question))
        key = hashlib.sha256(_HASH_SALT + b"sil|" + core.encode("utf-8")).digest()
        return int.from_bytes(key[:8], "big") / 2**64 < self.silence_rate

    def supports(self, question: str, choice: str) -> bool:
        """What the rationalizer asserts for this (question, choice) pair."""
        if self.is_silent(question):
            return False
        return self.matches(question, choice)

    def rationale_text(
        self, question: str, choice: str, supported: bool, leak: bool
    ) -> str:
        """Deterministic rationale text for one (question, choice) pair.

        Format: marker word, echo of the choice's option word, then noise.
        leak=False drops the marker (pure-noise rationales).
        """
        key = hashlib.sha256(
            _HASH_SALT + f"rat|{question}|{choice}".encode("utf-8")
        ).digest()
        rng = np.random.default_rng(int.from_bytes(key[:8], "big"))
        pool = self.rationale_pool()
        noise = [pool[i] for i in rng.integers(0, len(pool), self.rationale_noise_len)]
        opt = choice.split()[0]
        if not leak:
            return " ".join([opt] + noise)
        marker = MARKER_GOLD if supported else MARKER_OTHER
        return " ".join([marker, opt] + noise)

    def rationalizer_output(
        self, question: str, choices: Sequence[str], target: str, leak: bool = True
    ) -> str:
        """Full rationalizer behavior for one target within a choice list.

        When no listed choice matches the question (an incoherent pairing,
        as produced by the stress test's question substitution) the output
        degenerates to garble; otherwise the usual template applies, with
        per-question silencing honored.
        """
        if not any(self.matches(question, c) for c in choices):
            return self.garble_text(question, target)
        return self.rationale_text(question, target, self.supports(question, target), leak)

    def leak_rationales(self, instance: QAInstance, leak: bool = True) -> list[str]:
        return [
            self.rationalizer_output(instance.question, instance.choices, c, leak)
            for c in instance.choices
        ]


def generate_synthetic(
    n: int,
    n_choices: int,
    vocab_size: int,
    leak_mode: str = "deterministic",
    seed: int = 0,
    gold_bias_prob: float = 0.5,
    other_bias_prob: float = 0.5,
    misdirect_rate: float = 0.0,
    incoherent_rate: float = 0.0,
    name: str = "train",
    source_dataset: str = "synthetic",
    id_prefix: str = "syn",
    scheme: Optional[SyntheticScheme] = None,
) -> DatasetSplit:
    """Generate a synthetic corpus under a SyntheticScheme.

    Choice i's text is "opt{i} <content word>"; questions are noise words.
    The gold index is uniform; its content word is chosen to satisfy the
    scheme's support rule for the question, distractors are chosen not to.
    The annotated_rationale field carries the gold choice's clean
    supporting rationale (the synthetic stand-in for a human annotation).

    gold_bias_prob / other_bias_prob set how often the gold / distractor
    content word comes from the bias half of the choice pool. At the
    default 0.5/0.5 the lexical prior carries no signal; the faithfulness
    experiment skews them (on every split alike) to plant a weak,
    evaluation-valid shortcut whose strength stays near chance for a model
    without rationale access.

    misdirect_rate moves the matching content word to a uniformly chosen
    wrong choice on that fraction of instances (the gold choice gets a
    non-matching word), so the support rule - and hence the generated
    markers - point at a distractor. Corpora use it on the train split
    only, as rationalizer label noise. The annotated_rationale still
    supports the true gold choice.

    incoherent_rate makes that fraction of instances unanswerable for the
    rationalizer: no choice matches the question, so the backend degrades
    to garble on them. Evaluation splits use it to probe behavior when
    rationalization fails outright.

    leak_mode "deterministic" marks rationales per the support rule
    (recoverable via SyntheticScheme.leak_rationales and regenerated
    identically by the oracle backend); "none" drops the markers.
    """
    if n < 1 or n_choices < 2 or vocab_size < 4 * n_choices:
        raise ValueError("need n >= 1, n_choices >= 2, vocab_size >= 4*n_choices")
    if leak_mode not in ("deterministic", "none"):
        raise ValueError(f"unknown leak_mode {leak_mode!r}")
    for p in (gold_bias_prob, other_bias_prob, misdirect_rate, incoherent_rate):
        if not 0.0 <= p <= 1.0:
            raise ValueError("rate parameters must be in [0, 1]")
    scheme = scheme or SyntheticScheme(n_choices=n_choices, vocab_size=vocab_size)
    if scheme.n_choices != n_choices or scheme.vocab_size != vocab_size:
        raise ValueError("scheme disagrees with n_choices/vocab_size")
    if vocab_size % (2 * scheme.match_space) != 0:
        raise ValueError(
            "vocab_size must be a multiple of 2*match_space so every slot "
            "holds equally many words per pool half"
        )
    rng = np.random.default_rng(seed)
    qpool = scheme.question_pool()
    cpool = scheme.choice_pool()
    opts = scheme.option_words()
    half_a = [w for w in cpool if w in scheme.bias_half()]
    half_b = [w for w in cpool if w not in scheme.bias_half()]
    instances: list[QAInstance] = []
    for k in range(n):
        while True:
            core = [qpool[i] for i in rng.integers(0, len(qpool), scheme.question_len)]
            question = " ".join(core)
            slot = scheme.question_slot(question)
            match_a = [w for w in half_a if scheme.word_slot(w) == slot]
            match_b = [w for w in half_b if scheme.word_slot(w) == slot]
            gold = int(rng.integers(0, n_choices))
            prefer_a = rng.random() < gold_bias_prob
            gold_set = match_a if (prefer_a and match_a) or not match_b else match_b
            matching_word = gold_set[int(rng.integers(0, len(gold_set)))]
            misdirected = rng.random() < misdirect_rate
            incoherent = rng.random() < incoherent_rate
            marked: Optional[int] = gold
            if incoherent:
                marked = None
            elif misdirected:
                others = [i for i in range(n_choices) if i != gold]
                marked = int(others[int(rng.integers(0, len(others)))])
            used = {matching_word}
            words: list[str] = []
            ok = True
            for i in range(n_choices):
                if i == marked:
                    words.append(matching_word)
                    continue
                prefer = gold_bias_prob if i == gold else other_bias_prob
                half = half_a if rng.random() < prefer else half_b
                candidates = [
                    w for w in half
                    if scheme.word_slot(w) != slot and w not in used
                ]
                if not candidates:
                    ok = False
                    break
                w = candidates[int(rng.integers(0, len(candidates)))]
                used.add(w)
                words.append(w)
            if not ok:
                continue
            choices = tuple(f"{opts[i]} {words[i]}" for i in range(n_choices))
            annotated = scheme.rationale_text(
                question, choices[gold], supported=True, leak=True
            )
            instances.append(
                QAInstance(
                    id=f"{id_prefix}-{k:05d}",
                    question=question,
                    choices=choices,
                    gold_index=gold,
                    annotated_rationale=annotated,
                )
            )
            break
    return DatasetSplit(name=name, instances=instances, source_dataset=source_dataset)


def leak_oracle_predict(instance: QAInstance, rationales: list[str]) -> int:
    """Rule-based classifier that reads only the leak markers.

    Returns the index whose rationale carries the gold marker, or 0 if no
    rationale does (the no-leak fallback).
    """
    for i, r in enumerate(rationales):
        if MARKER_GOLD in r.split():
            return i
    return 0


def bias_rule_predict(
    instance: QAInstance, scheme: SyntheticScheme, rng: np.random.Generator
) -> int:
    """Rule follower for the lexical prior: pick a bias-half choice
    uniformly, or any choice uniformly when none qualifies. Used to
    calibrate how much signal the prior carries."""
    half = scheme.bias_half()
    hits = [
        i
        for i, c in enumerate(instance.choices)
        if scheme.content_word(c) in half
    ]
    pool = hits if hits else list(range(len(instance.choices)))
    return pool[int(rng.integers(0, len(pool)))]
