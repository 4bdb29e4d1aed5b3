"""Choice-specific rationale generation with persistent caching.

For each (question, choice) pair we render one prompt and request one
greedy completion; an instance's rationales are collected back into choice
order regardless of completion order. Generation never looks at the gold
label. The cache is an append-only JSONL file keyed by a hash of
everything that determines the output, so reruns are free and resumable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .backends import (
    DEFAULT_MAX_NEW_TOKENS,
    DEFAULT_STOP_SEQUENCES,
    CompletionBackend,
)
from .data import DatasetSplit, QAInstance
from .prompts import PromptSpec, render_prompt
from .tokenizer import EMPTY

logger = logging.getLogger(__name__)

# Substituted for empty/whitespace completions so downstream span logic
# never sees a zero-length rationale.
PLACEHOLDER_RATIONALE = EMPTY


class CacheCorrupt(Exception):
    pass


@dataclass(frozen=True)
class RationaleSet:
    """Generated rationales for one instance, one per choice index."""

    instance_id: str
    rationales: tuple[str, ...]
    generator_tag: str
    perturbed: bool = False
    placeholder_flags: tuple[bool, ...] = ()
    truncated_flags: tuple[bool, ...] = ()

    def __post_init__(self):
        if any(not r for r in self.rationales):
            raise ValueError("rationales must be non-empty (use the placeholder)")

    def to_record(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "rationales": list(self.rationales),
            "generator_tag": self.generator_tag,
            "perturbed": self.perturbed,
            "placeholder_flags": list(self.placeholder_flags),
            "truncated_flags": list(self.truncated_flags),
        }

    @classmethod
    def from_record(cls, obj: dict) -> "RationaleSet":
        return cls(
            instance_id=obj["instance_id"],
            rationales=tuple(obj["rationales"]),
            generator_tag=obj["generator_tag"],
            perturbed=bool(obj.get("perturbed", False)),
            placeholder_flags=tuple(obj.get("placeholder_flags", ())),
            truncated_flags=tuple(obj.get("truncated_flags", ())),
        )


def cache_key(
    instance: QAInstance,
    spec: PromptSpec,
    backend: CompletionBackend,
    max_new_tokens: int,
    stop: Sequence[str],
) -> str:
    payload = json.dumps(
        {
            "instance_id": instance.id,
            "choices": list(instance.choices),
            "question": instance.question,
            "prompt_hash": spec.prompt_hash,
            "backend": backend.identity,
            "max_new_tokens": max_new_tokens,
            "stop": list(stop),
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class RationaleCache:
    """Append-only JSONL cache of RationaleSets, safe for threaded readers.

    Unreadable lines are skipped with a warning; they are never reused.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, RationaleSet] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        with self.path.open("r", encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    obj = json.loads(raw)
                    rset = RationaleSet.from_record(obj)
                    key = obj["key"]
                except Exception as exc:
                    logger.warning(
                        "skipping corrupt cache entry %s:%d (%s)",
                        self.path,
                        line_no,
                        exc,
                    )
                    continue
                self._entries[key] = rset

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> Optional[RationaleSet]:
        return self._entries.get(key)

    def put(self, key: str, value: RationaleSet) -> None:
        with self._lock:
            existing = self._entries.get(key)
            if existing is not None:
                if existing != value:
                    raise ValueError(f"cache key collision with differing value: {key}")
                return
            self._entries[key] = value
            record = {"key": key, **value.to_record()}
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def trim_completion(text: str, stop: Sequence[str]) -> str:
    cut = len(text)
    for s in stop:
        idx = text.find(s)
        if idx != -1:
            cut = min(cut, idx)
    return text[:cut].strip()


def generate_rationales(
    backend: CompletionBackend,
    spec: PromptSpec,
    instance: QAInstance,
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
    stop: Sequence[str] = DEFAULT_STOP_SEQUENCES,
    cache: Optional[RationaleCache] = None,
    parallelism: int = 4,
) -> RationaleSet:
    """Generate one rationale per choice (cache-aware, bounded fan-out)."""
    key = cache_key(instance, spec, backend, max_new_tokens, stop)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit

    def one(choice: str) -> str:
        prompt = render_prompt(spec, instance.question, instance.choices, choice)
        return backend.complete(prompt, max_new_tokens=max_new_tokens, stop=stop)

    n = len(instance.choices)
    if parallelism > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=min(parallelism, n)) as pool:
            raw = list(pool.map(one, instance.choices))
    else:
        raw = [one(c) for c in instance.choices]

    rationales: list[str] = []
    placeholder_flags: list[bool] = []
    truncated_flags: list[bool] = []
    for choice, completion in zip(instance.choices, raw):
        trimmed = trim_completion(completion, stop)
        truncated = len(trimmed.split()) >= max_new_tokens
        if truncated:
            logger.warning(
                "completion for %s/%r hit max_new_tokens", instance.id, choice
            )
        if not trimmed:
            trimmed = PLACEHOLDER_RATIONALE
            placeholder_flags.append(True)
        else:
            placeholder_flags.append(False)
        truncated_flags.append(truncated)
        rationales.append(trimmed)

    rset = RationaleSet(
        instance_id=instance.id,
        rationales=tuple(rationales),
        generator_tag=f"{backend.identity}|prompt:{spec.prompt_hash}",
        perturbed=False,
        placeholder_flags=tuple(placeholder_flags),
        truncated_flags=tuple(truncated_flags),
    )
    if cache is not None:
        cache.put(key, rset)
    return rset


def rationalize_split(
    backend: CompletionBackend,
    spec: PromptSpec,
    split: DatasetSplit,
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
    stop: Sequence[str] = DEFAULT_STOP_SEQUENCES,
    cache: Optional[RationaleCache] = None,
    parallelism: int = 4,
    limit: Optional[int] = None,
) -> dict[str, RationaleSet]:
    """Rationalize every instance of a split (optionally only the first N)."""
    out: dict[str, RationaleSet] = {}
    instances = split.instances[:limit] if limit is not None else split.instances
    for inst in instances:
        out[inst.id] = generate_rationales(
            backend,
            spec,
            inst,
            max_new_tokens=max_new_tokens,
            stop=stop,
            cache=cache,
            parallelism=parallelism,
        )
    return out


def save_rationales(sets: Iterable[RationaleSet], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rset in sets:
            fh.write(json.dumps(rset.to_record(), sort_keys=True) + "\n")


def load_rationales(path: str | Path) -> dict[str, RationaleSet]:
    out: dict[str, RationaleSet] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if not raw:
                continue
            rset = RationaleSet.from_record(json.loads(raw))
            out[rset.instance_id] = rset
    return out


def synthetic_rationale_sets(
    split: DatasetSplit, scheme, leak: bool = True
) -> dict[str, RationaleSet]:
    """Deterministic leak rationales for a synthetic split, bypassing the
    backend round-trip (identical text to what the oracle backend emits)."""
    out = {}
    for inst in split.instances:
        texts = scheme.leak_rationales(inst, leak=leak)
        out[inst.id] = RationaleSet(
            instance_id=inst.id,
            rationales=tuple(texts),
            generator_tag=f"synthetic-scheme:{'leak' if leak else 'noise'}",
            perturbed=False,
            placeholder_flags=tuple(False for _ in texts),
            truncated_flags=tuple(False for _ in texts),
        )
    return out
