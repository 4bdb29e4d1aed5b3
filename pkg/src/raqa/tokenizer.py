"""Whitespace word tokenizer with a fixed, hashable vocabulary.

The reasoning models in this package operate on small closed vocabularies.
Text maps to ids word-by-word; words outside the vocabulary map to the
unknown token (so decode(encode(text)) == text only for in-vocabulary text).
"""

from __future__ import annotations

import hashlib
import json
from typing import Iterable, Sequence

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
SEP = "<sep>"
UNK = "<unk>"
EMPTY = "<empty>"

SPECIAL_TOKENS = (PAD, BOS, EOS, SEP, UNK, EMPTY)


class WordTokenizer:
    """Invertible word <-> id mapping over a fixed vocabulary.

    Ids 0..5 are reserved for the special tokens; the rest follow the
    vocabulary order given at construction time.
    """

    def __init__(self, vocab: Sequence[str]):
        words = list(SPECIAL_TOKENS)
        seen = set(words)
        for w in vocab:
            if not w or " " in w:
                raise ValueError(f"invalid vocabulary word: {w!r}")
            if w not in seen:
                words.append(w)
                seen.add(w)
        self._words = words
        self._ids = {w: i for i, w in enumerate(words)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "WordTokenizer":
        """Build a tokenizer from a text corpus, vocabulary in sorted order."""
        words = set()
        for t in texts:
            words.update(t.split())
        return cls(sorted(words - set(SPECIAL_TOKENS)))

    @property
    def vocab_size(self) -> int:
        return len(self._words)

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def sep_id(self) -> int:
        return self._ids[SEP]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    @property
    def empty_id(self) -> int:
        return self._ids[EMPTY]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(range(len(SPECIAL_TOKENS)))

    @property
    def tokenizer_id(self) -> str:
        """Stable fingerprint of the vocabulary (order-sensitive)."""
        digest = hashlib.sha256(json.dumps(self._words).encode("utf-8"))
        return digest.hexdigest()[:16]

    def encode(self, text: str) -> list[int]:
        unk = self._ids[UNK]
        return [self._ids.get(w, unk) for w in text.split()]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self._words[i] for i in ids)

    def word(self, token_id: int) -> str:
        return self._words[token_id]

    def to_json(self) -> str:
        return json.dumps({"vocab": self._words[len(SPECIAL_TOKENS):]})

    @classmethod
    def from_json(cls, payload: str) -> "WordTokenizer":
        return cls(json.loads(payload)["vocab"])
