"""Demonstration prompts for the rationalizing language model.

A prompt is a fixed list of question-answer-rationale demonstrations
followed by the new question and a stub that names one target choice,
leaving the rationale position open for the completion backend. Rendering
is a pure function of (spec, question, choices, target): it never sees the
gold answer of the new question.
"""

from __future__ import annotations

import hashlib
import json
import logging
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

logger = logging.getLogger(__name__)

BUILTIN_TEMPLATES = ("default", "no_choices")


class PromptError(Exception):
    pass


class UnknownChoice(PromptError):
    pass


def format_choices(choices: Sequence[str]) -> str:
    """Lettered choice list: "(a) first (b) second ..." (up to 8 choices)."""
    if len(choices) > len(string.ascii_lowercase):
        raise PromptError("too many choices to letter")
    return " ".join(f"({string.ascii_lowercase[i]}) {c}" for i, c in enumerate(choices))


@dataclass(frozen=True)
class PromptTemplate:
    """One example block with {{question}}, {{choices}}, {{target}} slots.

    {{answer_prefix}} is optional; templates may bake the prefix in. A
    template without {{choices}} renders question-only blocks (used for
    binary yes/no datasets).
    """

    template_id: str
    body: str

    def render_block(
        self,
        question: str,
        choices: Sequence[str],
        target: str,
        answer_prefix: str,
    ) -> str:
        text = self.body.rstrip("\n")
        text = text.replace("{{question}}", question)
        text = text.replace("{{choices}}", format_choices(choices))
        text = text.replace("{{answer_prefix}}", answer_prefix)
        text = text.replace("{{target}}", target)
        return text


def _load_builtin(template_id: str) -> PromptTemplate:
    body = (
        resources.files("raqa.templates").joinpath(f"{template_id}.txt").read_text()
    )
    return PromptTemplate(template_id=template_id, body=body)


def load_template(template_id: str) -> PromptTemplate:
    """Resolve a template id: builtin name first, then a file path."""
    if template_id in BUILTIN_TEMPLATES:
        return _load_builtin(template_id)
    path = Path(template_id)
    if path.is_file():
        return PromptTemplate(template_id=str(path), body=path.read_text())
    raise PromptError(f"unknown template {template_id!r}")


@dataclass(frozen=True)
class Demonstration:
    question: str
    choices: tuple[str, ...]
    gold_answer: str
    rationale: str


@dataclass(frozen=True)
class PromptSpec:
    demonstrations: tuple[Demonstration, ...]
    template_id: str = "default"
    answer_prefix: str = "The answer is"

    def __post_init__(self):
        if not self.demonstrations:
            raise PromptError("need at least one demonstration")
        for d in self.demonstrations:
            if d.gold_answer not in d.choices:
                raise PromptError(
                    f"demonstration answer {d.gold_answer!r} not among its choices"
                )

    @property
    def prompt_hash(self) -> str:
        payload = json.dumps(
            {
                "template": load_template(self.template_id).body,
                "answer_prefix": self.answer_prefix,
                "demonstrations": [
                    [d.question, list(d.choices), d.gold_answer, d.rationale]
                    for d in self.demonstrations
                ],
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptSpec":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        demos = tuple(
            Demonstration(
                question=d["question"],
                choices=tuple(d["choices"]),
                gold_answer=d["gold_answer"],
                rationale=d["rationale"],
            )
            for d in obj["demonstrations"]
        )
        return cls(
            demonstrations=demos,
            template_id=obj.get("template_id", "default"),
            answer_prefix=obj.get("answer_prefix", "The answer is"),
        )

    def to_file(self, path: str | Path) -> None:
        obj = {
            "template_id": self.template_id,
            "answer_prefix": self.answer_prefix,
            "demonstrations": [
                {
                    "question": d.question,
                    "choices": list(d.choices),
                    "gold_answer": d.gold_answer,
                    "rationale": d.rationale,
                }
                for d in self.demonstrations
            ],
        }
        Path(path).write_text(json.dumps(obj, indent=2), encoding="utf-8")


def render_prompt(
    spec: PromptSpec,
    question: str,
    choices: Sequence[str],
    target_choice: str,
) -> str:
    """Render demonstrations plus the stub for one target choice.

    The output ends right after "{answer_prefix} {target}." so the backend
    completes the rationale. Deterministic; independent of any gold label
    for the new question.
    """
    if target_choice not in choices:
        raise UnknownChoice(f"target {target_choice!r} not among choices")
    if not question.strip():
        logger.warning("rendering prompt with empty question body")
    template = load_template(spec.template_id)
    blocks = [
        template.render_block(d.question, d.choices, d.gold_answer, spec.answer_prefix)
        + f" {d.rationale}"
        for d in spec.demonstrations
    ]
    blocks.append(
        template.render_block(question, choices, target_choice, spec.answer_prefix)
    )
    return "\n\n".join(blocks)
