import pytest

from raqa.prompts import (
    Demonstration,
    PromptError,
    PromptSpec,
    UnknownChoice,
    format_choices,
    load_template,
    render_prompt,
)

# Fixture mirroring a standard commonsense-QA style demonstration.
INK_DEMO = Demonstration(
    question="What do people use to absorb extra ink from a fountain pen?",
    choices=(
        "shirt pocket",
        "calligrapher's hand",
        "inkwell",
        "desk drawer",
        "blotter",
    ),
    gold_answer="blotter",
    rationale="Blotting paper absorbs liquids like ink well.",
)


def ink_spec(template_id="default"):
    return PromptSpec(demonstrations=(INK_DEMO,), template_id=template_id)


class TestRenderPrompt:
    def test_demonstration_block_format(self):
        prompt = render_prompt(
            ink_spec(), "Where would you put leftover cake?", ("oven", "fridge"), "fridge"
        )
        expected_demo = (
            "Q: What do people use to absorb extra ink from a fountain pen?\n"
            "Answer Choices: (a) shirt pocket (b) calligrapher's hand (c) inkwell"
            " (d) desk drawer (e) blotter\n"
            "A: The answer is blotter. Blotting paper absorbs liquids like ink well."
        )
        assert prompt.startswith(expected_demo)

    def test_stub_leaves_rationale_open(self):
        prompt = render_prompt(ink_spec(), "A question?", ("one x", "two y"), "two y")
        assert prompt.endswith("A: The answer is two y.")
        stub = prompt.split("\n\n")[-1]
        assert stub.splitlines()[0] == "Q: A question?"
        assert "(a) one x (b) two y" in stub

    def test_deterministic(self):
        args = (ink_spec(), "Q text", ("one x", "two y"), "one x")
        assert render_prompt(*args) == render_prompt(*args)

    def test_unknown_choice(self):
        with pytest.raises(UnknownChoice):
            render_prompt(ink_spec(), "Q text", ("one x", "two y"), "three z")

    def test_empty_question_still_renders(self, caplog):
        prompt = render_prompt(ink_spec(), "", ("one x", "two y"), "one x")
        assert "Q: \n" in prompt or "Q: " in prompt

    def test_gold_blindness(self):
        # the prompt is a pure function of (spec, question, choices, target);
        # nothing about any gold label enters
        p1 = render_prompt(ink_spec(), "Q text", ("one x", "two y"), "one x")
        p2 = render_prompt(ink_spec(), "Q text", ("one x", "two y"), "one x")
        assert p1 == p2

    def test_no_choices_template_omits_choice_line(self):
        spec = PromptSpec(
            demonstrations=(
                Demonstration(
                    question="Do hamsters provide food for any animals?",
                    choices=("yes", "no"),
                    gold_answer="yes",
                    rationale="Hamsters are prey animals.",
                ),
            ),
            template_id="no_choices",
        )
        prompt = render_prompt(spec, "Would a pear sink in water?", ("yes", "no"), "no")
        assert "Answer Choices" not in prompt
        assert prompt.endswith("A: The answer is no.")


class TestPromptSpec:
    def test_requires_demonstrations(self):
        with pytest.raises(PromptError):
            PromptSpec(demonstrations=())

    def test_demo_answer_must_be_a_choice(self):
        with pytest.raises(PromptError):
            PromptSpec(
                demonstrations=(
                    Demonstration("q", ("a x", "b y"), "c z", "because"),
                )
            )

    def test_prompt_hash_sensitive_to_demonstrations(self):
        other = Demonstration(
            question=INK_DEMO.question,
            choices=INK_DEMO.choices,
            gold_answer=INK_DEMO.gold_answer,
            rationale="A different rationale.",
        )
        assert ink_spec().prompt_hash != PromptSpec(demonstrations=(other,)).prompt_hash

    def test_file_round_trip(self, tmp_path):
        spec = ink_spec()
        path = tmp_path / "prompt.json"
        spec.to_file(path)
        again = PromptSpec.from_file(path)
        assert again == spec


class TestTemplates:
    def test_builtin_templates_load(self):
        for name in ("default", "no_choices"):
            assert load_template(name).body

    def test_template_from_file(self, tmp_path):
        path = tmp_path / "tpl.txt"
        path.write_text("Question: {{question}}\nPick: {{choices}}\n-> {{target}}.")
        spec = PromptSpec(demonstrations=(INK_DEMO,), template_id=str(path))
        prompt = render_prompt(spec, "Custom?", ("one x", "two y"), "one x")
        assert prompt.endswith("-> one x.")
        assert "Question: Custom?" in prompt

    def test_unknown_template(self):
        with pytest.raises(PromptError):
            load_template("no-such-template")

    def test_lettering(self):
        assert format_choices(("a1 b", "c2 d", "e3 f")) == "(a) a1 b (b) c2 d (c) e3 f"
