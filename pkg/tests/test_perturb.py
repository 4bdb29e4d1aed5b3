import numpy as np
import pytest

from raqa.perturb import (
    STRATEGIES,
    mask_question,
    perturb_mask,
    perturb_replace,
    select_strategy,
)
from raqa.reasoner import EncodedInput


def make_enc(span=(5, 15), length=20, q_span=(0, 3)):
    return EncodedInput(
        token_ids=tuple(range(100, 100 + length)),
        attention_mask=tuple(1 for _ in range(length)),
        rationale_span=span,
        answer_token_ids=(7, 8),
        question_span=q_span,
    )


class TestMask:
    def test_zeroes_exactly_the_span(self):
        enc = perturb_mask(make_enc())
        for i, m in enumerate(enc.attention_mask):
            assert m == (0 if 5 <= i < 15 else 1)
        assert enc.token_ids == make_enc().token_ids

    def test_idempotent(self):
        once = perturb_mask(make_enc())
        twice = perturb_mask(once)
        assert once == twice

    def test_degenerate_span_rejected(self):
        with pytest.raises(ValueError):
            perturb_mask(make_enc(span=(5, 5)))

    def test_mask_question_zeroes_question_span(self):
        enc = mask_question(make_enc())
        for i, m in enumerate(enc.attention_mask):
            assert m == (0 if 0 <= i < 3 else 1)


class TestReplace:
    def test_zero_rate_is_identity(self):
        enc = make_enc()
        rng = np.random.default_rng(0)
        assert perturb_replace(enc, 0.0, 200, rng) == enc

    def test_full_rate_resamples_every_span_token(self):
        enc = make_enc()
        rng = np.random.default_rng(0)
        out = perturb_replace(enc, 1.0, 200, rng)
        start, end = enc.rationale_span
        for i in range(start, end):
            assert out.token_ids[i] != enc.token_ids[i]

    def test_exact_count_and_locality(self):
        enc = make_enc(span=(5, 15))
        rng = np.random.default_rng(42)
        for _ in range(200):
            out = perturb_replace(enc, 0.30, 200, rng)
            diff = [
                i
                for i, (a, b) in enumerate(zip(enc.token_ids, out.token_ids))
                if a != b
            ]
            assert len(diff) == 3
            assert all(5 <= i < 15 for i in diff)
            assert out.attention_mask == enc.attention_mask

    def test_excluded_ids_never_sampled(self):
        enc = make_enc()
        rng = np.random.default_rng(7)
        excluded = frozenset(range(0, 50))
        for _ in range(50):
            out = perturb_replace(enc, 1.0, 60, rng, excluded_ids=excluded)
            start, end = enc.rationale_span
            assert all(50 <= t < 60 for t in out.token_ids[start:end])

    def test_deterministic_given_generator_state(self):
        enc = make_enc()
        a = perturb_replace(enc, 0.3, 200, np.random.default_rng(3))
        b = perturb_replace(enc, 0.3, 200, np.random.default_rng(3))
        assert a == b

    def test_short_span_rounding(self):
        # round(0.3 * 5 + 0.5) -> 2 positions on a 5-token span
        enc = make_enc(span=(5, 10))
        out = perturb_replace(enc, 0.30, 200, np.random.default_rng(1))
        diff = sum(a != b for a, b in zip(enc.token_ids, out.token_ids))
        assert diff == 2

    def test_degenerate_span_rejected(self):
        with pytest.raises(ValueError):
            perturb_replace(make_enc(span=(4, 4)), 0.3, 200, np.random.default_rng(0))


class TestSelectStrategy:
    def test_singleton(self):
        rng = np.random.default_rng(0)
        assert all(select_strategy(("mask",), rng) == "mask" for _ in range(20))

    def test_uniform_frequency(self):
        rng = np.random.default_rng(123)
        draws = [select_strategy(STRATEGIES, rng) for _ in range(10_000)]
        frac = draws.count("mask") / len(draws)
        assert abs(frac - 0.5) <= 0.02

    def test_deterministic_sequences(self):
        a = [select_strategy(STRATEGIES, np.random.default_rng(5)) for _ in range(1)]
        rng1, rng2 = np.random.default_rng(9), np.random.default_rng(9)
        s1 = [select_strategy(STRATEGIES, rng1) for _ in range(100)]
        s2 = [select_strategy(STRATEGIES, rng2) for _ in range(100)]
        assert s1 == s2

    def test_rejects_bad_input(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            select_strategy((), rng)
        with pytest.raises(ValueError):
            select_strategy(("mask", "shuffle"), rng)
