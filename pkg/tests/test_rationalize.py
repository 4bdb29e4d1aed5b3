import threading

import pytest

from raqa.backends import MockCompletionBackend, SyntheticOracleBackend
from raqa.data import QAInstance, SyntheticScheme, generate_synthetic
from raqa.prompts import Demonstration, PromptSpec, render_prompt
from raqa.rationalize import (
    PLACEHOLDER_RATIONALE,
    RationaleCache,
    RationaleSet,
    cache_key,
    generate_rationales,
    load_rationales,
    rationalize_split,
    save_rationales,
    trim_completion,
)

SPEC = PromptSpec(
    demonstrations=(
        Demonstration("demo question", ("one x", "two y"), "one x", "a demo rationale"),
    )
)

INST = QAInstance("q1", "what is it", ("one x", "two y", "three z"), 1)


def table_backend(instance, spec, texts):
    """Mock with a lookup table covering every choice of one instance."""
    table = {}
    for choice, text in zip(instance.choices, texts):
        prompt = render_prompt(spec, instance.question, instance.choices, choice)
        table[MockCompletionBackend.prompt_key(prompt)] = text
    return MockCompletionBackend(table)


class TestGenerateRationales:
    def test_one_rationale_per_choice(self):
        inst = QAInstance("q5", "five way", tuple(f"c{i} w{i}" for i in range(5)), 0)
        backend = MockCompletionBackend()
        rset = generate_rationales(backend, SPEC, inst)
        assert len(rset.rationales) == 5
        assert backend.calls == 5

    def test_matches_mock_table_exactly(self):
        texts = ("first rationale", "second rationale", "third rationale")
        backend = table_backend(INST, SPEC, texts)
        rset = generate_rationales(backend, SPEC, INST)
        assert rset.rationales == texts

    def test_empty_completion_gets_placeholder(self):
        texts = ("fine", "", "   ")
        backend = table_backend(INST, SPEC, texts)
        rset = generate_rationales(backend, SPEC, INST)
        assert rset.rationales[1] == PLACEHOLDER_RATIONALE
        assert rset.rationales[2] == PLACEHOLDER_RATIONALE
        assert rset.placeholder_flags == (False, True, True)

    def test_never_consults_gold_index(self):
        backend = MockCompletionBackend()
        base = generate_rationales(backend, SPEC, INST)
        moved = QAInstance(INST.id, INST.question, INST.choices, 2)
        again = generate_rationales(MockCompletionBackend(), SPEC, moved)
        assert base.rationales == again.rationales

    def test_choice_order_covariance_with_mock(self):
        backend = MockCompletionBackend()
        rset = generate_rationales(backend, SPEC, INST)
        permuted = QAInstance(
            INST.id, INST.question, (INST.choices[2], INST.choices[0], INST.choices[1]), 0
        )
        rset_p = generate_rationales(MockCompletionBackend(), SPEC, permuted)
        assert rset_p.rationales == (
            rset.rationales[2],
            rset.rationales[0],
            rset.rationales[1],
        )

    def test_parallel_collection_order(self):
        backend = MockCompletionBackend()
        serial = generate_rationales(backend, SPEC, INST, parallelism=1)
        fanned = generate_rationales(MockCompletionBackend(), SPEC, INST, parallelism=4)
        assert serial.rationales == fanned.rationales


class TestTrim:
    def test_trims_at_first_stop(self):
        assert trim_completion("keep this\n\nQ: drop", ("\n\nQ:", "\n\n")) == "keep this"

    def test_no_stop_found(self):
        assert trim_completion("all kept", ("\n\n",)) == "all kept"


class TestCache:
    def put_get_key(self, tmp_path):
        return RationaleCache(tmp_path / "cache.jsonl")

    def test_round_trip(self, tmp_path):
        cache = self.put_get_key(tmp_path)
        rset = RationaleSet("q1", ("a", "b"), "tag")
        cache.put("k1", rset)
        assert cache.get("k1") == rset

    def test_empty_cache_misses(self, tmp_path):
        assert self.put_get_key(tmp_path).get("missing") is None

    def test_prompt_change_changes_key(self):
        other_spec = PromptSpec(
            demonstrations=(
                Demonstration("demo question", ("one x", "two y"), "one x", "changed"),
            )
        )
        backend = MockCompletionBackend()
        k1 = cache_key(INST, SPEC, backend, 64, ("\n\n",))
        k2 = cache_key(INST, SPEC, backend, 64, ("\n\n",))
        k3 = cache_key(INST, other_spec, backend, 64, ("\n\n",))
        assert k1 == k2 != k3

    def test_idempotent_put(self, tmp_path):
        cache = self.put_get_key(tmp_path)
        rset = RationaleSet("q1", ("a",), "tag")
        cache.put("k", rset)
        cache.put("k", rset)
        assert len(cache) == 1
        reloaded = RationaleCache(tmp_path / "cache.jsonl")
        assert len(reloaded) == 1

    def test_conflicting_put_rejected(self, tmp_path):
        cache = self.put_get_key(tmp_path)
        cache.put("k", RationaleSet("q1", ("a",), "tag"))
        with pytest.raises(ValueError):
            cache.put("k", RationaleSet("q1", ("b",), "tag"))

    def test_corrupt_entries_skipped(self, tmp_path, caplog):
        path = tmp_path / "cache.jsonl"
        good = RationaleSet("q1", ("a",), "tag")
        cache = RationaleCache(path)
        cache.put("k1", good)
        with path.open("a") as fh:
            fh.write("{broken json\n")
            fh.write('{"key": "k2", "instance_id": "q2"}\n')  # missing fields
        reloaded = RationaleCache(path)
        assert reloaded.get("k1") == good
        assert reloaded.get("k2") is None

    def test_generation_uses_cache(self, tmp_path):
        cache = RationaleCache(tmp_path / "cache.jsonl")
        backend = MockCompletionBackend()
        first = generate_rationales(backend, SPEC, INST, cache=cache)
        calls_after_first = backend.calls
        second = generate_rationales(backend, SPEC, INST, cache=cache)
        assert backend.calls == calls_after_first
        assert first == second

    def test_concurrent_puts(self, tmp_path):
        cache = RationaleCache(tmp_path / "cache.jsonl")

        def put(i):
            cache.put(f"k{i}", RationaleSet(f"q{i}", ("a",), "tag"))

        threads = [threading.Thread(target=put, args=(i,)) for i in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        reloaded = RationaleCache(tmp_path / "cache.jsonl")
        assert len(reloaded) == 16


class TestRationaleIO:
    def test_save_load_round_trip(self, tmp_path):
        sets = [
            RationaleSet("q1", ("a", "b"), "tag", placeholder_flags=(False, True)),
            RationaleSet("q2", ("c", "d"), "tag", perturbed=True),
        ]
        path = tmp_path / "r.jsonl"
        save_rationales(sets, path)
        loaded = load_rationales(path)
        assert loaded["q1"] == sets[0]
        assert loaded["q2"] == sets[1]


class TestSyntheticBackendConsistency:
    def test_backend_matches_direct_rule(self):
        scheme = SyntheticScheme(n_choices=4, vocab_size=200)
        split = generate_synthetic(6, 4, 200, seed=21, scheme=scheme)
        backend = SyntheticOracleBackend(scheme)
        demo = split.instances[0]
        spec = PromptSpec(
            demonstrations=(
                Demonstration(
                    demo.question,
                    demo.choices,
                    demo.choices[demo.gold_index],
                    demo.annotated_rationale,
                ),
            )
        )
        for inst in split.instances[1:]:
            rset = generate_rationales(backend, spec, inst)
            expected = tuple(scheme.leak_rationales(inst))
            assert rset.rationales == expected

    def test_rationalize_split_covers_everything(self):
        scheme = SyntheticScheme(n_choices=4, vocab_size=200)
        split = generate_synthetic(5, 4, 200, seed=2, scheme=scheme)
        backend = SyntheticOracleBackend(scheme)
        demo = split.instances[0]
        spec = PromptSpec(
            demonstrations=(
                Demonstration(
                    demo.question,
                    demo.choices,
                    demo.choices[demo.gold_index],
                    demo.annotated_rationale,
                ),
            )
        )
        rsets = rationalize_split(backend, spec, split)
        assert set(rsets) == set(split.ids)
