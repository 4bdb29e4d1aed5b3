import math

import numpy as np
import pytest

from raqa.losses import TargetDistribution, counterfactual_loss, smooth_targets, standard_loss


def oracle_cross_entropy(targets, probabilities):
    """Independent summation oracle: explicit per-term loop with fsum."""
    terms = []
    for q, p in zip(targets, probabilities):
        if q > 0.0:
            terms.append(-q * math.log(p))
    return math.fsum(terms)


def random_distribution(rng, n):
    raw = rng.random(n) + 1e-3
    return tuple((raw / raw.sum()).tolist())


class TestStandardLoss:
    def test_perfect_prediction(self):
        assert standard_loss((1.0, 0.0, 0.0), 0) == 0.0

    def test_uniform_case(self):
        loss = standard_loss((0.2,) * 5, 3)
        assert abs(loss - math.log(5)) < 1e-12

    def test_hand_value(self):
        loss = standard_loss((0.25, 0.75), 1)
        assert abs(loss - 0.2876820724517809) < 1e-12

    def test_matches_one_hot_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 9))
            p = random_distribution(rng, n)
            gold = int(rng.integers(0, n))
            one_hot = tuple(1.0 if i == gold else 0.0 for i in range(n))
            assert abs(standard_loss(p, gold) - oracle_cross_entropy(one_hot, p)) < 1e-9

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            standard_loss((0.5, 0.6), 0)
        with pytest.raises(ValueError):
            standard_loss((0.5, 0.5), 2)


class TestSmoothTargets:
    def test_zero_epsilon_is_one_hot(self):
        t = smooth_targets(1, 4, 0.0)
        assert t.values == (0.0, 1.0, 0.0, 0.0)
        assert not t.smoothed

    def test_full_smoothing_is_uniform(self):
        t = smooth_targets(2, 4, 1.0)
        assert all(abs(v - 0.25) < 1e-15 for v in t.values)

    def test_hand_values(self):
        t = smooth_targets(0, 5, 0.1)
        assert t.values[0] == (1.0 - 0.1) + 0.1 / 5
        assert t.values[1] == 0.1 / 5
        assert abs(t.values[0] - 0.92) < 1e-12
        assert abs(t.values[1] - 0.02) < 1e-12
        assert t.smoothed

    def test_sums_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(2, 9))
            eps = float(rng.random())
            t = smooth_targets(int(rng.integers(0, n)), n, eps)
            assert abs(math.fsum(t.values) - 1.0) < 1e-9


class TestCounterfactualLoss:
    def test_minimized_at_targets(self):
        t = smooth_targets(0, 4, 0.3)
        at_target = counterfactual_loss(t.values, t)
        entropy = -math.fsum(v * math.log(v) for v in t.values)
        assert abs(at_target - entropy) < 1e-12
        rng = np.random.default_rng(2)
        for _ in range(20):
            other = random_distribution(rng, 4)
            assert counterfactual_loss(other, t) >= at_target - 1e-12

    def test_uniform_targets_collapse(self):
        t = smooth_targets(1, 4, 1.0)
        p = (0.1, 0.2, 0.3, 0.4)
        expected = -math.fsum(math.log(v) for v in p) / 4
        assert abs(counterfactual_loss(p, t) - expected) < 1e-12

    def test_hand_value_uniform_prediction(self):
        t = smooth_targets(0, 5, 0.1)
        loss = counterfactual_loss((0.2,) * 5, t)
        assert abs(loss - math.log(5)) < 1e-12

    def test_matches_summation_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(2, 9))
            eps = float(rng.uniform(0.05, 1.0))
            t = smooth_targets(int(rng.integers(0, n)), n, eps)
            p = random_distribution(rng, n)
            assert abs(counterfactual_loss(p, t) - oracle_cross_entropy(t.values, p)) < 1e-9

    def test_requires_smoothed_targets(self):
        t = smooth_targets(0, 3, 0.0)
        with pytest.raises(ValueError):
            counterfactual_loss((0.4, 0.3, 0.3), t)

    def test_uniform_targets_minimized_by_uniform_prediction(self):
        # grid search over the 3-simplex confirms the analytic minimizer
        t = smooth_targets(0, 3, 1.0)
        best, best_p = None, None
        grid = np.linspace(0.02, 0.96, 30)
        for a in grid:
            for b in grid:
                c = 1.0 - a - b
                if c <= 0.01:
                    continue
                loss = counterfactual_loss((a, b, c), t)
                if best is None or loss < best:
                    best, best_p = loss, (a, b, c)
        uniform_loss = counterfactual_loss((1 / 3,) * 3, t)
        assert uniform_loss <= best + 1e-9
        assert max(abs(x - 1 / 3) for x in best_p) < 0.05


class TestTargetDistribution:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            TargetDistribution(values=(-0.1, 1.1), smoothed=True)

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            TargetDistribution(values=(0.5, 0.6), smoothed=True)
