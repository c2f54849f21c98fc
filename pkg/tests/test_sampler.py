"""Tests for pool construction and target distributions."""

import numpy as np
import pytest

from microrank.errors import UsageError
from microrank.sampler import Pool, PoolPlan, build_pools, target_distribution


POS = [f"p{i}" for i in range(8)]
NEG = [f"n{i}" for i in range(20)]


def counts_by_level(pools):
    levels = {}
    for p in pools:
        j = int(p.positive_mask.sum())
        levels[j] = levels.get(j, 0) + 1
    return levels


class TestBuildPools:
    def test_paper_example_five_positives_k3(self):
        # 5 positives, K=3: 15 pools, 5 at each positive count 1, 2, 3.
        pools = build_pools("b", POS[:5], NEG, PoolPlan(k=3),
                            np.random.default_rng(0))
        assert len(pools) == 15
        assert counts_by_level(pools) == {1: 5, 2: 5, 3: 5}

    def test_single_positive(self):
        pools = build_pools("b", POS[:1], NEG, PoolPlan(k=4),
                            np.random.default_rng(0))
        assert len(pools) == 1
        assert len(pools[0].candidate_ids) == 4
        assert pools[0].positive_mask.sum() == 1

    def test_n4_k6_gives_16_pools(self):
        pools = build_pools("b", POS[:4], NEG, PoolPlan(k=6),
                            np.random.default_rng(0))
        assert len(pools) == 16
        assert counts_by_level(pools) == {1: 4, 2: 4, 3: 4, 4: 4}

    @pytest.mark.parametrize("n", range(1, 9))
    @pytest.mark.parametrize("k", range(2, 9))
    def test_pool_count_law(self, n, k):
        pools = build_pools("b", POS[:n], NEG, PoolPlan(k=k),
                            np.random.default_rng(n * 31 + k))
        assert len(pools) == n * min(k, n)

    @pytest.mark.parametrize("n,k", [(5, 3), (3, 5), (7, 4)])
    def test_every_positive_at_every_level(self, n, k):
        pools = build_pools("b", POS[:n], NEG, PoolPlan(k=k),
                            np.random.default_rng(17))
        for j in range(1, min(k, n) + 1):
            seen = set()
            for p in pools:
                if int(p.positive_mask.sum()) == j:
                    seen.update(c for c, m in zip(p.candidate_ids, p.positive_mask) if m)
            assert seen == set(POS[:n])

    def test_pool_structure_invariants(self):
        pools = build_pools("b", POS[:5], NEG, PoolPlan(k=4),
                            np.random.default_rng(3))
        for p in pools:
            assert len(p.candidate_ids) == 4
            assert len(set(p.candidate_ids)) == 4
            assert abs(p.y.sum() - 1.0) < 1e-12
            np.testing.assert_array_equal(p.y > 0, p.positive_mask)

    def test_deterministic_given_seed(self):
        a = build_pools("b", POS[:5], NEG, PoolPlan(k=3), np.random.default_rng(8))
        b = build_pools("b", POS[:5], NEG, PoolPlan(k=3), np.random.default_rng(8))
        assert [p.candidate_ids for p in a] == [p.candidate_ids for p in b]
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.y, pb.y)

    def test_too_few_negatives(self):
        with pytest.raises(UsageError, match="negatives"):
            build_pools("b", POS[:2], NEG[:1], PoolPlan(k=4),
                        np.random.default_rng(0))

    def test_no_positives(self):
        with pytest.raises(UsageError):
            build_pools("b", [], NEG, PoolPlan(k=3), np.random.default_rng(0))

    def test_overlap_rejected(self):
        with pytest.raises(UsageError, match="overlap"):
            build_pools("b", POS[:2], POS[:1] + NEG, PoolPlan(k=3),
                        np.random.default_rng(0))

    def test_k_must_be_at_least_two(self):
        with pytest.raises(UsageError):
            PoolPlan(k=1)


class TestTargetDistribution:
    def test_partial_sequence_two_of_four(self):
        y = target_distribution([True, True, False, False], "partial_sequence", 9)
        np.testing.assert_array_equal(y, [0.5, 0.5, 0.0, 0.0])

    def test_partial_sequence_single(self):
        y = target_distribution([True, False, False], "partial_sequence", 5)
        np.testing.assert_array_equal(y, [1.0, 0.0, 0.0])

    def test_all_positive_uniform(self):
        y = target_distribution([True, True, True], "partial_sequence", 3)
        np.testing.assert_allclose(y, np.full(3, 1 / 3))

    def test_listwise_renormalizes_within_pool(self):
        y = target_distribution([True, True, False, False], "listwise", 7)
        assert y.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(y[:2], 0.5)

    def test_all_false_rejected(self):
        with pytest.raises(UsageError):
            target_distribution([False, False], "listwise", 3)

    @pytest.mark.parametrize("mode", ["listwise", "partial_sequence"])
    def test_support_exactly_on_positives(self, mode):
        rng = np.random.default_rng(4)
        for _ in range(50):
            k = rng.integers(2, 9)
            mask = rng.random(k) < 0.5
            if not mask.any():
                mask[0] = True
            y = target_distribution(mask, mode, int(mask.sum()) + 3)
            assert abs(y.sum() - 1.0) < 1e-12
            np.testing.assert_array_equal(y > 0, mask)
