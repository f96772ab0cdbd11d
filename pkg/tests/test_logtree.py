import math

import numpy as np
import pytest
from scipy import stats

import offrl.logtree._fallback as fallback
from offrl.errors import EmptyDistributionError
from offrl.logtree import BACKEND, LogSumExpTree
from offrl.logtree._backend import kernel


def brute_log_norm(tree):
    return np.logaddexp.reduce(tree.leaves)


def chi_square_p(counts, probs):
    n = counts.sum()
    live = probs > 0
    return stats.chisquare(counts[live], n * probs[live] / probs[live].sum()).pvalue


def softmax(logits):
    z = logits - logits.max()
    w = np.exp(z)
    return w / w.sum()


class TestConstruction:
    def test_new_tree_is_empty(self):
        assert LogSumExpTree(4).log_norm() == -np.inf

    def test_zero_capacity_rejected(self):
        with pytest.raises(ValueError):
            LogSumExpTree(0)

    def test_single_leaf(self):
        t = LogSumExpTree(1)
        t.set_logit(0, 5.0)
        assert t.log_norm() == 5.0

    def test_padding_leaves_never_sampled(self):
        t = LogSumExpTree(3)
        for i in range(3):
            t.set_logit(i, 0.0)
        idx = t.sample_many(np.random.default_rng(0).random(20000))
        assert idx.max() <= 2
        with pytest.raises(ValueError):
            t.log_prob(3)

    def test_from_logits_empty(self):
        t = LogSumExpTree.from_logits([])
        assert t.capacity == 0
        assert t.log_norm() == -np.inf
        with pytest.raises(EmptyDistributionError):
            t.sample(0.5)

    def test_from_logits_matches_sequential(self):
        rng = np.random.default_rng(1)
        for size in (1, 2, 3, 7, 64, 100):
            logits = rng.uniform(-50, 50, size)
            logits[rng.random(size) < 0.2] = -np.inf
            bulk = LogSumExpTree.from_logits(logits)
            seq = LogSumExpTree(size)
            for i, v in enumerate(logits):
                seq.set_logit(i, v)
            assert np.array_equal(bulk.nodes, seq.nodes)
            assert bulk.size == seq.size == size

    def test_from_logits_uniform(self):
        t = LogSumExpTree.from_logits([0.0, 0.0, 0.0, 0.0])
        for i in range(4):
            assert t.log_prob(i) == pytest.approx(-np.log(4), abs=1e-15)

    def test_from_logits_rejects_bad_values(self):
        with pytest.raises(ValueError):
            LogSumExpTree.from_logits([0.0, np.inf])
        with pytest.raises(ValueError):
            LogSumExpTree.from_logits([0.0, np.nan])


class TestSetLogit:
    def test_two_equal_leaves(self):
        t = LogSumExpTree(2)
        t.set_logit(0, 0.0)
        t.set_logit(1, 0.0)
        assert t.log_norm() == pytest.approx(math.log(2), abs=1e-15)

    def test_huge_offset_no_overflow(self):
        t = LogSumExpTree(2)
        t.set_logit(0, 1e8)
        t.set_logit(1, 1e8 + math.log(3))
        # shift-by-max reference: 1e8 + log(exp(0) + exp(log 3))
        ref = 1e8 + math.log(4)
        assert math.isfinite(t.log_norm())
        assert t.log_norm() == pytest.approx(ref, rel=1e-12)

    def test_kill_leaf_removes_mass(self):
        rng = np.random.default_rng(2)
        t = LogSumExpTree(8)
        logits = rng.uniform(-5, 5, 8)
        for i, v in enumerate(logits):
            t.set_logit(i, v)
        t.set_logit(3, -np.inf)
        logits[3] = -np.inf
        assert t.log_norm() == pytest.approx(np.logaddexp.reduce(logits), rel=1e-12)

    def test_rejects_bad_arguments(self):
        t = LogSumExpTree(4)
        with pytest.raises(ValueError):
            t.set_logit(4, 0.0)
        with pytest.raises(ValueError):
            t.set_logit(-1, 0.0)
        with pytest.raises(ValueError):
            t.set_logit(0, np.inf)
        with pytest.raises(ValueError):
            t.set_logit(0, np.nan)

    @pytest.mark.parametrize("capacity", [1, 2, 3, 5, 64, 100])
    def test_write_count_bound(self, capacity):
        t = LogSumExpTree(capacity)
        bound = math.ceil(math.log2(capacity)) + 1 if capacity > 1 else 1
        before = t.writes
        t.set_logit(capacity - 1, 1.0)
        assert t.writes - before <= bound

    def test_consistency_after_random_updates(self):
        rng = np.random.default_rng(3)
        t = LogSumExpTree(313)
        for _ in range(10000):
            t.set_logit(int(rng.integers(0, 313)), float(rng.uniform(-50, 50)))
        ref = brute_log_norm(t)
        assert t.log_norm() == pytest.approx(ref, rel=1e-12)

    def test_stability_extreme_logits(self):
        rng = np.random.default_rng(4)
        t = LogSumExpTree(64)
        for i in range(64):
            t.set_logit(i, 1e8 + float(rng.uniform(-50, 50)))
        assert np.isfinite(t.nodes[1:]).all()
        for i in range(64):
            t.set_logit(i, -1e8 + float(rng.uniform(-50, 50)))
        assert np.isfinite(t.nodes[1:]).all()


class TestSetLogits:
    def test_bulk_matches_sequential(self):
        rng = np.random.default_rng(5)
        a = LogSumExpTree.from_logits(rng.uniform(-5, 5, 50))
        b = LogSumExpTree.from_logits(a.leaves.copy())
        idx = rng.integers(0, 50, 20)
        vals = rng.uniform(-5, 5, 20)
        a.set_logits(idx, vals)
        for i, v in zip(idx, vals):
            b.set_logit(int(i), float(v))
        assert np.array_equal(a.nodes, b.nodes)

    def test_disjoint_refresh_keeps_stale_leaves(self):
        t = LogSumExpTree.from_logits(np.zeros(8))
        t.set_logits(np.array([0, 1]), np.array([2.0, 3.0]))
        assert t.leaves[2] == 0.0
        assert t.leaves[7] == 0.0


class TestSampling:
    def test_quarter_three_quarters(self):
        t = LogSumExpTree.from_logits([math.log(1), math.log(3)])
        idx = t.sample_many(np.random.default_rng(6).random(1_000_000))
        counts = np.bincount(idx, minlength=2)
        assert chi_square_p(counts, np.array([0.25, 0.75])) > 0.001

    def test_single_live_leaf(self):
        t = LogSumExpTree(8)
        t.set_logit(5, -2.0)
        for u in (0.0, 0.3, 0.999999):
            assert t.sample(u) == 5

    def test_shift_invariance(self):
        rng = np.random.default_rng(7)
        logits = rng.uniform(-3, 3, 16)
        us = rng.random(1_000_000)
        base = np.bincount(LogSumExpTree.from_logits(logits).sample_many(us),
                           minlength=16)
        probs = softmax(logits)
        for c in (-1e6, 1e6):
            shifted = np.bincount(
                LogSumExpTree.from_logits(logits + c).sample_many(us), minlength=16)
            assert chi_square_p(shifted, probs) > 0.001
            # identical u draws: shifting should rarely move any boundary
            assert np.abs(shifted - base).sum() < 100

    def test_empty_tree_raises(self):
        t = LogSumExpTree(4)
        with pytest.raises(EmptyDistributionError):
            t.sample(0.5)

    def test_u_range_validated(self):
        t = LogSumExpTree.from_logits([0.0])
        with pytest.raises(ValueError):
            t.sample(1.0)
        with pytest.raises(ValueError):
            t.sample(-0.1)

    def test_u_zero_selects_leftmost_live(self):
        t = LogSumExpTree(8)
        t.set_logit(3, 0.0)
        t.set_logit(6, 10.0)
        assert t.sample(0.0) == 3

    def test_never_returns_dead_leaf(self):
        rng = np.random.default_rng(8)
        t = LogSumExpTree(32)
        live = [1, 2, 13, 30]
        for i in live:
            t.set_logit(i, rng.uniform(-3, 3))
        idx = t.sample_many(rng.random(100000))
        assert set(np.unique(idx)) <= set(live)

    def test_scalar_matches_batch(self):
        rng = np.random.default_rng(9)
        t = LogSumExpTree.from_logits(rng.uniform(-10, 10, 33))
        us = rng.random(500)
        batch = t.sample_many(us)
        assert [t.sample(u) for u in us] == batch.tolist()


class TestLogProb:
    def test_uniform(self):
        t = LogSumExpTree.from_logits(np.zeros(5))
        for i in range(5):
            assert t.log_prob(i) == pytest.approx(-math.log(5), abs=1e-12)

    def test_direct_softmax(self):
        t = LogSumExpTree.from_logits([math.log(1), math.log(3)])
        assert t.log_prob(1) == pytest.approx(math.log(0.75), abs=1e-12)

    def test_dead_leaf(self):
        t = LogSumExpTree(4)
        t.set_logit(0, 1.0)
        assert t.log_prob(2) == -np.inf

    def test_out_of_range(self):
        t = LogSumExpTree(4)
        with pytest.raises(ValueError):
            t.log_prob(4)


@pytest.mark.skipif(BACKEND != "compiled", reason="compiled kernels not built")
class TestBackendParity:
    """The numpy fallback and the compiled kernels must be interchangeable."""

    def test_nodes_bitwise_equal(self):
        rng = np.random.default_rng(10)
        P = 64
        a = np.full(2 * P, -np.inf)
        b = a.copy()
        for _ in range(3000):
            i = int(rng.integers(0, P))
            v = float(rng.uniform(-50, 50))
            wa = kernel.update(a, P, i, v)
            wb = fallback.update(b, P, i, v)
            assert wa == wb
        assert np.array_equal(a, b)
        fallback.build(b, P)
        assert np.array_equal(a, b)

    def test_samples_equal(self):
        rng = np.random.default_rng(11)
        P = 64
        nodes = np.full(2 * P, -np.inf)
        nodes[P:2 * P] = rng.uniform(-20, 20, P)
        fallback.build(nodes, P)
        us = rng.random(100000)
        out_c = np.empty(us.size, dtype=np.int64)
        out_p = np.empty(us.size, dtype=np.int64)
        kernel.sample_many(nodes, P, us, out_c)
        fallback.sample_many(nodes, P, us, out_p)
        assert np.array_equal(out_c, out_p)
