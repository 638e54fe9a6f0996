import numpy as np
import pytest
from scipy import stats

from rlwindow.replay import PRIORITY_FLOOR, ReplayBuffer, SumTree, Transition


def tr(v=0.0, action=0, reward=0.0, dim=2):
    return Transition(np.full(dim, v), action, reward, np.full(dim, v + 1))


class TestSumTree:
    def test_root_equals_leaf_sum_after_random_ops(self):
        tree = SumTree(1000)
        rng = np.random.default_rng(0)
        for _ in range(2000):
            ids = rng.integers(0, 1000, size=int(rng.integers(1, 12)))
            tree.set(ids, rng.random(len(ids)) * 5)
            assert abs(tree.total - tree.leaf_values().sum()) < 1e-9
        assert tree.validate()

    def test_internal_nodes_are_child_sums(self):
        tree = SumTree(37)  # non-power-of-two capacity
        rng = np.random.default_rng(1)
        for _ in range(200):
            tree.set([int(rng.integers(0, 37))], [float(rng.random())])
        assert tree.validate()

    def test_find_routes_mass_proportionally(self):
        tree = SumTree(4)
        tree.set([0, 1, 2, 3], [1.0, 2.0, 3.0, 4.0])
        assert tree.find([0.5])[0] == 0
        assert tree.find([1.5])[0] == 1
        assert tree.find([2.999])[0] == 1
        assert tree.find([3.0])[0] == 2
        assert tree.find([9.99])[0] == 3

    def test_capacity_one(self):
        tree = SumTree(1)
        tree.set([0], [2.0])
        assert tree.total == 2.0
        assert tree.find([1.0])[0] == 0


class TestStore:
    def test_first_store_enters_at_priority_one(self):
        buf = ReplayBuffer(capacity=8, state_dim=2)
        buf.store(tr())
        assert buf.tree.leaf_values()[0] == pytest.approx(1.0 ** buf.alpha)
        assert buf.max_priority == 1.0

    def test_ring_overwrite_at_capacity(self):
        buf = ReplayBuffer(capacity=4, state_dim=2)
        for i in range(5):
            buf.store(tr(v=float(i), reward=float(i)))
        assert len(buf) == 4
        assert buf.rewards[0] == 4.0  # slot 0 overwritten by the 5th store
        assert sorted(buf.rewards.tolist()) == [1.0, 2.0, 3.0, 4.0]

    def test_root_tracks_leaf_sum_through_stores_and_updates(self):
        buf = ReplayBuffer(capacity=64, state_dim=2)
        rng = np.random.default_rng(2)
        for i in range(500):
            buf.store(tr(v=float(i)))
            if i % 3 == 0 and len(buf) > 4:
                ids = rng.integers(0, min(len(buf), 64), size=4)
                buf.update_priorities(ids, rng.random(4) * 2)
            assert abs(buf.tree.total - buf.tree.leaf_values().sum()) < 1e-9


class TestSample:
    def test_insufficient_contents_rejected(self):
        buf = ReplayBuffer(capacity=8, state_dim=2)
        buf.store(tr())
        with pytest.raises(ValueError):
            buf.sample(2, beta=1.0, rng=np.random.default_rng(0))

    def test_uniform_priorities_sample_uniformly(self):
        buf = ReplayBuffer(capacity=10, state_dim=1)
        for i in range(10):
            buf.store(Transition(np.array([float(i)]), 0, 0.0, np.array([0.0])))
        rng = np.random.default_rng(3)
        counts = np.zeros(10)
        draws = 10_000
        for _ in range(draws // 5):
            batch = buf.sample(5, beta=0.4, rng=rng)
            for i in batch.leaf_ids:
                counts[i] += 1
        freq = counts / draws
        sigma = np.sqrt(0.1 * 0.9 / draws)
        assert (np.abs(freq - 0.1) <= 3 * sigma + 1e-12).all()

    def test_three_to_one_priorities_give_75_25(self):
        buf = ReplayBuffer(capacity=2, state_dim=1, alpha=1.0)
        buf.store(Transition(np.zeros(1), 0, 0.0, np.zeros(1)))
        buf.store(Transition(np.zeros(1), 1, 0.0, np.zeros(1)))
        buf.update_priorities(np.array([0, 1]),
                              np.array([3.0 - PRIORITY_FLOOR, 1.0 - PRIORITY_FLOOR]))
        np.testing.assert_allclose(buf.tree.leaf_values(), [3.0, 1.0])
        rng = np.random.default_rng(4)
        counts = np.zeros(2)
        draws = 10_000
        for _ in range(draws):
            counts[buf.sample(1, beta=1.0, rng=rng).leaf_ids[0]] += 1
        chi2 = stats.chisquare(counts, f_exp=[0.75 * draws, 0.25 * draws])
        assert chi2.pvalue > 0.001

    def test_beta_one_uniform_priorities_give_unit_weights(self):
        buf = ReplayBuffer(capacity=8, state_dim=1)
        for _ in range(8):
            buf.store(Transition(np.zeros(1), 0, 0.0, np.zeros(1)))
        batch = buf.sample(4, beta=1.0, rng=np.random.default_rng(5))
        np.testing.assert_array_equal(batch.weights, np.ones(4))

    def test_weights_max_normalized(self):
        buf = ReplayBuffer(capacity=4, state_dim=1, alpha=1.0)
        for _ in range(4):
            buf.store(Transition(np.zeros(1), 0, 0.0, np.zeros(1)))
        buf.update_priorities(np.arange(4), np.array([4.0, 1.0, 2.0, 0.5]))
        batch = buf.sample(4, beta=0.7, rng=np.random.default_rng(6))
        assert batch.weights.max() == pytest.approx(1.0)
        assert (batch.weights > 0).all()

    def test_uniform_mode_ignores_priorities(self):
        buf = ReplayBuffer(capacity=4, state_dim=1, prioritized=False)
        for i in range(4):
            buf.store(Transition(np.array([float(i)]), 0, 0.0, np.zeros(1)))
        buf.update_priorities(np.array([0]), np.array([100.0]))
        rng = np.random.default_rng(7)
        counts = np.zeros(4)
        for _ in range(4000):
            counts[buf.sample(1, beta=1.0, rng=rng).leaf_ids[0]] += 1
        freq = counts / 4000
        assert (np.abs(freq - 0.25) < 0.05).all()
        batch = buf.sample(2, beta=1.0, rng=rng)
        np.testing.assert_array_equal(batch.weights, np.ones(2))


class TestUpdatePriorities:
    def test_priorities_become_abs_td_plus_floor(self):
        buf = ReplayBuffer(capacity=4, state_dim=1, alpha=1.0)
        for _ in range(4):
            buf.store(Transition(np.zeros(1), 0, 0.0, np.zeros(1)))
        buf.update_priorities(np.array([0, 1]), np.array([-2.0, 0.0]))
        leaves = buf.tree.leaf_values()
        assert leaves[0] == pytest.approx(2.0 + PRIORITY_FLOOR)
        assert leaves[1] == pytest.approx(PRIORITY_FLOOR)

    def test_max_priority_tracks_updates(self):
        buf = ReplayBuffer(capacity=4, state_dim=1)
        buf.store(tr(dim=1))
        buf.update_priorities(np.array([0]), np.array([5.0]))
        assert buf.max_priority == pytest.approx(5.0 + PRIORITY_FLOOR)
        buf.store(tr(dim=1))  # enters at the new max
        assert buf.tree.leaf_values()[1] == pytest.approx((5.0 + PRIORITY_FLOOR) ** buf.alpha)


class TestCheckpoint:
    def test_round_trip(self):
        buf = ReplayBuffer(capacity=8, state_dim=3)
        rng = np.random.default_rng(8)
        for i in range(5):
            buf.store(Transition(rng.standard_normal(3), int(rng.integers(4)),
                                 float(rng.random()), rng.standard_normal(3)))
        buf.update_priorities(np.array([1, 3]), np.array([2.0, 0.7]))
        arrays = buf.state_arrays()
        clone = ReplayBuffer(capacity=8, state_dim=3)
        clone.load_state(arrays)
        assert len(clone) == len(buf)
        np.testing.assert_array_equal(clone.states[:5], buf.states[:5])
        np.testing.assert_array_equal(clone.tree.leaf_values(), buf.tree.leaf_values())
        assert clone.max_priority == buf.max_priority
