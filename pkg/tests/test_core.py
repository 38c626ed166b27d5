import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augwm.core import (ContextVector, Dataset, DatasetIOError, NormStats, Rng,
                        Transition, ValidationError, compute_norm_stats,
                        load_dataset, save_dataset)


def random_dataset(n, s_dim, a_dim, seed=0):
    rng = Rng(seed)
    return Dataset(
        s_dim=s_dim, a_dim=a_dim,
        states=rng.normal((n, s_dim)),
        actions=rng.uniform(-1, 1, (n, a_dim)),
        rewards=rng.normal(n),
        next_states=rng.normal((n, s_dim)),
        dones=np.asarray(rng.uniform(size=n)) < 0.1,
    )


class TestRng:
    def test_equal_pair_equal_sequence(self):
        a, b = Rng(42, 7), Rng(42, 7)
        assert np.array_equal(a.uniform(size=1000), b.uniform(size=1000))
        assert np.array_equal(a.normal(1000), b.normal(1000))

    def test_different_streams_differ(self):
        assert not np.array_equal(Rng(42, 0).uniform(size=100),
                                  Rng(42, 1).uniform(size=100))

    def test_split_deterministic(self):
        assert Rng(3).split(5).stream == Rng(3).split(5).stream
        assert np.array_equal(Rng(3).split(5).uniform(size=10),
                              Rng(3).split(5).uniform(size=10))
        assert Rng(3).split(5).stream != Rng(3).split(6).stream


class TestDatasetIO:
    def test_empty_round_trip(self, tmp_path):
        d = Dataset(s_dim=2, a_dim=1)
        path = tmp_path / "empty.jsonl"
        save_dataset(d, path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 1  # header only
        loaded = load_dataset(path)
        assert len(loaded) == 0 and loaded.s_dim == 2 and loaded.a_dim == 1

    def test_single_transition_round_trip(self, tmp_path):
        t = Transition(state=np.zeros(2), action=np.zeros(1), reward=0.0,
                       next_state=np.zeros(2), done=False)
        d = Dataset.from_transitions([t], s_dim=2, a_dim=1)
        path = tmp_path / "one.jsonl"
        save_dataset(d, path)
        loaded = load_dataset(path)
        assert len(loaded) == 1
        assert np.array_equal(loaded.states, d.states)
        assert not loaded.dones[0]

    def test_large_round_trip_exact(self, tmp_path):
        d = random_dataset(10_000, 3, 2, seed=11)
        path = tmp_path / "big.jsonl"
        save_dataset(d, path)
        loaded = load_dataset(path)
        # oracle: component-wise equality against the in-memory original
        assert np.array_equal(loaded.states, d.states)
        assert np.array_equal(loaded.actions, d.actions)
        assert np.array_equal(loaded.rewards, d.rewards)
        assert np.array_equal(loaded.next_states, d.next_states)
        assert np.array_equal(loaded.dones, d.dones)

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(0, 40), s_dim=st.integers(1, 4), a_dim=st.integers(1, 3),
           seed=st.integers(0, 10_000))
    def test_round_trip_property(self, tmp_path_factory, n, s_dim, a_dim, seed):
        d = random_dataset(n, s_dim, a_dim, seed=seed)
        path = tmp_path_factory.mktemp("ds") / "d.jsonl"
        save_dataset(d, path)
        loaded = load_dataset(path)
        assert np.array_equal(loaded.states, d.states)
        assert np.array_equal(loaded.next_states, d.next_states)
        assert np.array_equal(loaded.rewards, d.rewards)

    def test_three_valid_lines(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(
            '{"s_dim": 2, "a_dim": 1, "version": 1}\n'
            '{"s": [0, 0], "a": [0.5], "r": 1.0, "s2": [0.1, 0.2], "d": false}\n'
            '{"s": [1, 1], "a": [-0.5], "r": 2.0, "s2": [0.9, 1.1], "d": false}\n'
            '{"s": [2, 2], "a": [0.0], "r": 3.0, "s2": [2.0, 2.0], "d": true}\n')
        d = load_dataset(path)
        assert len(d) == 3 and d.rewards[2] == 3.0

    def test_nan_reward_names_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(
            '{"s_dim": 1, "a_dim": 1, "version": 1}\n'
            '{"s": [0], "a": [0], "r": 0.0, "s2": [0], "d": false}\n'
            '{"s": [0], "a": [0], "r": NaN, "s2": [0], "d": false}\n')
        with pytest.raises(ValidationError, match=":3"):
            load_dataset(path)

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"s_dim": 1, "a_dim": 1, "version": 1}\nnot json\n')
        with pytest.raises(DatasetIOError, match=":2"):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetIOError):
            load_dataset(tmp_path / "nope.jsonl")


class TestNormStats:
    def test_constant_dataset_floors_std(self):
        t = Transition(state=np.array([1.0, 2.0]), action=np.array([0.5]),
                       reward=0.0, next_state=np.array([1.0, 2.0]), done=False)
        d = Dataset.from_transitions([t] * 5, s_dim=2, a_dim=1)
        stats = compute_norm_stats(d)
        assert np.array_equal(stats.std, np.full(3, 1e-8))
        assert np.allclose(stats.mean, [1.0, 2.0, 0.5])

    def test_two_point_population_std(self):
        d = Dataset(s_dim=1, a_dim=1,
                    states=[[0.0], [2.0]], actions=[[0.0], [0.0]],
                    rewards=[0.0, 0.0], next_states=[[0.0], [0.0]],
                    dones=[False, False])
        stats = compute_norm_stats(d)
        assert np.allclose(stats.mean, [1.0, 0.0])
        assert np.allclose(stats.std, [1.0, 1e-8])

    def test_statistical_recovery(self):
        # seeded draws from N(3, 2^2): mean within 3 +/- 0.2, std within 2 +/- 0.2
        rng = Rng(123)
        states = 3.0 + 2.0 * np.asarray(rng.normal((1000, 2)))
        d = Dataset(s_dim=2, a_dim=1, states=states,
                    actions=np.zeros((1000, 1)), rewards=np.zeros(1000),
                    next_states=np.zeros((1000, 2)), dones=np.zeros(1000, bool))
        stats = compute_norm_stats(d)
        assert np.all(np.abs(stats.mean[:2] - 3.0) < 0.2)
        assert np.all(np.abs(stats.std[:2] - 2.0) < 0.2)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValidationError):
            compute_norm_stats(Dataset(s_dim=1, a_dim=1))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 1000))
    def test_permutation_invariance(self, seed):
        d = random_dataset(50, 2, 1, seed=seed)
        perm = np.arange(50)
        Rng(seed + 1).shuffle(perm)
        shuffled = Dataset(s_dim=2, a_dim=1, states=d.states[perm],
                           actions=d.actions[perm], rewards=d.rewards[perm],
                           next_states=d.next_states[perm], dones=d.dones[perm])
        a, b = compute_norm_stats(d), compute_norm_stats(shuffled)
        assert np.allclose(a.mean, b.mean) and np.allclose(a.std, b.std)


class TestValidation:
    def test_transition_nan_rejected(self):
        t = Transition(state=np.array([np.nan]), action=np.zeros(1), reward=0.0,
                       next_state=np.zeros(1), done=False)
        with pytest.raises(ValidationError):
            t.validate()

    def test_from_transitions_names_record(self):
        good = Transition(state=np.zeros(1), action=np.zeros(1), reward=0.0,
                          next_state=np.zeros(1), done=False)
        bad = Transition(state=np.zeros(1), action=np.array([2.0]), reward=0.0,
                         next_state=np.zeros(1), done=False)
        with pytest.raises(ValidationError, match="record 1"):
            Dataset.from_transitions([good, bad], s_dim=1, a_dim=1)

    def test_context_vector(self):
        assert np.array_equal(ContextVector.ones(3).z, np.ones(3))
        with pytest.raises(ValidationError):
            ContextVector(np.array([1.0, 0.0]))
        with pytest.raises(ValidationError):
            ContextVector(np.array([1.0, np.inf]))

    def test_whiten(self):
        stats = NormStats(mean=np.array([1.0, 0.0]), std=np.array([2.0, 1.0]))
        assert np.allclose(stats.whiten(np.array([3.0, 5.0])), [1.0, 5.0])
