import numpy as np
import pytest

from augwm import nn
from augwm.core import Rng, ValidationError
from augwm.envs import DynamicsParams, EnvKind, env_step, generate_offline_dataset
from augwm.envs import EnvState
from augwm.model import (EnsembleModel, ensemble_from_dict, ensemble_to_dict,
                         load_ensemble, mean_delta, penalized_reward, predict,
                         sample_step_batch, save_ensemble, train_ensemble,
                         uncertainty)
from augwm.core import NormStats

MSD = EnvKind.MASS_SPRING_DAMPER
MIX = {"random_frac": 0.5, "mediocre_frac": 0.5}


@pytest.fixture(scope="module")
def msd_data():
    return generate_offline_dataset(MSD, DynamicsParams(), MIX, 5000, Rng(0))


@pytest.fixture(scope="module")
def trained(msd_data):
    return train_ensemble(msd_data, n=3, epochs=60, batch=256, lr=1e-3, rng=Rng(1))


def constant_ensemble(s_dim, a_dim, mean_val=0.0, log_std_val=-5.0, n=2):
    """Members with zero weights and fixed output biases."""
    out = 2 * (s_dim + 1)
    members = []
    for _ in range(n):
        net = nn.Mlp((s_dim + a_dim, out),
                     [np.zeros((s_dim + a_dim, out))],
                     [np.concatenate([np.full(s_dim + 1, mean_val),
                                      np.full(s_dim + 1, log_std_val)])],
                     "tanh")
        members.append(net)
    norm = NormStats(mean=np.zeros(s_dim + a_dim), std=np.ones(s_dim + a_dim))
    return EnsembleModel(members=members, norm=norm, s_dim=s_dim, a_dim=a_dim)


class TestTrainEnsemble:
    def test_linear_dataset_fit(self, trained, msd_data):
        # held-out data from the same behavior distribution
        held = generate_offline_dataset(MSD, DynamicsParams(), MIX, 400, Rng(42))
        errs = []
        for i in range(len(held)):
            p = predict(trained, held.states[i], held.actions[i], "mean_of_means")
            errs.append(p.delta_mean - (held.next_states[i] - held.states[i]))
        rmse = float(np.sqrt(np.mean(np.square(errs))))
        assert rmse < 0.01

    def test_reports_validation_nll(self, trained):
        assert trained.val_nll is not None and len(trained.val_nll) == 3
        assert all(np.isfinite(v) for v in trained.val_nll)

    def test_bootstrap_disabled_identical_members(self, msd_data):
        ens = train_ensemble(msd_data, n=2, epochs=2, batch=256, lr=1e-3,
                             rng=Rng(3), bootstrap=False)
        for a, b in zip(ens.members[0].params(), ens.members[1].params()):
            assert np.array_equal(a, b)

    def test_zero_epochs_keeps_init(self, msd_data):
        ens = train_ensemble(msd_data, n=2, epochs=0, batch=256, lr=1e-3,
                             rng=Rng(4), bootstrap=False)
        # reconstruct the shared init stream used for member 0
        expect = nn.init_mlp((3, 64, 64, 6), "tanh", Rng(4).split(1).split(0))
        for a, b in zip(ens.members[0].params(), expect.params()):
            assert np.array_equal(a, b)

    def test_batch_larger_than_dataset(self, msd_data):
        with pytest.raises(ValidationError):
            train_ensemble(msd_data, n=2, epochs=1, batch=10_000, lr=1e-3, rng=Rng(0))


class TestPredict:
    def test_mean_of_means_with_identical_members(self):
        ens = constant_ensemble(2, 1, mean_val=0.7)
        p = predict(ens, np.zeros(2), np.zeros(1), "mean_of_means")
        assert np.allclose(p.delta_mean, 0.7) and p.reward_mean == pytest.approx(0.7)
        assert p.member_index == -1

    def test_sample_member_reproducible(self, trained):
        s, a = np.array([0.1, 0.0]), np.array([0.3])
        p1 = predict(trained, s, a, "sample_member", Rng(9))
        p2 = predict(trained, s, a, "sample_member", Rng(9))
        assert p1.member_index == p2.member_index
        assert np.array_equal(p1.delta_mean, p2.delta_mean)

    def test_accuracy_against_env(self, trained, msd_data):
        rng = Rng(10)
        worst = 0.0
        for _ in range(100):
            i = int(rng.integers(0, len(msd_data)))
            s, a = msd_data.states[i], msd_data.actions[i]
            nxt, _, _ = env_step(MSD, DynamicsParams(),
                                 EnvState(observation=s, step_count=0), a)
            true_delta = nxt.observation - s
            p = predict(trained, s, a, "mean_of_means")
            worst = max(worst, float(np.max(np.abs(p.delta_mean - true_delta))))
        assert worst < 0.02

    def test_mean_of_means_member_order_invariant(self, trained):
        s, a = np.array([0.2, -0.1]), np.array([0.5])
        base = predict(trained, s, a, "mean_of_means").delta_mean
        shuffled = EnsembleModel(members=trained.members[::-1], norm=trained.norm,
                                 s_dim=trained.s_dim, a_dim=trained.a_dim)
        assert np.allclose(predict(shuffled, s, a, "mean_of_means").delta_mean, base)

    def test_unknown_mode(self, trained):
        with pytest.raises(ValidationError):
            predict(trained, np.zeros(2), np.zeros(1), "nope")


class TestUncertainty:
    def test_closed_form_at_min_log_std(self):
        ens = constant_ensemble(2, 1, log_std_val=-5.0)
        u = uncertainty(ens, np.zeros(2), np.zeros(1))
        assert u == pytest.approx(np.exp(-5.0) * np.sqrt(3.0))

    def test_max_semantics(self):
        quiet = constant_ensemble(2, 1, log_std_val=-5.0, n=2)
        loud = constant_ensemble(2, 1, log_std_val=0.0, n=2)
        mixed = EnsembleModel(members=[quiet.members[0], loud.members[0]],
                              norm=quiet.norm, s_dim=2, a_dim=1)
        u = uncertainty(mixed, np.zeros(2), np.zeros(1))
        assert u == pytest.approx(np.sqrt(3.0))  # the loud member dominates

    def test_member_order_invariant(self, trained):
        s, a = np.array([0.3, 0.1]), np.array([-0.2])
        base = uncertainty(trained, s, a)
        shuffled = EnsembleModel(members=trained.members[::-1], norm=trained.norm,
                                 s_dim=trained.s_dim, a_dim=trained.a_dim)
        assert uncertainty(shuffled, s, a) == pytest.approx(base)

    def test_ood_exceeds_in_distribution(self, trained, msd_data):
        rng = Rng(11)
        idx = np.asarray(rng.integers(0, len(msd_data), 100))
        u_in = np.mean([uncertainty(trained, msd_data.states[i], msd_data.actions[i])
                        for i in idx])
        lo = msd_data.states.min(axis=0)
        hi = msd_data.states.max(axis=0)
        center, half = (lo + hi) / 2, (hi - lo) / 2
        signs = np.sign(np.asarray(rng.normal((100, 2))))
        u_out = np.mean([uncertainty(trained, center + 5.0 * half * signs[k],
                                     msd_data.actions[idx[k]])
                         for k in range(100)])
        assert u_out > u_in


class TestPenalizedReward:
    def test_fixture(self):
        assert penalized_reward(1.0, 0.5, 1.0) == 0.5

    def test_lambda_zero_identity(self):
        assert penalized_reward(0.37, 123.0, 0.0) == 0.37

    def test_monotone_in_lambda(self):
        assert penalized_reward(1.0, 0.5, 0.5) >= penalized_reward(1.0, 0.5, 2.0)

    def test_never_exceeds_raw(self):
        rng = Rng(12)
        for _ in range(100):
            r = float(rng.normal())
            u = abs(float(rng.normal()))
            lam = abs(float(rng.normal()))
            assert penalized_reward(r, u, lam) <= r

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValidationError):
            penalized_reward(1.0, 1.0, -0.1)


class TestSampleStepBatch:
    def test_shapes_and_determinism(self, trained):
        rng = Rng(13)
        states = np.asarray(rng.normal((8, 2))) * 0.1
        actions = np.asarray(rng.uniform(-1, 1, (8, 1)))
        out1 = sample_step_batch(trained, states, actions, Rng(14))
        out2 = sample_step_batch(trained, states, actions, Rng(14))
        assert out1[0].shape == (8, 2) and out1[1].shape == (8,) and out1[2].shape == (8,)
        for a, b in zip(out1, out2):
            assert np.array_equal(a, b)

    def test_uncertainty_matches_scalar_op(self, trained):
        s = np.array([[0.05, -0.02]])
        a = np.array([[0.4]])
        _, _, u = sample_step_batch(trained, s, a, Rng(15))
        assert u[0] == pytest.approx(uncertainty(trained, s[0], a[0]))


class TestCheckpoint:
    def test_round_trip(self, trained, tmp_path):
        path = tmp_path / "ens.json"
        save_ensemble(trained, path)
        loaded = load_ensemble(path)
        assert loaded.n == trained.n and loaded.s_dim == trained.s_dim
        assert np.array_equal(loaded.norm.mean, trained.norm.mean)
        for a, b in zip(trained.members[0].params(), loaded.members[0].params()):
            assert np.array_equal(a, b)
        s, a = np.array([0.1, 0.2]), np.array([0.3])
        assert np.array_equal(predict(loaded, s, a, "mean_of_means").delta_mean,
                              predict(trained, s, a, "mean_of_means").delta_mean)

    def test_dict_round_trip(self, trained):
        again = ensemble_from_dict(ensemble_to_dict(trained))
        assert again.val_nll == trained.val_nll

    def test_mean_delta_helper(self, trained):
        s, a = np.array([0.1, 0.2]), np.array([0.3])
        assert np.array_equal(mean_delta(trained, s, a),
                              predict(trained, s, a, "mean_of_means").delta_mean)
