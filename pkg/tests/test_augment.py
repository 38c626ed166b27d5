import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augwm.augment import AugKind, AugRange, apply, apply_batch, sample_z
from augwm.core import ContextVector, Rng, Transition, ValidationError

ALL_KINDS = [AugKind.NONE, AugKind.RAD, AugKind.RANS, AugKind.DAS]


def make_t(s, s2, a=None, r=0.25, done=False):
    s = np.asarray(s, dtype=float)
    return Transition(state=s, action=np.asarray(a if a is not None else [0.5]),
                      reward=r, next_state=np.asarray(s2, dtype=float), done=done)


# Dyadic grids keep every multiplication/addition below exactly representable,
# so the algebraic operator laws can be asserted bit-exactly.
def dyadic_vec(n, lo=-8192, hi=8192, denom=1024):
    return st.lists(st.integers(lo, hi), min_size=n, max_size=n).map(
        lambda ks: np.array(ks, dtype=float) / denom)


def dyadic_z(n):
    return st.lists(st.integers(512, 1536), min_size=n, max_size=n).map(
        lambda ks: np.array(ks, dtype=float) / 1024)


class TestSampleZ:
    def test_degenerate_range(self):
        z = sample_z(AugRange(1.0, 1.0), 4, Rng(0))
        assert np.array_equal(z.z, np.ones(4))

    def test_component_mean(self):
        rng = Rng(17)
        zs = np.asarray(rng.uniform(0.5, 1.5, (100_000, 1)))
        # same distribution the operator draws from
        assert abs(zs.mean() - 1.0) < 0.01
        z = sample_z(AugRange(0.5, 1.5), 100_000, Rng(18))
        assert abs(z.z.mean() - 1.0) < 0.01

    def test_reproducible(self):
        a = sample_z(AugRange(0.5, 1.5), 8, Rng(4, 2))
        b = sample_z(AugRange(0.5, 1.5), 8, Rng(4, 2))
        assert np.array_equal(a.z, b.z)

    def test_invalid_range(self):
        with pytest.raises(ValidationError):
            AugRange(0.0, 1.0)
        with pytest.raises(ValidationError):
            AugRange(1.5, 0.5)


class TestApply:
    def test_das_fixture(self):
        t = make_t([1.0, 2.0], [2.0, 4.0])
        out = apply(AugKind.DAS, ContextVector(np.array([0.5, 0.5])), t)
        assert np.array_equal(out.next_state, [1.5, 3.0])
        assert np.array_equal(out.state, t.state)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_identity_at_ones(self, kind):
        rng = Rng(3)
        t = make_t(rng.normal(3), rng.normal(3), a=[0.1])
        out = apply(kind, ContextVector.ones(3), t)
        assert np.array_equal(out.state, t.state)
        assert np.array_equal(out.next_state, t.next_state)

    def test_rans_equals_das_at_zero_state(self):
        rng = Rng(5)
        s2 = np.asarray(rng.normal(4))
        z = ContextVector(np.asarray(rng.uniform(0.5, 1.5, 4)))
        t = make_t(np.zeros(4), s2, a=[0.0])
        a = apply(AugKind.RANS, z, t)
        b = apply(AugKind.DAS, z, t)
        assert np.array_equal(a.next_state, b.next_state)

    def test_dimension_mismatch(self):
        t = make_t([1.0, 2.0], [2.0, 4.0])
        with pytest.raises(ValidationError):
            apply(AugKind.DAS, ContextVector(np.ones(3)), t)

    @settings(max_examples=200, deadline=None)
    @given(s=dyadic_vec(3), s2=dyadic_vec(3), z=dyadic_z(3),
           kind=st.sampled_from(ALL_KINDS))
    def test_never_touches_action_reward_done(self, s, s2, z, kind):
        t = make_t(s, s2, a=[0.25], r=1.375, done=True)
        out = apply(kind, ContextVector(z), t)
        assert np.array_equal(out.action, t.action)
        assert out.reward == t.reward and out.done == t.done

    @settings(max_examples=200, deadline=None)
    @given(s=dyadic_vec(3), s2=dyadic_vec(3), z=dyadic_z(3))
    def test_das_scales_delta_exactly(self, s, s2, z):
        t = make_t(s, s2)
        out = apply(AugKind.DAS, ContextVector(z), t)
        assert np.array_equal(out.next_state - t.state,
                              z * (t.next_state - t.state))

    @settings(max_examples=200, deadline=None)
    @given(s=dyadic_vec(2), s2=dyadic_vec(2), z1=dyadic_z(2), z2=dyadic_z(2),
           kind=st.sampled_from([AugKind.RAD, AugKind.RANS]))
    def test_composition_law(self, s, s2, z1, z2, kind):
        t = make_t(s, s2)
        twice = apply(kind, ContextVector(z2), apply(kind, ContextVector(z1), t))
        once = apply(kind, ContextVector(z1 * z2), t)
        assert np.array_equal(twice.state, once.state)
        assert np.array_equal(twice.next_state, once.next_state)

    @settings(max_examples=200, deadline=None)
    @given(s=dyadic_vec(2), s2=dyadic_vec(2), z1=dyadic_z(2), z2=dyadic_z(2))
    def test_das_composition_on_deltas(self, s, s2, z1, z2):
        t = make_t(s, s2)
        twice = apply(AugKind.DAS, ContextVector(z2),
                      apply(AugKind.DAS, ContextVector(z1), t))
        once = apply(AugKind.DAS, ContextVector(z1 * z2), t)
        assert np.array_equal(twice.next_state - t.state, once.next_state - t.state)


class TestApplyBatch:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_matches_per_transition_apply(self, kind):
        rng = Rng(9)
        n, s_dim = 50, 3
        states = np.asarray(rng.normal((n, s_dim)))
        next_states = np.asarray(rng.normal((n, s_dim)))
        z = np.asarray(rng.uniform(0.5, 1.5, (n, s_dim)))
        bs, bs2 = apply_batch(kind, z, states, next_states)
        for i in range(n):
            out = apply(kind, ContextVector(z[i]), make_t(states[i], next_states[i]))
            assert np.array_equal(bs[i], out.state)
            assert np.array_equal(bs2[i], out.next_state)
