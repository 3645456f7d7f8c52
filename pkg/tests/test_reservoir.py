import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phhmm.exceptions import DataError, NumericalError, ReducibleChainError
from phhmm.expand import expand_model
from phhmm.phmodel import Degenerate, ExponentialDensity, Poisson
from phhmm.presets import (QUIEBRAJANO_MORAN, QUIEBRAJANO_RELEASE, SIMULATION_MORAN,
                           quiebrajano_model, simulation_model)
from phhmm.reservoir import (InflowLaw, MoranChain, availability, balance_audit, binned_law,
                             dependability_table, marginal_inflow_law, moran_build, mttf,
                             regime_occupancy, reliability, stationary_law)

from oracles import (availability_power, mttf_fundamental, mttf_series, random_model,
                     reliability_power)


def simulation_chain():
    e = expand_model(simulation_model())
    return moran_build(marginal_inflow_law(e, 5.0, 4), 5.0, 20.0)


def random_chain(rng):
    n0 = int(rng.integers(1, 7))
    probs = rng.dirichlet(np.ones(n0 + 2))
    probs[0] += 0.1
    probs /= probs.sum()
    law = InflowLaw(probs=probs, omega=1.0, n0=n0)
    K = int(rng.integers(2, n0 + 2))
    return moran_build(law, 1.0, float(n0), max_states=K)


class TestStationary:
    def test_simulation_occupancy(self):
        occ = regime_occupancy(expand_model(simulation_model()))
        assert occ == pytest.approx([0.69048, 0.30952], abs=1e-5)

    def test_fixed_point(self):
        P = expand_model(simulation_model()).P
        pi = stationary_law(P)
        assert np.allclose(pi @ P, pi, atol=1e-10)

    def test_transient_states_get_no_mass(self):
        P = np.array([[0.5, 0.5, 0.0], [0.0, 0.3, 0.7], [0.0, 0.6, 0.4]])
        pi = stationary_law(P)
        assert pi[0] == 0.0
        assert np.allclose(pi @ P, pi, atol=1e-12)

    def test_reducible_chain_rejected(self):
        with pytest.raises(ReducibleChainError):
            stationary_law(np.eye(2))

    def test_periodic_chain_warns(self):
        with pytest.warns(UserWarning, match="periodic"):
            pi = stationary_law(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert np.allclose(pi, [0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_stationary_fixed_point_random(seed):
    e = expand_model(random_model(np.random.default_rng(seed), max_ext=6, min_regimes=2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pi = stationary_law(e)
    assert np.allclose(pi @ e.P, pi, atol=1e-10)
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)


class TestInflowLaw:
    def test_single_regime_is_its_own_binned_law(self):
        law = Poisson(3.0)
        b = binned_law([law], [1.0], 2.0, 3)
        c = [law.cdf(x) for x in (0, 2, 4, 6)]
        expected = [c[0], c[1] - c[0], c[2] - c[1], c[3] - c[2], 1 - c[3]]
        assert np.allclose(b.probs, expected, atol=1e-15)

    def test_density_uses_zero_band(self):
        b = binned_law([ExponentialDensity(0.5)], [1.0], 10.0, 2, zero_band=1.0)
        assert b.p_zero == pytest.approx(1 - np.exp(-0.5), abs=1e-15)
        assert b.band(0) == pytest.approx(np.exp(-0.5) - np.exp(-5.0), abs=1e-15)

    def test_count_law_zero_is_the_atom(self):
        b = binned_law([Degenerate(0.0), Poisson(5.0)], [0.5, 0.5], 5.0, 4)
        assert b.p_zero == pytest.approx(0.5 + 0.5 * np.exp(-5.0), abs=1e-15)

    def test_bad_bins_rejected(self):
        with pytest.raises(DataError):
            InflowLaw(probs=np.array([0.5, 0.5]), omega=1.0, n0=1)


class TestMoran:
    def test_simulation_matrix(self):
        c = simulation_chain()
        assert c.P.shape == (5, 5)
        assert np.max(np.abs(c.P - SIMULATION_MORAN)) < 5e-3

    def test_quiebrajano_matrix(self):
        # published rates are rounded to 3 decimals and the initial law is unknown
        e = expand_model(quiebrajano_model())
        law = marginal_inflow_law(e, QUIEBRAJANO_RELEASE, 3)
        c = moran_build(law, QUIEBRAJANO_RELEASE, 31.5, max_states=4)
        assert np.max(np.abs(c.P - QUIEBRAJANO_MORAN)) < 5e-3

    def test_band_structure(self):
        c = simulation_chain()
        assert np.allclose(c.P.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.tril(c.P, -2) == 0)

    def test_capacity_below_release_rejected(self):
        law = InflowLaw(probs=np.array([0.5, 0.5]), omega=5.0, n0=0)
        with pytest.raises(DataError):
            moran_build(law, 5.0, 4.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_moran_chain_is_banded_and_stochastic(seed):
    c = random_chain(np.random.default_rng(seed))
    assert np.allclose(c.P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(c.P >= 0)
    assert np.all(np.tril(c.P, -2) == 0)


class TestDependability:
    def test_horizon_zero(self):
        c = simulation_chain()
        for v in range(1, c.n_states):
            assert reliability(c, v, 0) == 1.0
            assert availability(c, v, 0) == 1.0

    def test_simulation_mttf(self):
        t = [mttf(simulation_chain(), v) for v in range(1, 5)]
        assert np.all(np.diff(t) > 0)
        assert np.allclose(t, mttf_fundamental(simulation_chain().P), atol=1e-12)

    def test_empty_state_has_no_reliability(self):
        with pytest.raises(DataError):
            reliability(simulation_chain(), 0, 3)

    def test_unreachable_empty_state(self):
        P = np.array([[0.5, 0.5], [0.0, 1.0]])
        with pytest.raises(NumericalError, match="unreachable"):
            mttf(MoranChain(1.0, 1.0, 1, P), 1)

    def test_table_matches_matrix_powers(self):
        c = simulation_chain()
        for v, n, r, a in dependability_table(c, 10):
            if v:
                assert r == pytest.approx(reliability_power(c.P, v, n), abs=1e-12)
            else:
                assert np.isnan(r)
            assert a == pytest.approx(availability_power(c.P, v, n), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_dependability_identities(seed):
    c = random_chain(np.random.default_rng(seed))
    K = c.n_states
    for v in range(1, K):
        assert mttf(c, v) == pytest.approx(mttf_series(c.P, v), rel=1e-8)
        r = [reliability(c, v, n) for n in range(12)]
        a = [availability(c, v, n) for n in range(12)]
        assert np.all(np.diff(r) <= 1e-15)
        assert np.all(np.array(a) >= np.array(r) - 1e-15)
    for n in range(12):
        r = [reliability(c, v, n) for v in range(1, K)]
        assert np.all(np.diff(r) >= -1e-12)


class TestAudit:
    def test_no_flows_keeps_previous_volume(self):
        a = balance_audit(np.zeros(4), np.zeros(4), 30.0, v0=5.0)
        assert np.array_equal(a.computed, [5.0, 5.0, 5.0, 5.0])

    def test_clip_at_capacity(self):
        a = balance_audit([100.0, 0.0], [0.0, 0.0], 30.0, v0=5.0)
        assert a.computed[1] == 30.0

    def test_clip_at_empty(self):
        a = balance_audit([1.0, 0.0], [20.0, 0.0], 30.0, v0=5.0)
        assert a.computed[1] == 0.0

    def test_recorded_right_hand_side(self):
        rec = np.array([10.0, 12.0, 10.0, 12.0])
        Y = np.array([4.0, 1.0, 5.0, 0.0])
        O = np.array([2.0, 3.0, 3.0, 0.0])
        a = balance_audit(Y, O, 30.0, recorded=rec)
        assert np.array_equal(a.discrepancy, np.zeros(4))
        tampered = rec.copy()
        tampered[-1] += 1.5
        a = balance_audit(Y, O, 30.0, recorded=tampered)
        assert np.flatnonzero(a.discrepancy).tolist() == [3]
        assert a.discrepancy[3] == -1.5

    def test_middle_tamper_touches_two_years(self):
        a = balance_audit([4.0, 1.0, 5.0, 0.0], [2.0, 3.0, 3.0, 0.0], 30.0,
                          recorded=np.array([10.0, 13.0, 10.0, 12.0]))
        assert np.flatnonzero(a.discrepancy).tolist() == [1, 2]
        assert a.discrepancy[1:3].tolist() == [-1.0, 1.0]

    def test_negative_flows_rejected(self):
        with pytest.raises(DataError):
            balance_audit([1.0, -1.0], [0.0, 0.0], 30.0, v0=1.0)
