import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phhmm.estimate import (FitConfig, aic, backward_pass, e_step, fit, forward_pass,
                            initial_model, m_step, parameter_count, posteriors, run_em)
from phhmm.exceptions import (DataError, ImpossibleObservationError, NumericalError,
                               ValidationError)
from phhmm.expand import ExtendedHmm, expand_model
from phhmm.phmodel import Categorical, Degenerate, Poisson, emission_matrix
from phhmm.presets import simulation_model
from phhmm.rng import stream
from phhmm.simulate import sample_path

from oracles import path_enumeration, random_model, semi_markov_likelihood


def state_likelihoods(e, obs):
    return emission_matrix(e.emission, obs)[:, e.regime_of]


class TestForwardBackward:
    def test_single_state_degenerate(self):
        e = ExtendedHmm(P=[[1.0]], beta=[1.0], emission=(Degenerate(0.0),), layout=(1,))
        assert forward_pass(e, np.zeros(6)).loglik == 0.0

    def test_single_state_poisson(self):
        y = np.array([1.0, 4.0, 2.0])
        e = ExtendedHmm(P=[[1.0]], beta=[1.0], emission=(Poisson(2.5),), layout=(1,))
        ref = np.sum(np.log(Poisson(2.5).pdf(y)))
        assert forward_pass(e, y).loglik == pytest.approx(ref, abs=1e-12)
        assert np.all(backward_pass(e, y, forward_pass(e, y).scale).backward == 1.0)

    def test_all_zero_series_matches_enumeration(self):
        e = expand_model(simulation_model())
        y = np.zeros(4)
        L, _, _ = path_enumeration(e.P, e.beta, state_likelihoods(e, y))
        assert forward_pass(e, y).loglik == pytest.approx(np.log(L), abs=1e-10)

    def test_rows_normalized_and_boundary(self):
        e = expand_model(simulation_model())
        y = np.array([0.0, 5.0, 0.0, 7.0, 3.0])
        t = e_step(e, y)
        assert np.allclose(t.forward.sum(axis=1), 1.0, atol=1e-10)
        assert np.all(t.backward[-1] == 1.0)
        assert t.loglik == pytest.approx(np.log(t.scale).sum())

    def test_posteriors_match_enumeration(self):
        e = expand_model(simulation_model())
        y = np.array([0.0, 5.0, 0.0, 7.0])
        t = e_step(e, y)
        gamma, xi = posteriors(t, e)
        _, g_ref, xi_ref = path_enumeration(e.P, e.beta, state_likelihoods(e, y))
        assert np.allclose(gamma, g_ref, atol=1e-10)
        assert np.allclose(xi.sum(axis=0), xi_ref, atol=1e-10)
        assert np.allclose(gamma.sum(axis=1), 1.0, atol=1e-10)
        assert np.allclose(xi.sum(axis=2), gamma[:-1], atol=1e-10)

    def test_scaling_matches_plain_arithmetic(self):
        e = expand_model(simulation_model())
        y = np.array([0.0, 5.0, 0.0, 7.0, 4.0, 0.0, 0.0, 6.0, 5.0, 3.0])
        g = state_likelihoods(e, y)
        a = e.beta * g[0]
        for k in range(1, y.size):
            a = (a @ e.P) * g[k]
        assert forward_pass(e, y).loglik == pytest.approx(np.log(a.sum()), abs=1e-10)

    def test_long_series_does_not_underflow(self):
        m = simulation_model()
        y = sample_path(m, 5000, seed=1).signals
        ll = forward_pass(expand_model(m), y).loglik
        assert np.isfinite(ll) and ll < -1000

    def test_impossible_observation_reports_step(self):
        e = ExtendedHmm(P=[[1.0]], beta=[1.0], emission=(Degenerate(0.0),), layout=(1,))
        with pytest.raises(ImpossibleObservationError) as info:
            forward_pass(e, [0.0, 0.0, 3.0])
        assert info.value.step == 2

    def test_empty_series_rejected(self):
        with pytest.raises(DataError):
            forward_pass(expand_model(simulation_model()), [])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), N=st.integers(1, 7))
def test_loglik_matches_both_oracles(seed, N):
    rng = np.random.default_rng(seed)
    m = random_model(rng, max_ext=4)
    e = expand_model(m)
    y = rng.poisson(3.0, size=N).astype(float)
    ll = forward_pass(e, y).loglik
    L, gamma, _ = path_enumeration(e.P, e.beta, state_likelihoods(e, y))
    assert ll == pytest.approx(np.log(L), abs=1e-10)
    assert ll == pytest.approx(np.log(semi_markov_likelihood(m, y)), abs=1e-10)
    g, _ = posteriors(e_step(e, y), e)
    assert np.allclose(g, gamma, atol=1e-10)


class TestMStep:
    def test_rows_stochastic_and_zeros_kept(self):
        e = expand_model(simulation_model())
        y = sample_path(simulation_model(), 60, seed=2).signals
        zeros = e.P == 0
        for _ in range(5):
            t = e_step(e, y)
            gamma, xi = posteriors(t, e)
            e, _ = m_step(gamma, xi, y, e)
            assert np.allclose(e.P.sum(axis=1), 1.0, atol=1e-10)
            assert np.all(e.P[zeros] == 0.0)

    def test_structural_zeros_survive_full_fit(self):
        # cyclic three-regime support: every non-allowed block must stay exactly zero
        cfg = FitConfig(phase_layout=(1, 2, 1), emission="poisson", restarts=1,
                        jump_mask=[[0, 1, 0], [0, 0, 1], [1, 0, 0]], max_iterations=50)
        y = stream(3).poisson(4.0, size=80).astype(float)
        rep = fit(y, cfg)
        assert np.all(rep.extended.P[~cfg.support()] == 0.0)

    def test_categorical_single_state_is_frequency(self):
        y = np.array([0.0, 1.0, 1.0, 2.0, 1.0, 0.0])
        law = Categorical((0.0, 1.0, 2.0), (1 / 3, 1 / 3, 1 / 3))
        e = ExtendedHmm(P=[[1.0]], beta=[1.0], emission=(law,), layout=(1,))
        gamma, xi = posteriors(e_step(e, y), e)
        new, _ = m_step(gamma, xi, y, e)
        assert np.allclose(new.emission[0].probs, [2 / 6, 3 / 6, 1 / 6], atol=1e-12)

    def test_poisson_weighted_mean(self):
        y = np.array([1.0, 2.0, 6.0])
        e = ExtendedHmm(P=[[1.0]], beta=[1.0], emission=(Poisson(1.0),), layout=(1,))
        gamma, xi = posteriors(e_step(e, y), e)
        new, _ = m_step(gamma, xi, y, e)
        assert new.emission[0].lam == pytest.approx(3.0)


class TestEm:
    def test_constant_data_degenerate_model(self):
        cfg = FitConfig(phase_layout=(1,), emission="degenerate", restarts=1)
        rep = fit(np.zeros(20), cfg)
        assert rep.loglik == 0.0
        assert rep.iterations == 1

    def test_trace_nondecreasing(self):
        cfg = FitConfig(phase_layout=(2, 2), emission=["degenerate", "poisson"], restarts=1,
                        seed=4)
        y = sample_path(simulation_model(), 100, seed=4).signals
        e0 = initial_model(y, cfg, stream(4))
        _, trace, _ = run_em(e0, y, 300, 1e-10)
        assert np.all(np.diff(trace) >= -1e-9)

    def test_fit_is_seed_deterministic(self):
        cfg = FitConfig(phase_layout=(1, 1), emission="poisson", restarts=3, seed=7)
        y = sample_path(simulation_model(), 80, seed=3).signals
        a, b = fit(y, cfg), fit(y, cfg)
        assert a.loglik == b.loglik
        assert np.array_equal(a.extended.P, b.extended.P)

    def test_workers_do_not_change_result(self):
        cfg = FitConfig(phase_layout=(1, 1), emission="poisson", restarts=2, seed=7)
        y = sample_path(simulation_model(), 60, seed=3).signals
        a = fit(y, cfg)
        cfg.workers = 2
        b = fit(y, cfg)
        assert np.array_equal(a.extended.P, b.extended.P)

    def test_exchangeable_regimes_sorted_by_mean(self):
        cfg = FitConfig(phase_layout=(1, 1), emission="poisson", restarts=3, seed=1)
        rng = stream(8)
        y = np.concatenate([rng.poisson(lam, 10) for lam in (1.0, 9.0) * 4]).astype(float)
        rep = fit(y, cfg)
        assert rep.model.emission[0].lam < rep.model.emission[1].lam

    def test_init_model_starts_single_run(self):
        m = simulation_model()
        cfg = FitConfig(phase_layout=(2, 2), emission=["degenerate", "poisson"], restarts=9)
        y = sample_path(m, 100, seed=5).signals
        rep = fit(y, cfg, init=expand_model(m))
        assert len(rep.restart_logliks) == 1
        assert rep.trace[0] == pytest.approx(forward_pass(expand_model(m), y).loglik)

    def test_model_loglik_is_collapsed_model(self):
        cfg = FitConfig(phase_layout=(2, 2), emission=["degenerate", "poisson"], restarts=2)
        y = sample_path(simulation_model(), 100, seed=6).signals
        rep = fit(y, cfg)
        assert rep.model_loglik == forward_pass(expand_model(rep.model), y).loglik

    def test_absorbing_fit_falls_back_or_fails_cleanly(self):
        # one switch only: EM tends to make the second regime absorbing
        cfg = FitConfig(phase_layout=(1, 1), emission="poisson", restarts=3, seed=1)
        rng = stream(8)
        y = np.concatenate([rng.poisson(1.0, 40), rng.poisson(9.0, 40)]).astype(float)
        try:
            rep = fit(y, cfg)
        except NumericalError as exc:
            assert "phase-type" in str(exc)
        else:
            assert np.all(rep.model.jump.sum(axis=1) == pytest.approx(1.0))

    def test_short_series_rejected(self):
        with pytest.raises(DataError):
            fit([1.0], FitConfig(phase_layout=(1,)))

    def test_bad_config_rejected(self):
        with pytest.raises(ValidationError, match="emission"):
            FitConfig(phase_layout=(1, 1), emission="gamma")
        with pytest.raises(ValidationError, match="jump_mask"):
            FitConfig(phase_layout=(1, 1), jump_mask=[[0, 0], [1, 0]])


class TestAic:
    def test_arithmetic(self):
        assert aic(-100.1909, 2) == pytest.approx(204.3818, abs=1e-10)
        assert aic(-3.5, 0) == 7.0

    def test_cyclic_architecture_count(self):
        cfg = FitConfig(phase_layout=(1, 2, 1), emission="exponential",
                        jump_mask=[[0, 1, 0], [0, 0, 1], [1, 0, 0]])
        # initial law 3 + transition rows (2 + 2 + 2 + 1) + three rates
        assert parameter_count(cfg) == 13

    def test_count_with_categorical_and_degenerate(self):
        cfg = FitConfig(phase_layout=(1, 1), emission=["degenerate", "categorical"])
        # beta 1 + rows 1 + 1 + categorical (4 - 1)
        assert parameter_count(cfg, alphabet_size=4) == 6
