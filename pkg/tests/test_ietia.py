import warnings

import numpy as np
import pytest

from topoinfer.dynamics import ObservationSet, constant_input, simulate, zero_input
from topoinfer.errors import (DegenerateDenominator, FitDiverged, LoopDiverged, MaxIterations,
                              TimeInvariantClassification, TopoInferError)
from topoinfer.families import ExponentialFamily
from topoinfer.graph import (complete_digraph, default_epsilon, interaction_matrix,
                             random_connected_digraph)
from topoinfer.harness import ietia_scenario
from topoinfer.ietia import (FILTERED, IeTiaConfig, estimate_input, estimate_lipschitz,
                             fit_input_params, h1, h2, identify_initial_injection,
                             identify_injected_set, ie_tia, initial_estimate, reconstruct_filtered)
from topoinfer.separation import least_squares_estimate
from topoinfer.totia import ToTiaConfig

FAM = ExponentialFamily()


def column_obs(values, epsilon=0.1):
    return ObservationSet(np.asarray(values, dtype=float)[:, None], epsilon)


def scenarios(n, injected, count=3):
    out = []
    for seed in range(50):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sc = ietia_scenario(n, 0.0, seed, injected=injected)
        if sc.premise_met:
            out.append(sc)
        if len(out) == count:
            return out
    raise AssertionError("no premise-conditioned scenario found")


def identify(obs, l=2.0):
    first = identify_initial_injection(obs, l)
    p0, _ = initial_estimate(obs, first.k_uq, ToTiaConfig())
    return first, identify_injected_set(obs, p0, l, first.k_uq, first.q)


class TestH1:
    def test_linear_trajectory(self):
        assert h1(column_obs(np.arange(1, 8)), 0, 5, 2.0) == pytest.approx(-0.5)

    def test_geometric_decay(self):
        z = np.cumsum([1.0, 1.0, 0.5, 0.25, 0.125])
        assert h1(column_obs(z), 0, 4, 2.0) == pytest.approx(-1.0)

    def test_jump(self):
        z = np.cumsum([0.0, 1.0, 10.0])
        assert h1(column_obs(z), 0, 3, 2.0) == pytest.approx(8.5)

    def test_guard_and_preconditions(self):
        with pytest.raises(DegenerateDenominator):
            h1(column_obs([1.0, 1.0, 1.0, 2.0]), 0, 3, 2.0)
        with pytest.raises(ValueError):
            h1(column_obs(np.arange(5)), 0, 2, 2.0)
        with pytest.raises(ValueError):
            h1(column_obs(np.arange(5)), 0, 4, 0.0)


class TestH2:
    def test_uninjected_exact_model_is_degenerate(self):
        g = random_connected_digraph(3, 0.6, seed=0)
        p = interaction_matrix(g, default_epsilon(g))
        obs = simulate(p, [3.0, 0.0, 1.0], zero_input(3), 5)
        with pytest.raises(DegenerateDenominator):
            h2(obs, p.p, 1, 3, 2.0)

    def _obs(self, gap, residual):
        # predicted value 1 + gap from z(k-1) = 1 under P = [[1 + gap]]; observed adds the residual
        return column_obs([1.0, 1.0 + gap + residual]), np.array([[1.0 + gap]])

    def test_dominant_residual_detects(self):
        obs, p = self._obs(0.3, 0.6)
        assert h2(obs, p, 0, 2, 2.0) == pytest.approx(-1.5)

    def test_tiny_residual_does_not_detect(self):
        obs, p = self._obs(0.3, 0.01)
        assert h2(obs, p, 0, 2, 2.0) == pytest.approx(28.0)


class TestIdentification:
    def test_zero_input_is_time_invariant(self):
        # on a complete graph every increment decays geometrically, so no ratio jumps
        p = interaction_matrix(complete_digraph(4), 0.1)
        obs = simulate(p, [5.0, 1.0, 3.0, 0.0], zero_input(4), 20)
        with pytest.raises(TimeInvariantClassification):
            identify_initial_injection(obs, 2.0)

    def test_sign_changing_increments_fire_without_input(self):
        # a directed graph whose input-free increments cross zero: the ratio test fires anyway
        g = random_connected_digraph(4, 0.5, seed=2)
        p = interaction_matrix(g, default_epsilon(g))
        obs = simulate(p, [5.0, 1.0, 3.0, 0.0], zero_input(4), 20)
        assert identify_initial_injection(obs, 2.0).q == 0

    def test_single_injection(self):
        for sc in scenarios(4, {2: 6}):
            first, full = identify(sc.obs)
            assert (first.q, first.k_uq) == (2, 6)
            assert full.injected == {2: 6}

    def test_two_agents_at_once_pick_smaller_index(self):
        for sc in scenarios(4, {1: 6, 3: 6}):
            first, full = identify(sc.obs)
            assert (first.q, first.k_uq) == (1, 6)
            assert full.injected == {1: 6, 3: 6}

    def test_later_injection(self):
        for sc in scenarios(5, {1: 5, 4: 9}):
            assert identify(sc.obs)[1].injected == {1: 5, 4: 9}

    def test_all_agents_staggered(self):
        inj = {0: 6, 1: 7, 2: 8, 3: 9}
        for sc in scenarios(4, inj):
            assert identify(sc.obs)[1].injected == inj

    def test_short_record(self):
        with pytest.raises(ValueError):
            identify_initial_injection(column_obs([1.0, 2.0, 3.0]), 2.0)


class TestInputEstimation:
    def test_exact_model_recovers_input(self):
        sc = scenarios(5, {1: 5, 4: 9}, count=1)[0]
        u_hat = estimate_input(sc.obs, sc.interaction.p, sc.injection_times)
        u = sc.u_true
        for j, k_u in sc.injection_times.items():
            np.testing.assert_allclose(u_hat[k_u - 1:-1, j], u[k_u - 1:-1, j], rtol=1e-8, atol=1e-6)
            assert np.isnan(u_hat[-1, j])
            assert np.all(u_hat[:k_u - 1, j] == 0)
        for j in set(range(5)) - set(sc.injection_times):
            assert np.all(u_hat[:, j] == 0)

    def test_model_error_is_linear(self):
        sc = scenarios(4, {2: 6}, count=1)[0]
        delta = np.zeros((4, 4))
        delta[2] = [0.01, -0.02, 0.0, 0.01]
        exact = estimate_input(sc.obs, sc.interaction.p, {2: 6})
        off = estimate_input(sc.obs, sc.interaction.p + delta, {2: 6})
        expected = -(sc.obs.states[:-1] @ delta[2]) / sc.obs.epsilon
        np.testing.assert_allclose((off - exact)[5:-1, 2], expected[5:], rtol=1e-6, atol=1e-6)

    def test_fit_needs_enough_samples(self):
        with pytest.raises(FitDiverged):
            fit_input_params([1.0, np.nan, np.nan], FAM, [8, 9, 10])

    def test_fit_recovers_parameters(self):
        ks = np.arange(6, 30)
        theta = fit_input_params(FAM.evaluate((50.0, 0.2, 10.0), ks), FAM, ks)
        np.testing.assert_allclose(theta, [50.0, 0.2, 10.0], rtol=1e-6)


class TestReconstruction:
    def test_no_injection_copies_data(self):
        sc = scenarios(4, {2: 6}, count=1)[0]
        np.testing.assert_array_equal(reconstruct_filtered(sc.obs, sc.interaction.p, {}, {}, FAM),
                                      sc.obs.states)

    def test_exact_inputs_give_input_free_series(self):
        sc = scenarios(5, {1: 5, 4: 9}, count=1)[0]
        z_phi = reconstruct_filtered(sc.obs, sc.interaction.p, sc.latent.params, sc.injection_times,
                                     sc.latent.family)
        np.testing.assert_allclose(z_phi, sc.z_phi(), rtol=1e-10, atol=1e-8)

    def test_error_grows_with_model_error(self):
        sc = scenarios(4, {2: 6}, count=1)[0]
        delta = np.array([[0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0],
                          [1.0, -2.0, 0.5, 0.5], [0.0, 0.0, 0.0, 0.0]])
        errs = []
        for t in (1e-3, 1e-2, 1e-1):
            z_phi = reconstruct_filtered(sc.obs, sc.interaction.p + t * delta, sc.latent.params,
                                         sc.injection_times, sc.latent.family)
            errs.append(np.linalg.norm(z_phi - sc.z_phi()))
        assert errs[0] < errs[1] < errs[2]

    def test_bad_regressor(self):
        sc = scenarios(4, {2: 6}, count=1)[0]
        with pytest.raises(ValueError):
            reconstruct_filtered(sc.obs, sc.interaction.p, {}, {}, FAM, regressor="other")


class TestLoop:
    def test_time_invariant_trajectory(self):
        # a uniform constant input from consensus: every increment equals eps * c0
        g = random_connected_digraph(4, 0.5, seed=3)
        p = interaction_matrix(g, default_epsilon(g))
        obs = simulate(p, np.full(4, 2.0), constant_input(np.full(4, 0.4)), 30)
        with pytest.raises(TimeInvariantClassification) as info:
            ie_tia(obs, l=2.0)
        assert "TO-TIA" in str(info.value)

    def _run(self, sc, **kw):
        try:
            return ie_tia(sc.obs, l=2.0, **kw)
        except MaxIterations as exc:
            return exc.result

    def test_trace_and_result_shapes(self):
        sc = scenarios(5, {1: 5, 4: 9}, count=1)[0]
        res, trace = self._run(sc, config=IeTiaConfig(max_iter=8))
        assert res.diagnostics["injected"] == {1: 5, 4: 9}
        assert len(trace.psi_d) == trace.i_t == res.iterations
        assert trace.converged != trace.max_iter_abort
        for rec in trace.records:
            np.testing.assert_allclose(rec.p_hat.sum(axis=1), 1, atol=1e-8)
        assert set(res.input_estimates["theta"]) == {1, 4}
        assert trace.to_dict()["i_t"] == trace.i_t

    def test_known_injection_map_skips_identification(self):
        sc = scenarios(4, {2: 6}, count=1)[0]
        res, _ = self._run(sc, injected={2: 6}, config=IeTiaConfig(max_iter=3))
        assert res.diagnostics["q"] == 2 and res.diagnostics["k_uq"] == 6

    def test_max_iterations_flagged(self):
        sc = scenarios(4, {2: 6}, count=1)[0]
        with pytest.raises(MaxIterations) as info:
            ie_tia(sc.obs, l=2.0, delta_d=1e-300, config=IeTiaConfig(max_iter=2))
        res, trace = info.value.result
        assert trace.max_iter_abort and trace.i_t == 2 and not trace.converged

    def test_divergence_stops_before_refit(self):
        sc = scenarios(4, {2: 6}, count=1)[0]
        with pytest.raises(LoopDiverged) as info:
            ie_tia(sc.obs, l=2.0, config=IeTiaConfig(divergence_factor=1e-6))
        assert isinstance(info.value, MaxIterations)
        res, trace = info.value.result
        assert trace.diverged and not trace.max_iter_abort and trace.i_t == 0
        np.testing.assert_array_equal(res.p_hat, res.intermediate["p_hat0"])

    def test_injection_too_early(self):
        obs = column_obs([0.0, 0.0, 0.0, 10.0, 20.0, 30.0])
        with pytest.raises(TopoInferError):
            ie_tia(obs, l=2.0, injected={0: 2})

    def test_bad_arguments(self):
        sc = scenarios(4, {2: 6}, count=1)[0]
        with pytest.raises(ValueError):
            ie_tia(sc.obs, l=2.0, delta_d=0.0)

    @pytest.mark.xfail(reason="the loop regresses the rebuilt series on its own lag, which the "
                              "input biases; iterates drift away from the least-squares fit of "
                              "the input-free series instead of converging to it", strict=False)
    def test_noiseless_limit_is_least_squares_fit(self):
        sc = scenarios(5, {1: 7, 4: 9}, count=1)[0]
        res, _ = self._run(sc)
        p_star = least_squares_estimate(sc.z_phi())
        assert np.abs(res.p_hat - p_star).max() < 1e-3


def test_estimate_lipschitz():
    obs = column_obs([0.0, 1.0, 3.0, 4.0, 4.5, 100.0, 200.0, 300.0])
    assert estimate_lipschitz(obs, k_stop=5) == pytest.approx(3.0)
    assert estimate_lipschitz(column_obs(np.zeros(8))) == 1.0
