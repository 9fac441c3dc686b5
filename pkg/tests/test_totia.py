import warnings

import numpy as np
import pytest

from topoinfer.dynamics import constant_input, simulate, zero_input
from topoinfer.errors import NotConverged, RankWarning, TopoInferError
from topoinfer.graph import default_epsilon, interaction_matrix, random_connected_digraph
from topoinfer.harness import totia_scenario
from topoinfer.separation import filter_time_invariant_input
from topoinfer.solver import WS3
from topoinfer.totia import (ToTiaConfig, baseline_a1, baseline_a2, baseline_a3, power_layers, to_tia,
                             two_layer_estimate)


def noisy_obs(seed=0, n=6, sigma2=0.3):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankWarning)
        return totia_scenario(n, sigma2, seed)


def rel_err(p_hat, p):
    return np.linalg.norm(p_hat - p) / np.linalg.norm(p)


class TestToTia:
    def test_exact_drift_offset_gives_exact_p(self):
        # the postcondition: sigma = 0 and exact (c, r) recover P to 1e-4
        for seed in range(5):
            rng = np.random.default_rng(seed)
            g = random_connected_digraph(4, 0.5, seed=rng)
            p = interaction_matrix(g, default_epsilon(g))
            c0, r0 = 0.5, rng.normal(size=4)
            obs = simulate(p, rng.uniform(0, 10, 4), constant_input(c0 + g.laplacian @ r0), 12)
            z0_hat = filter_time_invariant_input(obs, c0, r0 - r0[-1])
            assert rel_err(two_layer_estimate(z0_hat, ToTiaConfig())[0], p.p) < 1e-4

    @pytest.mark.xfail(reason="at K = 10 the noiseless transient has not settled to eps * 1e-6, so "
                              "steady detection fails; looser tolerances estimate a nonzero offset "
                              "from unsettled data and the filter is no longer a no-op",
                       raises=(NotConverged, AssertionError), strict=True)
    def test_zero_input_short_record(self):
        g = random_connected_digraph(3, 0.5, seed=0)
        p = interaction_matrix(g, default_epsilon(g))
        obs = simulate(p, [9.0, 1.0, 4.0], zero_input(3), 10)
        assert rel_err(to_tia(obs).p_hat, p.p) < 1e-4

    def test_too_few_observations(self):
        sc = noisy_obs(n=5)
        short = type(sc.obs)(sc.obs.states[:5], sc.obs.epsilon, sc.obs.noise_sigma)
        with pytest.raises(TopoInferError) as info:
            to_tia(short)
        assert info.value.stage == "precondition"

    def test_transient_record_names_stage(self):
        g = random_connected_digraph(4, 0.5, seed=1)
        p = interaction_matrix(g, default_epsilon(g))
        obs = simulate(p, [0.0, 100.0, 50.0, 7.0], zero_input(4), 8)
        with pytest.raises(NotConverged) as info:
            to_tia(obs)
        assert info.value.stage == "separation/steady_state"

    def test_row_stochastic_and_deterministic(self):
        sc = noisy_obs(seed=3)
        a = to_tia(sc.obs)
        b = to_tia(sc.obs)
        assert a.p_hat.tobytes() == b.p_hat.tobytes()
        np.testing.assert_allclose(a.p_hat.sum(axis=1), 1, atol=1e-8)
        assert a.iterations == 1 and a.input_estimates == {}
        assert set(a.to_dict()) == {"p_hat", "iterations", "diagnostics"}

    def test_epsilon_override(self):
        sc = noisy_obs(seed=4)
        res = to_tia(sc.obs, epsilon=2 * sc.obs.epsilon)
        assert res.diagnostics["c"] == pytest.approx(to_tia(sc.obs).diagnostics["c"] / 2, rel=1e-9)

    def test_beta_normalize_changes_weighting(self):
        sc = noisy_obs(seed=5)
        plain = to_tia(sc.obs).p_hat
        normed = to_tia(sc.obs, config=ToTiaConfig(beta_normalize=True)).p_hat
        assert not np.allclose(plain, normed)


class TestBaselines:
    def test_a1_is_beta_zero(self):
        sc = noisy_obs(seed=6)
        np.testing.assert_array_equal(baseline_a1(sc.obs).p_hat,
                                      to_tia(sc.obs, config=ToTiaConfig(beta=0.0)).p_hat)
        assert baseline_a1(sc.obs).diagnostics["power_layers"] == []

    def test_a3_reports_uniform_weights(self):
        sc = noisy_obs(seed=7)
        diag = baseline_a3(sc.obs).diagnostics
        assert diag["weight_kind"] == WS3
        np.testing.assert_allclose(diag["weights"], 1 / (sc.obs.k - 1))

    def test_a2_reports_increasing_weights(self):
        sc = noisy_obs(seed=8)
        assert np.all(np.diff(baseline_a2(sc.obs).diagnostics["weights"]) > 0)


def test_power_layers_drop_rank_deficient():
    series = np.tile([1.0, 2.0, 3.0], (8, 1))
    assert power_layers(series, 3) == {}
