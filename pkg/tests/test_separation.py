import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from topoinfer.dynamics import ObservationSet, constant_input, offset_vector, simulate, zero_input
from topoinfer.errors import DefectiveMatrix, NotConverged, RankDeficient
from topoinfer.graph import (InteractionMatrix, WeightedDigraph, default_epsilon, interaction_matrix,
                             random_connected_digraph, spectral_decompose)
from topoinfer.separation import (detect_convergence_time, estimate_drift_offset,
                                  filter_time_invariant_input, least_squares_estimate, separate,
                                  separation_error, separation_error_bound)


def two_node_obs(k=30):
    p = interaction_matrix(WeightedDigraph(np.array([[0, 1.0], [1.0, 0]])), 0.1)
    return simulate(p, [1.0, 0.0], zero_input(2), k)


def symmetric_graph(rng, n):
    a = np.triu(rng.uniform(0.5, 1.5, (n, n)) * (rng.random((n, n)) < 0.6), 1)
    a = a + a.T
    a[np.arange(n - 1), np.arange(1, n)] = a[np.arange(1, n), np.arange(n - 1)] = 1.0  # path keeps it connected
    return WeightedDigraph(a)


def theorem_form_run(n=4, k=200, seed=3):
    rng = np.random.default_rng(seed)
    g = random_connected_digraph(n, 0.5, seed=rng)
    p = interaction_matrix(g, default_epsilon(g))
    c0, r0 = 0.7, rng.normal(size=n)
    u = c0 + g.laplacian @ r0
    obs = simulate(p, rng.uniform(0, 5, n), constant_input(u), k)
    return g, p, obs, c0, r0


class TestDetect:
    def test_consensus_already_reached(self):
        obs = ObservationSet(np.full((6, 3), 2.0), 0.1)
        assert detect_convergence_time(obs, 1e-6) == 2

    def test_two_node_scan(self):
        obs = two_node_obs()
        # p_1(k) = z_1 - z_2 = 0.8^k for this pair
        p1 = 0.8 ** np.arange(1, 31)
        expected = next(k for k in range(2, 30) if abs(p1[k - 1] - p1[-1]) < 0.1 * 0.05)
        assert detect_convergence_time(obs, 0.05) == expected

    def test_never_steady(self):
        states = np.column_stack([np.arange(10.0) ** 2, np.zeros(10)])
        with pytest.raises(NotConverged) as info:
            detect_convergence_time(ObservationSet(states, 0.1), 1e-3)
        assert info.value.stage == "steady_state"

    def test_too_short(self):
        with pytest.raises(ValueError):
            detect_convergence_time(ObservationSet(np.zeros((2, 2)), 0.1))


class TestDriftOffset:
    def test_pure_consensus(self):
        obs = two_node_obs(120)
        c, r = estimate_drift_offset(obs, detect_convergence_time(obs, 1e-6))
        assert c == pytest.approx(0.0, abs=1e-7)
        np.testing.assert_allclose(r, 0, atol=1e-7)  # detection tolerance eps * 1e-6

    def test_uniform_input_slope(self):
        g = random_connected_digraph(4, 0.5, seed=1)
        p = interaction_matrix(g, default_epsilon(g))
        obs = simulate(p, np.ones(4), constant_input(np.full(4, 1.3)), 20)
        c, r = estimate_drift_offset(obs, 2)
        assert c == pytest.approx(1.3, abs=1e-12)
        np.testing.assert_allclose(r, 0, atol=1e-12)

    def test_theorem_form_recovered(self):
        _, _, obs, c0, r0 = theorem_form_run()
        est = separate(obs)
        assert est.c == pytest.approx(c0, abs=1e-6)
        np.testing.assert_allclose(est.r, r0 - r0[-1], atol=1e-6)
        assert est.r[-1] == 0

    def test_short_window_warns(self):
        obs = two_node_obs(20)
        with pytest.warns(RuntimeWarning):
            c, _ = estimate_drift_offset(obs, 19)
        assert np.isfinite(c)

    def test_precondition(self):
        with pytest.raises(ValueError):
            estimate_drift_offset(two_node_obs(10), 10)


class TestFilter:
    def test_identity(self):
        obs = two_node_obs(5)
        np.testing.assert_array_equal(filter_time_invariant_input(obs, 0.0, np.zeros(2)), obs.states)

    def test_ramp_cancels(self):
        states = np.tile(np.arange(1, 8, dtype=float)[:, None], (1, 3))
        obs = ObservationSet(states, 1.0)
        np.testing.assert_allclose(filter_time_invariant_input(obs, 1.0, np.zeros(3)), 0, atol=1e-12)

    def test_filtered_series_follows_p(self):
        _, p, obs, _, _ = theorem_form_run()
        est = separate(obs)
        z = est.z0_hat
        for k in range(est.k_eps, obs.k):
            assert np.linalg.norm(z[k] - p.p @ z[k - 1]) < 1e-4

    def test_drift_free_after_steady(self):
        _, p, obs, _, _ = theorem_form_run()
        est = separate(obs, 1e-6)
        inc = np.diff(est.z0_hat[est.k_eps - 1:], axis=0).mean()
        assert abs(inc) < 1e-6 * p.epsilon

    def test_exact_filter_gives_exact_least_squares(self):
        # z(k) = P^k (z(0) - r0) + r0 + k eps c0 1, so the filtered series is P^k (z(0) - r0)
        for seed in range(5):
            g, p, _, c0, r0 = theorem_form_run(n=4, seed=seed)
            obs = simulate(p, np.random.default_rng(seed).uniform(0, 5, 4),
                           constant_input(c0 + g.laplacian @ r0), 6)
            z0_hat = filter_time_invariant_input(obs, c0, r0 - r0[-1])
            p_hat = least_squares_estimate(z0_hat)
            assert np.linalg.norm(p_hat - p.p) / np.linalg.norm(p.p) < 1e-6


class TestSeparationError:
    def _oracle(self, g, z_init, u, t):
        """||z_0(t) - (z(t) - c t 1 - m)|| from two RK45 integrations."""
        lap = g.laplacian
        opts = dict(method="RK45", rtol=1e-11, atol=1e-12)
        z = solve_ivp(lambda _, x: -lap @ x + u, (0, t), z_init, **opts).y[:, -1]
        z0 = solve_ivp(lambda _, x: -lap @ x, (0, t), z_init, **opts).y[:, -1]
        spec = spectral_decompose(lap)
        c = float(np.real(spec.left[:, 0] @ u))
        return float(np.linalg.norm(z0 - (z - c * t - offset_vector(spec, u))))

    def test_matches_ode_oracle(self):
        rng = np.random.default_rng(5)
        done = 0
        while done < 10:
            g = random_connected_digraph(int(rng.integers(3, 6)), 0.5, seed=rng)
            try:
                spec = spectral_decompose(g.laplacian)
            except DefectiveMatrix:
                continue
            u = rng.normal(size=g.n)
            for t in (0.5, 2.0):
                assert separation_error(spec, u, t) == pytest.approx(
                    self._oracle(g, rng.normal(size=g.n), u, t), abs=1e-6)
            done += 1

    def test_bound_trivial_cases(self):
        spec = spectral_decompose(random_connected_digraph(5, 0.5, seed=3).laplacian)
        assert separation_error_bound(spec, np.zeros(5), 2.0) == 0
        u = np.arange(5.0)
        assert separation_error_bound(spec, u, 0.0) == pytest.approx(np.linalg.norm(offset_vector(spec, u)))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 100_000))
    def test_bound_holds_for_symmetric_laplacians(self, seed):
        rng = np.random.default_rng(seed)
        g = symmetric_graph(rng, int(rng.integers(3, 7)))
        spec = spectral_decompose(g.laplacian)
        u = rng.normal(size=g.n)
        for t in (0.0, 0.5, 1.0, 2.0, 5.0):
            assert separation_error(spec, u, t) <= separation_error_bound(spec, u, t) + 1e-9


class TestLeastSquares:
    def test_fixed_point_series_is_rank_deficient(self):
        # P = I keeps the state constant, so one series cannot excite it
        obs = simulate(InteractionMatrix(np.eye(3), 0.1), [1.0, 2.0, 3.0], zero_input(3), 6)
        with pytest.raises(RankDeficient):
            least_squares_estimate(obs.states)

    def test_three_node_consensus(self):
        g = random_connected_digraph(3, 0.6, seed=4)
        p = interaction_matrix(g, default_epsilon(g))
        obs = simulate(p, [3.0, -1.0, 0.5], zero_input(3), 6)
        np.testing.assert_allclose(least_squares_estimate(obs.states), p.p, atol=1e-8)

    def test_k_equal_n_is_rank_deficient(self):
        with pytest.raises(RankDeficient):
            least_squares_estimate(np.random.default_rng(1).normal(size=(3, 3)))

    def test_singular_gram(self):
        with pytest.raises(RankDeficient):
            least_squares_estimate(np.ones((6, 3)))
