"""Action laws, strategy objects, gain composition, and the network export."""

import dataclasses

import numpy as np
import pytest

from deeplq import (
    CentralizedStrategy,
    DssStrategy,
    PdssStrategy,
    TeamModel,
    ZeroStrategy,
    centralized_oracle_gains,
    constant,
    deep_state,
    dss_action,
    dss_joint_gain,
    export_network_weights,
    forward_pass,
    simulate,
    solve_all,
    solve_deep_riccati,
    solve_weakly_coupled,
    time_grid,
)
from deeplq.model import deep_extraction
from deeplq.scenarios import random_team_model, three_agent
from deeplq.strategies import (
    dss_action_weakly_coupled,
    dss_action_with_beta,
    read_network_json,
    write_network_json,
)

from conftest import scalar_model, scalar_subpop


class TestActionLaws:
    def test_mean_field_action_by_hand(self, rng):
        # f=1, alpha=1: u_i = theta (x_i - xbar) + gain_deep xbar
        model = scalar_model(n=3, a=0.4, qbar=0.6)
        sol = solve_all(model)
        x = rng.standard_normal((3, 1))
        xbar = x.mean()
        t = 0.37
        k = np.searchsorted(sol.grid, t + 1e-12) - 1
        theta = sol.gain_local[0][k][0, 0]
        gbar = sol.gain_deep[k][0, 0]
        for i in range(3):
            u = dss_action((i, 1), t, x[i], np.array([xbar]), sol)
            manual = theta * (x[i, 0] - xbar) + gbar * xbar
            assert u[0] == pytest.approx(manual, abs=1e-12)

    def test_action_uses_zero_order_hold(self):
        model = scalar_model(n=2)
        sol = solve_all(model, time_grid(1.0, 10))
        x = np.array([0.7])
        z = np.array([0.7])
        mid = dss_action((0, 1), 0.15, x, z, sol)
        left = dss_action((0, 1), 0.1, x, z, sol)
        np.testing.assert_allclose(mid, left, atol=1e-15)

    def test_tracking_model_requires_corrections(self):
        model = scalar_model(n=2, tracking=constant(np.full((2, 1), 0.3)))
        bare = solve_deep_riccati(model)
        with pytest.raises(ValueError, match="correction"):
            dss_action((0, 1), 0.0, np.zeros(1), np.zeros(1), bare)

    def test_weakly_coupled_law_matches_full_law(self, rng):
        model = random_team_model(seed=9, risk_factor=0.1, coupling="weak")
        sol = solve_all(model)
        weak = solve_weakly_coupled(model)
        states = [rng.standard_normal((sp.n, sp.d_x)) for sp in model.sub_populations]
        deep = np.concatenate(
            [deep_state(x, sp.alpha).ravel() for x, sp in zip(states, model.sub_populations)]
        )
        for s, sp in enumerate(model.sub_populations, start=1):
            own = deep[model.deep_x_slice(s)]
            for i in range(sp.n):
                full = dss_action((i, s), 0.3, states[s - 1][i], deep, sol)
                reduced = dss_action_weakly_coupled(
                    (i, s), 0.3, states[s - 1][i], own, weak, sol
                )
                np.testing.assert_allclose(reduced, full, atol=1e-10)

    def test_effort_weighted_law_guards(self):
        risky = scalar_model(n=2, risk_factor=0.1)
        sol = solve_all(risky)
        with pytest.raises(ValueError, match="zero risk"):
            dss_action_with_beta((0, 1), 0.0, np.zeros(1), np.zeros(1), sol)

    def test_unit_efforts_reduce_to_plain_law(self, rng):
        model = scalar_model(n=3)
        sol = solve_all(model)
        x = rng.standard_normal(1)
        z = rng.standard_normal(1)
        plain = dss_action((1, 1), 0.4, x, z, sol)
        weighted = dss_action_with_beta((1, 1), 0.4, x, z, sol, beta=np.ones(3))
        np.testing.assert_allclose(weighted, plain, atol=1e-14)


class TestComposition:
    def test_joint_gain_matches_centralized_oracle(self):
        model = random_team_model(seed=21, risk_factor=0.1, coupling="deep")
        grid = time_grid(model.horizon, 400)
        sol = solve_all(model, grid)
        oracle = centralized_oracle_gains(model, grid)
        worst = 0.0
        for k in [0, 133, 266, 400]:
            composed, _ = dss_joint_gain(model, sol, grid[k])
            dev = np.max(np.abs(composed - oracle[k])) / (1.0 + np.max(np.abs(oracle[k])))
            worst = max(worst, dev)
        assert worst < 1e-8

    def test_joint_gain_reproduces_agent_actions(self, rng):
        model = three_agent()
        sol = solve_all(model)
        gain, drift = dss_joint_gain(model, sol, 0.2)
        X = rng.standard_normal(model.joint_d_x)
        joint_u = gain @ X + drift
        deep_parts = []
        for s, sp in enumerate(model.sub_populations, start=1):
            block = np.stack([X[model.joint_x_slice(s, i)] for i in range(sp.n)])
            deep_parts.append(deep_state(block, sp.alpha).ravel())
        deep = np.concatenate(deep_parts)
        for s, sp in enumerate(model.sub_populations, start=1):
            for i in range(sp.n):
                xi = X[model.joint_x_slice(s, i)]
                ui = dss_action((i, s), 0.2, xi, deep, sol)
                np.testing.assert_allclose(ui, joint_u[model.joint_u_slice(s, i)], atol=1e-12)


class TestStrategies:
    def test_zero_strategy_outputs_zero(self):
        model = scalar_model(n=2, c=0.5)
        traj = simulate(model, ZeroStrategy(), dt=0.05, seed=3)
        np.testing.assert_allclose(traj.actions, 0.0)
        assert np.max(np.abs(traj.states)) > 0  # noise still drives the states

    def test_centralized_strategy_tracks_dss(self):
        model = three_agent()
        grid = time_grid(model.horizon, int(round(model.horizon / 0.01)))
        sol = solve_all(model, grid)
        oracle = CentralizedStrategy(grid, centralized_oracle_gains(model, grid))
        a = simulate(model, DssStrategy(sol), dt=0.01, seed=11)
        b = simulate(model, oracle, dt=0.01, seed=11)
        np.testing.assert_allclose(b.states, a.states, atol=1e-10)
        np.testing.assert_allclose(b.cost_weighted, a.cost_weighted, atol=1e-10)

    def test_full_observation_filter_equals_full_sharing(self):
        model = three_agent()
        sol = solve_all(model, time_grid(model.horizon, 100))
        dss = simulate(model, DssStrategy(sol), dt=0.01, seed=5)
        for kind in ("finite", "infinite"):
            pdss = simulate(model, PdssStrategy(sol, frozenset({1, 2}), kind), dt=0.01, seed=5)
            assert np.array_equal(pdss.states, dss.states)
            assert np.array_equal(pdss.actions, dss.actions)

    def test_partial_filter_syncs_observed_rows_only(self):
        model = three_agent()
        sol = solve_all(model, time_grid(model.horizon, 100))
        traj = simulate(model, PdssStrategy(sol, frozenset({1}), "finite"), dt=0.01, seed=5)
        E_x, _ = deep_extraction(model)
        exact = traj.states @ E_x.T
        obs = model.deep_x_slice(1)
        np.testing.assert_allclose(traj.estimator[:, obs], exact[:, obs], atol=1e-12)
        hidden = model.deep_x_slice(2)
        assert np.max(np.abs(traj.estimator[:, hidden] - exact[:, hidden])) > 1e-6

    def test_estimator_unbiasedness_over_replicates(self):
        # the propagated deep estimate matches the ensemble mean of the truth
        model = three_agent()
        sol = solve_all(model, time_grid(model.horizon, 100))
        strat = PdssStrategy(sol, frozenset({1}), "finite")
        E_x, _ = deep_extraction(model)
        hidden = model.deep_x_slice(2)
        errs = []
        for rep in range(200):
            traj = simulate(model, strat, dt=0.02, seed=77, replicate=rep)
            exact = traj.states @ E_x.T
            errs.append(exact[-1, hidden] - traj.estimator[-1, hidden])
        errs = np.asarray(errs)
        mean_err = errs.mean(axis=0)
        stderr = errs.std(axis=0, ddof=1) / np.sqrt(len(errs))
        assert np.all(np.abs(mean_err) < 4.0 * stderr + 1e-12)


class TestNetworkExport:
    def _model(self):
        return scalar_model(n=4, a=0.3, c=0.4, qbar=0.5, risk_factor=0.2, mean=0.8)

    def test_replay_matches_closed_loop(self):
        model = self._model()
        dt = 0.01
        steps = int(round(model.horizon / dt))
        sol = solve_all(model, time_grid(model.horizon, steps))
        export = export_network_weights(model, sol, dt)
        traj = simulate(model, DssStrategy(sol), dt=dt, seed=424242)
        sp = model.sub_populations[0]
        x_path = traj.states.reshape(-1, sp.n, sp.d_x)
        noises = traj.noise.reshape(-1, sp.n, sp.d_x)
        replay = forward_pass(export, x_path[0], noises)
        assert np.max(np.abs(replay - x_path)) < 1e-10 * steps

    def test_json_roundtrip(self, tmp_path):
        model = self._model()
        sol = solve_all(model, time_grid(model.horizon, 50))
        export = export_network_weights(model, sol, 0.02)
        path = tmp_path / "net.json"
        write_network_json(path, export)
        back = read_network_json(path)
        np.testing.assert_allclose(back.weights, export.weights, atol=0)
        np.testing.assert_allclose(back.biases, export.biases, atol=0)
        assert back.layers == export.layers
        assert back.dt == export.dt

    def test_requires_single_decoupled_sub_population(self):
        model = three_agent()
        sol = solve_all(model, time_grid(model.horizon, 50))
        with pytest.raises(ValueError):
            export_network_weights(model, sol, 0.02)

    def test_requires_dt_dividing_horizon(self):
        model = self._model()
        sol = solve_all(model, time_grid(model.horizon, 50))
        with pytest.raises(ValueError, match="divide"):
            export_network_weights(model, sol, 0.03)
