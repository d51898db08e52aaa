"""End-to-end acceptance checks, one test per shipped guarantee.

Each test states its tolerance and budget inline; randomized checks use
fixed seeds so a failure is reproducible bit for bit.
"""

import time

import numpy as np
import pytest

from deeplq import (
    DssStrategy,
    TeamModel,
    ZeroStrategy,
    centralized_oracle_gains,
    compute_value_constants,
    constant,
    dss_action,
    dss_joint_gain,
    estimate_risk_sensitive_cost,
    export_network_weights,
    forward_pass,
    gauge_decompose,
    price_of_information,
    price_of_robustness,
    simulate,
    solve_algebraic,
    solve_all,
    solve_deep_riccati,
    solve_weakly_coupled,
    time_grid,
    write_trajectory_csv,
)
from deeplq.equivariance import (
    Transformation,
    all_permutation_matrices,
    check_equivariant,
    make_permutation_structured,
    make_polynomial_system,
    make_symmetric_structured,
    normal_decomposition_check,
)
from deeplq.scenarios import builtin_supply_chain, random_team_model, supplier_only
from deeplq.simulator import _Engine
from deeplq.strategies import dss_action_weakly_coupled

from conftest import orthonormal_alpha, scalar_model, scalar_subpop

# Analytic optimal risk-sensitive value of the supplier-only scenario on the
# default 2000-step solver grid, frozen from an independent run that was
# cross-checked against the single-agent closed form and a Monte Carlo
# estimate (criterion 8 repeats the Monte Carlo side at M=1e5).
FROZEN_SUPPLIER_VALUE = 1.6952190797550029


def _rel_gap(a, b):
    return float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(b))))


def test_01_composed_gains_match_centralized_oracle():
    # 20 randomized models, S<=2, f<=2, n<=5, d<=2, risk in {0, 0.1};
    # composed per-agent gains vs the brute-force joint Riccati, <2 min.
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(20):
        lam = 0.1 if i % 2 else 0.0
        model = random_team_model(seed=300 + i, risk_factor=lam, coupling="deep")
        grid = time_grid(model.horizon, 400)
        sol = solve_all(model, grid)
        oracle = centralized_oracle_gains(model, grid)
        for k in range(0, len(grid), 4):
            composed, _ = dss_joint_gain(model, sol, grid[k])
            worst = max(worst, _rel_gap(composed, oracle[k]))
    assert worst <= 1e-6
    assert time.perf_counter() - t0 < 120.0


class TestCriterion02GaugeLemmas:
    def test_residual_sums_vanish(self):
        # feature-weighted sums of the residual parts are identically zero
        rng = np.random.default_rng(41)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(2, 7))
            f = int(rng.integers(1, min(n, 3) + 1))
            d = int(rng.integers(1, 4))
            alpha = orthonormal_alpha(rng, n, f)
            for _arr in range(3):  # states, actions, tracking all obey it
                res, _ = gauge_decompose(rng.standard_normal((n, d)), alpha)
                worst = max(worst, float(np.max(np.abs(alpha.T @ res))))
        assert worst <= 1e-10

    def test_bilinear_cross_terms_vanish(self):
        # residual and averaged parts are orthogonal under any PSD weight,
        # so the team cost splits exactly into residual + scaled deep terms
        rng = np.random.default_rng(43)
        worst_cross = 0.0
        worst_split = 0.0
        for _ in range(100):
            n = int(rng.integers(2, 7))
            f = int(rng.integers(1, min(n, 3) + 1))
            d = int(rng.integers(1, 4))
            alpha = orthonormal_alpha(rng, n, f)
            g = rng.standard_normal((d, d))
            Q = g.T @ g / d
            err = rng.standard_normal((n, d)) - rng.standard_normal((n, d))
            res, deep = gauge_decompose(err, alpha)
            lifted = alpha @ deep
            total = float(np.einsum("nd,de,ne->", err, Q, err))
            cross = float(np.einsum("nd,de,ne->", res, Q, lifted))
            split = float(np.einsum("nd,de,ne->", res, Q, res)) + n * float(
                np.einsum("fd,de,fe->", deep, Q, deep)
            )
            worst_cross = max(worst_cross, abs(cross) / (1.0 + abs(total)))
            worst_split = max(worst_split, abs(total - split) / (1.0 + abs(total)))
        assert worst_cross <= 1e-9
        assert worst_split <= 1e-9

    def test_noise_covariances(self):
        # second moments of decomposed Brownian increments at t, 1e5 samples,
        # every entry within 5 standard errors of its prediction
        rng = np.random.default_rng(47)
        M, n, f, d, t = 100_000, 6, 2, 2, 0.7
        alpha = orthonormal_alpha(rng, n, f)
        w = rng.standard_normal((M, n, d)) * np.sqrt(t)
        res, deep = gauge_decompose(w, alpha)

        def check(samples, predicted):
            mean = samples.mean(axis=0)
            stderr = samples.std(axis=0, ddof=1) / np.sqrt(M)
            assert np.all(np.abs(mean - predicted) <= 5.0 * stderr)

        gram = alpha @ alpha.T / n
        eye = np.eye(d)
        for i in range(n):
            check(np.einsum("Md,Me->Mde", res[:, i], res[:, i]), t * (1.0 - gram[i, i]) * eye)
            for i2 in range(i + 1, n):
                check(np.einsum("Md,Me->Mde", res[:, i], res[:, i2]), -t * gram[i, i2] * eye)
            for j in range(f):
                check(np.einsum("Md,Me->Mde", res[:, i], deep[:, j]), np.zeros((d, d)))
        for j in range(f):
            check(np.einsum("Md,Me->Mde", deep[:, j], deep[:, j]), (t / n) * eye)
            for j2 in range(j + 1, f):
                check(np.einsum("Md,Me->Mde", deep[:, j], deep[:, j2]), np.zeros((d, d)))

    def test_runtime_budget(self):
        t0 = time.perf_counter()
        self.test_residual_sums_vanish()
        self.test_bilinear_cross_terms_vanish()
        self.test_noise_covariances()
        assert time.perf_counter() - t0 < 60.0


def test_03_zero_coupling_deep_solution_is_block_diagonal():
    # without coupling weights the deep matrix is the weighted local blocks
    for i in range(10):
        lam = 0.1 if i % 2 else 0.0
        model = random_team_model(seed=500 + i, risk_factor=lam, coupling="none")
        sol = solve_deep_riccati(model, time_grid(model.horizon, 200))
        expected = np.zeros_like(sol.p_deep)
        for s, sp in enumerate(model.sub_populations, start=1):
            for j in range(sp.f):
                sl = model.deep_x_slice(s, j)
                expected[:, sl, sl] = sp.mu * sol.p_local[s - 1]
        assert _rel_gap(sol.p_deep, expected) <= 1e-9


def test_04_weakly_coupled_solver_matches_full_solver():
    # per-feature reduced solutions equal the weighted deep blocks, and the
    # reduced strategy reproduces the full strategy's actions
    rng = np.random.default_rng(71)
    for i in range(10):
        lam = 0.1 if i % 2 else 0.0
        model = random_team_model(seed=700 + i, risk_factor=lam, coupling="weak")
        grid = time_grid(model.horizon, 200)
        full = solve_all(model, grid)
        weak = solve_weakly_coupled(model, grid)
        for s, sp in enumerate(model.sub_populations, start=1):
            for j in range(sp.f):
                sl = model.deep_x_slice(s, j)
                assert _rel_gap(sp.mu * weak.p_feature[s - 1][j], full.p_deep[:, sl, sl]) <= 1e-8
        for s, sp in enumerate(model.sub_populations, start=1):
            x_i = rng.standard_normal((sp.d_x, 1))
            deep_x = rng.standard_normal((model.deep_d_x, 1))
            own = deep_x[model.deep_x_slice(s)]
            t = float(grid[len(grid) // 3])
            u_full = dss_action((0, s), t, x_i, deep_x, full)
            u_weak = dss_action_weakly_coupled((0, s), t, x_i, own, weak, full)
            assert np.max(np.abs(u_full - u_weak)) <= 1e-8


def test_05_gain_gap_shrinks_linearly_in_risk_factor():
    # ||gain(lam) - gain(0)|| drops by 10 +/- 2 per decade of lam
    import dataclasses

    base = scalar_model(n=2, c=0.8, qbar=0.4, a=0.5)
    neutral = solve_deep_riccati(base)

    def gap(lam):
        sol = solve_deep_riccati(dataclasses.replace(base, risk_factor=lam))
        return max(
            float(np.max(np.abs(sol.gain_local[0] - neutral.gain_local[0]))),
            float(np.max(np.abs(sol.gain_deep - neutral.gain_deep))),
        )

    gaps = [gap(lam) for lam in (1e-1, 1e-2, 1e-3)]
    for larger, smaller in zip(gaps, gaps[1:]):
        assert 8.0 <= larger / smaller <= 12.0


def test_06_risk_premium_decays_with_population_size():
    # the certainty premium of the risk-aware design vanishes as n grows;
    # PoR(64) < PoR(4) at >= 2 combined stderr with common random numbers
    model = scalar_model(n=4, c=0.8, a=0.5, risk_factor=0.5)
    report = price_of_robustness(model, lam=0.5, M=10_000, seed=31415, n_sweep=(4, 64))
    small, large = report.rows
    assert small["ok"] and large["ok"]
    assert large["premium"] < small["premium"]
    combined = float(np.hypot(small["premium_stderr"], large["premium_stderr"]))
    assert small["premium"] - large["premium"] >= 2.0 * combined


class TestCriterion07InformationPremium:
    def _pair_model(self):
        from deeplq import InitSpec

        sp1 = scalar_subpop(n=2, c=0.5, qbar=0.0, Qbar=constant([[0.3, 0.1], [0.1, 0.3]]), mu=0.5)
        sp2 = scalar_subpop(
            n=3,
            c=0.9,
            a=-0.1,
            Qbar=None,
            mu=0.5,
            init=InitSpec("gaussian", np.full((3, 1), 0.4), 0.2 * np.eye(1)),
        )
        return TeamModel((sp1, sp2), horizon=1.0, risk_factor=0.0, shared_set=frozenset({1}))

    def test_gap_shrinks_with_unobserved_population_size(self):
        report = price_of_information(
            self._pair_model(),
            observed={1},
            filter_kind="both",
            n_star_sweep=(5, 50),
            M=10_000,
            seed=2718,
        )
        for kind in ("finite", "infinite"):
            rows = {r["n_star"]: r for r in report.rows if r["filter"] == kind}
            assert rows[5]["ok"] and rows[50]["ok"]
            assert rows[50]["gap"] < rows[5]["gap"]
            combined = float(np.hypot(rows[5]["gap_stderr"], rows[50]["gap_stderr"]))
            assert rows[5]["gap"] - rows[50]["gap"] >= 2.0 * combined

    def test_gap_is_exactly_zero_under_full_observation(self):
        report = price_of_information(
            self._pair_model(),
            observed={1, 2},
            filter_kind="both",
            n_star_sweep=(3,),
            M=200,
            seed=5,
            dt=0.02,
        )
        for row in report.rows:
            assert row["gap"] == 0.0


def test_08_analytic_value_matches_monte_carlo():
    # closed-form optimal value vs simulated risk estimate, 3 stderr at M=1e5
    model = supplier_only()
    sol = solve_all(model, time_grid(model.horizon, 2000))
    analytic = compute_value_constants(model, sol).value
    assert analytic == pytest.approx(FROZEN_SUPPLIER_VALUE, abs=1e-12)
    estimate, stderr = estimate_risk_sensitive_cost(
        model, DssStrategy(sol), M=100_000, dt=1e-3, seed=123
    )
    assert abs(analytic - estimate) < 3.0 * stderr


def test_09_network_forward_pass_replays_closed_loop():
    # 1000-layer export on a five-agent model replays the simulated path
    model = scalar_model(n=5, c=0.5, a=0.4, qbar=0.3, risk_factor=0.2, horizon=1.0)
    sol = solve_all(model, time_grid(model.horizon, 1000))
    export = export_network_weights(model, sol, dt=1e-3)
    assert export.layers == 1000
    traj = simulate(model, DssStrategy(sol), dt=1e-3, seed=2024)
    noises = traj.noise.reshape(1000, 5, 1)
    path = forward_pass(export, traj.states[0].reshape(5, 1), noises)
    deviation = np.max(np.abs(path.reshape(1001, 5) - traj.states))
    assert deviation <= 1e-10


class TestCriterion10Equivariance:
    def test_polynomial_closure_random_trials(self):
        # systems built as polynomials of the lifted map always commute
        rng = np.random.default_rng(4242)
        for _ in range(100):
            n = int(rng.integers(2, 6))
            d = int(rng.integers(1, 3))
            F = rng.standard_normal((n, n)) / np.sqrt(n)
            tr = Transformation(F, d_x=d, d_u=d)
            coeffs = [rng.standard_normal(3) for _ in range(4)]
            system = make_polynomial_system(tr, *coeffs)
            verdict = check_equivariant(tr, system, rtol=1e-9, seed=int(rng.integers(1 << 30)))
            assert verdict.ok
            assert max(verdict.residual_dynamics_A, verdict.residual_dynamics_B) <= 1e-9
            assert verdict.residual_cost <= 1e-9

    def test_normal_map_cost_splits_along_eigenvectors(self):
        # for normal maps and scalar weights the transformed cost equals the
        # eigenvalue-weighted sum over eigenvector projections
        rng = np.random.default_rng(4747)
        for trial in range(100):
            n = int(rng.integers(2, 7))
            g = rng.standard_normal((n, n))
            kind = trial % 3
            if kind == 0:
                F = (g + g.T) / 2.0
            elif kind == 1:
                F = (g - g.T) / 2.0
            else:
                F, _ = np.linalg.qr(g)
            Q = float(rng.uniform(0.1, 2.0)) * np.eye(n)
            R = float(rng.uniform(0.1, 2.0)) * np.eye(n)
            x = rng.standard_normal(n)
            u = rng.standard_normal(n)
            _, _, residual = normal_decomposition_check(Transformation(F), Q, R, x, u)
            assert residual <= 1e-9

    def test_symmetric_structured_assembly_random_trials(self):
        # spectrally assembled symmetric systems stay equivariant and their
        # eigenvector scalings satisfy the influence orthonormality
        rng = np.random.default_rng(4949)
        for _ in range(100):
            n = int(rng.integers(2, 6))
            g = rng.standard_normal((n, n))
            F = (g + g.T) / 2.0
            coeffs = [rng.standard_normal(2) for _ in range(4)]
            built = make_symmetric_structured(F, *coeffs)
            gram = built.alpha.T @ built.alpha / n
            assert np.max(np.abs(gram - np.eye(n))) <= 1e-9
            verdict = check_equivariant(Transformation(F), built.to_lq_system(), rtol=1e-9)
            assert verdict.ok

    def test_exhaustive_permutations_small_n(self):
        # exchangeable mean-field systems commute with every permutation
        for n in range(2, 6):
            system = make_permutation_structured(
                a=0.3, abar=0.2, b=1.0, bbar=-0.1, q=1.0, qbar=0.5, r=1.0, rbar=0.2, n=n
            )
            for P in all_permutation_matrices(n):
                tr = Transformation(P)
                verdict = check_equivariant(tr, system, rtol=1e-10)
                assert verdict.ok
                eigenvalues, _ = tr.spectral()
                assert np.max(np.abs(np.abs(eigenvalues) - 1.0)) <= 1e-10


class TestCriterion11SupplyChain:
    def test_all_variants_solve_simulate_and_export(self, tmp_path):
        # four dominance profiles, 20 distributors, T=10, dt=0.01, under 10 s
        t0 = time.perf_counter()
        for variant in "abcd":
            model = builtin_supply_chain(variant, n2=20)
            sol = solve_all(model, time_grid(model.horizon, 1000))
            traj = simulate(model, DssStrategy(sol), dt=0.01, seed=11)
            out = tmp_path / f"supply_{variant}.csv"
            write_trajectory_csv(out, traj)
            assert out.stat().st_size > 0
        assert time.perf_counter() - t0 < 10.0

    def test_optimal_strategy_reduces_terminal_mismatch(self):
        # 100 shared-noise replicates: mean of n2*(supplier_T - deep_T)^2 is
        # significantly smaller under the optimal strategy than under ZERO
        model = builtin_supply_chain("a", n2=20)
        dt, steps = 0.01, 1000
        times = np.arange(steps + 1) * dt
        engine = _Engine(model, times)
        rng = np.random.default_rng(777)
        reps = 100
        raw = rng.standard_normal((steps, reps, model.joint_d_x))
        sol = solve_all(model, time_grid(model.horizon, steps))
        n2 = model.sub_populations[1].n

        def terminal_mismatch(strategy):
            bound = strategy.bind(model, times)
            X = np.zeros((reps, model.joint_d_x))
            est = bound.start(X)
            for k in range(steps):
                U = bound.actions(k, X, est)
                W = engine.scale_noise(k, raw[k], dt)
                X = engine.step(k, X, U, W, dt)
                est = bound.advance(k, X, est)
            assert np.all(np.isfinite(X))
            supplier = X[:, model.joint_x_slice(1)].ravel()
            deep = (X @ engine.E_x.T)[:, model.deep_x_slice(2, 0)].ravel()
            return n2 * (supplier - deep) ** 2

        optimal = terminal_mismatch(DssStrategy(sol))
        baseline = terminal_mismatch(ZeroStrategy())
        assert optimal.mean() < baseline.mean()
        combined = float(
            np.hypot(optimal.std(ddof=1) / np.sqrt(reps), baseline.std(ddof=1) / np.sqrt(reps))
        )
        assert baseline.mean() - optimal.mean() >= 2.0 * combined


def test_12_stationary_solutions_match_closed_forms():
    # scalar fixed points: a=0 gives P=1; a=1 gives P=1+sqrt(2)
    flat = scalar_model(n=1, a=0.0, b=1.0, q=1.0, r=1.0, c=0.0, qbar=0.0, risk_factor=0.0)
    sol = solve_algebraic(flat)
    assert sol.p_local[0][0, 0] == pytest.approx(1.0, abs=1e-9)
    assert sol.p_deep[0, 0] == pytest.approx(1.0, abs=1e-9)

    tilted = scalar_model(n=1, a=1.0, b=1.0, q=1.0, r=1.0, c=0.0, qbar=0.0, risk_factor=0.0)
    sol = solve_algebraic(tilted)
    assert sol.p_local[0][0, 0] == pytest.approx(1.0 + np.sqrt(2.0), abs=1e-9)
    assert sol.p_deep[0, 0] == pytest.approx(1.0 + np.sqrt(2.0), abs=1e-9)

    for i in range(3):
        lam = 0.1 if i % 2 else 0.0
        model = random_team_model(seed=900 + i, risk_factor=lam, coupling="none")
        stationary = solve_algebraic(model)
        assert stationary.hurwitz
        assert stationary.spectral_abscissa < 0.0
