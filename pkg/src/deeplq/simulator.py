"""Closed-loop simulation and Monte Carlo cost experiments.

The engine integrates every agent's stochastic dynamics with the explicit
Euler scheme (exact in the additive-noise term), evaluates the weighted team
cost by trapezoidal quadrature, and estimates the risk-sensitive objective
(1/lambda) log E[exp(lambda J)] by stabilized log-sum-exp averaging over
replicates.

Reproducibility: replicate m of a run with seed s draws all of its
randomness from an independent generator seeded by (s, m), so results do not
depend on chunking or on how many workers DEEPLQ_WORKERS allows.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from deeplq.deep_riccati import (
    ESCAPE_NORM,
    FiniteEscapeError,
    solve_all,
    time_grid,
)
from deeplq.model import (
    TeamModel,
    assemble_centralized,
    deep_extraction,
    infinite_population_limit,
    validate_model,
    with_population_size,
)
from deeplq.strategies import CentralizedStrategy, DssStrategy, PdssStrategy

__all__ = [
    "Trajectory",
    "ExperimentReport",
    "simulate",
    "evaluate_cost",
    "sample_costs",
    "risk_estimate_from_costs",
    "estimate_risk_sensitive_cost",
    "centralized_oracle_gains",
    "price_of_robustness",
    "price_of_information",
    "write_trajectory_csv",
    "worker_count",
]


def worker_count() -> int:
    """Parallel replicate chunks allowed by the DEEPLQ_WORKERS variable."""
    raw = os.environ.get("DEEPLQ_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _steps_for(model: TeamModel, dt: float) -> int:
    steps = int(round(model.horizon / dt))
    if steps < 1 or abs(steps * dt - model.horizon) > 1e-9 * max(1.0, model.horizon):
        raise ValueError(f"dt={dt} must divide the horizon {model.horizon}")
    return steps


def _agent_offsets(model: TeamModel) -> list[int]:
    offs = [0]
    for sp in model.sub_populations:
        offs.append(offs[-1] + sp.n)
    return offs


class _Engine:
    """Precomputed per-step coefficients for batched stepping and cost rates."""

    def __init__(self, model: TeamModel, times: np.ndarray):
        self.model = model
        self.times = np.asarray(times, dtype=float)
        self.E_x, self.E_u = deep_extraction(model)
        self._constant = model.is_time_invariant()
        self._cache: dict = {}
        self.has_dyn_coupling = any(sp.Abar or sp.Bbar for sp in model.sub_populations)

    def _coeff(self, t: float, dt: float):
        key = (0.0, round(dt, 15)) if self._constant else (round(float(t), 12), round(dt, 15))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        per_sub = []
        for sp in self.model.sub_populations:
            Adt = sp.A.at(t) * dt
            Bdt = sp.B.at(t) * dt
            Csq = sp.C.at(t) * np.sqrt(dt)
            Abar = np.stack([b.at(t) for b in sp.Abar]) * dt if sp.Abar else None
            Bbar = np.stack([b.at(t) for b in sp.Bbar]) * dt if sp.Bbar else None
            per_sub.append((Adt, Bdt, Csq, Abar, Bbar))
        self._cache[key] = per_sub
        return per_sub

    def scale_noise(self, k: int, raw: np.ndarray, dt: float) -> np.ndarray:
        """Map unit normals (M, joint_d_x) to the additive noise increments."""
        out = np.empty_like(raw)
        coeff = self._coeff(self.times[k], dt)
        for s, sp in enumerate(self.model.sub_populations, start=1):
            sl = self.model.joint_x_slice(s)
            z = raw[:, sl].reshape(-1, sp.n, sp.d_x)
            out[:, sl] = (z @ coeff[s - 1][2].T).reshape(raw.shape[0], -1)
        return out

    def step(self, k: int, X: np.ndarray, U: np.ndarray, W: np.ndarray, dt: float) -> np.ndarray:
        """One explicit Euler step for a batch of joint states."""
        model = self.model
        coeff = self._coeff(self.times[k], dt)
        deepx = X @ self.E_x.T if self.has_dyn_coupling else None
        deepu = U @ self.E_u.T if self.has_dyn_coupling else None
        out = np.empty_like(X)
        for s, sp in enumerate(model.sub_populations, start=1):
            sl = model.joint_x_slice(s)
            ul = model.joint_u_slice(s)
            Adt, Bdt, _, Abar, Bbar = coeff[s - 1]
            Xs = X[:, sl].reshape(-1, sp.n, sp.d_x)
            Us = U[:, ul].reshape(-1, sp.n, sp.d_u)
            nxt = Xs + Xs @ Adt.T + Us @ Bdt.T
            if Abar is not None:
                coup = np.einsum("fdD,MD->Mfd", Abar, deepx)
                nxt += np.einsum("if,Mfd->Mid", sp.alpha, coup)
            if Bbar is not None:
                coup = np.einsum("fdD,MD->Mfd", Bbar, deepu)
                nxt += np.einsum("if,Mfd->Mid", sp.alpha, coup)
            out[:, sl] = nxt.reshape(X.shape[0], -1)
        out += W
        return out

    def cost_rate(self, t: float, X: np.ndarray, U: np.ndarray, per_agent: bool = False):
        """Running cost density: weighted team rate, optionally per agent."""
        model = self.model
        M = X.shape[0]
        deepx = X @ self.E_x.T
        deepu = U @ self.E_u.T
        weighted = np.zeros(M)
        agents = np.zeros((M, model.n_agents)) if per_agent else None
        offs = _agent_offsets(model)
        for s, sp in enumerate(model.sub_populations, start=1):
            Xs = X[:, model.joint_x_slice(s)].reshape(M, sp.n, sp.d_x)
            Us = U[:, model.joint_u_slice(s)].reshape(M, sp.n, sp.d_u)
            Q = sp.Q.at(t)
            R = sp.R.at(t)
            xr = Xs - sp.tracking_at(t)
            local = np.einsum("Mnd,de,Mne->Mn", xr, Q, xr)
            local += np.einsum("Mnd,de,Mne->Mn", Us, R, Us)
            beta = sp.beta_or_ones()
            weighted += (sp.mu / sp.n) * (local @ beta)
            deep_rate = np.zeros(M)
            if sp.Qbar is not None:
                deep_rate += np.einsum("MD,DE,ME->M", deepx, sp.Qbar.at(t), deepx)
            if sp.Rbar is not None:
                deep_rate += np.einsum("MD,DE,ME->M", deepu, sp.Rbar.at(t), deepu)
            weighted += sp.mu * float(np.mean(beta)) * deep_rate
            if per_agent:
                agents[:, offs[s - 1] : offs[s]] = local + deep_rate[:, None]
        return (weighted, agents) if per_agent else (weighted, None)

    def terminal_cost(self, X: np.ndarray, per_agent: bool = False):
        """Terminal state penalty under the terminal weights."""
        model = self.model
        T = model.horizon
        M = X.shape[0]
        deepx = X @ self.E_x.T
        weighted = np.zeros(M)
        agents = np.zeros((M, model.n_agents)) if per_agent else None
        offs = _agent_offsets(model)
        for s, sp in enumerate(model.sub_populations, start=1):
            Xs = X[:, model.joint_x_slice(s)].reshape(M, sp.n, sp.d_x)
            QT = sp.terminal_Q(T)
            xr = Xs - sp.tracking_at(T)
            local = np.einsum("Mnd,de,Mne->Mn", xr, QT, xr)
            beta = sp.beta_or_ones()
            weighted += (sp.mu / sp.n) * (local @ beta)
            deep_term = np.zeros(M)
            qbar_T = sp.terminal_Qbar(T)
            if qbar_T is not None:
                deep_term += np.einsum("MD,DE,ME->M", deepx, qbar_T, deepx)
            weighted += sp.mu * float(np.mean(beta)) * deep_term
            if per_agent:
                agents[:, offs[s - 1] : offs[s]] = local + deep_term[:, None]
        return (weighted, agents) if per_agent else (weighted, None)


def _replicate_generator(seed: int, m: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(m)])))


def _draw_initial(model: TeamModel, gens: list[np.random.Generator]) -> np.ndarray:
    """Initial joint states, one row per replicate, one generator each."""
    M = len(gens)
    X0 = np.empty((M, model.joint_d_x))
    chols = []
    for sp in model.sub_populations:
        init = sp.init_or_zero()
        chols.append(None if init.is_deterministic else np.linalg.cholesky(init.cov))
    for m, gen in enumerate(gens):
        parts = []
        for sp, L in zip(model.sub_populations, chols):
            mean = sp.init_or_zero().mean
            if L is None:
                parts.append(mean.reshape(-1))
            else:
                z = gen.standard_normal((sp.n, sp.d_x))
                parts.append((mean + z @ L.T).reshape(-1))
        X0[m] = np.concatenate(parts)
    return X0


@dataclass(frozen=True)
class Trajectory:
    """One simulated closed-loop path on a uniform grid.

    states/actions are flat joint rows per grid point; deep is the stacked
    deep-state path recomputed from states; noise holds the additive
    increments actually applied at each step (so a replay can reuse them);
    estimator is the filter path for partial-sharing strategies. cost_per_agent
    and cost_weighted are accumulated with the same trapezoidal rule that
    evaluate_cost uses.
    """

    model: TeamModel
    kind: str
    times: np.ndarray
    states: np.ndarray  # (K+1, joint_d_x)
    actions: np.ndarray  # (K+1, joint_d_u)
    deep: np.ndarray  # (K+1, deep_d_x)
    noise: np.ndarray  # (K, joint_d_x)
    cost_per_agent: np.ndarray  # (n_agents,)
    cost_weighted: float
    estimator: np.ndarray | None = None  # (K+1, deep_d_x)
    seed: int | None = None
    replicate: int = 0

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def agent_states(self, s: int, i: int) -> np.ndarray:
        """Path of one agent, shape (K+1, d_x)."""
        return self.states[:, self.model.joint_x_slice(s, i)]

    def agent_actions(self, s: int, i: int) -> np.ndarray:
        return self.actions[:, self.model.joint_u_slice(s, i)]

    def deep_path(self, s: int, j: int | None = None) -> np.ndarray:
        return self.deep[:, self.model.deep_x_slice(s, j)]


def simulate(
    model: TeamModel,
    strategy,
    dt: float,
    seed: int,
    replicate: int = 0,
    joint: bool = False,
) -> Trajectory:
    """Integrate one closed-loop replicate and record the full path.

    The replicate's randomness comes from generator (seed, replicate); running
    with joint=True steps the assembled joint system instead of the
    per-sub-population blocks (same noise, used as a structural cross-check).

    Raises:
        FiniteEscapeError: the state left the trust region (diagnostic
            includes the step and time).
    """
    steps = _steps_for(model, dt)
    times = np.arange(steps + 1) * dt
    engine = _Engine(model, times)
    bound = strategy.bind(model, times)
    gen = _replicate_generator(seed, replicate)
    X = _draw_initial(model, [gen])
    raw = gen.standard_normal((steps, 1, model.joint_d_x))

    joint_mats = None
    if joint:
        cm = assemble_centralized(model, 0.0)
        joint_mats = (cm.A, cm.B)
        if not model.is_time_invariant():
            joint_mats = None  # rebuilt per step below

    K = steps
    N_x, N_u = model.joint_d_x, model.joint_d_u
    states = np.empty((K + 1, N_x))
    actions = np.empty((K + 1, N_u))
    noise = np.empty((K, N_x))
    est_path = np.empty((K + 1, model.deep_d_x)) if bound.needs_estimator else None

    est = bound.start(X)
    states[0] = X[0]
    if est_path is not None:
        est_path[0] = est[0]
    run_w = 0.0
    run_a = np.zeros(model.n_agents)
    prev_w = prev_a = None
    for k in range(K + 1):
        U = bound.actions(k, X, est)
        actions[k] = U[0]
        rate_w, rate_a = engine.cost_rate(times[k], X, U, per_agent=True)
        if k > 0:
            run_w += 0.5 * dt * (prev_w[0] + rate_w[0])
            run_a += 0.5 * dt * (prev_a[0] + rate_a[0])
        prev_w, prev_a = rate_w, rate_a
        if k == K:
            break
        W = engine.scale_noise(k, raw[k], dt)
        noise[k] = W[0]
        if joint:
            A, B = joint_mats if joint_mats is not None else _joint_at(model, times[k])
            X = X + dt * (X @ A.T + U @ B.T) + W
        else:
            X = engine.step(k, X, U, W, dt)
        if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > ESCAPE_NORM:
            raise FiniteEscapeError(
                f"replicate {replicate} diverged at step {k + 1} (t={times[k + 1]:.6g})"
            )
        states[k + 1] = X[0]
        est = bound.advance(k, X, est)
        if est_path is not None:
            est_path[k + 1] = est[0]

    term_w, term_a = engine.terminal_cost(X, per_agent=True)
    run_w += term_w[0]
    run_a += term_a[0]
    deep = states @ engine.E_x.T
    return Trajectory(
        model=model,
        kind=bound.kind,
        times=times,
        states=states,
        actions=actions,
        deep=deep,
        noise=noise,
        cost_per_agent=run_a,
        cost_weighted=float(run_w),
        estimator=est_path,
        seed=seed,
        replicate=replicate,
    )


def _joint_at(model: TeamModel, t: float):
    cm = assemble_centralized(model, t)
    return cm.A, cm.B


def evaluate_cost(trajectory: Trajectory, model: TeamModel) -> tuple[np.ndarray, float]:
    """Recompute the per-agent and weighted team costs from a stored path.

    Trapezoidal quadrature of the running terms (local tracking and action
    quadratics plus the deep-state and deep-action quadratics) and the
    terminal state penalty. The weighted total applies mu(s)/n(s) and the
    effort weights beta when present.
    """
    engine = _Engine(model, trajectory.times)
    X = trajectory.states[:, None, :]  # treat time as the batch axis
    U = trajectory.actions[:, None, :]
    K = len(trajectory.times) - 1
    rates_w = np.empty(K + 1)
    rates_a = np.empty((K + 1, model.n_agents))
    for k, t in enumerate(trajectory.times):
        w, a = engine.cost_rate(t, X[k], U[k], per_agent=True)
        rates_w[k] = w[0]
        rates_a[k] = a[0]
    dt = trajectory.dt
    weighted = float(np.trapezoid(rates_w, dx=dt))
    per_agent = np.trapezoid(rates_a, dx=dt, axis=0)
    term_w, term_a = engine.terminal_cost(X[K], per_agent=True)
    weighted += float(term_w[0])
    per_agent = per_agent + term_a[0]
    return per_agent, weighted


# -- Monte Carlo ------------------------------------------------------------------


def _chunk_costs(model, engine, bound, dt, steps, seed, start, count):
    gens = [_replicate_generator(seed, start + m) for m in range(count)]
    X = _draw_initial(model, gens)
    # one noise block per replicate, drawn right after its initial state so
    # the stream is identical however replicates are chunked
    raw = np.stack([g.standard_normal((steps, model.joint_d_x)) for g in gens])
    est = bound.start(X)
    cost = np.zeros(count)
    alive = np.ones(count, dtype=bool)
    prev = None
    times = engine.times
    for k in range(steps + 1):
        U = bound.actions(k, X, est)
        rate, _ = engine.cost_rate(times[k], X, U)
        if k > 0:
            cost += 0.5 * dt * (prev + rate)
        prev = rate
        if k == steps:
            break
        W = engine.scale_noise(k, raw[:, k, :], dt)
        X = engine.step(k, X, U, W, dt)
        bad = ~(np.all(np.isfinite(X), axis=1) & (np.max(np.abs(X), axis=1) < ESCAPE_NORM))
        if np.any(bad & alive):
            alive &= ~bad
            X[bad] = 0.0  # frozen; cost reported as NaN below
        est = bound.advance(k, X, est)
    term, _ = engine.terminal_cost(X)
    cost += term
    cost[~alive] = np.nan
    return cost


def sample_costs(
    model: TeamModel, strategy, M: int, dt: float, seed: int, start: int = 0
) -> np.ndarray:
    """Weighted team costs of M independent replicates (common-seed scheme).

    Replicate m always consumes the generator seeded by (seed, start + m), so
    two strategies sampled with the same arguments see identical noise and
    initial states (common random numbers). Diverged replicates yield NaN.
    """
    steps = _steps_for(model, dt)
    times = np.arange(steps + 1) * dt
    engine = _Engine(model, times)
    bound = strategy.bind(model, times)
    # chunk size keeps each per-chunk noise block around 50 MB
    chunk = int(max(64, min(8192, 5.0e7 / (steps * model.joint_d_x * 8))))
    tasks = [(s, min(chunk, M - s)) for s in range(0, M, chunk)]
    workers = worker_count()
    out = np.empty(M)
    if workers == 1 or len(tasks) == 1:
        for s0, c in tasks:
            out[s0 : s0 + c] = _chunk_costs(model, engine, bound, dt, steps, seed, s0 + start, c)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {
                pool.submit(
                    _chunk_costs, model, engine, bound, dt, steps, seed, s0 + start, c
                ): (s0, c)
                for s0, c in tasks
            }
            for fut, (s0, c) in futs.items():
                out[s0 : s0 + c] = fut.result()
    return out


def risk_estimate_from_costs(costs: np.ndarray, lam: float) -> tuple[float, float]:
    """Risk-sensitive point estimate and delta-method standard error.

    lam > 0: (1/lam) log mean(exp(lam J)) with max-subtraction; the standard
    error propagates the exponential-moment variance through the logarithm.
    lam = 0: sample mean and its standard error.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.size < 2:
        raise ValueError("need at least two replicates")
    if not np.all(np.isfinite(costs)):
        raise ValueError(
            "diverged or overflowing replicates present; reduce the risk factor, "
            "the horizon, or the step size"
        )
    M = costs.size
    if lam == 0.0:
        return float(np.mean(costs)), float(np.std(costs, ddof=1) / np.sqrt(M))
    a = lam * costs
    amax = float(np.max(a))
    y = np.exp(a - amax)
    m1 = float(np.mean(y))
    if m1 == 0.0 or not np.isfinite(m1):
        raise ValueError(
            "exponential moment overflowed or vanished; use a smaller risk factor "
            "or a shorter horizon"
        )
    est = (amax + np.log(m1)) / lam
    stderr = float(np.std(y, ddof=1) / (np.sqrt(M) * abs(lam) * m1))
    return float(est), stderr


def _influence(costs: np.ndarray, lam: float) -> np.ndarray:
    """Per-replicate linearization of the risk estimate (for paired stderr)."""
    if lam == 0.0:
        return costs - np.mean(costs)
    a = lam * costs
    amax = float(np.max(a))
    y = np.exp(a - amax)
    m1 = float(np.mean(y))
    return (y - m1) / (lam * m1)


def estimate_risk_sensitive_cost(
    model: TeamModel, strategy, M: int, dt: float, seed: int
) -> tuple[float, float]:
    """Monte Carlo estimate of the risk-sensitive team cost and its stderr.

    Requires M >= 100 replicates and a nonnegative risk factor. For a zero
    risk factor this is the plain sample mean of the weighted cost.
    """
    if M < 100:
        raise ValueError("need at least 100 replicates")
    lam = model.risk_factor
    if lam < 0:
        raise ValueError("risk-seeking estimation is not supported")
    costs = sample_costs(model, strategy, M, dt, seed)
    return risk_estimate_from_costs(costs, lam)


# -- centralized oracle --------------------------------------------------------------


def centralized_oracle_gains(model: TeamModel, grid: np.ndarray) -> np.ndarray:
    """Joint risk-sensitive feedback path on the brute-force joint system.

    Backward fourth-order sweep of the joint matrix Riccati flow whose
    quadratic coefficient carries the full joint noise covariance scaled by
    twice the risk factor; returns gains (len(grid), joint_d_u, joint_d_x).
    """
    grid = np.asarray(grid, dtype=float)
    lam = model.risk_factor
    constant = model.is_time_invariant()
    cache: dict = {}

    def coeff(t: float):
        key = 0.0 if constant else round(float(t), 12)
        hit = cache.get(key)
        if hit is None:
            cm = assemble_centralized(model, t)
            Sigma = cm.C @ cm.C.T
            hamil = cm.B @ np.linalg.solve(cm.R, cm.B.T) - 2.0 * lam * Sigma
            hit = (cm.A, cm.B, cm.Q, cm.R, hamil)
            cache[key] = hit
        return hit

    K = len(grid) - 1
    N_x, N_u = model.joint_d_x, model.joint_d_u
    gains = np.empty((K + 1, N_u, N_x))
    P = np.array(assemble_centralized(model, model.horizon, terminal=True).Q)

    def dP(t, P):
        A, _, Q, _, hamil = coeff(t)
        return -(Q + P @ A + A.T @ P - P @ hamil @ P)

    def gain_at(t, P):
        _, B, _, R, _ = coeff(t)
        return -np.linalg.solve(R, B.T @ P)

    gains[K] = gain_at(grid[K], P)
    for k in range(K, 0, -1):
        t1 = grid[k]
        h = t1 - grid[k - 1]
        k1 = dP(t1, P)
        k2 = dP(t1 - 0.5 * h, P - 0.5 * h * k1)
        k3 = dP(t1 - 0.5 * h, P - 0.5 * h * k2)
        k4 = dP(t1 - h, P - h * k3)
        P = P - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        P = 0.5 * (P + P.T)
        if not np.all(np.isfinite(P)) or np.max(np.abs(P)) > ESCAPE_NORM:
            raise FiniteEscapeError(
                f"joint backward flow escaped at t={grid[k - 1]:.6g}; "
                "risk margin violated on the joint system"
            )
        gains[k - 1] = gain_at(grid[k - 1], P)
    return gains


# -- experiment tables ------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentReport:
    """Tabular result of a sweep experiment, JSON-serializable."""

    kind: str
    rows: tuple
    replicates: int
    seed: int
    dt: float
    risk_factor: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "replicates": self.replicates,
            "seed": self.seed,
            "dt": self.dt,
            "risk_factor": self.risk_factor,
            "rows": [dict(r) for r in self.rows],
        }


def _resize_all(model: TeamModel, n: int, only: frozenset | None = None) -> TeamModel:
    out = model
    for s in range(1, model.S + 1):
        if only is not None and s not in only:
            continue
        out = with_population_size(out, s, n)
    return out


def price_of_robustness(
    model: TeamModel,
    lam: float,
    M: int,
    seed: int,
    n_sweep,
    dt: float = 0.01,
) -> ExperimentReport:
    """Risk premium of the risk-aware design across population sizes.

    For each n in the sweep, every sub-population is resized to n agents
    (requires n-independent matrices and uniform influence factors), the
    lam-optimal strategy is synthesized, and the premium is the gap between
    the risk-sensitive cost at lam and the mean cost, both under that same
    strategy and common random numbers. Rows where the risk margin fails are
    flagged and skipped rather than computed.
    """
    if lam <= 0:
        raise ValueError("the premium is defined for a positive risk factor")
    rows = []
    for n in n_sweep:
        base = _resize_all(model, int(n))
        risky = dataclasses.replace(base, risk_factor=float(lam))
        report = validate_model(risky)
        margin_fail = [
            c for c in report.checks if c.name.startswith("risk_margin") and c.status == "fail"
        ]
        if margin_fail:
            rows.append(
                {
                    "n": int(n),
                    "ok": False,
                    "note": "; ".join(c.detail for c in margin_fail),
                }
            )
            continue
        steps = _steps_for(risky, dt)
        sol = solve_all(risky, time_grid(risky.horizon, steps))
        strat = DssStrategy(sol)
        costs = sample_costs(risky, strat, M, dt, seed)
        est, est_err = risk_estimate_from_costs(costs, lam)
        mean, mean_err = risk_estimate_from_costs(costs, 0.0)
        phi = _influence(costs, lam) - _influence(costs, 0.0)
        gap_err = float(np.std(phi, ddof=1) / np.sqrt(len(costs)))
        rows.append(
            {
                "n": int(n),
                "ok": True,
                "risk_estimate": est,
                "risk_stderr": est_err,
                "mean_cost": mean,
                "mean_stderr": mean_err,
                "premium": est - mean,
                "premium_stderr": gap_err,
            }
        )
    return ExperimentReport(
        kind="price_of_robustness",
        rows=tuple(rows),
        replicates=M,
        seed=seed,
        dt=dt,
        risk_factor=lam,
    )


def price_of_information(
    model: TeamModel,
    observed,
    filter_kind: str,
    n_star_sweep,
    M: int,
    seed: int,
    dt: float = 0.01,
) -> ExperimentReport:
    """Cost gap between the filter-based and the full-sharing strategies.

    For each n* in the sweep the unobserved sub-populations are resized to
    n*, the full-sharing optimum and the requested filter strategies are
    simulated under common random numbers, and the gap in the model's
    objective (risk-sensitive when lam > 0, mean otherwise) is tabulated with
    a paired standard error. filter_kind is "finite", "infinite", or "both".
    """
    kinds = ("finite", "infinite") if filter_kind == "both" else (filter_kind,)
    for k in kinds:
        if k not in ("finite", "infinite"):
            raise ValueError("filter_kind must be 'finite', 'infinite', or 'both'")
    observed = frozenset(int(s) for s in observed)
    lam = model.risk_factor
    unobserved = frozenset(range(1, model.S + 1)) - observed
    rows = []
    for n_star in n_star_sweep:
        sized = _resize_all(model, int(n_star), only=unobserved)
        steps = _steps_for(sized, dt)
        grid = time_grid(sized.horizon, steps)
        sol = solve_all(sized, grid)
        dss = DssStrategy(sol)
        costs_star = sample_costs(sized, dss, M, dt, seed)
        est_star, err_star = risk_estimate_from_costs(costs_star, lam)
        for k in kinds:
            if k == "finite":
                strat = PdssStrategy(sol, observed, "finite")
            else:
                # with full observation the limit model equals the original,
                # so both kinds collapse to the full-sharing strategy exactly
                limit = infinite_population_limit(sized, observed)
                sol_inf = solve_all(limit, grid)
                strat = PdssStrategy(sol_inf, observed, "infinite")
            costs_hat = sample_costs(sized, strat, M, dt, seed)
            est_hat, err_hat = risk_estimate_from_costs(costs_hat, lam)
            phi = _influence(costs_hat, lam) - _influence(costs_star, lam)
            gap_err = float(np.std(phi, ddof=1) / np.sqrt(len(phi)))
            rows.append(
                {
                    "n_star": int(n_star),
                    "filter": k,
                    "ok": True,
                    "cost_filter": est_hat,
                    "stderr_filter": err_hat,
                    "cost_full": est_star,
                    "stderr_full": err_star,
                    "gap": est_hat - est_star,
                    "gap_stderr": gap_err,
                }
            )
    return ExperimentReport(
        kind="price_of_information",
        rows=tuple(rows),
        replicates=M,
        seed=seed,
        dt=dt,
        risk_factor=lam,
    )


# -- delimited output ---------------------------------------------------------------------


def write_trajectory_csv(path, trajectory: Trajectory) -> None:
    """Write agent rows and deep-state rows to one delimited file.

    Agent rows: kind=agent, t, s, idx=i, x[...], u[...]. Deep rows:
    kind=deep, t, s, idx=j, x[...] holding the deep state, empty action
    columns. Column counts are padded to the largest dimensions present.
    """
    model = trajectory.model
    dmax = max(sp.d_x for sp in model.sub_populations)
    umax = max(sp.d_u for sp in model.sub_populations)
    header = (
        ["kind", "t", "s", "idx"]
        + [f"x{j}" for j in range(dmax)]
        + [f"u{j}" for j in range(umax)]
    )

    def fmt(v: float) -> str:
        return format(float(v), ".17g")

    lines = [",".join(header)]
    for k, t in enumerate(trajectory.times):
        for s, sp in enumerate(model.sub_populations, start=1):
            for i in range(sp.n):
                x = trajectory.states[k, model.joint_x_slice(s, i)]
                u = trajectory.actions[k, model.joint_u_slice(s, i)]
                cells = ["agent", fmt(t), str(s), str(i)]
                cells += [fmt(v) for v in x] + [""] * (dmax - sp.d_x)
                cells += [fmt(v) for v in u] + [""] * (umax - sp.d_u)
                lines.append(",".join(cells))
        for s, sp in enumerate(model.sub_populations, start=1):
            for j in range(sp.f):
                xb = trajectory.deep[k, model.deep_x_slice(s, j)]
                cells = ["deep", fmt(t), str(s), str(j)]
                cells += [fmt(v) for v in xb] + [""] * (dmax - sp.d_x)
                cells += [""] * umax
                lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
