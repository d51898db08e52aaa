"""Backward sweeps for the low-dimensional deep Riccati equation.

The optimal strategies of a structured team are built from two families
of backward matrix equations: one local d_x(s)-dimensional Riccati flow per
sub-population (acting on the residual coordinates of the gauge split) and
one deep-level flow on the stacked deep state. For a risk factor lambda the
quadratic coefficient of both flows gains a noise correction term, so the
usual LQ difference B R^{-1} B^T is replaced by

    local:  B R^{-1} B^T - 2 lambda (mu/n) C C^T
    deep:   B_dl R_dl^{-1} B_dl^T - 2 lambda Sigma_dl

Tracking signals add linear costate equations and scalar value constants on
top; all of them integrate jointly in a single fourth-order backward pass.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from deeplq.model import (
    TeamModel,
    assemble_population_matrices,
    deep_tracking_joint,
    gauge_decompose,
    tracking_residual,
    validate_model,
)

__all__ = [
    "DeepRiccatiSolution",
    "WeaklyCoupledSolution",
    "StationarySolution",
    "ValueConstants",
    "FiniteEscapeError",
    "time_grid",
    "solve_deep_riccati",
    "solve_correction_terms",
    "solve_all",
    "is_weakly_coupled",
    "solve_weakly_coupled",
    "solve_algebraic",
    "compute_value_constants",
]

ESCAPE_NORM = 1e12


class FiniteEscapeError(RuntimeError):
    """Raised when a backward Riccati flow leaves the trust region."""


def time_grid(horizon: float, steps: int = 2000) -> np.ndarray:
    """Uniform solver grid with the given number of backward steps."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if steps < 1:
        raise ValueError("need at least one step")
    return np.linspace(0.0, horizon, steps + 1)


@dataclass(frozen=True)
class DeepRiccatiSolution:
    """Grid-sampled solution of the deep Riccati system.

    p_local[s] and gain_local[s] hold the residual-coordinate Riccati matrix
    and feedback gain of sub-population s (0-based tuple index), sampled on
    grid. p_deep and gain_deep are the deep-level counterparts; gain_deep row
    blocks follow the deep-action stacking order.

    Correction fields (present once solve_correction_terms has run) carry the
    tracking-induced affine terms: costate_* are the linear value-function
    coefficients, drift_* the feedforward actions derived from them.

    Value fields (present once compute_value_constants has run) carry the
    per-unit noise log-factors and the squared-tracking offsets entering the
    optimal risk-sensitive cost.
    """

    model: TeamModel
    grid: np.ndarray
    p_local: tuple
    p_deep: np.ndarray
    gain_local: tuple
    gain_deep: np.ndarray
    beta_weighted: bool = False
    costate_local: tuple | None = None
    costate_deep: np.ndarray | None = None
    drift_local: tuple | None = None
    drift_deep: np.ndarray | None = None
    value_log_local: tuple | None = None
    value_log_deep: np.ndarray | None = None
    value_offset_local: tuple | None = None
    value_offset_deep: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return len(self.grid) - 1

    def index_at(self, t: float) -> int:
        """Grid index of time t (must lie on the grid up to rounding)."""
        h = self.grid[1] - self.grid[0]
        k = int(round(t / h))
        if not (0 <= k <= self.steps) or abs(self.grid[k] - t) > 1e-9 * max(1.0, self.grid[-1]):
            raise ValueError(f"t={t} is not on the solver grid")
        return k

    def gain_deep_rows(self, s: int) -> np.ndarray:
        """Rows of the deep gain feeding sub-population s (1-based), all times."""
        sl = self.model.deep_u_slice(s)
        return self.gain_deep[:, sl, :]

    def gain_deep_feature(self, s: int, j: int) -> np.ndarray:
        """Rows of the deep gain for feature j (0-based) of sub-population s."""
        sl = self.model.deep_u_slice(s, j)
        return self.gain_deep[:, sl, :]

    def drift_deep_feature(self, s: int, j: int) -> np.ndarray:
        if self.drift_deep is None:
            raise ValueError("correction terms have not been solved")
        sl = self.model.deep_u_slice(s, j)
        return self.drift_deep[:, sl]

    @property
    def has_corrections(self) -> bool:
        return self.costate_deep is not None


@dataclass(frozen=True)
class ValueConstants:
    """Constant pieces of the optimal risk-sensitive cost.

    value_log_local[s] is the per-unit noise log-factor of sub-population s;
    the cost uses it with the effective residual multiplicity n(s) - f(s)
    (residual coordinates lose one noise direction per feature, and a lone
    agent with one feature has no residual noise at all). value_offset_local
    holds the per-agent squared-tracking offsets, zero at the horizon; the
    deep fields are the aggregate counterparts. value is the assembled
    optimal cost for the model's deterministic initial states, including the
    terminal tracking penalties.
    """

    value_log_local: tuple
    value_log_deep: np.ndarray
    value_offset_local: tuple
    value_offset_deep: np.ndarray
    value: float


def _risk_margin_or_raise(model: TeamModel) -> None:
    lam = model.risk_factor
    if lam <= 0:
        return
    report = validate_model(model, tol_orth=np.inf)
    bad = [c for c in report.checks if c.name.startswith("risk_margin") and c.status == "fail"]
    if bad:
        raise ValueError(
            "risk margin violated, backward sweep would escape in finite time: "
            + "; ".join(f"{c.name}: {c.detail}" for c in bad)
        )


class _Coefficients:
    """Time-indexed coefficient lookup with caching for constant models."""

    def __init__(self, model: TeamModel, beta_weighted: bool):
        self.model = model
        self.beta_weighted = beta_weighted
        self._constant = model.is_time_invariant()
        self._cache: dict = {}

    def at(self, t: float):
        key = 0.0 if self._constant else round(float(t), 12)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        model = self.model
        lam = model.risk_factor
        pop = assemble_population_matrices(model, t, beta_weighted=self.beta_weighted)
        local = []
        for sp in model.sub_populations:
            A = sp.A.at(t)
            B = sp.B.at(t)
            Q = sp.Q.at(t)
            R = sp.R.at(t)
            hamil = B @ np.linalg.solve(R, B.T) - 2.0 * lam * (sp.mu / sp.n) * sp.noise_cov(t)
            local.append((A, B, Q, R, hamil))
        deep_hamil = pop.B @ np.linalg.solve(pop.R, pop.B.T) - 2.0 * lam * pop.Sigma
        entry = (pop, local, deep_hamil)
        self._cache[key] = entry
        return entry

    def terminal(self):
        """Terminal state weights: the deep-level assembly and per-population Q."""
        model = self.model
        pop = assemble_population_matrices(
            model, model.horizon, beta_weighted=self.beta_weighted, terminal=True
        )
        local_q = [sp.terminal_Q(model.horizon) for sp in model.sub_populations]
        return pop, local_q


def _sym(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def _tracking_groups(sp) -> tuple[np.ndarray, np.ndarray]:
    """Group agents whose costates coincide.

    Two agents share a costate when their tracking signal, influence row, and
    effort weight agree, so the linear backward flows only need one row per
    group. Returns (representatives, inverse) with residuals[representatives]
    driving the flow and solution rows expanded through inverse.
    """
    if sp.tracking is None:
        return np.zeros(1, dtype=int), np.zeros(sp.n, dtype=int)
    vals = sp.tracking.values
    per_agent = (
        vals.reshape(sp.n, -1)
        if sp.tracking.is_constant
        else np.moveaxis(vals, 1, 0).reshape(sp.n, -1)
    )
    key = np.hstack([per_agent, sp.alpha, sp.beta_or_ones()[:, None]])
    _, reps, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return reps, inv


def _integrate_backward(
    model: TeamModel,
    grid: np.ndarray,
    beta_weighted: bool,
    with_corrections: bool,
    with_values: bool,
):
    """Single RK4 backward pass over all requested components.

    Returns dict of grid-sampled arrays. Components that are not requested
    are skipped entirely, so a plain Riccati solve never touches tracking
    data; requesting more components never changes the floating-point path
    of the Riccati part because its stages do not depend on the others.
    """
    lam = model.risk_factor
    coeffs = _Coefficients(model, beta_weighted)
    S = model.S
    K = len(grid) - 1
    T = grid[-1]
    D = model.deep_d_x
    want_xi = with_corrections or with_values
    # one costate row per group of agents with identical tracking drive
    groups = [_tracking_groups(sp) for sp in model.sub_populations] if want_xi else None

    p_loc = [np.empty((K + 1, sp.d_x, sp.d_x)) for sp in model.sub_populations]
    p_deep = np.empty((K + 1, D, D))
    xi_loc = [np.empty((K + 1, sp.n, sp.d_x)) for sp in model.sub_populations]
    xi_deep = np.empty((K + 1, D))
    logeta_loc = np.empty((K + 1, S))
    logeta_deep = np.empty(K + 1)
    off_loc = [np.empty((K + 1, sp.n)) for sp in model.sub_populations]
    off_deep = np.empty(K + 1)

    popQT, localQT = coeffs.terminal()
    state_p = [np.array(localQT[s]) for s in range(S)]  # terminal P = terminal Q
    state_pd = np.array(popQT.Q)
    for s in range(S):
        p_loc[s][K] = state_p[s]
    p_deep[K] = state_pd

    state_xi = state_xid = None
    if want_xi:
        state_xi = []
        for s, sp in enumerate(model.sub_populations):
            delta_r, _ = tracking_residual(sp, T)
            # terminal costate: -Q_T delta_r, one row per group
            state_xi.append(-delta_r[groups[s][0]] @ localQT[s].T)
        state_xid = -popQT.Q_track @ deep_tracking_joint(model, T)
    if with_corrections:
        for s in range(S):
            xi_loc[s][K] = state_xi[s][groups[s][1]]
        xi_deep[K] = state_xid
    if with_values:
        state_le = np.zeros(S)
        state_led = 0.0
        state_off = [np.zeros(len(groups[s][0])) for s in range(S)]
        state_offd = 0.0
        logeta_loc[K] = state_le
        logeta_deep[K] = state_led
        for s in range(S):
            off_loc[s][K] = state_off[s][groups[s][1]]
        off_deep[K] = state_offd

    def rhs(t, P, Pd, Xi=None, Xid=None):
        """Time derivatives (forward-time convention) of all components."""
        pop, local, deep_hamil = coeffs.at(t)
        dP, dXi, dLe, dOff = [], [], [], []
        for s in range(S):
            A, B, Q, R, hamil = local[s]
            Ps = P[s]
            dP.append(-(Q + Ps @ A + A.T @ Ps - Ps @ hamil @ Ps))
            if Xi is not None or with_values:
                sp = model.sub_populations[s]
                delta_r = tracking_residual(sp, t)[0][groups[s][0]]
            if Xi is not None:
                closed = (A - hamil @ Ps).T
                dXi.append(-(Xi[s] @ closed.T - delta_r @ Q.T))
            if with_values:
                dLe.append(-lam * (sp.mu / sp.n) * float(np.trace(Ps @ sp.noise_cov(t))))
                track = np.einsum("id,de,ie->i", delta_r, Q, delta_r)
                quad = np.einsum("id,de,ie->i", Xi[s], hamil, Xi[s])
                dOff.append(-(track - quad))
        dPd = -(pop.Q + Pd @ pop.A + pop.A.T @ Pd - Pd @ deep_hamil @ Pd)
        dXid = None
        dLed = dOffd = None
        if Xid is not None:
            rbar = deep_tracking_joint(model, t)
            dXid = -((pop.A - deep_hamil @ Pd).T @ Xid - pop.Q_track @ rbar)
            if with_values:
                dLed = -lam * float(np.trace(Pd @ pop.Sigma))
                dOffd = -(float(rbar @ pop.Q_track @ rbar) - float(Xid @ deep_hamil @ Xid))
        return dP, dPd, dXi, dXid, dLe, dLed, dOff, dOffd

    for k in range(K, 0, -1):
        t1 = grid[k]
        h = grid[k] - grid[k - 1]

        def stage(frac, Pst, Pdst, Xist, Xidst):
            return rhs(
                t1 - frac * h,
                Pst,
                Pdst,
                Xist if want_xi else None,
                Xidst if want_xi else None,
            )

        P1, Pd1 = state_p, state_pd
        Xi1, Xid1 = (state_xi, state_xid) if want_xi else (None, None)
        k1 = stage(0.0, P1, Pd1, Xi1, Xid1)
        P2 = [P1[s] - 0.5 * h * k1[0][s] for s in range(S)]
        Pd2 = Pd1 - 0.5 * h * k1[1]
        Xi2 = [Xi1[s] - 0.5 * h * k1[2][s] for s in range(S)] if want_xi else None
        Xid2 = Xid1 - 0.5 * h * k1[3] if want_xi else None
        k2 = stage(0.5, P2, Pd2, Xi2, Xid2)
        P3 = [P1[s] - 0.5 * h * k2[0][s] for s in range(S)]
        Pd3 = Pd1 - 0.5 * h * k2[1]
        Xi3 = [Xi1[s] - 0.5 * h * k2[2][s] for s in range(S)] if want_xi else None
        Xid3 = Xid1 - 0.5 * h * k2[3] if want_xi else None
        k3 = stage(0.5, P3, Pd3, Xi3, Xid3)
        P4 = [P1[s] - h * k3[0][s] for s in range(S)]
        Pd4 = Pd1 - h * k3[1]
        Xi4 = [Xi1[s] - h * k3[2][s] for s in range(S)] if want_xi else None
        Xid4 = Xid1 - h * k3[3] if want_xi else None
        k4 = stage(1.0, P4, Pd4, Xi4, Xid4)

        state_p = [
            _sym(P1[s] - (h / 6.0) * (k1[0][s] + 2 * k2[0][s] + 2 * k3[0][s] + k4[0][s]))
            for s in range(S)
        ]
        state_pd = _sym(Pd1 - (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))
        if want_xi:
            state_xi = [
                Xi1[s] - (h / 6.0) * (k1[2][s] + 2 * k2[2][s] + 2 * k3[2][s] + k4[2][s])
                for s in range(S)
            ]
            state_xid = Xid1 - (h / 6.0) * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        if with_values:
            state_le = state_le - (h / 6.0) * (
                np.array(k1[4]) + 2 * np.array(k2[4]) + 2 * np.array(k3[4]) + np.array(k4[4])
            )
            state_led = state_led - (h / 6.0) * (k1[5] + 2 * k2[5] + 2 * k3[5] + k4[5])
            state_off = [
                state_off[s] - (h / 6.0) * (k1[6][s] + 2 * k2[6][s] + 2 * k3[6][s] + k4[6][s])
                for s in range(S)
            ]
            state_offd = state_offd - (h / 6.0) * (k1[7] + 2 * k2[7] + 2 * k3[7] + k4[7])

        norm = max(float(np.max(np.abs(state_pd))), max(float(np.max(np.abs(p))) for p in state_p))
        if not np.isfinite(norm) or norm > ESCAPE_NORM:
            raise FiniteEscapeError(
                f"backward Riccati flow escaped at t={grid[k - 1]:.6g} (norm {norm:.3e}); "
                "the risk margin condition is violated or the horizon is too long"
            )

        for s in range(S):
            p_loc[s][k - 1] = state_p[s]
        p_deep[k - 1] = state_pd
        if with_corrections:
            for s in range(S):
                xi_loc[s][k - 1] = state_xi[s][groups[s][1]]
            xi_deep[k - 1] = state_xid
        if with_values:
            logeta_loc[k - 1] = state_le
            logeta_deep[k - 1] = state_led
            for s in range(S):
                off_loc[s][k - 1] = state_off[s][groups[s][1]]
            off_deep[k - 1] = state_offd

    out = {"p_local": p_loc, "p_deep": p_deep}
    if with_corrections:
        out["costate_local"] = xi_loc
        out["costate_deep"] = xi_deep
    if with_values:
        out["value_log_local"] = logeta_loc
        out["value_log_deep"] = logeta_deep
        out["value_offset_local"] = off_loc
        out["value_offset_deep"] = off_deep
    return out


def _gains_from_p(model, grid, beta_weighted, p_loc, p_deep):
    coeffs = _Coefficients(model, beta_weighted)
    K = len(grid) - 1
    gain_loc = [np.empty((K + 1, sp.d_u, sp.d_x)) for sp in model.sub_populations]
    gain_deep = np.empty((K + 1, model.deep_d_u, model.deep_d_x))
    for k in range(K + 1):
        pop, local, _ = coeffs.at(grid[k])
        for s, sp in enumerate(model.sub_populations):
            _, B, _, R, _ = local[s]
            gain_loc[s][k] = -np.linalg.solve(R, B.T @ p_loc[s][k])
        gain_deep[k] = -np.linalg.solve(pop.R, pop.B.T @ p_deep[k])
    return gain_loc, gain_deep


def _drifts_from_xi(model, grid, beta_weighted, xi_loc, xi_deep):
    coeffs = _Coefficients(model, beta_weighted)
    K = len(grid) - 1
    drift_loc = [np.empty((K + 1, sp.n, sp.d_u)) for sp in model.sub_populations]
    drift_deep = np.empty((K + 1, model.deep_d_u))
    for k in range(K + 1):
        pop, local, _ = coeffs.at(grid[k])
        for s, sp in enumerate(model.sub_populations):
            _, B, _, R, _ = local[s]
            drift_loc[s][k] = -np.linalg.solve(R, B.T @ xi_loc[s][k].T).T
        drift_deep[k] = -np.linalg.solve(pop.R, pop.B.T @ xi_deep[k])
    return drift_loc, drift_deep


def _beta_mode(model: TeamModel) -> bool:
    has_beta = any(sp.beta is not None for sp in model.sub_populations)
    if not has_beta:
        return False
    if model.risk_factor != 0.0:
        raise ValueError("effort weights are only supported for the mean-cost problem")
    if any(sp.Abar or sp.Bbar for sp in model.sub_populations):
        raise ValueError("effort weights require dynamically decoupled sub-populations")
    return True


def solve_deep_riccati(model: TeamModel, grid: np.ndarray | None = None) -> DeepRiccatiSolution:
    """Solve the local and deep Riccati flows and derive the feedback gains.

    Args:
        model: the team model; for a positive risk factor the risk margin
            condition is checked up front and violations are refused.
        grid: ascending solver grid from 0 to the horizon; default is a
            uniform grid with step horizon / 2000.

    Returns:
        DeepRiccatiSolution without correction or value fields.

    Raises:
        ValueError: risk margin violated, or invalid grid.
        FiniteEscapeError: the flow left the trust region anyway.
    """
    if grid is None:
        grid = time_grid(model.horizon)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or abs(grid[0]) > 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be ascending and start at 0")
    if abs(grid[-1] - model.horizon) > 1e-9 * max(1.0, model.horizon):
        raise ValueError("grid must end at the model horizon")
    beta_weighted = _beta_mode(model)
    _risk_margin_or_raise(model)
    parts = _integrate_backward(model, grid, beta_weighted, False, False)
    gain_loc, gain_deep = _gains_from_p(
        model, grid, beta_weighted, parts["p_local"], parts["p_deep"]
    )
    return DeepRiccatiSolution(
        model=model,
        grid=grid,
        p_local=tuple(parts["p_local"]),
        p_deep=parts["p_deep"],
        gain_local=tuple(gain_loc),
        gain_deep=gain_deep,
        beta_weighted=beta_weighted,
    )


def solve_correction_terms(
    model: TeamModel, solution: DeepRiccatiSolution, tracking=None
) -> DeepRiccatiSolution:
    """Add the tracking-induced costates and feedforward drifts to a solution.

    The costate of agent i follows the closed-loop-transposed linear flow
    forced by the residual tracking signal, with terminal value
    -Q_terminal delta_r(T); the deep costate is the aggregate counterpart
    forced by the mu-weighted deep tracking signal. Agents with identical
    tracking signals share one costate row. Drifts are -R^{-1} B^T applied to
    the costates. Models without tracking get identically zero corrections.

    Args:
        tracking: optional per-sub-population replacement signals (sequence of
            arrays (n, d_x), schedules, or None entries) overriding the
            model's own tracking for this computation.
    """
    if solution.model is not model:
        raise ValueError("solution was produced for a different model")
    source = model
    if tracking is not None:
        if len(tracking) != model.S:
            raise ValueError("need one tracking entry per sub-population")
        subs = tuple(
            dataclasses.replace(sp, tracking=tr)
            for sp, tr in zip(model.sub_populations, tracking)
        )
        source = dataclasses.replace(model, sub_populations=subs)
    parts = _integrate_backward(source, solution.grid, solution.beta_weighted, True, False)
    drift_loc, drift_deep = _drifts_from_xi(
        model, solution.grid, solution.beta_weighted, parts["costate_local"], parts["costate_deep"]
    )
    return dataclasses.replace(
        solution,
        costate_local=tuple(parts["costate_local"]),
        costate_deep=parts["costate_deep"],
        drift_local=tuple(drift_loc),
        drift_deep=drift_deep,
    )


def solve_all(model: TeamModel, grid: np.ndarray | None = None) -> DeepRiccatiSolution:
    """Convenience wrapper: Riccati flows plus correction terms in one call."""
    return solve_correction_terms(model, solve_deep_riccati(model, grid))


def compute_value_constants(model: TeamModel, solution: DeepRiccatiSolution) -> ValueConstants:
    """Evaluate the analytic optimal risk-sensitive cost and its constants.

    The optimal cost for deterministic initial states x_0 decomposes as

        (1/lambda) [ log_deep + sum_s (n(s) - f(s)) log_local(s) ]
        + |deep_x0|^2_{P_deep} + 2 costate_deep . deep_x0 + offset_deep
        + sum_s (mu/n) sum_i ( |delta_i|^2_{P(s)} + 2 costate_i . delta_i
                               + offset_i )
        + terminal tracking quadratics

    where log_local(s) accumulates lambda (mu/n) tr(P(s) CC^T) backward and
    log_deep accumulates lambda tr(P_deep Sigma_deep). The residual noise of
    a sub-population spans n(s) - f(s) directions (the features are pinned by
    the gauge identity), hence the multiplicity in front of log_local. The
    offsets are zero at the horizon, so the terminal tracking penalties
    |delta_r(T)|^2 and |deep_r(T)|^2 under the terminal weights enter the
    total as explicit constants.

    Raises:
        ValueError: risk factor is zero (the mean-cost value is not a single
            constant; estimate it by simulation instead) or the model has
            non-deterministic initial states.
    """
    if model.risk_factor == 0.0:
        raise ValueError("value constants require a nonzero risk factor")
    for s, sp in enumerate(model.sub_populations, start=1):
        if not sp.init_or_zero().is_deterministic:
            raise ValueError(f"sub-population {s}: analytic value needs deterministic init")
    if solution.model is not model:
        raise ValueError("solution was produced for a different model")
    parts = _integrate_backward(model, solution.grid, solution.beta_weighted, True, True)
    lam = model.risk_factor

    value = float(parts["value_log_deep"][0]) / lam
    for s, sp in enumerate(model.sub_populations):
        value += (sp.n - sp.f) * float(parts["value_log_local"][s][0]) / lam

    deep_parts = []
    for s, sp in enumerate(model.sub_populations, start=1):
        x0 = sp.init_or_zero().mean
        delta, deep = gauge_decompose(x0, sp.alpha)
        deep_parts.append(deep.reshape(-1))
        P0 = parts["p_local"][s - 1][0]
        xi0 = parts["costate_local"][s - 1][0]
        quad = np.einsum("id,de,ie->i", delta, P0, delta)
        lin = 2.0 * np.einsum("id,id->i", xi0, delta)
        value += (sp.mu / sp.n) * float(np.sum(quad + lin + parts["value_offset_local"][s - 1][0]))
    deep_x0 = np.concatenate(deep_parts)
    value += float(deep_x0 @ parts["p_deep"][0] @ deep_x0)
    value += 2.0 * float(parts["costate_deep"][0] @ deep_x0)
    value += float(parts["value_offset_deep"][0])

    # terminal tracking penalties (the offsets vanish at the horizon)
    T = model.horizon
    pop_T = assemble_population_matrices(
        model, T, beta_weighted=solution.beta_weighted, terminal=True
    )
    for sp in model.sub_populations:
        delta_r_T, _ = tracking_residual(sp, T)
        q_T = sp.terminal_Q(T)
        value += (sp.mu / sp.n) * float(np.einsum("id,de,ie->", delta_r_T, q_T, delta_r_T))
    rbar_T = deep_tracking_joint(model, T)
    value += float(rbar_T @ pop_T.Q_track @ rbar_T)

    return ValueConstants(
        value_log_local=tuple(parts["value_log_local"][s] for s in range(model.S)),
        value_log_deep=parts["value_log_deep"],
        value_offset_local=tuple(parts["value_offset_local"]),
        value_offset_deep=parts["value_offset_deep"],
        value=value,
    )


# -- weakly coupled decomposition ---------------------------------------------


@dataclass(frozen=True)
class WeaklyCoupledSolution:
    """Per-feature Riccati solutions of a weakly coupled model.

    p_feature[s][j] solves the d_x(s)-dimensional flow with the coupled
    matrices A + Abar_j, B + Bbar_j, Q + Qbar_j, R + Rbar_j and the local
    noise correction; assemble() rebuilds the deep-level matrix as the
    mu(s)-weighted block diagonal, which equals the direct deep solve.
    """

    model: TeamModel
    grid: np.ndarray
    p_feature: tuple

    def assemble(self) -> np.ndarray:
        model = self.model
        K = len(self.grid) - 1
        out = np.zeros((K + 1, model.deep_d_x, model.deep_d_x))
        for s, sp in enumerate(model.sub_populations, start=1):
            for j in range(sp.f):
                sl = model.deep_x_slice(s, j)
                out[:, sl, sl] = sp.mu * self.p_feature[s - 1][j]
        return out


def is_weakly_coupled(model: TeamModel, tol: float = 0.0) -> tuple[bool, str]:
    """Check the structural conditions for the per-feature decomposition.

    Every coupling block must act only on the sub-population's own feature:
    Abar[j] (and Bbar[j]) may be nonzero only in the (s, j) column block, and
    Qbar (Rbar) only on its own per-feature diagonal blocks.
    """
    for s, sp in enumerate(model.sub_populations, start=1):
        for name, blocks, own_slice in (
            ("Abar", sp.Abar, model.deep_x_slice),
            ("Bbar", sp.Bbar, model.deep_u_slice),
        ):
            for j, blk in enumerate(blocks):
                vals = blk.values if blk.is_constant else blk.values
                arr = np.atleast_3d(vals) if not blk.is_constant else vals[None]
                for frame in arr:
                    masked = np.array(frame, copy=True)
                    masked[:, own_slice(s, j)] = 0.0
                    if np.max(np.abs(masked)) > tol:
                        return False, f"sub-population {s}: {name}[{j}] couples foreign blocks"
        for name, sched, own_slice in (
            ("Qbar", sp.Qbar, model.deep_x_slice),
            ("Rbar", sp.Rbar, model.deep_u_slice),
        ):
            if sched is None:
                continue
            arr = sched.values[None] if sched.is_constant else sched.values
            for frame in arr:
                masked = np.array(frame, copy=True)
                for j in range(sp.f):
                    masked[own_slice(s, j), own_slice(s, j)] = 0.0
                if np.max(np.abs(masked)) > tol:
                    return False, f"sub-population {s}: {name} couples foreign blocks"
    return True, "weakly coupled"


def solve_weakly_coupled(model: TeamModel, grid: np.ndarray | None = None) -> WeaklyCoupledSolution:
    """Solve each feature's coupled Riccati flow independently.

    Raises:
        ValueError: the model does not satisfy the weak-coupling structure.
    """
    ok, why = is_weakly_coupled(model)
    if not ok:
        raise ValueError(why)
    if grid is None:
        grid = time_grid(model.horizon)
    grid = np.asarray(grid, dtype=float)
    _risk_margin_or_raise(model)
    lam = model.risk_factor
    K = len(grid) - 1
    feats = []
    for s, sp in enumerate(model.sub_populations, start=1):
        per_feature = []
        for j in range(sp.f):
            xs = model.deep_x_slice(s, j)
            us = model.deep_u_slice(s, j)

            def coeff(t, j=j, xs=xs, us=us, sp=sp):
                A = sp.A.at(t) + (sp.Abar[j].at(t)[:, xs] if sp.Abar else 0.0)
                B = sp.B.at(t) + (sp.Bbar[j].at(t)[:, us] if sp.Bbar else 0.0)
                Q = sp.Q.at(t) + (sp.Qbar.at(t)[xs, xs] if sp.Qbar is not None else 0.0)
                R = sp.R.at(t) + (sp.Rbar.at(t)[us, us] if sp.Rbar is not None else 0.0)
                hamil = B @ np.linalg.solve(R, B.T) - 2.0 * lam * (sp.mu / sp.n) * sp.noise_cov(t)
                return A, Q, hamil

            out = np.empty((K + 1, sp.d_x, sp.d_x))
            qbar_T = sp.terminal_Qbar(model.horizon)
            P = np.array(
                sp.terminal_Q(model.horizon)
                + (qbar_T[xs, xs] if qbar_T is not None else 0.0)
            )
            out[K] = P
            for k in range(K, 0, -1):
                t1 = grid[k]
                h = t1 - grid[k - 1]

                def f(t, P):
                    A, Q, hamil = coeff(t)
                    return -(Q + P @ A + A.T @ P - P @ hamil @ P)

                k1 = f(t1, P)
                k2 = f(t1 - 0.5 * h, P - 0.5 * h * k1)
                k3 = f(t1 - 0.5 * h, P - 0.5 * h * k2)
                k4 = f(t1 - h, P - h * k3)
                P = _sym(P - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
                if not np.all(np.isfinite(P)) or np.max(np.abs(P)) > ESCAPE_NORM:
                    raise FiniteEscapeError(
                        f"feature flow escaped (sub-population {s}, feature {j})"
                    )
                out[k - 1] = P
            per_feature.append(out)
        feats.append(tuple(per_feature))
    return WeaklyCoupledSolution(model=model, grid=grid, p_feature=tuple(feats))


# -- stationary (infinite-horizon) solve --------------------------------------


@dataclass(frozen=True)
class StationarySolution:
    """Fixed point of the backward flows with stationarity diagnostics.

    closed_loop_deep is A_dl + B_dl gain_deep; hurwitz reports whether its
    spectrum lies strictly in the open left half plane (required for the
    limit filter to forget its initialization).
    """

    model: TeamModel
    p_local: tuple
    p_deep: np.ndarray
    gain_local: tuple
    gain_deep: np.ndarray
    closed_loop_deep: np.ndarray
    hurwitz: bool
    spectral_abscissa: float
    residual: float
    iterations: int
    warnings: tuple

    @property
    def converged(self) -> bool:
        return self.residual < 1e-10


def _rank(mat: np.ndarray) -> int:
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size == 0:
        return 0
    return int(np.sum(sv > max(mat.shape) * np.finfo(float).eps * sv[0]))


def _pbh_warnings(name: str, A: np.ndarray, B: np.ndarray, Qsqrt: np.ndarray) -> list[str]:
    """Stabilizability / detectability tests at the unstable eigenvalues."""
    out = []
    d = A.shape[0]
    for lam_eig in np.linalg.eigvals(A):
        if lam_eig.real < -1e-9:
            continue
        label = f"{lam_eig.real:.4g}{lam_eig.imag:+.4g}j" if lam_eig.imag else f"{lam_eig.real:.4g}"
        if _rank(np.hstack([A - lam_eig * np.eye(d), B])) < d:
            out.append(f"{name}: eigenvalue {label} is not stabilizable")
        if _rank(np.vstack([A - lam_eig * np.eye(d), Qsqrt])) < d:
            out.append(f"{name}: eigenvalue {label} is not detectable")
    return out


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(_sym(mat))
    w = np.clip(w, 0.0, None)
    return v @ np.diag(np.sqrt(w)) @ v.T


def solve_algebraic(
    model: TeamModel,
    tol: float = 1e-10,
    max_steps: int = 1_000_000,
    step: float | None = None,
) -> StationarySolution:
    """Find the stationary Riccati matrices by integrating to steady state.

    Marches the backward flows with a fixed step until the largest entry of
    every time derivative falls below tol, then derives stationary gains and
    the deep closed-loop Hurwitz flag. Requires a time-invariant model.

    Raises:
        ValueError: time-varying model, or risk margin violated.
        FiniteEscapeError: no bounded stationary point on the flow path.
    """
    if not model.is_time_invariant():
        raise ValueError("stationary solve requires a time-invariant model")
    _risk_margin_or_raise(model)
    beta_weighted = _beta_mode(model)
    coeffs = _Coefficients(model, beta_weighted)
    pop, local, deep_hamil = coeffs.at(0.0)
    S = model.S

    scale = max(
        [np.max(np.abs(local[s][0])) for s in range(S)]
        + [float(np.max(np.abs(pop.A))), 1.0]
    )
    if step is None:
        step = min(0.005, 0.2 / scale)

    P = [np.array(local[s][2]) for s in range(S)]
    Pd = np.array(pop.Q)

    def derivs(P, Pd):
        dP = []
        for s in range(S):
            A, B, Q, R, hamil = local[s]
            dP.append(-(Q + P[s] @ A + A.T @ P[s] - P[s] @ hamil @ P[s]))
        dPd = -(pop.Q + Pd @ pop.A + pop.A.T @ Pd - Pd @ deep_hamil @ Pd)
        return dP, dPd

    residual = np.inf
    iterations = 0
    for iterations in range(1, max_steps + 1):
        k1 = derivs(P, Pd)
        k2 = derivs(
            [P[s] - 0.5 * step * k1[0][s] for s in range(S)], Pd - 0.5 * step * k1[1]
        )
        k3 = derivs(
            [P[s] - 0.5 * step * k2[0][s] for s in range(S)], Pd - 0.5 * step * k2[1]
        )
        k4 = derivs([P[s] - step * k3[0][s] for s in range(S)], Pd - step * k3[1])
        P = [
            _sym(P[s] - (step / 6.0) * (k1[0][s] + 2 * k2[0][s] + 2 * k3[0][s] + k4[0][s]))
            for s in range(S)
        ]
        Pd = _sym(Pd - (step / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))
        norm = max(float(np.max(np.abs(Pd))), max(float(np.max(np.abs(p))) for p in P))
        if not np.isfinite(norm) or norm > ESCAPE_NORM:
            raise FiniteEscapeError("stationary flow escaped; no bounded fixed point found")
        dP, dPd = derivs(P, Pd)
        residual = max(
            float(np.max(np.abs(dPd))), max(float(np.max(np.abs(d))) for d in dP)
        )
        if residual < tol:
            break

    gain_loc = []
    for s in range(S):
        _, B, _, R, _ = local[s]
        gain_loc.append(-np.linalg.solve(R, B.T @ P[s]))
    gain_deep = -np.linalg.solve(pop.R, pop.B.T @ Pd)
    closed = pop.A + pop.B @ gain_deep
    eigs = np.linalg.eigvals(closed)
    abscissa = float(np.max(eigs.real))

    warnings: list[str] = []
    for s, sp in enumerate(model.sub_populations, start=1):
        A, B, Q, R, _ = local[s - 1]
        warnings += _pbh_warnings(f"sub-population {s}", A, B, _sqrt_psd(Q))
    warnings += _pbh_warnings("deep level", pop.A, pop.B, _sqrt_psd(pop.Q))
    if residual >= tol:
        warnings.append(f"stationarity residual {residual:.3e} above {tol:.0e} after cap")

    return StationarySolution(
        model=model,
        p_local=tuple(P),
        p_deep=Pd,
        gain_local=tuple(gain_loc),
        gain_deep=gain_deep,
        closed_loop_deep=closed,
        hurwitz=bool(abscissa < 0),
        spectral_abscissa=abscissa,
        residual=float(residual),
        iterations=iterations,
        warnings=tuple(warnings),
    )
