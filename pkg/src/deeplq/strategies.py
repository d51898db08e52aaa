"""Closed-loop control laws derived from the deep Riccati solution.

Every strategy here emits per-agent actions of the affine form

    u^i = theta(s) x^i + sum_j mix[i, j] (gain_deep^j(s) z - theta(s) z^j(s))
          + drift^i + sum_j mix[i, j] drift_deep^j(s)

where z is the stacked deep state (observed directly under full sharing,
estimated by a filter under partial sharing) and mix is the influence matrix
alpha, or alpha / beta for the effort-weighted variant. Gains are held
piecewise-constant between solver grid points (zero-order hold).

Strategies are two-stage: a strategy object holds the solution it needs and
is cheap to share; bind() precomputes the per-step matrices for a concrete
simulation grid and returns an immutable bound strategy whose estimator
state, when any, is threaded explicitly through start/actions/advance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from deeplq.deep_riccati import DeepRiccatiSolution, WeaklyCoupledSolution
from deeplq.model import (
    TeamModel,
    assemble_population_matrices,
    deep_extraction,
    deep_state,
)

__all__ = [
    "BoundStrategy",
    "DssStrategy",
    "CentralizedStrategy",
    "ZeroStrategy",
    "PdssStrategy",
    "NetworkExport",
    "dss_action",
    "dss_action_with_beta",
    "dss_action_weakly_coupled",
    "dss_joint_gain",
    "pdss_step_finite",
    "pdss_step_infinite",
    "export_network_weights",
    "forward_pass",
    "write_network_json",
    "read_network_json",
]


def hold_index(grid: np.ndarray, t: float) -> int:
    """Index of the grid point whose value is held at time t (zero-order hold)."""
    k = int(np.searchsorted(grid, t + 1e-12, side="right")) - 1
    return min(max(k, 0), len(grid) - 1)


def _mixing(sp, use_beta: bool, beta=None) -> np.ndarray:
    if not use_beta:
        return sp.alpha
    b = np.asarray(beta if beta is not None else sp.beta_or_ones(), dtype=float)
    if b.shape != (sp.n,):
        raise ValueError(f"beta must have shape ({sp.n},)")
    return sp.alpha / b[:, None]


def _require_decoupled_risk_neutral(model: TeamModel, what: str) -> None:
    if model.risk_factor != 0.0:
        raise ValueError(f"{what} requires the mean-cost problem (zero risk factor)")
    if any(sp.Abar or sp.Bbar for sp in model.sub_populations):
        raise ValueError(f"{what} requires dynamically decoupled sub-populations")


def _check_corrections(model: TeamModel, solution: DeepRiccatiSolution) -> None:
    has_tracking = any(sp.tracking is not None for sp in model.sub_populations)
    if has_tracking and not solution.has_corrections:
        raise ValueError(
            "model has tracking signals; run solve_correction_terms (or solve_all) first"
        )


# -- single-agent action laws --------------------------------------------------


def _agent_action(
    agent: tuple[int, int],
    t: float,
    x_i: np.ndarray,
    z: np.ndarray,
    solution: DeepRiccatiSolution,
    mix_row: np.ndarray,
) -> np.ndarray:
    i, s = agent
    model = solution.model
    sp = model.sub_populations[s - 1]
    k = hold_index(solution.grid, t)
    theta = solution.gain_local[s - 1][k]
    rows = solution.gain_deep[k][model.deep_u_slice(s)]
    u = theta @ np.asarray(x_i, dtype=float)
    z = np.asarray(z, dtype=float)
    for j in range(sp.f):
        block = rows[j * sp.d_u : (j + 1) * sp.d_u]
        own = z[model.deep_x_slice(s, j)]
        u = u + mix_row[j] * (block @ z - theta @ own)
    if solution.has_corrections:
        u = u + solution.drift_local[s - 1][k][i]
        dbar = solution.drift_deep[k][model.deep_u_slice(s)]
        for j in range(sp.f):
            u = u + mix_row[j] * dbar[j * sp.d_u : (j + 1) * sp.d_u]
    return u


def dss_action(
    agent: tuple[int, int],
    t: float,
    x_i: np.ndarray,
    deep_x: np.ndarray,
    solution: DeepRiccatiSolution,
) -> np.ndarray:
    """Optimal full-sharing action of one agent.

    Args:
        agent: (i, s) with i the 0-based agent index inside sub-population s
            (1-based).
        t: time; gains are held constant between solver grid points.
        x_i: the agent's own state, shape (d_x,).
        deep_x: stacked deep state of the whole team, shape (deep_d_x,).
        solution: deep Riccati solution for the model (with correction terms
            when the model has tracking signals).
    """
    i, s = agent
    model = solution.model
    _check_corrections(model, solution)
    sp = model.sub_populations[s - 1]
    return _agent_action(agent, t, x_i, deep_x, solution, sp.alpha[i])


def dss_action_with_beta(
    agent: tuple[int, int],
    t: float,
    x_i: np.ndarray,
    deep_x: np.ndarray,
    solution: DeepRiccatiSolution,
    beta: np.ndarray | None = None,
) -> np.ndarray:
    """Effort-weighted variant: alpha / beta replaces alpha in the mixing terms.

    Only valid for dynamically decoupled sub-populations at zero risk factor;
    the weighted problem does not reduce to the deep Riccati form otherwise.
    """
    i, s = agent
    model = solution.model
    _require_decoupled_risk_neutral(model, "the effort-weighted law")
    _check_corrections(model, solution)
    sp = model.sub_populations[s - 1]
    mix = _mixing(sp, True, beta)
    return _agent_action(agent, t, x_i, deep_x, solution, mix[i])


def dss_action_weakly_coupled(
    agent: tuple[int, int],
    t: float,
    x_i: np.ndarray,
    own_deep_x: np.ndarray,
    weakly: WeaklyCoupledSolution,
    solution: DeepRiccatiSolution,
) -> np.ndarray:
    """Reduced action law for weakly coupled models.

    Uses only the agent's own state and its own sub-population's deep states:

        u^i = theta(s) x^i + sum_j alpha[i, j] (theta_j(s) - theta(s)) xbar^j(s)
              + drifts

    with theta_j(s) = -(R + Rbar_j)^{-1} (B + Bbar_j)^T P_j(s) from the
    per-feature flows. The local gain theta and the drift terms come from the
    full solution; own_deep_x is the sub-population's own stacked deep state,
    shape (f(s) * d_x,).
    """
    i, s = agent
    model = weakly.model
    sp = model.sub_populations[s - 1]
    grid = weakly.grid
    k = hold_index(grid, t)
    tk = grid[k]
    B = sp.B.at(tk)
    R = sp.R.at(tk)
    theta = solution.gain_local[s - 1][hold_index(solution.grid, t)]
    u = theta @ np.asarray(x_i, dtype=float)
    own_deep_x = np.asarray(own_deep_x, dtype=float)
    for j in range(sp.f):
        us = model.deep_u_slice(s, j)
        Bj = B + (sp.Bbar[j].at(tk)[:, us] if sp.Bbar else 0.0)
        Rj = R + (sp.Rbar.at(tk)[us, us] if sp.Rbar is not None else 0.0)
        theta_j = -np.linalg.solve(Rj, Bj.T @ weakly.p_feature[s - 1][j][k])
        xbar_j = own_deep_x[j * sp.d_x : (j + 1) * sp.d_x]
        u = u + sp.alpha[i, j] * ((theta_j - theta) @ xbar_j)
    if solution.has_corrections:
        ks = hold_index(solution.grid, t)
        u = u + solution.drift_local[s - 1][ks][i]
        dbar = solution.drift_deep[ks][model.deep_u_slice(s)]
        for j in range(sp.f):
            u = u + sp.alpha[i, j] * dbar[j * sp.d_u : (j + 1) * sp.d_u]
    return u


# -- joint composition ----------------------------------------------------------


def _compose_steps(
    model: TeamModel,
    solution: DeepRiccatiSolution,
    indices: np.ndarray,
    use_beta: bool,
):
    """Per-step local gain, deep mixing, and drift of the stacked action.

    Returns (K_loc, M_mix, c) with shapes (K+1, joint_d_u, joint_d_x),
    (K+1, joint_d_u, deep_d_x), (K+1, joint_d_u): the stacked action is
    K_loc x + M_mix z + c.
    """
    K = len(indices)
    N_x, N_u, D = model.joint_d_x, model.joint_d_u, model.deep_d_x
    K_loc = np.zeros((K, N_u, N_x))
    M_mix = np.zeros((K, N_u, D))
    c = np.zeros((K, N_u))
    for s, sp in enumerate(model.sub_populations, start=1):
        theta = solution.gain_local[s - 1][indices]  # (K, d_u, d_x)
        rows = solution.gain_deep[indices][:, model.deep_u_slice(s), :]
        rows = rows.reshape(K, sp.f, sp.d_u, D)
        mix = _mixing(sp, use_beta)
        drift_l = solution.drift_local[s - 1][indices] if solution.has_corrections else None
        drift_d = (
            solution.drift_deep[indices][:, model.deep_u_slice(s)].reshape(K, sp.f, sp.d_u)
            if solution.has_corrections
            else None
        )
        for i in range(sp.n):
            us = model.joint_u_slice(s, i)
            xs = model.joint_x_slice(s, i)
            K_loc[:, us, xs] = theta
            M_mix[:, us, :] += np.einsum("j,kjud->kud", mix[i], rows)
            for j in range(sp.f):
                M_mix[:, us, model.deep_x_slice(s, j)] -= mix[i, j] * theta
            if drift_l is not None:
                c[:, us] = drift_l[:, i] + np.einsum("j,kju->ku", mix[i], drift_d)
    return K_loc, M_mix, c


def dss_joint_gain(
    model: TeamModel, solution: DeepRiccatiSolution, t: float
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked per-agent feedback at time t: action = gain @ joint_x + drift.

    The composed gain acts on the flat joint state of all agents; it is the
    object the centralized oracle gain is compared against.
    """
    k = hold_index(solution.grid, t)
    K_loc, M_mix, c = _compose_steps(model, solution, np.array([k]), False)
    E_x, _ = deep_extraction(model)
    return K_loc[0] + M_mix[0] @ E_x, c[0]


# -- batched strategies ----------------------------------------------------------


@dataclass(frozen=True)
class BoundStrategy:
    """Per-step affine maps of a strategy on a concrete simulation grid.

    actions(k, X, est) evaluates the stacked action for a batch of joint
    states X of shape (M, joint_d_x). Estimator state est is an opaque batch
    created by start() and advanced by advance(); strategies without a filter
    use None. Instances are immutable and safe to share across workers.
    """

    kind: str
    times: np.ndarray
    K_loc: np.ndarray | None  # (K+1, N_u, N_x)
    M_mix: np.ndarray | None  # (K+1, N_u, D)
    c: np.ndarray | None  # (K+1, N_u)
    E_x: np.ndarray | None
    joint_d_u: int
    # filter pieces (PDSS kinds only)
    obs_rows: np.ndarray | None = None  # boolean (D,)
    prop: np.ndarray | None = None  # (K+1, D, D) estimator propagation
    prop_c: np.ndarray | None = None  # (K+1, D) estimator drift
    z_init_mean: np.ndarray | None = None  # (D,) unobserved initialization

    @property
    def needs_estimator(self) -> bool:
        return self.obs_rows is not None

    def start(self, X0: np.ndarray):
        """Initial estimator batch for initial joint states X0 (M, N_x)."""
        if not self.needs_estimator:
            return None
        Z = np.tile(self.z_init_mean, (X0.shape[0], 1))
        obs = self.obs_rows
        Z[:, obs] = (X0 @ self.E_x.T)[:, obs]
        return Z

    def actions(self, k: int, X: np.ndarray, est) -> np.ndarray:
        if self.K_loc is None:
            return np.zeros((X.shape[0], self.joint_d_u))
        if self.M_mix is None:
            return X @ self.K_loc[k].T + self.c[k]
        Z = est if self.needs_estimator else X @ self.E_x.T
        return X @ self.K_loc[k].T + Z @ self.M_mix[k].T + self.c[k]

    def advance(self, k: int, X_next: np.ndarray, est):
        """Propagate the estimator across step k -> k+1 (no-op without one)."""
        if not self.needs_estimator:
            return est
        Z = est @ self.prop[k].T + self.prop_c[k]
        obs = self.obs_rows
        Z[:, obs] = (X_next @ self.E_x.T)[:, obs]
        return Z


def _solution_indices(solution: DeepRiccatiSolution, times: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(solution.grid, np.asarray(times) + 1e-12, side="right") - 1
    return np.clip(idx, 0, solution.steps)


@dataclass(frozen=True)
class DssStrategy:
    """Optimal full-sharing strategy (or its effort-weighted variant)."""

    solution: DeepRiccatiSolution
    use_beta: bool = False

    @property
    def kind(self) -> str:
        return "DSS_beta" if self.use_beta else "DSS"

    def bind(self, model: TeamModel, times: np.ndarray) -> BoundStrategy:
        if self.use_beta:
            _require_decoupled_risk_neutral(model, "the effort-weighted strategy")
        _check_corrections(model, self.solution)
        indices = _solution_indices(self.solution, times)
        K_loc, M_mix, c = _compose_steps(model, self.solution, indices, self.use_beta)
        E_x, _ = deep_extraction(model)
        return BoundStrategy(
            kind=self.kind,
            times=np.asarray(times, dtype=float),
            K_loc=K_loc,
            M_mix=M_mix,
            c=c,
            E_x=E_x,
            joint_d_u=model.joint_d_u,
        )


@dataclass(frozen=True)
class ZeroStrategy:
    """Baseline strategy u = 0 for every agent."""

    kind: str = "ZERO"

    def bind(self, model: TeamModel, times: np.ndarray) -> BoundStrategy:
        return BoundStrategy(
            kind=self.kind,
            times=np.asarray(times, dtype=float),
            K_loc=None,
            M_mix=None,
            c=None,
            E_x=None,
            joint_d_u=model.joint_d_u,
        )


@dataclass(frozen=True)
class CentralizedStrategy:
    """Brute-force joint feedback, usually from centralized_oracle_gains."""

    grid: np.ndarray
    gains: np.ndarray  # (K+1, N_u, N_x)
    kind: str = "CENTRALIZED_ORACLE"

    def bind(self, model: TeamModel, times: np.ndarray) -> BoundStrategy:
        idx = np.searchsorted(self.grid, np.asarray(times) + 1e-12, side="right") - 1
        idx = np.clip(idx, 0, len(self.grid) - 1)
        K = self.gains[idx]
        return BoundStrategy(
            kind=self.kind,
            times=np.asarray(times, dtype=float),
            K_loc=K,
            M_mix=None,
            c=np.zeros((len(idx), model.joint_d_u)),
            E_x=None,
            joint_d_u=model.joint_d_u,
        )


@dataclass(frozen=True)
class PdssStrategy:
    """Partial-sharing strategy: a deep-state filter feeds the full-sharing law.

    Deep states of sub-populations in the observed set are used directly; the
    others are estimated by propagating the closed-loop deep dynamics. With
    kind "finite" the gains come from the model itself; with kind "infinite"
    the supplied solution must be solved on the infinite-population limit
    model (noise of unobserved sub-populations removed), which drops the
    population-size-dependent covariance terms from the backward equations.
    """

    solution: DeepRiccatiSolution
    observed: frozenset
    filter_kind: str = "finite"

    def __post_init__(self):
        if self.filter_kind not in ("finite", "infinite"):
            raise ValueError("filter_kind must be 'finite' or 'infinite'")

    @property
    def kind(self) -> str:
        return "PDSS_finite" if self.filter_kind == "finite" else "PDSS_infinite"

    def observer_gains(self, model: TeamModel) -> dict:
        return {s: int(s in self.observed) for s in range(1, model.S + 1)}

    def bind(self, model: TeamModel, times: np.ndarray) -> BoundStrategy:
        _check_corrections(model, self.solution)
        source = self.solution.model
        indices = _solution_indices(self.solution, times)
        K_loc, M_mix, c = _compose_steps(model, self.solution, indices, False)
        E_x, _ = deep_extraction(model)
        D = model.deep_d_x
        obs = np.zeros(D, dtype=bool)
        for s in self.observed:
            obs[model.deep_x_slice(int(s))] = True

        times = np.asarray(times, dtype=float)
        K = len(times)
        prop = np.empty((K, D, D))
        prop_c = np.empty((K, D))
        cache: dict = {}
        constant = source.is_time_invariant()
        for k in range(K):
            dt = (times[min(k + 1, K - 1)] - times[k]) if K > 1 else 0.0
            key = 0.0 if constant else float(times[k])
            pop = cache.get(key)
            if pop is None:
                pop = assemble_population_matrices(
                    source, times[k], beta_weighted=self.solution.beta_weighted
                )
                cache[key] = pop
            gain = self.solution.gain_deep[indices[k]]
            closed = pop.A + pop.B @ gain
            prop[k] = np.eye(D) + dt * closed
            if self.solution.has_corrections:
                prop_c[k] = dt * (pop.B @ self.solution.drift_deep[indices[k]])
            else:
                prop_c[k] = 0.0

        z_mean = np.zeros(D)
        for s, sp in enumerate(model.sub_populations, start=1):
            mean = sp.init_or_zero().mean
            z_mean[model.deep_x_slice(s)] = deep_state(mean, sp.alpha).reshape(-1)

        return BoundStrategy(
            kind=self.kind,
            times=times,
            K_loc=K_loc,
            M_mix=M_mix,
            c=c,
            E_x=E_x,
            joint_d_u=model.joint_d_u,
            obs_rows=obs,
            prop=prop,
            prop_c=prop_c,
            z_init_mean=z_mean,
        )


# -- single-step filter interface -------------------------------------------------


def _pdss_step(states, observed_deep, t, dt, solution, estimator, observed):
    model = solution.model
    D = model.deep_d_x
    z = np.array(estimator, dtype=float)
    for s in observed:
        block = np.asarray(observed_deep[s], dtype=float).reshape(-1)
        z[model.deep_x_slice(int(s))] = block
    actions = []
    for s, sp in enumerate(model.sub_populations, start=1):
        out = np.empty((sp.n, sp.d_u))
        for i in range(sp.n):
            out[i] = _agent_action((i, s), t, states[s - 1][i], z, solution, sp.alpha[i])
        actions.append(out)
    k = hold_index(solution.grid, t)
    pop = assemble_population_matrices(model, t, beta_weighted=solution.beta_weighted)
    closed = pop.A + pop.B @ solution.gain_deep[k]
    z_next = z + dt * (closed @ z)
    if solution.has_corrections:
        z_next = z_next + dt * (pop.B @ solution.drift_deep[k])
    return actions, z_next


def pdss_step_finite(states, observed_deep, t, dt, solution, estimator):
    """One filter step of the partial-sharing strategy (model-matched gains).

    Args:
        states: list of per-sub-population state arrays (n(s), d_x).
        observed_deep: dict mapping observed 1-based sub-population indices to
            their current stacked deep state (f(s) * d_x,).
        t, dt: current time and step.
        solution: deep Riccati solution of the model being controlled.
        estimator: current deep-state estimate, shape (deep_d_x,).

    Returns:
        (actions, estimator_next) where actions is a list of (n(s), d_u)
        arrays. Observed blocks of the returned estimate are provisional and
        are replaced by the next observation at the next call.
    """
    observed = frozenset(int(s) for s in observed_deep)
    return _pdss_step(states, observed_deep, t, dt, solution, estimator, observed)


def pdss_step_infinite(states, observed_deep, t, dt, solution, estimator):
    """One filter step with gains from the infinite-population limit model.

    Identical propagation structure to pdss_step_finite; the difference lives
    entirely in the supplied solution, which must be solved on the limit
    model (see infinite_population_limit).
    """
    observed = frozenset(int(s) for s in observed_deep)
    return _pdss_step(states, observed_deep, t, dt, solution, estimator, observed)


# -- neural-network export ---------------------------------------------------------


@dataclass(frozen=True)
class NetworkExport:
    """Affine network equivalent of the discretized closed loop.

    weights[k][i][m] is the d_x x d_x block mapping agent m's state at step k
    to agent i's state at step k+1; biases[k][i] the d_x bias. The forward
    pass reproduces the Euler-discretized closed loop under the full-sharing
    strategy exactly, up to the injected noise.
    """

    dt: float
    risk_factor: float
    alpha: np.ndarray
    times: np.ndarray
    weights: np.ndarray  # (K, n, n, d_x, d_x)
    biases: np.ndarray  # (K, n, d_x)

    @property
    def layers(self) -> int:
        return self.weights.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "dt": self.dt,
            "risk_factor": self.risk_factor,
            "alpha": self.alpha.tolist(),
            "layers": [
                {"W": self.weights[k].tolist(), "b": self.biases[k].tolist()}
                for k in range(self.layers)
            ],
        }


def export_network_weights(
    model: TeamModel, solution: DeepRiccatiSolution, dt: float
) -> NetworkExport:
    """Express the discretized closed loop as per-step affine network layers.

    Layer k maps the stacked agent states to the next step:

        x^i_{k+1} = sum_m W[i, m] x^m_k + b^i_k + noise

    with W[i, i] = I + A dt + B dt [ (1 - (1/n) sum_j alpha[i,j]^2) theta
    + (1/n) sum_{j,j'} alpha[i,j] alpha[i,j'] gain_deep[j,j'] ] and the
    off-diagonal blocks carrying the deep-state mixing only. Restricted to a
    single dynamically decoupled sub-population, where the deep gain blocks
    are (d_u x d_x) sub-blocks of the deep-level gain.

    Raises:
        ValueError: multiple sub-populations or coupled dynamics.
    """
    if model.S != 1:
        raise ValueError("network export requires a single sub-population")
    if any(sp.Abar or sp.Bbar for sp in model.sub_populations):
        raise ValueError("network export requires dynamically decoupled dynamics")
    _check_corrections(model, solution)
    sp = model.sub_populations[0]
    n, f, d_x, d_u = sp.n, sp.f, sp.d_x, sp.d_u
    T = model.horizon
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("dt must divide the horizon")
    times = np.arange(steps) * dt
    weights = np.empty((steps, n, n, d_x, d_x))
    biases = np.zeros((steps, n, d_x))
    eye = np.eye(d_x)
    alpha = sp.alpha
    for k, t in enumerate(times):
        idx = hold_index(solution.grid, t)
        A = sp.A.at(t)
        B = sp.B.at(t)
        theta = solution.gain_local[0][idx]
        gbar = solution.gain_deep[idx].reshape(f, d_u, f, d_x)
        # mixing coefficient of agent m's state inside agent i's action
        amix = alpha @ alpha.T / n  # (n, n): (1/n) sum_j alpha[i,j] alpha[m,j]
        # deep_mix[i, u, m, d] = (1/n) sum_{j,p} alpha[i,j] gbar[j,u,p,d] alpha[m,p]
        deep_mix = np.einsum("ij,jupd,mp->iumd", alpha, gbar, alpha) / n
        for i in range(n):
            for m in range(n):
                mix_term = B @ deep_mix[i, :, m, :]
                if m == i:
                    local = (1.0 - amix[i, i]) * (B @ theta)
                    weights[k, i, m] = eye + dt * A + dt * (local + mix_term)
                else:
                    weights[k, i, m] = dt * (-amix[i, m] * (B @ theta) + mix_term)
        if solution.has_corrections:
            drift_l = solution.drift_local[0][idx]
            drift_d = solution.drift_deep[idx].reshape(f, d_u)
            for i in range(n):
                biases[k, i] = dt * (B @ (drift_l[i] + alpha[i] @ drift_d))
    return NetworkExport(
        dt=dt,
        risk_factor=model.risk_factor,
        alpha=np.array(alpha),
        times=times,
        weights=weights,
        biases=biases,
    )


def forward_pass(
    export: NetworkExport, x0: np.ndarray, noises: np.ndarray | None = None
) -> np.ndarray:
    """Replay the affine network on initial states x0 (n, d_x).

    noises, when given, has shape (layers, n, d_x) and is added after each
    layer, matching the Euler noise injection of the simulator.

    Returns:
        All states, shape (layers + 1, n, d_x).
    """
    n, d_x = x0.shape
    out = np.empty((export.layers + 1, n, d_x))
    out[0] = x0
    for k in range(export.layers):
        nxt = np.einsum("imde,me->id", export.weights[k], out[k]) + export.biases[k]
        if noises is not None:
            nxt = nxt + noises[k]
        out[k + 1] = nxt
    return out


def write_network_json(path, export: NetworkExport) -> None:
    """Write the layer dump with metadata to a JSON file."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(export.to_json_dict(), fh)


def read_network_json(path) -> NetworkExport:
    """Load a layer dump written by write_network_json."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    weights = np.array([layer["W"] for layer in raw["layers"]], dtype=float)
    biases = np.array([layer["b"] for layer in raw["layers"]], dtype=float)
    dt = float(raw["dt"])
    return NetworkExport(
        dt=dt,
        risk_factor=float(raw["risk_factor"]),
        alpha=np.array(raw["alpha"], dtype=float),
        times=np.arange(weights.shape[0]) * dt,
        weights=weights,
        biases=biases,
    )
