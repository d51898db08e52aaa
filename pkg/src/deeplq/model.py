"""Team model types, gauge decomposition, and matrix assembly.

A team consists of S sub-populations. Sub-population s has n(s) agents with
identical state/action dimensions, an influence-factor matrix alpha of shape
(n(s), f(s)) whose columns are orthonormal under the empirical inner product
(1/n) sum_i alpha[i, j] alpha[i, j'] = 1{j == j'}, and a relative cost weight
mu(s). Agents are coupled through f(s) weighted averages of states and
actions (the deep states and deep actions) rather than pairwise.

This module defines the model containers, the change of coordinates that
splits each agent state into a deep component plus a residual, and the
assembly of the aggregate (deep-level) and centralized (joint) matrices used
by the solvers.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Schedule",
    "InitSpec",
    "SubPopulation",
    "TeamModel",
    "PopulationMatrices",
    "CentralizedMatrices",
    "ValidationCheck",
    "ValidationReport",
    "constant",
    "piecewise",
    "deep_state",
    "deep_state_joint",
    "gauge_decompose",
    "tracking_residual",
    "deep_tracking_joint",
    "assemble_population_matrices",
    "assemble_centralized",
    "validate_model",
    "zero_coupling",
    "with_population_size",
    "infinite_population_limit",
]

CENTRALIZED_DIM_CAP = 64


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


class Schedule:
    """Piecewise-constant matrix- or vector-valued function of time.

    A plain array is a constant schedule. A time-varying schedule holds a
    breakpoint grid t_grid (ascending, starting at 0) and one value per
    segment; the value on [t_grid[k], t_grid[k+1]) is values[k] and the last
    value extends to the horizon.
    """

    __slots__ = ("values", "t_grid")

    def __init__(self, values, t_grid=None):
        if t_grid is None:
            self.values = _freeze(values)
            self.t_grid = None
        else:
            grid = np.asarray(t_grid, dtype=float)
            if grid.ndim != 1 or grid.size == 0 or grid[0] != 0.0:
                raise ValueError("t_grid must be 1-d and start at 0")
            if np.any(np.diff(grid) <= 0):
                raise ValueError("t_grid must be strictly increasing")
            vals = _freeze(values)
            if vals.shape[0] != grid.size:
                raise ValueError("need one value per t_grid segment")
            self.values = vals
            self.t_grid = _freeze(grid)

    @property
    def is_constant(self) -> bool:
        return self.t_grid is None

    @property
    def shape(self):
        return self.values.shape if self.is_constant else self.values.shape[1:]

    def at(self, t: float) -> np.ndarray:
        if self.t_grid is None:
            return self.values
        # right-closed lookup so values change exactly at breakpoints
        k = int(np.searchsorted(self.t_grid, t + 1e-12, side="right")) - 1
        return self.values[max(k, 0)]

    def __repr__(self):
        kind = "constant" if self.is_constant else f"{self.values.shape[0]}-segment"
        return f"Schedule({kind}, shape={self.shape})"


def constant(values) -> Schedule:
    """Wrap an array as a constant schedule."""
    return Schedule(values)


def piecewise(t_grid, values) -> Schedule:
    """Build a piecewise-constant schedule from breakpoints and values."""
    return Schedule(values, t_grid=t_grid)


def _as_schedule(x, shape, name: str) -> Schedule:
    sched = x if isinstance(x, Schedule) else Schedule(x)
    if sched.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {sched.shape}")
    return sched


@dataclass(frozen=True)
class InitSpec:
    """Initial-state distribution for one sub-population.

    kind "deterministic": every replicate starts at mean.
    kind "gaussian": agents draw independently from N(mean[i], cov).
    mean has shape (n, d_x); cov is a shared (d_x, d_x) covariance.
    """

    kind: str
    mean: np.ndarray
    cov: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("deterministic", "gaussian"):
            raise ValueError(f"unknown init kind {self.kind!r}")
        object.__setattr__(self, "mean", _freeze(self.mean))
        if self.kind == "gaussian":
            if self.cov is None:
                raise ValueError("gaussian init requires cov")
            object.__setattr__(self, "cov", _freeze(self.cov))
        elif self.cov is not None:
            object.__setattr__(self, "cov", _freeze(self.cov))

    @property
    def is_deterministic(self) -> bool:
        return self.kind == "deterministic"


@dataclass(frozen=True)
class SubPopulation:
    """One homogeneous sub-population of a team model.

    Dynamics of agent i (state x, action u, standard Brownian noise w):

        dx = (A x + B u + sum_j alpha[i, j] (Abar[j] @ deep_x + Bbar[j] @ deep_u)) dt
             + C dw

    where deep_x and deep_u are the stacked deep states/actions of the whole
    team. Per-stage cost of agent i is

        |x - r_i|^2_Q + |u|^2_R + |deep_x|^2_Qbar + |deep_u|^2_Rbar

    with the same state weights at the terminal time unless Q_terminal /
    Qbar_terminal override them (set them to zero matrices for a problem
    without terminal cost). Coupling blocks Abar[j] and Bbar[j] act on the
    full stacked deep vectors, so their trailing dimension is fixed by the
    whole team; they are validated in TeamModel.
    """

    n: int
    f: int
    d_x: int
    d_u: int
    A: Schedule
    B: Schedule
    C: Schedule
    Q: Schedule
    R: Schedule
    mu: float
    alpha: np.ndarray
    Abar: tuple = ()
    Bbar: tuple = ()
    Qbar: Schedule | None = None
    Rbar: Schedule | None = None
    tracking: Schedule | None = None
    beta: np.ndarray | None = None
    init: InitSpec | None = None
    Q_terminal: np.ndarray | None = None
    Qbar_terminal: np.ndarray | None = None

    def __post_init__(self):
        if self.n < 1 or self.f < 1 or self.f > self.n:
            raise ValueError("need 1 <= f <= n")
        if self.d_x < 1 or self.d_u < 1:
            raise ValueError("state and action dimensions must be positive")
        d_x, d_u = self.d_x, self.d_u
        object.__setattr__(self, "A", _as_schedule(self.A, (d_x, d_x), "A"))
        object.__setattr__(self, "B", _as_schedule(self.B, (d_x, d_u), "B"))
        object.__setattr__(self, "C", _as_schedule(self.C, (d_x, d_x), "C"))
        object.__setattr__(self, "Q", _as_schedule(self.Q, (d_x, d_x), "Q"))
        object.__setattr__(self, "R", _as_schedule(self.R, (d_u, d_u), "R"))
        alpha = _freeze(self.alpha)
        if alpha.shape != (self.n, self.f):
            raise ValueError(f"alpha must have shape ({self.n}, {self.f})")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "Abar", tuple(self.Abar))
        object.__setattr__(self, "Bbar", tuple(self.Bbar))
        if self.beta is not None:
            beta = _freeze(self.beta)
            if beta.shape != (self.n,):
                raise ValueError(f"beta must have shape ({self.n},)")
            if np.any(beta <= 0):
                raise ValueError("beta entries must be positive")
            object.__setattr__(self, "beta", beta)
        if self.tracking is not None:
            object.__setattr__(
                self, "tracking", _as_schedule(self.tracking, (self.n, d_x), "tracking")
            )
        if self.Q_terminal is not None:
            qt = _freeze(self.Q_terminal)
            if qt.shape != (d_x, d_x):
                raise ValueError(f"Q_terminal must have shape ({d_x}, {d_x})")
            object.__setattr__(self, "Q_terminal", qt)
        if self.Qbar_terminal is not None:
            # team-wide deep dimension; shape checked in TeamModel
            object.__setattr__(self, "Qbar_terminal", _freeze(self.Qbar_terminal))

    @property
    def deep_d_x(self) -> int:
        return self.f * self.d_x

    @property
    def deep_d_u(self) -> int:
        return self.f * self.d_u

    def noise_cov(self, t: float) -> np.ndarray:
        c = self.C.at(t)
        return c @ c.T

    def tracking_at(self, t: float) -> np.ndarray:
        if self.tracking is None:
            return np.zeros((self.n, self.d_x))
        return self.tracking.at(t)

    def terminal_Q(self, horizon: float) -> np.ndarray:
        if self.Q_terminal is not None:
            return self.Q_terminal
        return self.Q.at(horizon)

    def terminal_Qbar(self, horizon: float) -> np.ndarray | None:
        if self.Qbar_terminal is not None:
            return self.Qbar_terminal
        return None if self.Qbar is None else self.Qbar.at(horizon)

    def beta_or_ones(self) -> np.ndarray:
        if self.beta is None:
            return np.ones(self.n)
        return self.beta

    def init_or_zero(self) -> InitSpec:
        if self.init is None:
            return InitSpec("deterministic", np.zeros((self.n, self.d_x)))
        return self.init


@dataclass(frozen=True)
class TeamModel:
    """A risk-sensitive linear-quadratic team of coupled sub-populations.

    risk_factor is the exponential-cost parameter (0 recovers the mean-cost
    problem), horizon the final time, and shared_set the 1-based indices of
    sub-populations whose deep states are broadcast to everyone (used by the
    filter-based strategies; the full-information strategies ignore it).
    """

    sub_populations: tuple
    risk_factor: float = 0.0
    horizon: float = 1.0
    shared_set: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        subs = tuple(self.sub_populations)
        if not subs:
            raise ValueError("need at least one sub-population")
        object.__setattr__(self, "sub_populations", subs)
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        shared = frozenset(int(s) for s in self.shared_set)
        if shared and (min(shared) < 1 or max(shared) > len(subs)):
            raise ValueError("shared_set entries must be 1-based sub-population indices")
        object.__setattr__(self, "shared_set", shared)
        d_x = sum(sp.deep_d_x for sp in subs)
        d_u = sum(sp.deep_d_u for sp in subs)
        for k, sp in enumerate(subs):
            if len(sp.Abar) not in (0, sp.f) or len(sp.Bbar) not in (0, sp.f):
                raise ValueError(f"sub-population {k + 1}: need one coupling block per feature")
            for j, blk in enumerate(sp.Abar):
                if not isinstance(blk, Schedule):
                    blk = Schedule(blk)
                if blk.shape != (sp.d_x, d_x):
                    raise ValueError(
                        f"sub-population {k + 1}: Abar[{j}] must map the stacked deep "
                        f"state, shape ({sp.d_x}, {d_x})"
                    )
            for j, blk in enumerate(sp.Bbar):
                if not isinstance(blk, Schedule):
                    blk = Schedule(blk)
                if blk.shape != (sp.d_x, d_u):
                    raise ValueError(
                        f"sub-population {k + 1}: Bbar[{j}] must map the stacked deep "
                        f"action, shape ({sp.d_x}, {d_u})"
                    )
        # normalize coupling entries to schedules (tuples rebuilt in place)
        for k, sp in enumerate(subs):
            abar = tuple(b if isinstance(b, Schedule) else Schedule(b) for b in sp.Abar)
            bbar = tuple(b if isinstance(b, Schedule) else Schedule(b) for b in sp.Bbar)
            qbar = sp.Qbar
            rbar = sp.Rbar
            if qbar is not None:
                qbar = _as_schedule(qbar, (d_x, d_x), f"Qbar[{k + 1}]")
            if rbar is not None:
                rbar = _as_schedule(rbar, (d_u, d_u), f"Rbar[{k + 1}]")
            if sp.Qbar_terminal is not None and sp.Qbar_terminal.shape != (d_x, d_x):
                raise ValueError(
                    f"sub-population {k + 1}: Qbar_terminal must have shape ({d_x}, {d_x})"
                )
            object.__setattr__(sp, "Abar", abar)
            object.__setattr__(sp, "Bbar", bbar)
            object.__setattr__(sp, "Qbar", qbar)
            object.__setattr__(sp, "Rbar", rbar)

    # -- layout ------------------------------------------------------------

    @property
    def S(self) -> int:
        return len(self.sub_populations)

    @property
    def deep_d_x(self) -> int:
        return sum(sp.deep_d_x for sp in self.sub_populations)

    @property
    def deep_d_u(self) -> int:
        return sum(sp.deep_d_u for sp in self.sub_populations)

    @property
    def joint_d_x(self) -> int:
        return sum(sp.n * sp.d_x for sp in self.sub_populations)

    @property
    def joint_d_u(self) -> int:
        return sum(sp.n * sp.d_u for sp in self.sub_populations)

    @property
    def n_agents(self) -> int:
        return sum(sp.n for sp in self.sub_populations)

    def deep_x_offset(self, s: int) -> int:
        """Start of sub-population s (1-based) in the stacked deep state."""
        return sum(sp.deep_d_x for sp in self.sub_populations[: s - 1])

    def deep_u_offset(self, s: int) -> int:
        return sum(sp.deep_d_u for sp in self.sub_populations[: s - 1])

    def joint_x_offset(self, s: int) -> int:
        return sum(sp.n * sp.d_x for sp in self.sub_populations[: s - 1])

    def joint_u_offset(self, s: int) -> int:
        return sum(sp.n * sp.d_u for sp in self.sub_populations[: s - 1])

    def deep_x_slice(self, s: int, j: int | None = None) -> slice:
        """Slice of the stacked deep state for sub-population s, feature j (0-based)."""
        sp = self.sub_populations[s - 1]
        off = self.deep_x_offset(s)
        if j is None:
            return slice(off, off + sp.deep_d_x)
        return slice(off + j * sp.d_x, off + (j + 1) * sp.d_x)

    def deep_u_slice(self, s: int, j: int | None = None) -> slice:
        sp = self.sub_populations[s - 1]
        off = self.deep_u_offset(s)
        if j is None:
            return slice(off, off + sp.deep_d_u)
        return slice(off + j * sp.d_u, off + (j + 1) * sp.d_u)

    def joint_x_slice(self, s: int, i: int | None = None) -> slice:
        sp = self.sub_populations[s - 1]
        off = self.joint_x_offset(s)
        if i is None:
            return slice(off, off + sp.n * sp.d_x)
        return slice(off + i * sp.d_x, off + (i + 1) * sp.d_x)

    def joint_u_slice(self, s: int, i: int | None = None) -> slice:
        sp = self.sub_populations[s - 1]
        off = self.joint_u_offset(s)
        if i is None:
            return slice(off, off + sp.n * sp.d_u)
        return slice(off + i * sp.d_u, off + (i + 1) * sp.d_u)

    def is_time_invariant(self) -> bool:
        for sp in self.sub_populations:
            scheds = [sp.A, sp.B, sp.C, sp.Q, sp.R, sp.Qbar, sp.Rbar, sp.tracking]
            scheds += list(sp.Abar) + list(sp.Bbar)
            if any(s is not None and not s.is_constant for s in scheds):
                return False
        return True

    def has_coupling(self) -> bool:
        for sp in self.sub_populations:
            if sp.Abar or sp.Bbar or sp.Qbar is not None or sp.Rbar is not None:
                return True
        return False


# -- deep states and the gauge transformation -------------------------------


def deep_state(states: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Influence-weighted empirical averages of one sub-population's states.

    Args:
        states: agent states, shape (..., n, d).
        alpha: influence factors, shape (n, f).

    Returns:
        Deep states, shape (..., f, d): (1/n) sum_i alpha[i, j] x_i per feature j.
    """
    n = alpha.shape[0]
    return np.einsum("if,...id->...fd", alpha, states) / n


def deep_state_joint(model: TeamModel, joint_x: np.ndarray) -> np.ndarray:
    """Stacked deep state of the whole team from the flat joint state.

    Args:
        joint_x: flat joint state, shape (..., joint_d_x).

    Returns:
        Flat stacked deep state, shape (..., deep_d_x).
    """
    parts = []
    for s, sp in enumerate(model.sub_populations, start=1):
        block = joint_x[..., model.joint_x_slice(s)]
        block = block.reshape(block.shape[:-1] + (sp.n, sp.d_x))
        parts.append(deep_state(block, sp.alpha).reshape(block.shape[:-2] + (sp.deep_d_x,)))
    return np.concatenate(parts, axis=-1)


def gauge_decompose(
    states: np.ndarray, alpha: np.ndarray, beta: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Split agent states into residuals plus influence-weighted deep parts.

    The residual of agent i is x_i - sum_j mix[i, j] xbar_j where mix is
    alpha, or alpha / beta[:, None] when per-agent effort weights beta are
    given. Under the orthonormality condition the residuals satisfy
    sum_i alpha[i, j] delta_i = 0 for every feature j.

    Returns:
        (residuals, deep) with shapes (..., n, d) and (..., f, d).
    """
    deep = deep_state(states, alpha)
    mix = alpha if beta is None else alpha / beta[:, None]
    recon = np.einsum("if,...fd->...id", mix, deep)
    return states - recon, deep


def tracking_residual(sp: SubPopulation, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Residual and deep parts of the tracking signals at time t.

    Returns:
        (delta_r, rbar) with shapes (n, d_x) and (f, d_x).
    """
    r = sp.tracking_at(t)
    beta = sp.beta if sp.beta is not None else None
    return gauge_decompose(r, sp.alpha, beta)


def deep_tracking_joint(model: TeamModel, t: float) -> np.ndarray:
    """Stacked deep tracking signal, shape (deep_d_x,)."""
    parts = []
    for sp in model.sub_populations:
        rbar = deep_state(sp.tracking_at(t), sp.alpha)
        parts.append(rbar.reshape(-1))
    return np.concatenate(parts)


# -- aggregate (deep-level) assembly -----------------------------------------


@dataclass(frozen=True)
class PopulationMatrices:
    """Deep-level system matrices at a fixed time.

    A, B: dynamics of the stacked deep state (deep_d_x x deep_d_x / deep_d_u).
    Q, R: full cost weights including coupling terms.
    Q_track: the tracking part of Q only, block-diagonal mu(s)-weighted copies
        of the local weights (the deep tracking signal is priced with this).
    Sigma: deep noise covariance, block-diagonal (1/n(s)) copies of C C^T.
    C: deep noise loading (block-diagonal copies of C(s)).
    A_rows, B_rows: per-sub-population row blocks of A and B, in stacking order.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Q_track: np.ndarray
    R_track: np.ndarray
    Sigma: np.ndarray
    C: np.ndarray
    A_rows: tuple
    B_rows: tuple


def _diag_copies(mat: np.ndarray, copies: int) -> np.ndarray:
    d0, d1 = mat.shape
    out = np.zeros((copies * d0, copies * d1))
    for j in range(copies):
        out[j * d0 : (j + 1) * d0, j * d1 : (j + 1) * d1] = mat
    return out


def assemble_population_matrices(
    model: TeamModel, t: float = 0.0, beta_weighted: bool = False, terminal: bool = False
) -> PopulationMatrices:
    """Assemble the deep-level dynamics and cost matrices at time t.

    Row block s of the dynamics is f(s) diagonal copies of A(s) placed at
    sub-population s's own column block, plus the stacked coupling rows
    Abar[j](s) which act on the full deep state. Cost weights are the
    mu(s)-weighted diagonal copies of the local weights plus the summed
    coupling weights mu(s) Qbar(s).

    With beta_weighted=True the coupling weights Qbar/Rbar are additionally
    scaled by the mean effort weight of their sub-population, which is the
    aggregate cost seen by the effort-weighted objective. With terminal=True
    the state weights are the terminal ones (the action weights are kept so
    that gains remain defined at the horizon).
    """
    D_x, D_u = model.deep_d_x, model.deep_d_u
    a_rows, b_rows = [], []
    Q = np.zeros((D_x, D_x))
    R = np.zeros((D_u, D_u))
    Q_track = np.zeros((D_x, D_x))
    R_track = np.zeros((D_u, D_u))
    Sigma = np.zeros((D_x, D_x))
    C = np.zeros((D_x, D_x))
    for s, sp in enumerate(model.sub_populations, start=1):
        xs = model.deep_x_slice(s)
        us = model.deep_u_slice(s)
        a_row = np.zeros((sp.deep_d_x, D_x))
        a_row[:, xs] = _diag_copies(sp.A.at(t), sp.f)
        for j, blk in enumerate(sp.Abar):
            a_row[j * sp.d_x : (j + 1) * sp.d_x, :] += blk.at(t)
        b_row = np.zeros((sp.deep_d_x, D_u))
        b_row[:, us] = _diag_copies(sp.B.at(t), sp.f)
        for j, blk in enumerate(sp.Bbar):
            b_row[j * sp.d_x : (j + 1) * sp.d_x, :] += blk.at(t)
        a_rows.append(a_row)
        b_rows.append(b_row)

        q_now = sp.terminal_Q(model.horizon) if terminal else sp.Q.at(t)
        qbar_now = sp.terminal_Qbar(model.horizon) if terminal else (
            sp.Qbar.at(t) if sp.Qbar is not None else None
        )
        Q[xs, xs] += sp.mu * _diag_copies(q_now, sp.f)
        R[us, us] += sp.mu * _diag_copies(sp.R.at(t), sp.f)
        Q_track[xs, xs] += sp.mu * _diag_copies(q_now, sp.f)
        R_track[us, us] += sp.mu * _diag_copies(sp.R.at(t), sp.f)
        scale = sp.mu * (float(np.mean(sp.beta_or_ones())) if beta_weighted else 1.0)
        if qbar_now is not None:
            Q += scale * qbar_now
        if sp.Rbar is not None:
            R += scale * sp.Rbar.at(t)
        Sigma[xs, xs] = _diag_copies(sp.noise_cov(t) / sp.n, sp.f)
        C[xs, xs] = _diag_copies(sp.C.at(t), sp.f)
    return PopulationMatrices(
        A=np.vstack(a_rows),
        B=np.vstack(b_rows),
        Q=Q,
        R=R,
        Q_track=Q_track,
        R_track=R_track,
        Sigma=Sigma,
        C=C,
        A_rows=tuple(a_rows),
        B_rows=tuple(b_rows),
    )


# -- centralized (joint) assembly --------------------------------------------


@dataclass(frozen=True)
class CentralizedMatrices:
    """Joint system over all individual agents at a fixed time.

    A, B, Q, R: dynamics and cost of the flat joint state/action, with the
    per-agent weights scaled by mu(s)/n(s) (and the effort weights beta when
    present) so that x^T Q x + u^T R u reproduces the weighted team cost.
    Sigma: joint noise covariance (block-diagonal per-agent C C^T).
    E_x, E_u: deep-state/action extraction matrices; E_x @ joint_x is the
    stacked deep state.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Sigma: np.ndarray
    C: np.ndarray
    E_x: np.ndarray
    E_u: np.ndarray


def deep_extraction(model: TeamModel) -> tuple[np.ndarray, np.ndarray]:
    """Matrices mapping flat joint state/action to stacked deep state/action."""
    E_x = np.zeros((model.deep_d_x, model.joint_d_x))
    E_u = np.zeros((model.deep_d_u, model.joint_d_u))
    for s, sp in enumerate(model.sub_populations, start=1):
        for j in range(sp.f):
            for i in range(sp.n):
                w = sp.alpha[i, j] / sp.n
                E_x[model.deep_x_slice(s, j), model.joint_x_slice(s, i)] = w * np.eye(sp.d_x)
                E_u[model.deep_u_slice(s, j), model.joint_u_slice(s, i)] = w * np.eye(sp.d_u)
    return E_x, E_u


def assemble_centralized(
    model: TeamModel,
    t: float = 0.0,
    dim_cap: int = CENTRALIZED_DIM_CAP,
    terminal: bool = False,
) -> CentralizedMatrices:
    """Assemble the brute-force joint system over every individual agent.

    Intended for oracle comparisons on small teams; refuses joint state
    dimensions above dim_cap. With terminal=True the state weights are the
    terminal ones.
    """
    N_x, N_u = model.joint_d_x, model.joint_d_u
    if N_x > dim_cap:
        raise ValueError(f"joint state dimension {N_x} exceeds cap {dim_cap}")
    E_x, E_u = deep_extraction(model)
    A = np.zeros((N_x, N_x))
    B = np.zeros((N_x, N_u))
    Q = np.zeros((N_x, N_x))
    R = np.zeros((N_u, N_u))
    Sigma = np.zeros((N_x, N_x))
    C = np.zeros((N_x, N_x))
    Qc = np.zeros((model.deep_d_x, model.deep_d_x))
    Rc = np.zeros((model.deep_d_u, model.deep_d_u))
    for s, sp in enumerate(model.sub_populations, start=1):
        beta = sp.beta_or_ones()
        q_now = sp.terminal_Q(model.horizon) if terminal else sp.Q.at(t)
        qbar_now = sp.terminal_Qbar(model.horizon) if terminal else (
            sp.Qbar.at(t) if sp.Qbar is not None else None
        )
        for i in range(sp.n):
            xs = model.joint_x_slice(s, i)
            us = model.joint_u_slice(s, i)
            A[xs, xs] = sp.A.at(t)
            B[xs, us] = sp.B.at(t)
            w = sp.mu / sp.n * beta[i]
            Q[xs, xs] = w * q_now
            R[us, us] = w * sp.R.at(t)
            Sigma[xs, xs] = sp.noise_cov(t)
            C[xs, xs] = sp.C.at(t)
            coup_a = sum(sp.alpha[i, j] * sp.Abar[j].at(t) for j in range(len(sp.Abar)))
            coup_b = sum(sp.alpha[i, j] * sp.Bbar[j].at(t) for j in range(len(sp.Bbar)))
            if len(sp.Abar):
                A[xs, :] += coup_a @ E_x
            if len(sp.Bbar):
                B[xs, :] += coup_b @ E_u
        scale = sp.mu * float(np.mean(beta))
        if qbar_now is not None:
            Qc += scale * qbar_now
        if sp.Rbar is not None:
            Rc += scale * sp.Rbar.at(t)
    Q += E_x.T @ Qc @ E_x
    R += E_u.T @ Rc @ E_u
    return CentralizedMatrices(A=A, B=B, Q=Q, R=R, Sigma=Sigma, C=C, E_x=E_x, E_u=E_u)


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class ValidationCheck:
    name: str
    status: str  # "pass" | "warn" | "fail"
    detail: str

    @property
    def ok(self) -> bool:
        return self.status != "fail"


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple
    tol_orth: float

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self):
        return [c for c in self.checks if c.status == "fail"]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "tol_orth": self.tol_orth,
            "checks": [dataclasses.asdict(c) for c in self.checks],
        }


def _min_eig(mat: np.ndarray) -> float:
    return float(np.min(np.linalg.eigvalsh(0.5 * (mat + mat.T))))


def _check_times(model: TeamModel) -> list[float]:
    """Representative times: all schedule breakpoints plus endpoints."""
    pts = {0.0, model.horizon}
    for sp in model.sub_populations:
        scheds = [sp.A, sp.B, sp.C, sp.Q, sp.R, sp.Qbar, sp.Rbar, sp.tracking]
        scheds += list(sp.Abar) + list(sp.Bbar)
        for sched in scheds:
            if sched is not None and sched.t_grid is not None:
                pts.update(float(t) for t in sched.t_grid if 0 <= t <= model.horizon)
    return sorted(pts)


def validate_model(
    model: TeamModel, tol_orth: float = 1e-9, ingested: bool = False
) -> ValidationReport:
    """Check a model against the solvability conditions.

    Verifies influence-factor orthonormality, symmetry and definiteness of
    the cost weights (R positive definite, Q positive semidefinite, same for
    the aggregate weights), the effort-weight normalization when beta is
    present, and, for a positive risk factor, positivity of

        B R^{-1} B^T - 2 lambda (mu/n) C C^T        (per sub-population)
        B_dl R_dl^{-1} B_dl^T - 2 lambda Sigma_dl   (deep level)

    which the backward Riccati sweeps need to stay bounded. Orthonormality
    failures beyond tol_orth are reported as warnings when ingested=True
    (hand-entered factor tables are accepted up to rounding) and as failures
    otherwise.

    Returns a ValidationReport; report.ok means no hard failures.
    """
    checks: list[ValidationCheck] = []
    lam = model.risk_factor
    times = _check_times(model)

    for s, sp in enumerate(model.sub_populations, start=1):
        gram = sp.alpha.T @ sp.alpha / sp.n
        err = float(np.max(np.abs(gram - np.eye(sp.f))))
        if err <= tol_orth:
            status, note = "pass", f"max deviation {err:.2e}"
        elif ingested and err <= 1e-2:
            status, note = "warn", f"max deviation {err:.2e} (accepted at ingest tolerance)"
        else:
            status, note = "fail", f"max deviation {err:.2e} exceeds {tol_orth:.0e}"
        checks.append(ValidationCheck(f"orthonormality[{s}]", status, note))

        if sp.beta is not None:
            mix = sp.alpha / np.sqrt(sp.beta)[:, None]
            err_b = float(np.max(np.abs(mix.T @ mix / sp.n - np.eye(sp.f))))
            status = "pass" if err_b <= max(tol_orth, 1e-9) else "fail"
            checks.append(
                ValidationCheck(
                    f"beta_normalization[{s}]", status, f"max deviation {err_b:.2e}"
                )
            )

        if sp.mu <= 0:
            checks.append(ValidationCheck(f"mu[{s}]", "fail", f"mu={sp.mu} must be positive"))
        for t in times:
            rmin = _min_eig(sp.R.at(t))
            if rmin <= 0:
                checks.append(
                    ValidationCheck(
                        f"R_pd[{s}]", "fail", f"min eigenvalue {rmin:.3e} at t={t:g}"
                    )
                )
                break
        else:
            checks.append(ValidationCheck(f"R_pd[{s}]", "pass", "positive definite"))
        for t in times:
            qmin = _min_eig(sp.Q.at(t))
            if qmin < -1e-10:
                checks.append(
                    ValidationCheck(
                        f"Q_psd[{s}]", "fail", f"min eigenvalue {qmin:.3e} at t={t:g}"
                    )
                )
                break
        else:
            qmin = _min_eig(sp.terminal_Q(model.horizon))
            if qmin < -1e-10:
                checks.append(
                    ValidationCheck(
                        f"Q_psd[{s}]", "fail", f"terminal min eigenvalue {qmin:.3e}"
                    )
                )
            else:
                checks.append(ValidationCheck(f"Q_psd[{s}]", "pass", "positive semidefinite"))

    mu_total = sum(sp.mu for sp in model.sub_populations)
    checks.append(
        ValidationCheck(
            "mu_weights",
            "pass" if mu_total > 0 else "fail",
            f"total weight {mu_total:g}",
        )
    )

    worst_pop = np.inf
    worst_local = np.inf
    ok_pop = True
    ok_local = True
    for t in times:
        pop = assemble_population_matrices(model, t)
        qmin = _min_eig(pop.Q)
        if qmin < -1e-10:
            checks.append(
                ValidationCheck("deep_Q_psd", "fail", f"min eigenvalue {qmin:.3e} at t={t:g}")
            )
            break
        rmin = _min_eig(pop.R)
        if rmin <= 0:
            checks.append(
                ValidationCheck("deep_R_pd", "fail", f"min eigenvalue {rmin:.3e} at t={t:g}")
            )
            break
        if lam > 0:
            gap = pop.B @ np.linalg.solve(pop.R, pop.B.T) - 2 * lam * pop.Sigma
            worst_pop = min(worst_pop, _min_eig(gap))
            ok_pop = ok_pop and worst_pop > 0
            for s, sp in enumerate(model.sub_populations, start=1):
                b = sp.B.at(t)
                local = b @ np.linalg.solve(sp.R.at(t), b.T) - 2 * lam * (
                    sp.mu / sp.n
                ) * sp.noise_cov(t)
                worst_local = min(worst_local, _min_eig(local))
            ok_local = ok_local and worst_local > 0
    else:
        qmin_T = _min_eig(assemble_population_matrices(model, model.horizon, terminal=True).Q)
        if qmin_T < -1e-10:
            checks.append(
                ValidationCheck("deep_Q_psd", "fail", f"terminal min eigenvalue {qmin_T:.3e}")
            )
        else:
            checks.append(ValidationCheck("deep_Q_psd", "pass", "positive semidefinite"))
        checks.append(ValidationCheck("deep_R_pd", "pass", "positive definite"))

    if lam > 0:
        checks.append(
            ValidationCheck(
                "risk_margin_local",
                "pass" if ok_local else "fail",
                f"min eigenvalue of B R^-1 B^T - 2 lambda (mu/n) Sigma: {worst_local:.6g}",
            )
        )
        checks.append(
            ValidationCheck(
                "risk_margin_deep",
                "pass" if ok_pop else "fail",
                f"min eigenvalue of deep B R^-1 B^T - 2 lambda Sigma: {worst_pop:.6g}",
            )
        )
    elif lam < 0:
        checks.append(
            ValidationCheck(
                "risk_factor",
                "pass",
                f"risk-seeking lambda={lam:g} accepted without margin checks",
            )
        )

    return ValidationReport(checks=tuple(checks), tol_orth=tol_orth)


# -- model surgery helpers ----------------------------------------------------


def zero_coupling(model: TeamModel) -> TeamModel:
    """Copy of the model with every coupling block removed."""
    subs = tuple(
        dataclasses.replace(sp, Abar=(), Bbar=(), Qbar=None, Rbar=None, Qbar_terminal=None)
        for sp in model.sub_populations
    )
    return dataclasses.replace(model, sub_populations=subs)


def with_population_size(model: TeamModel, s: int, n: int) -> TeamModel:
    """Copy of the model with sub-population s (1-based) resized to n agents.

    Requires the sub-population to be single-feature with uniform influence
    factors, without per-agent effort weights, and with agent-exchangeable
    initial means and tracking signals (identical rows), so that resizing
    amounts to tiling the common row.
    """
    sp = model.sub_populations[s - 1]
    if sp.f != 1 or not np.allclose(sp.alpha, 1.0):
        raise ValueError("resizing requires a single uniform influence column")
    if sp.beta is not None:
        raise ValueError("resizing with per-agent effort weights is not supported")
    init = sp.init
    if init is not None:
        mean0 = init.mean
        if not np.allclose(mean0, mean0[0]):
            raise ValueError("resizing requires identical initial means")
        init = InitSpec(init.kind, np.tile(mean0[0], (n, 1)), init.cov)
    tracking = sp.tracking
    if tracking is not None:
        vals = tracking.values
        segs = vals[None] if tracking.is_constant else vals
        if not all(np.allclose(seg, seg[0]) for seg in segs):
            raise ValueError("resizing requires identical tracking rows")
        tiled = np.stack([np.tile(seg[0], (n, 1)) for seg in segs])
        tracking = Schedule(tiled[0] if tracking.is_constant else tiled, tracking.t_grid)
    new_sp = dataclasses.replace(sp, n=n, alpha=np.ones((n, 1)), init=init, tracking=tracking)
    subs = list(model.sub_populations)
    subs[s - 1] = new_sp
    return dataclasses.replace(model, sub_populations=tuple(subs))


def infinite_population_limit(model: TeamModel, observed: frozenset) -> TeamModel:
    """Copy of the model with the noise of unobserved sub-populations removed.

    Zeroing C(s) for s outside the observed set removes exactly the
    population-size-dependent covariance terms from every backward equation,
    which is the infinite-population limit used by the limit filter.
    """
    subs = []
    for s, sp in enumerate(model.sub_populations, start=1):
        if s in observed:
            subs.append(sp)
        else:
            subs.append(dataclasses.replace(sp, C=constant(np.zeros((sp.d_x, sp.d_x)))))
    return dataclasses.replace(model, sub_populations=tuple(subs))
