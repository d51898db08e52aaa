"""Equivariant linear-quadratic systems: construction and verification.

A joint system (A, B, Q, R) over n agents is equivariant to an n x n matrix
F when the lifted matrix F_x = kron(F, I_dx) commutes with the dynamics
(F_x A = A F_x, F_x B = B F_u) and the cost quadratic forms evaluated on
transformed points factor through the lift. Systems built from matrix
polynomials in F satisfy these identities exactly, which is what makes the
low-dimensional solution of structured teams possible: influence factors can
be read off the spectral decomposition of F.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
import scipy.linalg

from deeplq.model import Schedule

__all__ = [
    "Transformation",
    "LqSystem",
    "EquivarianceVerdict",
    "check_equivariant",
    "make_polynomial_system",
    "normal_decomposition_check",
    "SymmetricStructured",
    "make_symmetric_structured",
    "make_permutation_structured",
    "permutation_matrix",
    "all_permutation_matrices",
]


def _freeze(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Transformation:
    """An n x n transformation with cached Kronecker lifts.

    F acts on the agent index; F_x = kron(F, I_dx) and F_u = kron(F, I_du)
    act on the stacked joint state and action. spectral() returns unitary
    eigendata (complex in general), valid only for normal F.
    """

    F: np.ndarray
    d_x: int = 1
    d_u: int = 1
    F_x: np.ndarray = field(init=False)
    F_u: np.ndarray = field(init=False)

    def __post_init__(self):
        F = _freeze(self.F)
        if F.ndim != 2 or F.shape[0] != F.shape[1]:
            raise ValueError("F must be a square matrix")
        object.__setattr__(self, "F", F)
        fx = np.kron(F, np.eye(self.d_x))
        fu = np.kron(F, np.eye(self.d_u))
        fx.setflags(write=False)
        fu.setflags(write=False)
        object.__setattr__(self, "F_x", fx)
        object.__setattr__(self, "F_u", fu)

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def is_normal(self) -> bool:
        F = self.F
        scale = float(np.linalg.norm(F)) ** 2
        return float(np.linalg.norm(F.T @ F - F @ F.T)) <= 1e-10 * max(scale, 1e-300)

    def spectral(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues and orthonormal eigenvectors (columns) of a normal F.

        Uses the complex Schur form, whose triangular factor is diagonal
        exactly when F is normal, so the unitary factor holds orthonormal
        eigenvectors even with repeated eigenvalues.
        """
        if not self.is_normal:
            raise ValueError("spectral decomposition requires a normal matrix")
        T, U = scipy.linalg.schur(self.F.astype(complex), output="complex")
        return np.diag(T).copy(), U


@dataclass(frozen=True)
class LqSystem:
    """Joint-dimension linear-quadratic data (time-indexed via schedules).

    A, Q act on the stacked state (n * d_x), B maps the stacked action
    (n * d_u), R weights it. Team-cost usage expects symmetric Q and R; the
    equivariance checks evaluate the stored matrices literally, so systems
    produced as polynomials of a non-symmetric transformation (which are
    equivariant but not symmetric) are representable too.
    """

    A: Schedule
    B: Schedule
    Q: Schedule
    R: Schedule

    def __post_init__(self):
        for name in ("A", "B", "Q", "R"):
            v = getattr(self, name)
            object.__setattr__(self, name, v if isinstance(v, Schedule) else Schedule(v))
        a, b = self.A.shape, self.B.shape
        if a[0] != a[1] or b[0] != a[0]:
            raise ValueError("A must be square and B must share its row dimension")
        if self.Q.shape != a or self.R.shape != (b[1], b[1]):
            raise ValueError("Q must match A and R must match B's columns")

    @property
    def dim_x(self) -> int:
        return self.A.shape[0]

    @property
    def dim_u(self) -> int:
        return self.B.shape[1]

    def is_symmetric(self, t: float = 0.0, tol: float = 1e-12) -> bool:
        q, r = self.Q.at(t), self.R.at(t)
        return bool(
            np.allclose(q, q.T, atol=tol * (1 + np.abs(q).max()))
            and np.allclose(r, r.T, atol=tol * (1 + np.abs(r).max()))
        )


@dataclass(frozen=True)
class EquivarianceVerdict:
    """Residuals of the commutation and cost conditions; ok means all pass."""

    ok: bool
    residual_dynamics_A: float
    residual_dynamics_B: float
    residual_cost: float
    tolerance: float

    def __str__(self):
        status = "pass" if self.ok else "fail"
        return (
            f"{status}: |F_x A - A F_x| rel {self.residual_dynamics_A:.3e}, "
            f"|F_x B - B F_u| rel {self.residual_dynamics_B:.3e}, "
            f"cost form rel {self.residual_cost:.3e} (tol {self.tolerance:.1e})"
        )


def check_equivariant(
    transform: Transformation,
    system: LqSystem,
    t: float = 0.0,
    rtol: float = 1e-9,
    samples: int = 16,
    seed: int = 0,
) -> EquivarianceVerdict:
    """Verify the sufficient commutation conditions at time t.

    Dynamics: relative Frobenius residuals of F_x A - A F_x and
    F_x B - B F_u. Cost: on a seeded random batch of (x, u) pairs, the
    quadratic form through the lifted weights, tr(F_x^T F_x Q x x^T) +
    tr(F_u^T F_u R u u^T), is compared with the form of the transformed
    points, |F_x x|^2_Q + |F_u u|^2_R. Passes iff every residual <= rtol.

    Raises:
        ValueError: dimensions of the system do not match n * d_x / n * d_u.
    """
    A, B = system.A.at(t), system.B.at(t)
    Q, R = system.Q.at(t), system.R.at(t)
    F_x, F_u = transform.F_x, transform.F_u
    if A.shape != F_x.shape or B.shape != (F_x.shape[0], F_u.shape[0]):
        raise ValueError(
            f"system dims {A.shape}/{B.shape} do not match lifted dims "
            f"{F_x.shape}/{F_u.shape}"
        )
    scale_a = 1.0 + float(np.linalg.norm(F_x)) * float(np.linalg.norm(A))
    scale_b = 1.0 + float(np.linalg.norm(F_x)) * float(np.linalg.norm(B))
    res_a = float(np.linalg.norm(F_x @ A - A @ F_x)) / scale_a
    res_b = float(np.linalg.norm(F_x @ B - B @ F_u)) / scale_b

    rng = np.random.default_rng(seed)
    res_c = 0.0
    for _ in range(samples):
        x = rng.standard_normal(system.dim_x)
        u = rng.standard_normal(system.dim_u)
        lhs = float(x @ (F_x.T @ F_x @ Q) @ x + u @ (F_u.T @ F_u @ R) @ u)
        fx, fu = F_x @ x, F_u @ u
        rhs = float(fx @ Q @ fx + fu @ R @ fu)
        res_c = max(res_c, abs(lhs - rhs) / (1.0 + abs(lhs)))
    ok = res_a <= rtol and res_b <= rtol and res_c <= rtol
    return EquivarianceVerdict(ok, res_a, res_b, res_c, rtol)


def _poly(F_lift: np.ndarray, coeffs) -> np.ndarray:
    out = np.zeros_like(F_lift)
    power = np.eye(F_lift.shape[0])
    for c in np.asarray(coeffs, dtype=float):
        out = out + c * power
        power = power @ F_lift
    return out


def make_polynomial_system(
    transform: Transformation, a_coeffs, b_coeffs, q_coeffs, r_coeffs
) -> LqSystem:
    """Build a system from matrix polynomials in the lifted transformation.

    A = sum_h a[h] F_x^h and likewise for B, Q, R (B and R use F_u, which
    equals F_x when d_x == d_u). Polynomials of the same matrix commute, so
    the result passes check_equivariant by construction.
    """
    if transform.d_x != transform.d_u:
        raise ValueError("polynomial systems need d_x == d_u so that B is square")
    F_x = transform.F_x
    return LqSystem(
        A=_poly(F_x, a_coeffs),
        B=_poly(F_x, b_coeffs),
        Q=_poly(F_x, q_coeffs),
        R=_poly(F_x, r_coeffs),
    )


def normal_decomposition_check(
    transform: Transformation, Q: np.ndarray, R: np.ndarray, x, u
) -> tuple[float, float, float]:
    """Spectral split of the transformed cost along eigenvector projections.

    lhs = |F x|^2_Q + |F u|^2_R; rhs accumulates |lambda_j|^2 times the cost
    of the complex projections of x and u onto eigenvector v_j. The identity
    lhs == rhs is guaranteed when Q and R commute with the spectral
    projectors (scalar weights in particular); both sides and the relative
    residual are returned rather than asserted.

    Raises:
        ValueError: F is not normal (no orthonormal eigenbasis).
    """
    lam, V = transform.spectral()
    F = transform.F
    x = np.asarray(x, dtype=complex)
    u = np.asarray(u, dtype=complex)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    fx, fu = F @ x, F @ u
    lhs = float(np.real(np.conj(fx) @ Q @ fx + np.conj(fu) @ R @ fu))
    rhs = 0.0
    for j in range(transform.n):
        v = V[:, j]
        px = v * (np.conj(v) @ x)
        pu = v * (np.conj(v) @ u)
        w = float(np.real(np.conj(lam[j]) * lam[j]))
        rhs += w * float(np.real(np.conj(px) @ Q @ px + np.conj(pu) @ R @ pu))
    return lhs, rhs, abs(lhs - rhs) / (1.0 + abs(lhs))


@dataclass(frozen=True)
class SymmetricStructured:
    """Scalar structured team read off a symmetric transformation's spectrum.

    Every agent keeps the local coefficients (the degree-zero terms), while
    feature j carries the polynomial evaluated at eigenvalue lambda_j and the
    influence factors are the scaled eigenvector entries alpha[i, j] =
    sqrt(n) v_j[i], which are exactly orthonormal in the team sense.
    """

    local_a: float
    local_b: float
    local_q: float
    local_r: float
    feature_a: np.ndarray
    feature_b: np.ndarray
    feature_q: np.ndarray
    feature_r: np.ndarray
    eigenvalues: np.ndarray
    alpha: np.ndarray  # (n, n), column j = sqrt(n) v_j

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    def to_lq_system(self) -> LqSystem:
        """Flatten to joint matrices A = V diag(feature_a) V^T and so on."""
        V = self.alpha / np.sqrt(self.n)
        mk = lambda w: V @ np.diag(w) @ V.T
        return LqSystem(
            A=mk(self.feature_a),
            B=mk(self.feature_b),
            Q=mk(self.feature_q),
            R=mk(self.feature_r),
        )


def make_symmetric_structured(F, a_coeffs, b_coeffs, q_coeffs, r_coeffs) -> SymmetricStructured:
    """Structured scalar team equivariant to a symmetric matrix F.

    The per-feature coefficient of, say, the dynamics is the polynomial
    sum_h a[h] lambda_j^h at eigenvalue j; the joint flattening equals the
    matrix polynomial sum_h a[h] F^h, so it passes check_equivariant.

    Raises:
        ValueError: F is not symmetric.
    """
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1] or not np.allclose(F, F.T, atol=1e-12):
        raise ValueError("F must be a symmetric matrix")
    lam, V = np.linalg.eigh(F)
    n = F.shape[0]

    def feat(coeffs):
        c = np.asarray(coeffs, dtype=float)
        return np.array([np.polynomial.polynomial.polyval(l, c) for l in lam])

    return SymmetricStructured(
        local_a=float(np.asarray(a_coeffs, dtype=float)[0]),
        local_b=float(np.asarray(b_coeffs, dtype=float)[0]),
        local_q=float(np.asarray(q_coeffs, dtype=float)[0]),
        local_r=float(np.asarray(r_coeffs, dtype=float)[0]),
        feature_a=feat(a_coeffs),
        feature_b=feat(b_coeffs),
        feature_q=feat(q_coeffs),
        feature_r=feat(r_coeffs),
        eigenvalues=lam,
        alpha=V * np.sqrt(n),
    )


def make_permutation_structured(
    a: float,
    abar: float,
    b: float,
    bbar: float,
    q: float,
    qbar: float,
    r: float,
    rbar: float,
    n: int,
) -> LqSystem:
    """Mean-field-structured scalar system, equivariant to every permutation.

    A = a I + abar 1 (the all-ones matrix) and likewise for B, Q, R: agents
    couple only through the unweighted mean, the structure with influence
    factors identically one.
    """
    eye = np.eye(n)
    ones = np.ones((n, n))
    return LqSystem(
        A=a * eye + abar * ones,
        B=b * eye + bbar * ones,
        Q=q * eye + qbar * ones,
        R=r * eye + rbar * ones,
    )


def permutation_matrix(perm) -> np.ndarray:
    """Matrix P with P x reordering entries so that (P x)[k] = x[perm[k]]."""
    perm = list(perm)
    P = np.zeros((len(perm), len(perm)))
    for k, p in enumerate(perm):
        P[k, p] = 1.0
    return P


def all_permutation_matrices(n: int):
    """Every n! permutation matrix (meant for exhaustive checks, n <= 5)."""
    if n > 5:
        raise ValueError("exhaustive enumeration capped at n = 5")
    return [permutation_matrix(p) for p in permutations(range(n))]
