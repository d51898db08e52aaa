"""Shared helpers for the test suite."""

import numpy as np
import pytest

from deeplq import (
    InitSpec,
    SubPopulation,
    TeamModel,
    constant,
)


def orthonormal_alpha(rng: np.random.Generator, n: int, f: int) -> np.ndarray:
    """Influence factors with exactly orthonormal scaled columns."""
    raw = rng.standard_normal((n, max(f, 1)))
    q, _ = np.linalg.qr(raw)
    return np.sqrt(n) * q[:, :f]


def scalar_subpop(
    n: int = 3,
    a: float = 0.3,
    b: float = 1.0,
    c: float = 0.5,
    q: float = 1.0,
    r: float = 1.0,
    qbar: float = 0.4,
    mu: float = 1.0,
    mean: float = 1.0,
    **kw,
) -> SubPopulation:
    """Scalar mean-field sub-population with uniform influence factors."""
    fields = dict(
        n=n,
        f=1,
        d_x=1,
        d_u=1,
        A=constant([[a]]),
        B=constant([[b]]),
        C=constant([[c]]),
        Q=constant([[q]]),
        R=constant([[r]]),
        mu=mu,
        alpha=np.ones((n, 1)),
        Qbar=constant([[qbar]]),
        init=InitSpec("deterministic", np.full((n, 1), mean), None),
    )
    fields.update(kw)
    return SubPopulation(**fields)


def scalar_model(
    n: int = 3,
    horizon: float = 1.0,
    risk_factor: float = 0.0,
    **kw,
) -> TeamModel:
    """One-sub-population scalar team, the workhorse for unit tests."""
    return TeamModel(
        sub_populations=(scalar_subpop(n=n, **kw),),
        horizon=horizon,
        risk_factor=risk_factor,
        shared_set=frozenset({1}),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240814)
