"""Built-in models: the supply-chain scenario, small test models, generators.

The supply chain has one supplier whose production level should match the
aggregate delivered product of n2 distributors, each tracking its own
operating point. The supplier pays for the mismatch between production and
the influence-weighted delivery average, which couples it to the
distributors' deep state only; the problem therefore stays low-dimensional
no matter how many distributors there are.
"""

from __future__ import annotations

import numpy as np

from deeplq.model import (
    InitSpec,
    Schedule,
    SubPopulation,
    TeamModel,
    validate_model,
)

__all__ = [
    "builtin_supply_chain",
    "supplier_only",
    "three_agent",
    "random_team_model",
    "get_scenario",
    "scenario_names",
]

_VARIANT_PROFILES = {
    # leading distributors' raw influence values; the rest sit at 0.1
    "a": ([4.45], 0.1),
    "b": ([3.14, 3.14], 0.1),
    "c": ("half", 1.41),  # half at 1.41, half at 0.1
    "d": ("uniform", 1.0),
}


def _variant_alpha(variant: str, n2: int) -> np.ndarray:
    prof = _VARIANT_PROFILES.get(variant)
    if prof is None:
        raise ValueError(f"unknown supply-chain variant {variant!r} (use a, b, c, or d)")
    head, rest = prof
    if head == "uniform":
        raw = np.full(n2, rest)
    elif head == "half":
        raw = np.full(n2, 0.1)
        raw[: n2 // 2] = rest
    else:
        if n2 < len(head):
            raise ValueError(f"variant {variant!r} needs at least {len(head)} distributors")
        raw = np.full(n2, rest)
        raw[: len(head)] = head
    # rescale so (1/n) sum alpha^2 = 1 exactly, preserving ratios
    raw = raw * np.sqrt(n2 / float(raw @ raw))
    return raw.reshape(n2, 1)


def builtin_supply_chain(
    variant: str = "a", n2: int = 20, tracking_seed: int = 2024
) -> TeamModel:
    """Supplier-and-distributors model with the Fig-3-style influence profiles.

    Supplier (one agent): state gain 0.4, input gain 0.8, noise 0.6, running
    cost x^2 + 0.5 n2 (x - xbar_2)^2 + u^2 where xbar_2 is the distributors'
    influence-weighted average. The mismatch enters through the local weight
    1 + 0.5 n2 together with a deep cross-weight over the stacked deep state
    (the supplier's own deep state equals its state since it is alone).

    Distributors (n2 agents): state gain 2, input gain 1, noise 1, running
    cost (x - r_i)^2 + 0.1 u^2 with operating points r_i drawn once uniformly
    from [0, 1] using tracking_seed (constant in time). Risk factor 1,
    horizon 10, sub-population weights proportional to their sizes; variant
    picks the influence profile: one dominant (a), two dominant (b), half
    dominant (c), homogeneous (d), always rescaled to exact orthonormality.
    All agents start at zero.
    """
    if n2 < 2:
        raise ValueError("need at least two distributors")
    rng = np.random.default_rng(tracking_seed)
    r = rng.uniform(0.0, 1.0, size=(n2, 1))
    mismatch = 0.5 * n2
    supplier = SubPopulation(
        n=1,
        f=1,
        d_x=1,
        d_u=1,
        A=[[0.4]],
        B=[[0.8]],
        C=[[0.6]],
        Q=[[1.0 + mismatch]],
        R=[[1.0]],
        mu=1.0 / (1.0 + n2),
        alpha=np.ones((1, 1)),
        Qbar=Schedule(np.array([[0.0, -mismatch], [-mismatch, mismatch]])),
        init=InitSpec("deterministic", np.zeros((1, 1))),
    )
    distributors = SubPopulation(
        n=n2,
        f=1,
        d_x=1,
        d_u=1,
        A=[[2.0]],
        B=[[1.0]],
        C=[[1.0]],
        Q=[[1.0]],
        R=[[0.1]],
        mu=n2 / (1.0 + n2),
        alpha=_variant_alpha(variant, n2),
        tracking=Schedule(r),
        init=InitSpec("deterministic", np.zeros((n2, 1))),
    )
    return TeamModel(
        sub_populations=(supplier, distributors),
        horizon=10.0,
        risk_factor=1.0,
        shared_set=frozenset({1, 2}),
    )


def supplier_only() -> TeamModel:
    """Scalar one-agent model with tracking, risk factor 1, short horizon.

    Small enough that the analytic value constants can be cross-checked by
    plain Monte Carlo at tight tolerances; the noise gain is reduced to 0.5
    so the risk margin holds at risk factor 1.
    """
    sp = SubPopulation(
        n=1,
        f=1,
        d_x=1,
        d_u=1,
        A=[[0.4]],
        B=[[0.8]],
        C=[[0.5]],
        Q=[[1.0]],
        R=[[1.0]],
        mu=1.0,
        alpha=np.ones((1, 1)),
        tracking=Schedule(np.array([[0.5]])),
        init=InitSpec("deterministic", np.array([[1.0]])),
    )
    return TeamModel(sub_populations=(sp,), horizon=1.0, risk_factor=1.0)


def three_agent() -> TeamModel:
    """Two coupled sub-populations, three agents total, for oracle checks."""
    sp1 = SubPopulation(
        n=1,
        f=1,
        d_x=1,
        d_u=1,
        A=[[0.3]],
        B=[[1.0]],
        C=[[0.4]],
        Q=[[2.0]],
        R=[[1.0]],
        mu=0.4,
        alpha=np.ones((1, 1)),
        Qbar=Schedule(np.array([[0.5, -0.3], [-0.3, 0.4]])),
    )
    sp2 = SubPopulation(
        n=2,
        f=1,
        d_x=1,
        d_u=1,
        A=[[-0.2]],
        B=[[0.9]],
        C=[[0.5]],
        Q=[[1.0]],
        R=[[0.8]],
        mu=0.6,
        alpha=np.ones((2, 1)),
        Abar=(Schedule(np.array([[0.2, -0.1]])),),
        init=InitSpec("gaussian", np.array([[0.5], [-0.5]]), np.array([[0.1]])),
    )
    return TeamModel(sub_populations=(sp1, sp2), horizon=1.0, risk_factor=0.1)


def _orthonormal_alpha(n: int, f: int, rng: np.random.Generator) -> np.ndarray:
    if f == 1:
        return np.ones((n, 1))
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return q[:, :f] * np.sqrt(n)


def _psd(d: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    m = rng.standard_normal((d, d))
    return scale * (m @ m.T) / d + 0.1 * scale * np.eye(d)


def random_team_model(
    seed: int,
    risk_factor: float = 0.1,
    max_S: int = 2,
    max_n: int = 5,
    max_f: int = 2,
    max_d: int = 2,
    coupling: str = "deep",
    horizon: float = 1.0,
    with_tracking: bool = False,
    max_tries: int = 60,
) -> TeamModel:
    """Randomized valid team model (deterministic in seed).

    coupling selects the structure: "none" leaves sub-populations fully
    decoupled (no aggregate dynamics or costs), "deep" draws dense aggregate
    blocks, and "weak" restricts every aggregate block to an agent's own
    sub-population and feature so the per-feature decomposition applies.
    Models are redrawn until validation (including the risk margin) passes.
    """
    if coupling not in ("none", "deep", "weak"):
        raise ValueError("coupling must be 'none', 'deep', or 'weak'")
    for trial in range(max_tries):
        rng = np.random.default_rng((seed, trial))
        model = _draw_model(
            rng, risk_factor, max_S, max_n, max_f, max_d, coupling, horizon, with_tracking
        )
        if validate_model(model).ok:
            return model
    raise RuntimeError(f"no valid model found in {max_tries} draws for seed {seed}")


def _draw_model(rng, lam, max_S, max_n, max_f, max_d, coupling, horizon, with_tracking):
    S = int(rng.integers(1, max_S + 1))
    ns = [int(rng.integers(2, max_n + 1)) for _ in range(S)]
    ds = [int(rng.integers(1, max_d + 1)) for _ in range(S)]
    fs = [int(min(rng.integers(1, max_f + 1), ns[s])) for s in range(S)]
    D_x = sum(fs[s] * ds[s] for s in range(S))
    D_u = D_x  # square action blocks keep the risk margin attainable
    x_off = np.cumsum([0] + [fs[s] * ds[s] for s in range(S)])
    sps = []
    for s in range(S):
        n, d, f = ns[s], ds[s], fs[s]
        alpha = _orthonormal_alpha(n, f, rng)
        kw = {}
        if coupling == "deep":
            kw["Abar"] = tuple(
                Schedule(0.3 * rng.standard_normal((d, D_x))) for _ in range(f)
            )
            kw["Bbar"] = tuple(
                Schedule(0.1 * rng.standard_normal((d, D_u))) for _ in range(f)
            )
            kw["Qbar"] = Schedule(_psd(D_x, rng, 0.4))
            kw["Rbar"] = Schedule(_psd(D_u, rng, 0.05))
        elif coupling == "weak":
            abars, bbars = [], []
            qbar = np.zeros((D_x, D_x))
            rbar = np.zeros((D_u, D_u))
            for j in range(f):
                lo = x_off[s] + j * d
                own = slice(lo, lo + d)
                a = np.zeros((d, D_x))
                a[:, own] = 0.3 * rng.standard_normal((d, d))
                b = np.zeros((d, D_u))
                b[:, own] = 0.1 * rng.standard_normal((d, d))
                abars.append(Schedule(a))
                bbars.append(Schedule(b))
                qbar[own, own] = _psd(d, rng, 0.4)
                rbar[own, own] = _psd(d, rng, 0.05)
            kw["Abar"] = tuple(abars)
            kw["Bbar"] = tuple(bbars)
            kw["Qbar"] = Schedule(qbar)
            kw["Rbar"] = Schedule(rbar)
        if with_tracking:
            kw["tracking"] = Schedule(rng.uniform(-1.0, 1.0, size=(n, d)))
        sps.append(
            SubPopulation(
                n=n,
                f=f,
                d_x=d,
                d_u=d,
                A=0.4 * rng.standard_normal((d, d)),
                B=np.eye(d) + 0.3 * rng.standard_normal((d, d)),
                C=0.4 * np.eye(d),
                Q=_psd(d, rng),
                R=np.eye(d) * (1.0 + rng.random()),
                mu=float(rng.random() + 0.5),
                alpha=alpha,
                init=InitSpec(
                    "gaussian", rng.standard_normal((n, d)), 0.2 * np.eye(d)
                ),
                **kw,
            )
        )
    return TeamModel(sub_populations=tuple(sps), horizon=horizon, risk_factor=lam)


_SCENARIOS = {
    "supply-chain": lambda: builtin_supply_chain("a"),
    "supply-chain-a": lambda: builtin_supply_chain("a"),
    "supply-chain-b": lambda: builtin_supply_chain("b"),
    "supply-chain-c": lambda: builtin_supply_chain("c"),
    "supply-chain-d": lambda: builtin_supply_chain("d"),
    "supplier-only": supplier_only,
    "three-agent": three_agent,
}


def scenario_names() -> tuple:
    return tuple(sorted(_SCENARIOS))


def get_scenario(name: str) -> TeamModel:
    """Look up a builtin scenario by name."""
    try:
        builder = _SCENARIOS[name]
    except KeyError:
        raise ValueError(
            f"unknown scenario {name!r}; available: {', '.join(scenario_names())}"
        ) from None
    return builder()
