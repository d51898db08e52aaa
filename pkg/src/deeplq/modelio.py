"""JSON (de)serialization of team models and equivariance inputs.

Model files are a single JSON object:

    {
      "horizon": 10.0,
      "risk_factor": 1.0,
      "shared_set": [1, 2],
      "sub_populations": [
        {
          "n": 2, "f": 1, "d_x": 1, "d_u": 1,
          "A": [[2.0]], "B": [[1.0]], "C": [[1.0]],
          "Q": [[1.0]], "R": [[0.1]],
          "mu": 0.95,
          "alpha": [[1.0], [1.0]],
          "Abar": [[[0.1, 0.0]]],          // optional, one matrix per feature
          "Bbar": [[[0.0, 0.0]]],          // optional
          "Qbar": [[0.0, 0.0], [0.0, 0.0]],// optional
          "Rbar": null,                    // optional
          "tracking": [[0.3], [0.7]],      // optional, rows per agent
          "beta": [1.0, 1.0],              // optional
          "init": {"kind": "gaussian", "mean": [[0.0], [0.0]], "cov": [[0.1]]},
          "Q_terminal": [[0.0]],           // optional terminal override
          "Qbar_terminal": null            // optional terminal override
        }
      ]
    }

Any matrix-valued field accepts either a plain nested list (constant in
time) or {"t_grid": [...], "values": [...]} for a piecewise-constant
schedule. Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import json

import numpy as np

from deeplq.equivariance import LqSystem, Transformation
from deeplq.model import InitSpec, Schedule, SubPopulation, TeamModel

__all__ = [
    "ModelFormatError",
    "read_model",
    "write_model",
    "model_from_dict",
    "model_to_dict",
    "read_lq_system",
    "read_transformation",
]


class ModelFormatError(ValueError):
    """A structurally invalid model/system file (valid JSON, wrong content)."""


_SP_KEYS = {
    "n",
    "f",
    "d_x",
    "d_u",
    "A",
    "B",
    "C",
    "Q",
    "R",
    "mu",
    "alpha",
    "Abar",
    "Bbar",
    "Qbar",
    "Rbar",
    "tracking",
    "beta",
    "init",
    "Q_terminal",
    "Qbar_terminal",
}
_MODEL_KEYS = {"horizon", "risk_factor", "shared_set", "sub_populations"}


def _schedule(raw, what: str) -> Schedule:
    try:
        if isinstance(raw, dict):
            extra = set(raw) - {"t_grid", "values"}
            if extra:
                raise ModelFormatError(f"{what}: unknown schedule keys {sorted(extra)}")
            return Schedule(np.array(raw["values"], dtype=float), t_grid=raw["t_grid"])
        return Schedule(np.array(raw, dtype=float))
    except (TypeError, KeyError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{what}: {exc}") from exc


def _opt_schedule(raw, what: str) -> Schedule | None:
    return None if raw is None else _schedule(raw, what)


def _sub_population(raw: dict, idx: int) -> SubPopulation:
    what = f"sub_populations[{idx}]"
    if not isinstance(raw, dict):
        raise ModelFormatError(f"{what} must be an object")
    extra = set(raw) - _SP_KEYS
    if extra:
        raise ModelFormatError(f"{what}: unknown keys {sorted(extra)}")
    missing = {"n", "f", "d_x", "d_u", "A", "B", "C", "Q", "R", "mu", "alpha"} - set(raw)
    if missing:
        raise ModelFormatError(f"{what}: missing keys {sorted(missing)}")
    init = None
    if raw.get("init") is not None:
        d = raw["init"]
        extra = set(d) - {"kind", "mean", "cov"}
        if extra:
            raise ModelFormatError(f"{what}.init: unknown keys {sorted(extra)}")
        init = InitSpec(
            kind=d.get("kind", "deterministic"),
            mean=np.array(d["mean"], dtype=float),
            cov=None if d.get("cov") is None else np.array(d["cov"], dtype=float),
        )
    try:
        return SubPopulation(
            n=int(raw["n"]),
            f=int(raw["f"]),
            d_x=int(raw["d_x"]),
            d_u=int(raw["d_u"]),
            A=_schedule(raw["A"], f"{what}.A"),
            B=_schedule(raw["B"], f"{what}.B"),
            C=_schedule(raw["C"], f"{what}.C"),
            Q=_schedule(raw["Q"], f"{what}.Q"),
            R=_schedule(raw["R"], f"{what}.R"),
            mu=float(raw["mu"]),
            alpha=np.array(raw["alpha"], dtype=float),
            Abar=tuple(
                _schedule(m, f"{what}.Abar[{j}]") for j, m in enumerate(raw.get("Abar") or ())
            ),
            Bbar=tuple(
                _schedule(m, f"{what}.Bbar[{j}]") for j, m in enumerate(raw.get("Bbar") or ())
            ),
            Qbar=_opt_schedule(raw.get("Qbar"), f"{what}.Qbar"),
            Rbar=_opt_schedule(raw.get("Rbar"), f"{what}.Rbar"),
            tracking=_opt_schedule(raw.get("tracking"), f"{what}.tracking"),
            beta=None if raw.get("beta") is None else np.array(raw["beta"], dtype=float),
            init=init,
            Q_terminal=(
                None
                if raw.get("Q_terminal") is None
                else np.array(raw["Q_terminal"], dtype=float)
            ),
            Qbar_terminal=(
                None
                if raw.get("Qbar_terminal") is None
                else np.array(raw["Qbar_terminal"], dtype=float)
            ),
        )
    except ValueError as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{what}: {exc}") from exc


def model_from_dict(raw: dict) -> TeamModel:
    """Build a TeamModel from parsed JSON, with loud structural errors."""
    if not isinstance(raw, dict):
        raise ModelFormatError("model file must contain a JSON object")
    extra = set(raw) - _MODEL_KEYS
    if extra:
        raise ModelFormatError(f"unknown top-level keys {sorted(extra)}")
    if "sub_populations" not in raw or "horizon" not in raw:
        raise ModelFormatError("model needs 'horizon' and 'sub_populations'")
    sps = tuple(_sub_population(d, i) for i, d in enumerate(raw["sub_populations"]))
    try:
        return TeamModel(
            sub_populations=sps,
            horizon=float(raw["horizon"]),
            risk_factor=float(raw.get("risk_factor", 0.0)),
            shared_set=frozenset(int(s) for s in raw.get("shared_set", ())),
        )
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc


def read_model(path) -> TeamModel:
    """Read a model JSON file.

    Raises json.JSONDecodeError (with line/column) for malformed JSON and
    ModelFormatError for well-formed JSON with invalid content.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return model_from_dict(raw)


def _sched_out(sched: Schedule | None):
    if sched is None:
        return None
    if sched.is_constant:
        return sched.values.tolist()
    return {"t_grid": sched.t_grid.tolist(), "values": sched.values.tolist()}


def model_to_dict(model: TeamModel) -> dict:
    out = {
        "horizon": model.horizon,
        "risk_factor": model.risk_factor,
        "shared_set": sorted(model.shared_set),
        "sub_populations": [],
    }
    for sp in model.sub_populations:
        d = {
            "n": sp.n,
            "f": sp.f,
            "d_x": sp.d_x,
            "d_u": sp.d_u,
            "A": _sched_out(sp.A),
            "B": _sched_out(sp.B),
            "C": _sched_out(sp.C),
            "Q": _sched_out(sp.Q),
            "R": _sched_out(sp.R),
            "mu": sp.mu,
            "alpha": sp.alpha.tolist(),
        }
        if sp.Abar:
            d["Abar"] = [_sched_out(m) for m in sp.Abar]
        if sp.Bbar:
            d["Bbar"] = [_sched_out(m) for m in sp.Bbar]
        if sp.Qbar is not None:
            d["Qbar"] = _sched_out(sp.Qbar)
        if sp.Rbar is not None:
            d["Rbar"] = _sched_out(sp.Rbar)
        if sp.tracking is not None:
            d["tracking"] = _sched_out(sp.tracking)
        if sp.beta is not None:
            d["beta"] = sp.beta.tolist()
        if sp.init is not None:
            d["init"] = {
                "kind": sp.init.kind,
                "mean": sp.init.mean.tolist(),
                "cov": None if sp.init.cov is None else sp.init.cov.tolist(),
            }
        if sp.Q_terminal is not None:
            d["Q_terminal"] = sp.Q_terminal.tolist()
        if sp.Qbar_terminal is not None:
            d["Qbar_terminal"] = sp.Qbar_terminal.tolist()
        out["sub_populations"].append(d)
    return out


def write_model(path, model: TeamModel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_lq_system(path) -> LqSystem:
    """Read a joint system file with keys A, B, Q, R (schedules allowed)."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ModelFormatError("system file must contain a JSON object")
    extra = set(raw) - {"A", "B", "Q", "R"}
    if extra:
        raise ModelFormatError(f"unknown system keys {sorted(extra)}")
    missing = {"A", "B", "Q", "R"} - set(raw)
    if missing:
        raise ModelFormatError(f"system file missing keys {sorted(missing)}")
    try:
        return LqSystem(
            A=_schedule(raw["A"], "A"),
            B=_schedule(raw["B"], "B"),
            Q=_schedule(raw["Q"], "Q"),
            R=_schedule(raw["R"], "R"),
        )
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc


def read_transformation(path) -> Transformation:
    """Read a transformation file: {"F": [[...]], "d_x": 1, "d_u": 1}."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or "F" not in raw:
        raise ModelFormatError("transformation file needs key 'F'")
    extra = set(raw) - {"F", "d_x", "d_u"}
    if extra:
        raise ModelFormatError(f"unknown transformation keys {sorted(extra)}")
    try:
        return Transformation(
            F=np.array(raw["F"], dtype=float),
            d_x=int(raw.get("d_x", 1)),
            d_u=int(raw.get("d_u", 1)),
        )
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc
