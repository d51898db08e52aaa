"""Command-line front end: validation, solving, simulation, experiments.

Every command reads a model (--model FILE or --scenario NAME), writes its
delimited/JSON artifacts into --out, and renders a figure next to them where
a plot is meaningful. Outputs are deterministic given (model, seed): rerun a
command twice and the artifacts are byte-identical.

Exit codes: 0 success, 1 domain failure (validation fails, risk margin
violated, diverging sweeps), 2 input error (unreadable files, malformed
JSON, bad flag values).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from deeplq.deep_riccati import (
    FiniteEscapeError,
    compute_value_constants,
    solve_all,
    time_grid,
)
from deeplq.equivariance import check_equivariant
from deeplq.figures import gains_figure, sweep_figure, trajectory_figure
from deeplq.model import TeamModel, infinite_population_limit, validate_model
from deeplq.modelio import (
    ModelFormatError,
    read_lq_system,
    read_model,
    read_transformation,
)
from deeplq.scenarios import builtin_supply_chain, get_scenario, scenario_names
from deeplq.simulator import (
    centralized_oracle_gains,
    estimate_risk_sensitive_cost,
    price_of_information,
    price_of_robustness,
    simulate,
    write_trajectory_csv,
)
from deeplq.strategies import (
    CentralizedStrategy,
    DssStrategy,
    PdssStrategy,
    ZeroStrategy,
    dss_joint_gain,
    export_network_weights,
    write_network_json,
)

__all__ = ["main", "RunConfig", "builtin_supply_chain"]


class InputError(ValueError):
    """Bad command-line input (maps to exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    """Parsed and validated invocation parameters."""

    command: str
    model_path: str | None = None
    scenario: str | None = None
    dt: float | None = None
    replicates: int = 10_000
    seed: int = 0
    risk_override: float | None = None
    sweep: tuple | None = None
    observed: tuple | None = None
    out_dir: Path = Path(".")
    strategy: str = "dss"
    system_path: str | None = None
    transform_path: str | None = None
    action: str | None = None


def _int_list(raw: str, what: str) -> tuple:
    try:
        vals = tuple(int(p) for p in raw.split(",") if p.strip() != "")
    except ValueError as exc:
        raise InputError(f"{what} must be a comma-separated integer list: {exc}") from None
    if not vals:
        raise InputError(f"{what} must be nonempty")
    return vals


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--model", metavar="PATH", help="model JSON file")
    src.add_argument(
        "--scenario",
        metavar="NAME",
        help=f"builtin scenario ({', '.join(scenario_names())})",
    )
    common.add_argument("--seed", type=int, default=0, help="base RNG seed")
    common.add_argument("--dt", type=float, default=None, help="time step")
    common.add_argument(
        "--replicates", type=int, default=10_000, metavar="M", help="Monte Carlo replicates"
    )
    common.add_argument("--out", default=".", metavar="DIR", help="output directory")
    common.add_argument(
        "--lambda", dest="risk_override", type=float, default=None, help="risk factor override"
    )
    common.add_argument("--sweep", default=None, metavar="n1,n2,...", help="population sweep")
    common.add_argument(
        "--observed", default=None, metavar="s1,s2,...", help="observed sub-populations"
    )

    p = argparse.ArgumentParser(
        prog="deeplq",
        description="Risk-sensitive control of large teams via low-dimensional Riccati flows.",
    )
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a model's solvability conditions")
    sub.add_parser("solve", parents=[common], help="solve the backward flows, dump gains")
    sim = sub.add_parser("simulate", parents=[common], help="simulate one closed-loop path")
    sim.add_argument(
        "--strategy",
        choices=("dss", "zero", "pdss-finite", "pdss-infinite", "oracle"),
        default="dss",
    )
    sub.add_parser("por", parents=[common], help="price-of-robustness sweep")
    sub.add_parser("poi", parents=[common], help="price-of-information sweep")
    sub.add_parser(
        "oracle", parents=[common], help="compare composed gains with the joint solution"
    )
    sub.add_parser("export-nn", parents=[common], help="dump the closed loop as network layers")
    eq = sub.add_parser("equivariance", parents=[common], help="equivariance checks")
    eq.add_argument("action", choices=("check",))
    eq.add_argument("--system", dest="system_path", metavar="PATH", required=True)
    eq.add_argument("--transform", dest="transform_path", metavar="PATH", required=True)
    return p


def _config(args: argparse.Namespace) -> RunConfig:
    if args.dt is not None and args.dt <= 0:
        raise InputError("--dt must be positive")
    if args.replicates < 2:
        raise InputError("--replicates must be at least 2")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = out_dir / ".write_probe"
    try:
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise InputError(f"output directory not writable: {exc}") from None
    return RunConfig(
        command=args.command,
        model_path=args.model,
        scenario=args.scenario,
        dt=args.dt,
        replicates=args.replicates,
        seed=args.seed,
        risk_override=args.risk_override,
        sweep=None if args.sweep is None else _int_list(args.sweep, "--sweep"),
        observed=None if args.observed is None else _int_list(args.observed, "--observed"),
        out_dir=out_dir,
        strategy=getattr(args, "strategy", "dss"),
        system_path=getattr(args, "system_path", None),
        transform_path=getattr(args, "transform_path", None),
        action=getattr(args, "action", None),
    )


def _load_model(config: RunConfig) -> tuple[TeamModel, str, bool]:
    """Model, artifact label, and whether it came from a hand-written file."""
    if config.model_path is None and config.scenario is None:
        raise InputError("one of --model or --scenario is required")
    if config.model_path is not None:
        model = read_model(config.model_path)
        label = Path(config.model_path).stem
        ingested = True
    else:
        try:
            model = get_scenario(config.scenario)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        label = config.scenario
        ingested = False
    if config.risk_override is not None:
        model = dataclasses.replace(model, risk_factor=config.risk_override)
    return model, label, ingested


def _dump_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_report_csv(path: Path, rows) -> None:
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    lines = [",".join(cols)]
    for r in rows:
        cells = []
        for k in cols:
            v = r.get(k, "")
            if isinstance(v, float):
                cells.append(format(v, ".17g"))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _grid_steps(model: TeamModel, dt: float | None, default_steps: int = 2000) -> int:
    if dt is None:
        return default_steps
    steps = int(round(model.horizon / dt))
    if steps < 1 or abs(steps * dt - model.horizon) > 1e-9 * max(1.0, model.horizon):
        raise InputError(f"--dt {dt} does not divide the horizon {model.horizon}")
    return steps


def _cmd_validate(config: RunConfig) -> int:
    model, label, ingested = _load_model(config)
    report = validate_model(model, ingested=ingested)
    payload = {
        "ok": report.ok,
        "checks": [
            {"name": c.name, "status": c.status, "detail": c.detail} for c in report.checks
        ],
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    _dump_json(config.out_dir / f"validate_{label}.json", payload)
    return 0 if report.ok else 1


def _cmd_solve(config: RunConfig) -> int:
    model, label, _ = _load_model(config)
    grid = time_grid(model.horizon, _grid_steps(model, config.dt))
    sol = solve_all(model, grid)
    rows = []
    for k, t in enumerate(grid):
        row = {"t": float(t)}
        for s in range(1, model.S + 1):
            g = sol.gain_local[s - 1][k]
            for r in range(g.shape[0]):
                for c in range(g.shape[1]):
                    row[f"local{s}_r{r}c{c}"] = float(g[r, c])
        gd = sol.gain_deep[k]
        for r in range(gd.shape[0]):
            for c in range(gd.shape[1]):
                row[f"deep_r{r}c{c}"] = float(gd[r, c])
        rows.append(row)
    csv_path = config.out_dir / f"solve_{label}_gains.csv"
    _write_report_csv(csv_path, rows)
    fig_path = config.out_dir / f"solve_{label}_gains.png"
    gains_figure(sol, fig_path)
    summary = {"grid_points": len(grid), "files": [csv_path.name, fig_path.name]}
    try:
        vc = compute_value_constants(model, sol)
        summary["optimal_value"] = vc.value
        value_path = config.out_dir / f"solve_{label}_value.json"
        _dump_json(value_path, {"optimal_value": vc.value, "risk_factor": model.risk_factor})
        summary["files"].append(value_path.name)
    except ValueError as exc:
        summary["optimal_value_note"] = str(exc)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _make_strategy(config: RunConfig, model: TeamModel, grid: np.ndarray):
    if config.strategy == "zero":
        return ZeroStrategy()
    if config.strategy == "oracle":
        return CentralizedStrategy(grid, centralized_oracle_gains(model, grid))
    sol = solve_all(model, grid)
    if config.strategy == "dss":
        return DssStrategy(sol)
    observed = frozenset(config.observed) if config.observed is not None else model.shared_set
    bad = [s for s in observed if not 1 <= s <= model.S]
    if bad:
        raise InputError(f"--observed indices out of range: {bad}")
    if config.strategy == "pdss-finite":
        return PdssStrategy(sol, observed, "finite")
    limit = infinite_population_limit(model, observed)
    return PdssStrategy(solve_all(limit, grid), observed, "infinite")


def _cmd_simulate(config: RunConfig) -> int:
    model, label, _ = _load_model(config)
    steps = _grid_steps(model, config.dt, default_steps=1000)
    dt = model.horizon / steps
    grid = time_grid(model.horizon, steps)
    strategy = _make_strategy(config, model, grid)
    tr = simulate(model, strategy, dt=dt, seed=config.seed)
    stem = f"simulate_{label}_{config.strategy}_seed{config.seed}"
    csv_path = config.out_dir / f"{stem}.csv"
    write_trajectory_csv(csv_path, tr)
    trajectory_figure(tr, config.out_dir / f"{stem}.png")
    summary = {
        "strategy": tr.kind,
        "seed": config.seed,
        "dt": dt,
        "weighted_cost": tr.cost_weighted,
        "files": [csv_path.name, f"{stem}.png"],
    }
    _dump_json(config.out_dir / f"{stem}.json", summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_por(config: RunConfig) -> int:
    model, label, _ = _load_model(config)
    if config.sweep is None:
        raise InputError("por requires --sweep n1,n2,...")
    lam = config.risk_override if config.risk_override is not None else model.risk_factor
    report = price_of_robustness(
        model,
        lam=lam,
        M=config.replicates,
        seed=config.seed,
        n_sweep=config.sweep,
        dt=config.dt if config.dt is not None else 0.01,
    )
    stem = f"por_{label}_seed{config.seed}"
    _write_report_csv(config.out_dir / f"{stem}.csv", report.rows)
    _dump_json(config.out_dir / f"{stem}.json", report.to_json_dict())
    sweep_figure(report, config.out_dir / f"{stem}.png")
    print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_poi(config: RunConfig) -> int:
    model, label, _ = _load_model(config)
    if config.sweep is None:
        raise InputError("poi requires --sweep n1,n2,... (unobserved sizes)")
    observed = config.observed if config.observed is not None else tuple(model.shared_set)
    report = price_of_information(
        model,
        observed=observed,
        filter_kind="both",
        n_star_sweep=config.sweep,
        M=config.replicates,
        seed=config.seed,
        dt=config.dt if config.dt is not None else 0.01,
    )
    stem = f"poi_{label}_seed{config.seed}"
    _write_report_csv(config.out_dir / f"{stem}.csv", report.rows)
    _dump_json(config.out_dir / f"{stem}.json", report.to_json_dict())
    sweep_figure(report, config.out_dir / f"{stem}.png")
    print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_oracle(config: RunConfig) -> int:
    model, label, _ = _load_model(config)
    grid = time_grid(model.horizon, _grid_steps(model, config.dt))
    sol = solve_all(model, grid)
    gains = centralized_oracle_gains(model, grid)
    worst = 0.0
    for k, t in enumerate(grid):
        composed, _ = dss_joint_gain(model, sol, t)
        num = float(np.linalg.norm(composed - gains[k]))
        worst = max(worst, num / (1.0 + float(np.linalg.norm(gains[k]))))
    payload = {"max_relative_gain_residual": worst, "grid_points": len(grid)}
    print(json.dumps(payload, indent=2, sort_keys=True))
    _dump_json(config.out_dir / f"oracle_{label}.json", payload)
    return 0


def _cmd_export_nn(config: RunConfig) -> int:
    model, label, _ = _load_model(config)
    steps = _grid_steps(model, config.dt, default_steps=1000)
    dt = model.horizon / steps
    grid = time_grid(model.horizon, steps)
    sol = solve_all(model, grid)
    export = export_network_weights(model, sol, dt)
    path = config.out_dir / f"network_{label}.json"
    write_network_json(path, export)
    payload = {"layers": export.layers, "dt": dt, "file": path.name}
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_equivariance(config: RunConfig) -> int:
    system = read_lq_system(config.system_path)
    transform = read_transformation(config.transform_path)
    verdict = check_equivariant(transform, system)
    payload = {
        "ok": verdict.ok,
        "residual_dynamics_A": verdict.residual_dynamics_A,
        "residual_dynamics_B": verdict.residual_dynamics_B,
        "residual_cost": verdict.residual_cost,
        "tolerance": verdict.tolerance,
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0 if verdict.ok else 1


_COMMANDS = {
    "validate": _cmd_validate,
    "solve": _cmd_solve,
    "simulate": _cmd_simulate,
    "por": _cmd_por,
    "poi": _cmd_poi,
    "oracle": _cmd_oracle,
    "export-nn": _cmd_export_nn,
    "equivariance": _cmd_equivariance,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config(args)
        return _COMMANDS[args.command](config)
    except (InputError, ModelFormatError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(
            f"input error: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}",
            file=sys.stderr,
        )
        return 2
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except FiniteEscapeError as exc:
        print(f"domain failure: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as exc:
        print(f"domain failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
