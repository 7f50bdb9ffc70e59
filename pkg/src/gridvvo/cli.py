"""Command-line entry point for the day-ahead Volt-VAR pipeline.

Subcommands: gen-data, estimate-wind, powerflow, optimize, evaluate.
Exit codes: 0 success, 2 infeasible, 3 solver cap reached without an
incumbent, 4 input error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bnb, case33, datagen
from .evaluate import EvaluationError, build_hour_injections, evaluate
from .formulation import (
    FormulationError,
    FormulationOptions,
    build_problem,
    extract_schedule,
    export_problem,
)
from .grid import GridSpecError, RadialConfig, load_grid_spec, save_grid_spec
from .loads import LoadDataError, day_profile, ingest_csv, typical_pattern
from .powerflow import (
    InjectionSet,
    NewtonDivergenceError,
    PowerFlowError,
    compare_solutions,
    lindistflow_solve,
    newton_ac_solve,
)
from .schedule import ScheduleError, VvoSchedule
from .wind import (
    WindModelError,
    WindMarkovModel,
    discretize,
    estimate_transitions,
    read_wind_csv,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_CAP_NO_INCUMBENT = 3
EXIT_INPUT = 4

_INPUT_ERRORS = (
    GridSpecError, LoadDataError, WindModelError, FormulationError,
    ScheduleError, EvaluationError, PowerFlowError,
)


def _timing() -> dict:
    return {"generated_at": datetime.datetime.now().isoformat(timespec="seconds")}


def _dump_json(payload: dict, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_hours(text: str) -> tuple[int, ...]:
    """Parse "9-22" / "1,2,3" / "1-3,20-24" into hour labels."""
    hours: set[int] = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            hours.update(range(int(a), int(b) + 1))
        else:
            hours.add(int(part))
    return tuple(sorted(hours))


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridvvo", description=__doc__)
    p.add_argument("--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic grid/loads/wind data set")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--days", type=int, default=60)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--scale", type=float, default=datagen.DEFAULT_SCALE)
    g.add_argument("--tap-step", type=float, default=0.01)

    w = sub.add_parser("estimate-wind", help="fit the wind state model from a series")
    w.add_argument("--wind", required=True, help="wind CSV (timestamp,power_kw)")
    w.add_argument("--states", type=int, default=10)
    w.add_argument("--rated-kw", type=float, default=1000.0)
    w.add_argument("--out", required=True, help="model JSON path")

    f = sub.add_parser("powerflow", help="solve one operating point both ways")
    f.add_argument("--grid", required=True)
    f.add_argument("--injections", required=True, help="injections JSON")
    f.add_argument("--config-file", help="JSON with a switch_vector entry")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--figures", action="store_true", help="render the voltage profile")

    o = sub.add_parser("optimize", help="compute a day-ahead schedule")
    o.add_argument("--grid", required=True)
    o.add_argument("--loads", required=True)
    o.add_argument("--wind", required=True)
    o.add_argument("--out", required=True, help="output directory")
    o.add_argument("--horizon", type=int, default=24)
    o.add_argument("--states", type=int, default=None,
                   help="wind states kept per hour (default: all)")
    o.add_argument("--model-states", type=int, default=10,
                   help="states of the fitted wind chain")
    o.add_argument("--rated-kw", type=float, default=1000.0)
    o.add_argument("--budget", type=int, default=6)
    o.add_argument("--gap", type=float, default=1e-3)
    o.add_argument("--node-cap", type=int, default=100_000)
    o.add_argument("--time-cap", type=float, default=None)
    o.add_argument("--peak-hours", default="9-22")
    o.add_argument("--window-days", type=int, default=30)
    o.add_argument("--wind-node", type=int, default=15)
    o.add_argument("--tap-daily", action="store_true")
    o.add_argument("--threads", type=int, default=1)
    o.add_argument("--seed", type=int, default=0, help="recorded for reproducibility")
    o.add_argument("--export-problem", action="store_true",
                   help="also dump the sparse problem text format")
    o.add_argument("--trace", action="store_true",
                   help="write a per-node solver trace next to the report")

    e = sub.add_parser("evaluate", help="replay a schedule against actual data")
    e.add_argument("--grid", required=True)
    e.add_argument("--schedule", required=True)
    e.add_argument("--loads", required=True, help="actual loads CSV")
    e.add_argument("--wind", required=True, help="actual wind CSV")
    e.add_argument("--days", type=int, default=30, help="evaluate the last N days")
    e.add_argument("--wind-node", type=int, default=15)
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--no-figures", action="store_true")
    return p


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------

def _cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = case33.case33_spec(tap_step=args.tap_step)
    save_grid_spec(spec, out / "grid.json")
    frame = datagen.generate_load_history(args.days, args.seed, scale=args.scale)
    datagen.write_loads_csv(frame, out / "loads.csv")
    series = datagen.generate_wind_series(args.days * 24, args.seed + 1)
    datagen.write_wind_csv(series, out / "wind.csv")
    print(f"wrote grid.json, loads.csv, wind.csv under {out}")
    return EXIT_OK


def _cmd_estimate_wind(args) -> int:
    series = read_wind_csv(args.wind)
    levels, states = discretize(series, args.states, args.rated_kw)
    matrix = estimate_transitions(states, n_states=args.states)
    model = WindMarkovModel(
        state_levels_kw=levels, transition=matrix, rated_kw=args.rated_kw
    )
    model.to_json(args.out)
    print(f"wind model with {args.states} states written to {args.out}")
    return EXIT_OK


def _load_config(spec, path) -> RadialConfig:
    if path is None:
        return spec.default_config()
    with open(path) as fh:
        raw = json.load(fh)
    cfg = RadialConfig(tuple(bool(s) for s in raw["switch_vector"]))
    cfg.validate(spec)
    return cfg


def _cmd_powerflow(args) -> int:
    spec = load_grid_spec(args.grid)
    config = _load_config(spec, args.config_file)
    with open(args.injections) as fh:
        raw = json.load(fh)
    n = spec.n_nodes

    def vec(key):
        out = np.zeros(n)
        for node, val in raw.get(key, {}).items():
            out[int(node) - 1] = float(val)
        return out

    inj = InjectionSet(
        p_demand=vec("demand_p_pu"), q_demand=vec("demand_q_pu"),
        p_gen=vec("gen_p_pu"), q_gen=vec("gen_q_pu"),
        p_storage=vec("storage_p_pu"),
    )
    tap = float(raw.get("tap_ratio", 1.0))
    lin = lindistflow_solve(spec, config, inj, tap_ratio=tap)
    try:
        newton = newton_ac_solve(spec, config, inj, tap_ratio=tap)
    except NewtonDivergenceError as exc:
        print(f"error: AC solve diverged: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    cmp_ = compare_solutions(lin, newton)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "lindistflow": {
            "v": [float(v) for v in lin.v()],
            "loss_pu": lin.loss_total,
        },
        "newton": {
            "v": [float(v) for v in newton.v()],
            "loss_pu": newton.loss_total,
            "iterations": newton.iterations,
            "mismatch": newton.residual,
        },
        "comparison": {
            "mean_voltage_error_pu": cmp_.mean_dv,
            "max_voltage_error_pu": cmp_.max_dv,
            "loss_error_pu": cmp_.loss_error_abs,
            "loss_error_rel": cmp_.loss_error_rel,
        },
        "timing": _timing(),
    }
    _dump_json(payload, out / "powerflow.json")
    if args.figures:
        from .report import save_voltage_profile_figure

        save_voltage_profile_figure(
            out / "voltage_profile.png",
            {"linearized": lin.v(), "newton": newton.v()},
            "voltage profile",
        )
    print(f"mean |dv| = {cmp_.mean_dv:.3e} p.u., results under {out}")
    return EXIT_OK


def _cmd_optimize(args) -> int:
    spec = load_grid_spec(args.grid)
    history = ingest_csv(args.loads)
    profiles = typical_pattern(history, args.window_days, spec)
    series = read_wind_csv(args.wind)
    levels, states = discretize(series, args.model_states, args.rated_kw)
    matrix = estimate_transitions(states, n_states=args.model_states)
    wind_model = WindMarkovModel(
        state_levels_kw=levels, transition=matrix, rated_kw=args.rated_kw
    )
    observed = int(states[-1])
    opts = FormulationOptions(
        horizon=args.horizon,
        states_used=args.states,
        switching_budget=args.budget,
        peak_hours=_parse_hours(args.peak_hours),
        tap_daily=args.tap_daily,
        wind_node=args.wind_node,
    )
    problem = build_problem(
        spec, spec.default_config(), profiles, wind_model, observed, opts
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.export_problem:
        export_problem(problem, out / "problem.txt")
    profiles.to_json(out / "profiles.json")
    report = bnb.branch_and_bound(
        problem, gap_tol=args.gap, node_cap=args.node_cap, time_cap=args.time_cap,
        keep_trace=args.trace,
    )
    if args.trace and report.trace is not None:
        with open(out / "solve_trace.jsonl", "w") as fh:
            for ev in report.trace:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")
    payload = report.to_dict()
    payload["observed_wind_state"] = observed
    payload["seed"] = args.seed
    payload["timing"] = _timing()
    payload.pop("wall_time_s", None)
    payload["timing"]["wall_time_s"] = report.wall_time
    _dump_json(payload, out / "solve_report.json")
    if report.status == bnb.INFEASIBLE:
        print("error: problem is infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    if report.incumbent is None:
        print("error: solver cap reached without an incumbent", file=sys.stderr)
        return EXIT_CAP_NO_INCUMBENT
    schedule = extract_schedule(
        problem, report.incumbent, expected_loss=report.objective, gap=report.gap
    )
    schedule.to_json(out / "schedule.json")
    print(
        f"expected loss {report.objective:.6g} p.u. "
        f"(gap {report.gap:.2e}, {report.nodes_explored} nodes), "
        f"schedule written to {out / 'schedule.json'}"
    )
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    spec = load_grid_spec(args.grid)
    schedule = VvoSchedule.from_json(args.schedule)
    history = ingest_csv(args.loads)
    days = history.days()
    if len(days) < args.days:
        raise EvaluationError(f"history has {len(days)} days, need {args.days}")
    eval_days = days[-args.days:]
    actual_loads = [day_profile(history, d, spec) for d in eval_days]
    series = read_wind_csv(args.wind)
    need = args.days * schedule.horizon
    if len(series) < need:
        raise EvaluationError(f"wind series has {len(series)} samples, need {need}")
    wind = series[-need:].reshape(args.days, schedule.horizon)
    report = evaluate(
        spec, schedule, actual_loads, wind,
        wind_node=args.wind_node, threads=args.threads,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    payload["timing"] = _timing()
    _dump_json(payload, out / "metrics.json")
    report.write_hourly_csv(out / "hourly.csv")
    if not args.no_figures:
        from .report import save_hourly_metrics_figure, save_voltage_profile_figure

        save_hourly_metrics_figure(out / "hourly_metrics.png", report)
        ok = [r for r in report.hours if r.converged]
        peak = max(ok, key=lambda r: r.substation_mw)
        off = min(ok, key=lambda r: r.substation_mw)
        profiles = {}
        kw_base = spec.kw_base()
        for label, rec in (("peak hour", peak), ("off-peak hour", off)):
            prof = actual_loads[rec.day]
            inj = build_hour_injections(
                spec, schedule,
                prof.p_pu[:, rec.hour - 1], prof.q_pu[:, rec.hour - 1],
                wind[rec.day, rec.hour - 1] / kw_base, args.wind_node, rec.hour,
            )
            sol = newton_ac_solve(
                spec, schedule.config(), inj,
                tap_ratio=schedule.tap_ratio[rec.hour - 1],
            )
            profiles[f"{label} (day {rec.day + 1}, h{rec.hour})"] = sol.v()
        save_voltage_profile_figure(
            out / "voltage_profile.png", profiles, "voltage profile under schedule"
        )
    print(
        f"mean loss {report.mean_loss_kw:.2f} kW, "
        f"min voltage {report.mean_min_voltage:.4f} p.u., results under {out}"
    )
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "gen-data": _cmd_gen_data,
        "estimate-wind": _cmd_estimate_wind,
        "powerflow": _cmd_powerflow,
        "optimize": _cmd_optimize,
        "evaluate": _cmd_evaluate,
    }
    try:
        return handlers[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_INPUT
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
