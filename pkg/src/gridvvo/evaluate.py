"""Replay a day-ahead schedule against actual loads and wind.

The schedule is applied open loop: storage moves exactly the scheduled
power in its scheduled hours regardless of realized conditions.  Hourly
operating points run through the full AC solve; losses are exact AC
losses, with the quadratic approximation error reported alongside.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec
from .loads import DayProfileSet
from .powerflow import (
    InjectionSet,
    NewtonDivergenceError,
    lindistflow_solve,
    newton_ac_solve,
    quadratic_loss,
)
from .schedule import VvoSchedule, validate_schedule

__all__ = [
    "EvaluationError",
    "HourRecord",
    "MetricsReport",
    "evaluate",
    "voltage_spread",
    "replay_expected_loss",
    "build_hour_injections",
]

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class HourRecord:
    day: int
    hour: int
    loss_kw: float
    quadratic_loss_kw: float
    v_min: float
    v_max: float
    spread: float
    substation_mw: float
    converged: bool


@dataclass(frozen=True)
class MetricsReport:
    mean_loss_kw: float
    mean_quadratic_loss_kw: float
    peak_load_mw: float            # mean over days of the daily peak feed-in
    mean_min_voltage: float
    mean_max_voltage: float
    mean_voltage_spread: float
    hours: tuple[HourRecord, ...]
    failed_hours: int

    def to_dict(self) -> dict:
        return {
            "mean_loss_kw": self.mean_loss_kw,
            "mean_quadratic_loss_kw": self.mean_quadratic_loss_kw,
            "loss_approximation_error_kw": self.mean_loss_kw - self.mean_quadratic_loss_kw,
            "peak_load_mw": self.peak_load_mw,
            "mean_min_voltage_pu": self.mean_min_voltage,
            "mean_max_voltage_pu": self.mean_max_voltage,
            "mean_voltage_spread_pu": self.mean_voltage_spread,
            "failed_hours": self.failed_hours,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_hourly_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("day,hour,loss_kw,quadratic_loss_kw,vmin,vmax,spread,substation_mw,converged\n")
            for r in self.hours:
                fh.write(
                    f"{r.day},{r.hour},{r.loss_kw:.6f},{r.quadratic_loss_kw:.6f},"
                    f"{r.v_min:.6f},{r.v_max:.6f},{r.spread:.6f},"
                    f"{r.substation_mw:.6f},{int(r.converged)}\n"
                )


def voltage_spread(hourly_voltages) -> float:
    """Mean over hours of (max - min) nodal voltage magnitude."""
    spreads = []
    for volts in hourly_voltages:
        v = np.asarray(volts, dtype=float)
        if v.size == 0:
            raise EvaluationError("empty voltage set for an hour")
        spreads.append(float(v.max() - v.min()))
    if not spreads:
        raise EvaluationError("no hours supplied")
    return float(np.mean(spreads))


def build_hour_injections(
    spec: GridSpec,
    schedule: VvoSchedule,
    p_demand: np.ndarray,
    q_demand: np.ndarray,
    wind_pu: float,
    wind_node: int | None,
    hour: int,
) -> InjectionSet:
    """Assemble the nodal injections for one scheduled hour."""
    n = spec.n_nodes
    p_gen = np.zeros(n)
    q_gen = np.zeros(n)
    p_sto = np.zeros(n)
    if wind_node is not None:
        p_gen[wind_node - 1] = wind_pu
    banks = {b.node: b for b in spec.equipment.capacitor_banks}
    for node, counts in schedule.capacitor_modules.items():
        q_gen[node - 1] += counts[hour - 1] * banks[node].module_kvar / spec.kw_base()
    sign = 1.0 if schedule.is_peak(hour) else -1.0
    for node, powers in schedule.storage_power_pu.items():
        p_sto[node - 1] += sign * powers[hour - 1]
    return InjectionSet(
        p_demand=p_demand, q_demand=q_demand,
        p_gen=p_gen, q_gen=q_gen, p_storage=p_sto,
    )


def evaluate(
    spec: GridSpec,
    schedule: VvoSchedule,
    actual_loads: list[DayProfileSet],
    actual_wind_kw: np.ndarray,
    wind_node: int | None = None,
    threads: int = 1,
) -> MetricsReport:
    """Run the AC solve for every (day, hour) with the schedule applied.

    ``actual_wind_kw`` has shape (days, horizon).  Hours where the AC solve
    diverges are flagged and excluded from the aggregates.
    """
    validate_schedule(spec, schedule)
    days = len(actual_loads)
    wind = np.asarray(actual_wind_kw, dtype=float)
    if wind.shape != (days, schedule.horizon):
        raise EvaluationError(
            f"wind array must be (days, horizon) = ({days}, {schedule.horizon})"
        )
    config = schedule.config()
    kw_base = spec.kw_base()
    sub = spec.substations[0]

    def run_day(d: int) -> list[HourRecord]:
        profile = actual_loads[d]
        recs = []
        for h in range(1, schedule.horizon + 1):
            inj = build_hour_injections(
                spec, schedule,
                profile.p_pu[:, h - 1], profile.q_pu[:, h - 1],
                wind[d, h - 1] / kw_base, wind_node, h,
            )
            tap = schedule.tap_ratio[h - 1]
            try:
                sol = newton_ac_solve(spec, config, inj, tap_ratio=tap)
            except NewtonDivergenceError as exc:
                log.warning("day %d hour %d: AC solve failed: %s", d, h, exc)
                recs.append(HourRecord(d, h, np.nan, np.nan, np.nan, np.nan,
                                       np.nan, np.nan, False))
                continue
            v = sol.v()
            qloss = quadratic_loss(spec, config, sol)
            feed = 0.0
            for li, ln in enumerate(spec.lines):
                if not config.switch_vector[li]:
                    continue
                if ln.from_node == sub:
                    feed += sol.p_from[li]
                elif ln.to_node == sub:
                    feed += sol.p_to[li]
            recs.append(
                HourRecord(
                    day=d, hour=h,
                    loss_kw=sol.loss_total * kw_base,
                    quadratic_loss_kw=qloss * kw_base,
                    v_min=float(v.min()), v_max=float(v.max()),
                    spread=float(v.max() - v.min()),
                    substation_mw=feed * spec.base_mva,
                    converged=True,
                )
            )
        return recs

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_day = list(pool.map(run_day, range(days)))
    else:
        per_day = [run_day(d) for d in range(days)]

    hours: list[HourRecord] = [r for day in per_day for r in day]
    ok = [r for r in hours if r.converged]
    failed = len(hours) - len(ok)
    if not ok:
        raise EvaluationError("no hour converged; nothing to aggregate")
    daily_peaks = []
    for day in per_day:
        good = [r.substation_mw for r in day if r.converged]
        if good:
            daily_peaks.append(max(good))
    return MetricsReport(
        mean_loss_kw=float(np.mean([r.loss_kw for r in ok])),
        mean_quadratic_loss_kw=float(np.mean([r.quadratic_loss_kw for r in ok])),
        peak_load_mw=float(np.mean(daily_peaks)),
        mean_min_voltage=float(np.mean([r.v_min for r in ok])),
        mean_max_voltage=float(np.mean([r.v_max for r in ok])),
        mean_voltage_spread=float(np.mean([r.spread for r in ok])),
        hours=tuple(hours),
        failed_hours=failed,
    )


def replay_expected_loss(
    spec: GridSpec,
    schedule: VvoSchedule,
    profiles: DayProfileSet,
    scenarios,
    wind_levels_pu,
    wind_node: int | None,
) -> float:
    """Recompute the optimizer's expected-loss accounting with the linear
    engine: weighted quadratic loss over the (hour, state) scenario table."""
    config = schedule.config()
    total = 0.0
    for (h, i, w) in scenarios:
        inj = build_hour_injections(
            spec, schedule,
            profiles.p_pu[:, h - 1], profiles.q_pu[:, h - 1],
            wind_levels_pu[i], wind_node, h,
        )
        sol = lindistflow_solve(spec, config, inj, tap_ratio=schedule.tap_ratio[h - 1])
        total += w * quadratic_loss(spec, config, sol)
    return total / schedule.horizon
