"""Day-ahead decision schedule: switches, taps, capacitor modules, storage."""

from __future__ import annotations

import json
from dataclasses import dataclass

from .grid import GridSpec, RadialConfig

__all__ = ["ScheduleError", "VvoSchedule", "validate_schedule"]

ENERGY_TOL = 1e-8


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class VvoSchedule:
    """One day of decisions.  Storage powers are nonnegative magnitudes:
    charging during off-peak hours, discharging during peak hours."""

    horizon: int
    peak_hours: tuple[int, ...]
    switch_vector: tuple[bool, ...]
    tap_position: tuple[int, ...]
    tap_ratio: tuple[float, ...]
    capacitor_modules: dict[int, tuple[int, ...]]   # node -> per-hour module count
    storage_power_pu: dict[int, tuple[float, ...]]  # node -> per-hour power
    expected_loss_pu: float | None = None
    gap: float | None = None

    def config(self) -> RadialConfig:
        return RadialConfig(self.switch_vector)

    def is_peak(self, hour: int) -> bool:
        return hour in self.peak_hours

    def to_json(self, path) -> None:
        payload = {
            "horizon": self.horizon,
            "peak_hours": list(self.peak_hours),
            "switch_vector": [int(s) for s in self.switch_vector],
            "tap_position": list(self.tap_position),
            "tap_ratio": [float(r) for r in self.tap_ratio],
            "capacitor_modules": {str(k): list(v) for k, v in self.capacitor_modules.items()},
            "storage_power_pu": {
                str(k): [float(x) for x in v] for k, v in self.storage_power_pu.items()
            },
            "expected_loss_pu": self.expected_loss_pu,
            "gap": self.gap,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def from_json(path) -> "VvoSchedule":
        with open(path) as fh:
            raw = json.load(fh)
        try:
            return VvoSchedule(
                horizon=int(raw["horizon"]),
                peak_hours=tuple(int(h) for h in raw["peak_hours"]),
                switch_vector=tuple(bool(s) for s in raw["switch_vector"]),
                tap_position=tuple(int(t) for t in raw["tap_position"]),
                tap_ratio=tuple(float(r) for r in raw["tap_ratio"]),
                capacitor_modules={
                    int(k): tuple(int(x) for x in v)
                    for k, v in raw["capacitor_modules"].items()
                },
                storage_power_pu={
                    int(k): tuple(float(x) for x in v)
                    for k, v in raw["storage_power_pu"].items()
                },
                expected_loss_pu=raw.get("expected_loss_pu"),
                gap=raw.get("gap"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScheduleError(f"malformed schedule file: {exc}") from exc


def validate_schedule(spec: GridSpec, schedule: VvoSchedule) -> None:
    """Check a schedule against the grid's equipment limits and the
    storage cycling energy equalities."""
    h = schedule.horizon
    if not (1 <= h <= 24):
        raise ScheduleError("horizon must be within 1..24")
    for name, seq in (("tap_position", schedule.tap_position),
                      ("tap_ratio", schedule.tap_ratio)):
        if len(seq) != h:
            raise ScheduleError(f"{name} must cover {h} hours")

    schedule.config().validate(spec)

    ultc = spec.equipment.ultc
    if ultc is None:
        if any(t != 0 for t in schedule.tap_position):
            raise ScheduleError("tap moves scheduled but the grid has no tap changer")
    else:
        m = ultc.max_tap
        for t in schedule.tap_position:
            if not (-m <= t <= m):
                raise ScheduleError(f"tap position {t} outside -{m}..{m}")

    banks = {b.node: b for b in spec.equipment.capacitor_banks}
    for node, counts in schedule.capacitor_modules.items():
        if node not in banks:
            raise ScheduleError(f"no capacitor bank on node {node}")
        if len(counts) != h:
            raise ScheduleError(f"capacitor schedule on node {node} must cover {h} hours")
        for c in counts:
            if not (0 <= c <= banks[node].max_modules):
                raise ScheduleError(
                    f"node {node}: module count {c} outside 0..{banks[node].max_modules}"
                )

    units = {}
    for u in spec.equipment.storage_units:
        units.setdefault(u.node, []).append(u)
    dssp = spec.equipment.dss_params
    kw_base = spec.kw_base()
    for node, powers in schedule.storage_power_pu.items():
        if node not in units:
            raise ScheduleError(f"no storage unit on node {node}")
        if len(powers) != h:
            raise ScheduleError(f"storage schedule on node {node} must cover {h} hours")
        cap = sum(u.power_kw for u in units[node]) / kw_base
        for p in powers:
            if p < -ENERGY_TOL or p > cap + ENERGY_TOL:
                raise ScheduleError(f"node {node}: storage power {p} outside rating")
        b_pu = sum(u.energy_kwh for u in units[node]) / kw_base
        peak = set(schedule.peak_hours)
        charged = sum(p for hh, p in zip(range(1, h + 1), powers) if hh not in peak)
        discharged = sum(p for hh, p in zip(range(1, h + 1), powers) if hh in peak)
        want_charge = dssp.dod / dssp.beta_ch * b_pu
        want_dis = dssp.beta_dis * dssp.dod * b_pu
        if abs(charged - want_charge) > ENERGY_TOL:
            raise ScheduleError(
                f"node {node}: off-peak charge energy {charged:.10f} != {want_charge:.10f}"
            )
        if abs(discharged - want_dis) > ENERGY_TOL:
            raise ScheduleError(
                f"node {node}: peak discharge energy {discharged:.10f} != {want_dis:.10f}"
            )
