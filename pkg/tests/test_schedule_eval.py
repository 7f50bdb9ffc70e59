import numpy as np
import pytest

from gridvvo.evaluate import (
    EvaluationError,
    build_hour_injections,
    evaluate,
    replay_expected_loss,
    voltage_spread,
)
from gridvvo.loads import DayProfileSet
from gridvvo.powerflow import InjectionSet, newton_ac_solve
from gridvvo.schedule import ScheduleError, VvoSchedule, validate_schedule
from conftest import five_node_spec, flat_profiles, storage_spec


def idle_schedule(spec, horizon=2, peak=(2,)):
    return VvoSchedule(
        horizon=horizon,
        peak_hours=peak,
        switch_vector=spec.default_config().switch_vector,
        tap_position=(0,) * horizon,
        tap_ratio=(1.0,) * horizon,
        capacitor_modules={},
        storage_power_pu={},
    )


# --- voltage spread ------------------------------------------------------------

def test_spread_flat_zero():
    assert voltage_spread([[1.0, 1.0, 1.0]]) == 0.0


def test_spread_single_hour():
    assert voltage_spread([[0.95, 1.00]]) == pytest.approx(0.05)


def test_spread_mean_over_hours():
    assert voltage_spread([[1.0, 1.02], [1.0, 1.04]]) == pytest.approx(0.03)


def test_spread_empty_rejected():
    with pytest.raises(EvaluationError):
        voltage_spread([])
    with pytest.raises(EvaluationError):
        voltage_spread([[]])


# --- schedule validation ----------------------------------------------------------

def test_validate_rejects_bad_modules():
    spec = five_node_spec()
    sched = idle_schedule(spec)
    bad = VvoSchedule(
        horizon=2, peak_hours=(2,),
        switch_vector=sched.switch_vector,
        tap_position=(0, 0), tap_ratio=(1.0, 1.0),
        capacitor_modules={4: (3, 0)},  # bank holds at most 2 modules
        storage_power_pu={},
    )
    with pytest.raises(ScheduleError, match="module count"):
        validate_schedule(spec, bad)


def test_validate_rejects_tap_without_ultc():
    spec = five_node_spec()
    bad = VvoSchedule(
        horizon=1, peak_hours=(),
        switch_vector=spec.default_config().switch_vector,
        tap_position=(2,), tap_ratio=(1.02,),
        capacitor_modules={}, storage_power_pu={},
    )
    with pytest.raises(ScheduleError, match="tap"):
        validate_schedule(spec, bad)


def test_validate_storage_energy_equalities():
    spec = storage_spec()
    dssp = spec.equipment.dss_params
    b_pu = 0.2
    charge = dssp.dod / dssp.beta_ch * b_pu
    discharge = dssp.beta_dis * dssp.dod * b_pu
    good = VvoSchedule(
        horizon=4, peak_hours=(3, 4),
        switch_vector=spec.default_config().switch_vector,
        tap_position=(0,) * 4, tap_ratio=(1.0,) * 4,
        capacitor_modules={},
        storage_power_pu={4: (charge / 2, charge / 2, discharge / 2, discharge / 2)},
    )
    validate_schedule(spec, good)
    bad = VvoSchedule(
        horizon=4, peak_hours=(3, 4),
        switch_vector=spec.default_config().switch_vector,
        tap_position=(0,) * 4, tap_ratio=(1.0,) * 4,
        capacitor_modules={},
        storage_power_pu={4: (charge / 2, charge / 2, discharge / 2, 0.0)},
    )
    with pytest.raises(ScheduleError, match="discharge energy"):
        validate_schedule(spec, bad)


def test_schedule_json_round_trip(tmp_path):
    spec = five_node_spec()
    sched = idle_schedule(spec)
    path = tmp_path / "schedule.json"
    sched.to_json(path)
    again = VvoSchedule.from_json(path)
    assert again == sched


# --- evaluation --------------------------------------------------------------------

def test_zero_day_metrics():
    spec = five_node_spec()
    sched = idle_schedule(spec)
    profiles = flat_profiles(5)
    report = evaluate(spec, sched, [profiles], np.zeros((1, 2)), wind_node=None)
    assert report.mean_loss_kw == pytest.approx(0.0, abs=1e-9)
    assert report.mean_voltage_spread == pytest.approx(0.0, abs=1e-12)
    assert report.mean_min_voltage == pytest.approx(1.0)
    assert report.mean_max_voltage == pytest.approx(1.0)
    assert report.failed_hours == 0


def test_idle_schedule_equals_bare_system():
    spec = five_node_spec()
    sched = idle_schedule(spec)
    profiles = flat_profiles(5, {1: [0.1, 0.1, 0.2, 0.2], 2: [0.1, 0.1, 0.2, 0.2]})
    report = evaluate(spec, sched, [profiles], np.zeros((1, 2)), wind_node=None)
    # oracle: plain AC solve of the bare system, hour by hour
    for h in (1, 2):
        inj = InjectionSet(profiles.p_pu[:, h - 1], profiles.q_pu[:, h - 1],
                           np.zeros(5), np.zeros(5), np.zeros(5))
        sol = newton_ac_solve(spec, spec.default_config(), inj)
        rec = report.hours[h - 1]
        assert rec.loss_kw == pytest.approx(sol.loss_total * 1000.0, abs=1e-9)
        v = sol.v()
        assert rec.v_min == pytest.approx(v.min(), abs=1e-12)
        assert rec.v_max == pytest.approx(v.max(), abs=1e-12)


def test_day_order_invariance():
    spec = five_node_spec()
    sched = idle_schedule(spec)
    p1 = flat_profiles(5, {1: [0.1, 0.1, 0.2, 0.2], 2: [0.1, 0.1, 0.2, 0.2]})
    p2 = flat_profiles(5, {1: [0.2, 0.1, 0.1, 0.3], 2: [0.2, 0.1, 0.1, 0.3]})
    wind = np.array([[100.0, 50.0], [20.0, 30.0]])
    a = evaluate(spec, sched, [p1, p2], wind, wind_node=3)
    b = evaluate(spec, sched, [p2, p1], wind[::-1], wind_node=3)
    assert a.mean_loss_kw == pytest.approx(b.mean_loss_kw, rel=1e-12)
    assert a.mean_voltage_spread == pytest.approx(b.mean_voltage_spread, rel=1e-12)
    assert a.peak_load_mw == pytest.approx(b.peak_load_mw, rel=1e-12)


def test_threads_match_serial():
    spec = five_node_spec()
    sched = idle_schedule(spec)
    profs = [
        flat_profiles(5, {1: [0.1, 0.12, 0.2, 0.22], 2: [0.15, 0.1, 0.18, 0.2]})
        for _ in range(4)
    ]
    wind = np.tile([[40.0, 70.0]], (4, 1))
    serial = evaluate(spec, sched, profs, wind, wind_node=3, threads=1)
    threaded = evaluate(spec, sched, profs, wind, wind_node=3, threads=3)
    assert serial.mean_loss_kw == threaded.mean_loss_kw
    assert serial.peak_load_mw == threaded.peak_load_mw


def test_storage_moves_power_by_hour_class():
    spec = storage_spec()
    inj = build_hour_injections(
        spec,
        VvoSchedule(
            horizon=2, peak_hours=(2,),
            switch_vector=spec.default_config().switch_vector,
            tap_position=(0, 0), tap_ratio=(1.0, 1.0),
            capacitor_modules={},
            storage_power_pu={4: (0.05, 0.08)},
        ),
        np.zeros(5), np.zeros(5), 0.0, None, 1,
    )
    assert inj.p_storage[3] == pytest.approx(-0.05)  # off-peak hour charges
    inj2 = build_hour_injections(
        spec,
        VvoSchedule(
            horizon=2, peak_hours=(2,),
            switch_vector=spec.default_config().switch_vector,
            tap_position=(0, 0), tap_ratio=(1.0, 1.0),
            capacitor_modules={},
            storage_power_pu={4: (0.05, 0.08)},
        ),
        np.zeros(5), np.zeros(5), 0.0, None, 2,
    )
    assert inj2.p_storage[3] == pytest.approx(0.08)  # peak hour injects


def test_diverged_hours_flagged_and_excluded():
    spec = five_node_spec()
    sched = idle_schedule(spec)
    p = np.zeros((5, 24))
    p[1:, 0] = 0.1            # a sane hour
    p[1:, 1] = 30.0           # far beyond loadability: the AC solve diverges
    profiles = DayProfileSet(p_pu=p, q_pu=0.3 * p)
    report = evaluate(spec, sched, [profiles], np.zeros((1, 2)), wind_node=None)
    assert report.failed_hours == 1
    assert not report.hours[1].converged
    assert report.mean_loss_kw == pytest.approx(report.hours[0].loss_kw)


def test_wind_shape_checked():
    spec = five_node_spec()
    sched = idle_schedule(spec)
    with pytest.raises(EvaluationError, match="wind array"):
        evaluate(spec, sched, [flat_profiles(5)], np.zeros((2, 2)), wind_node=None)


def test_replay_matches_manual_weighting():
    spec = five_node_spec()
    profiles = flat_profiles(5, {1: [0.1, 0.1, 0.2, 0.2], 2: [0.12, 0.1, 0.25, 0.2]})
    sched = idle_schedule(spec)
    scenarios = ((1, 0, 0.6), (1, 1, 0.4), (2, 0, 1.0))
    levels = (0.02, 0.07)
    got = replay_expected_loss(spec, sched, profiles, scenarios, levels, 3)
    from gridvvo.powerflow import lindistflow_solve, quadratic_loss

    want = 0.0
    for (h, i, w) in scenarios:
        pg = np.zeros(5)
        pg[2] = levels[i]
        inj = InjectionSet(profiles.p_pu[:, h - 1], profiles.q_pu[:, h - 1],
                           pg, np.zeros(5), np.zeros(5))
        sol = lindistflow_solve(spec, spec.default_config(), inj)
        want += w * quadratic_loss(spec, spec.default_config(), sol)
    want /= 2.0
    assert got == pytest.approx(want, rel=1e-14)
