import numpy as np
import pytest

from gridvvo.formulation import (
    FormulationError,
    FormulationOptions,
    build_problem,
    export_problem,
    extract_schedule,
)
from gridvvo.grid import RadialConfig
from gridvvo.loads import DayProfileSet
from gridvvo.powerflow import InjectionSet, lindistflow_solve
from gridvvo.wind import WindMarkovModel
from gridvvo import qp
from conftest import five_node_spec, flat_profiles, mini_ultc_spec, storage_spec


def tiny_wind():
    return WindMarkovModel(np.array([100.0, 500.0]), np.eye(2), 1000.0)


def opts_h1(**kw):
    defaults = dict(horizon=1, states_used=1, switching_budget=0, wind_node=None)
    defaults.update(kw)
    return FormulationOptions(**defaults)


# --- structural counts --------------------------------------------------------

def test_four_node_inventory(spec4):
    profiles = flat_profiles(4, {1: [0.05, 0.08, 0.03]})
    prob = build_problem(spec4, spec4.default_config(), profiles, tiny_wind(), 0, opts_h1())
    # 3 lines x 4 directed flows + 4 squared voltages + the substation
    # import pair that keeps its balance rows well posed
    assert prob.n_vars == 16 + 2
    # 3 + 3 lossless, 8 balance, 3 voltage drops
    assert len(prob.b_eq) == 17
    assert len(prob.integer_columns()) == 0
    # ampacity polygon rows: 8 half-planes per directed pair
    assert len(prob.b_in) == 3 * 2 * 8


def test_scenario_replication_counts(spec4):
    profiles = flat_profiles(4, {1: [0.05, 0.08, 0.03], 2: [0.04, 0.02, 0.01]})
    prob = build_problem(
        spec4, spec4.default_config(), profiles, tiny_wind(), 0,
        opts_h1(horizon=2, states_used=2, wind_node=2),
    )
    # identity chain from state 0: each hour keeps a single scenario
    assert len(prob.meta.scenarios) == 2
    t = np.array([[0.5, 0.5], [0.5, 0.5]])
    wind2 = WindMarkovModel(np.array([100.0, 500.0]), t, 1000.0)
    prob2 = build_problem(
        spec4, spec4.default_config(), profiles, wind2, 0,
        opts_h1(horizon=2, states_used=2, wind_node=2),
    )
    assert len(prob2.meta.scenarios) == 4
    assert prob2.n_vars == 2 * prob.n_vars


def test_ultc_binary_count_per_hour():
    from gridvvo.case33 import case33_spec

    spec = case33_spec(tap_step=0.01)  # halfwidth 0.1 -> 21 positions
    mask = (np.arange(33) > 0)[:, None]
    prof = DayProfileSet(p_pu=np.full((33, 24), 0.01) * mask,
                         q_pu=np.full((33, 24), 0.005) * mask)
    opts = FormulationOptions(horizon=2, states_used=1, switching_budget=2,
                              wind_node=15, peak_hours=(2,))
    prob = build_problem(spec, spec.default_config(), prof, tiny_wind(), 0, opts)
    vi = prob.var_index
    taps = prob.meta.tap_positions
    assert len(taps) == 21
    assert taps == tuple(range(-10, 11))
    kappa_cols = [c for c in prob.integer_columns() if vi.key_of(c)[0] == "kappa"]
    assert len(kappa_cols) == 21 * 2
    assert len(prob.sos_one_hot) == 2


def test_switching_budget_semantics():
    spec = five_node_spec()
    profiles = flat_profiles(5, {1: [0.05, 0.05, 0.05, 0.05]})
    opts = opts_h1(switching_budget=2)
    prob = build_problem(spec, spec.default_config(), profiles, tiny_wind(), 0, opts)
    vi = prob.var_index
    # swapping the tie for the sectionalizer costs 2 actions: feasible
    fix = {vi[("y", 3)]: (0.0, 0.0), vi[("y", 4)]: (1.0, 1.0)}
    assert qp.solve_qp_relaxation(prob, fix).status == qp.OPTIMAL
    # with a zero budget the swap must be infeasible
    prob0 = build_problem(spec, spec.default_config(), profiles, tiny_wind(), 0,
                          opts_h1(switching_budget=0))
    res = qp.solve_qp_relaxation(prob0, {prob0.var_index[("y", 3)]: (0.0, 0.0),
                                         prob0.var_index[("y", 4)]: (1.0, 1.0)})
    assert res.status == qp.INFEASIBLE


def test_objective_is_psd_and_weighted(spec4):
    profiles = flat_profiles(4, {1: [0.05, 0.08, 0.03]})
    prob = build_problem(spec4, spec4.default_config(), profiles, tiny_wind(), 0, opts_h1())
    assert np.all(prob.obj_diag >= 0.0)
    vi = prob.var_index
    for li, ln in enumerate(spec4.lines):
        assert prob.obj_diag[vi[("pf", li, 1, 0)]] == pytest.approx(ln.r_pu)
        assert prob.obj_diag[vi[("qf", li, 1, 0)]] == pytest.approx(ln.r_pu)
        assert prob.obj_diag[vi[("pr", li, 1, 0)]] == 0.0


def test_rho_must_be_even():
    with pytest.raises(FormulationError, match="even"):
        FormulationOptions(switching_budget=3)


def test_storage_needs_both_hour_classes():
    spec = storage_spec()
    profiles = flat_profiles(5, {1: [0.05, 0.05, 0.05, 0.05]})
    with pytest.raises(FormulationError, match="off-peak and peak"):
        build_problem(spec, spec.default_config(), profiles, tiny_wind(), 0,
                      opts_h1(horizon=2, peak_hours=()))


def test_nonradial_without_freedom_rejected():
    # zero budget with a non-radial current configuration cannot be repaired
    spec = five_node_spec()
    profiles = flat_profiles(5)
    bad = RadialConfig((True, True, True, True, True))  # both switchables closed
    with pytest.raises(FormulationError, match="infeasible by construction"):
        build_problem(spec, bad, profiles, tiny_wind(), 0, opts_h1(switching_budget=0))


def test_config_must_respect_fixed_lines(spec4):
    profiles = flat_profiles(4)
    bad = RadialConfig((True, True, False))
    with pytest.raises(FormulationError, match="non-switchable"):
        build_problem(spec4, bad, profiles, tiny_wind(), 0, opts_h1())


# --- relaxation equals the linear power flow when integers are fixed ---------

def test_fixed_integer_qp_reproduces_lindistflow(spec33_bare, load_history, wind_model):
    from gridvvo.loads import typical_pattern

    model, observed = wind_model
    profiles = typical_pattern(load_history, 30, spec33_bare)
    opts = FormulationOptions(horizon=2, states_used=2, switching_budget=0,
                              wind_node=15, peak_hours=(2,))
    prob = build_problem(spec33_bare, spec33_bare.default_config(), profiles,
                         model, observed, opts)
    res = qp.solve_qp_relaxation(prob)
    assert res.status == qp.OPTIMAL
    vi = prob.var_index
    cfg = spec33_bare.default_config()
    for (h, i, w) in prob.meta.scenarios:
        pg = np.zeros(33)
        pg[14] = prob.meta.wind_levels_pu[i]
        inj = InjectionSet(profiles.p_pu[:, h - 1], profiles.q_pu[:, h - 1],
                          pg, np.zeros(33), np.zeros(33))
        sol = lindistflow_solve(spec33_bare, cfg, inj)
        for li in cfg.closed_line_indices():
            assert abs(res.x[vi[("pf", li, h, i)]] - sol.p_from[li]) <= 1e-8
            assert abs(res.x[vi[("qf", li, h, i)]] - sol.q_from[li]) <= 1e-8
        for nd in range(1, 34):
            assert abs(res.x[vi[("v2", nd, h, i)]] - sol.v2[nd - 1]) <= 1e-8


# --- tap product envelopes -----------------------------------------------------

def test_mccormick_tight_at_binary_points():
    spec = mini_ultc_spec()
    profiles = flat_profiles(4, {1: [0.10, 0.15, 0.20]})
    prob = build_problem(spec, spec.default_config(), profiles, tiny_wind(), 0, opts_h1())
    vi = prob.var_index
    taps = prob.meta.tap_positions
    rng = np.random.default_rng(0)
    for _ in range(20):
        chosen = int(rng.choice(taps))
        fix = {}
        for tap in taps:
            val = 1.0 if tap == chosen else 0.0
            fix[vi[("kappa", tap, 1)]] = (val, val)
        res = qp.solve_qp_relaxation(prob, fix)
        assert res.status == qp.OPTIMAL
        v_reg = res.x[vi[("v2", 2, 1, 0)]]
        for tap in taps:
            vt = res.x[vi[("vt", tap, 1, 0)]]
            want = v_reg if tap == chosen else 0.0
            assert abs(vt - want) <= 1e-7
        ratio = spec.equipment.ultc.ratio(chosen)
        vaux = res.x[vi[("vaux", 1, 0)]]
        assert abs(vaux - ratio ** 2 * v_reg) <= 1e-6


def test_disjunctive_forces_open_flows_to_zero():
    spec = five_node_spec()
    profiles = flat_profiles(5, {1: [0.05, 0.05, 0.05, 0.05]})
    prob = build_problem(spec, spec.default_config(), profiles, tiny_wind(), 0,
                         opts_h1(switching_budget=2))
    vi = prob.var_index
    res = qp.solve_qp_relaxation(prob, {vi[("y", 3)]: (0.0, 0.0),
                                        vi[("y", 4)]: (1.0, 1.0)})
    assert res.status == qp.OPTIMAL
    for key in ("pf", "qf", "pr", "qr"):
        assert abs(res.x[vi[(key, 3, 1, 0)]]) <= 1e-9


# --- schedule decoding ----------------------------------------------------------

def solved_mini_ultc():
    spec = mini_ultc_spec()
    profiles = flat_profiles(4, {1: [0.10, 0.15, 0.20]})
    prob = build_problem(spec, spec.default_config(), profiles, tiny_wind(), 0, opts_h1())
    vi = prob.var_index
    fix = {vi[("kappa", tap, 1)]: (1.0, 1.0) if tap == 0 else (0.0, 0.0)
           for tap in prob.meta.tap_positions}
    res = qp.solve_qp_relaxation(prob, fix)
    return spec, prob, res


def test_extract_schedule_neutral_tap():
    spec, prob, res = solved_mini_ultc()
    sched = extract_schedule(prob, res.x)
    assert sched.tap_position == (0,)
    assert sched.tap_ratio == (1.0,)
    assert sched.switch_vector == spec.default_config().switch_vector
    assert sched.capacitor_modules == {}


def test_extract_schedule_modules_to_kvar():
    spec = five_node_spec()
    profiles = flat_profiles(5, {1: [0.1, 0.1, 0.2, 0.2]})
    prob = build_problem(spec, spec.default_config(), profiles, tiny_wind(), 0,
                         opts_h1(switching_budget=2))
    vi = prob.var_index
    fix = {vi[("cap", 0, 1)]: (2.0, 2.0),
           vi[("y", 3)]: (1.0, 1.0), vi[("y", 4)]: (0.0, 0.0)}
    res = qp.solve_qp_relaxation(prob, fix)
    sched = extract_schedule(prob, res.x)
    assert sched.capacitor_modules[4] == (2,)
    # 2 modules x 100 kvar at a 1 MVA base inject 0.2 p.u. at node 4:
    # flows must match the linear engine run with that injection
    qg = np.zeros(5)
    qg[3] = 0.2
    inj = InjectionSet(profiles.p_pu[:, 0], profiles.q_pu[:, 0],
                       np.zeros(5), qg, np.zeros(5))
    sol = lindistflow_solve(spec, spec.default_config(), inj)
    for li in spec.default_config().closed_line_indices():
        assert res.x[vi[("qf", li, 1, 0)]] == pytest.approx(sol.q_from[li], abs=1e-8)


def test_extract_schedule_rejects_fractional():
    spec = five_node_spec()
    profiles = flat_profiles(5, {1: [0.05, 0.05, 0.05, 0.05]})
    prob = build_problem(spec, spec.default_config(), profiles, tiny_wind(), 0,
                         opts_h1(switching_budget=2))
    res = qp.solve_qp_relaxation(prob)
    assert res.status == qp.OPTIMAL
    x = res.x.copy()
    x[prob.var_index[("y", 3)]] = 0.4
    with pytest.raises(FormulationError, match="fractional"):
        extract_schedule(prob, x)


# --- export ----------------------------------------------------------------------

def test_export_problem_round_trip(tmp_path, spec4):
    profiles = flat_profiles(4, {1: [0.05, 0.08, 0.03]})
    prob = build_problem(spec4, spec4.default_config(), profiles, tiny_wind(), 0, opts_h1())
    path = tmp_path / "problem.txt"
    export_problem(prob, path)
    lines = path.read_text().splitlines()
    header = {l.split()[0]: int(l.split()[1]) for l in lines[:3]}
    assert header == {"NVARS": prob.n_vars, "NEQ": len(prob.b_eq), "NLE": len(prob.b_in)}
    var_lines = [l for l in lines if l.startswith("VAR ")]
    assert len(var_lines) == prob.n_vars
    eq_entries = [l for l in lines if l.startswith("EQ ")]
    assert len(eq_entries) == prob.a_eq.nnz
    # reconstruct the objective from the dump
    obj = np.zeros(prob.n_vars)
    for l in lines:
        if l.startswith("OBJ "):
            _, j, w = l.split()
            obj[int(j)] = float(w)
    assert np.allclose(obj, prob.obj_diag)
