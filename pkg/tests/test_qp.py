import numpy as np
import pytest
import scipy.sparse as sp

from gridvvo.formulation import (
    FormulationMeta,
    FormulationOptions,
    VariableIndex,
    VvoProblem,
    build_problem,
)
from gridvvo.loads import DayProfileSet
from gridvvo.powerflow import InjectionSet, lindistflow_solve, quadratic_loss
from gridvvo.wind import WindMarkovModel
from gridvvo import qp
from conftest import flat_profiles, line_graph_spec


def raw_problem(obj, a_eq, b_eq, a_in, b_in, lb, ub, integrality=None):
    """Small hand-built programs share the VvoProblem container."""
    n = len(lb)
    vi = VariableIndex()
    for j in range(n):
        vi.add(("x", j))
    meta = FormulationMeta(
        spec=None, options=None, scenarios=(), wind_levels_pu=(),
        observed_state=0, ybar=(), reconfig_active=False, tap_positions=(),
        block_of_hour={}, storage_units=(), cap_banks=(), profiles=None,
    )
    return VvoProblem(
        obj_diag=np.asarray(obj, dtype=float),
        a_eq=sp.csr_matrix(np.asarray(a_eq, dtype=float).reshape(len(b_eq), n)),
        b_eq=np.asarray(b_eq, dtype=float),
        eq_tags=[f"eq{r}" for r in range(len(b_eq))],
        a_in=sp.csr_matrix(np.asarray(a_in, dtype=float).reshape(len(b_in), n)),
        b_in=np.asarray(b_in, dtype=float),
        in_tags=[f"in{r}" for r in range(len(b_in))],
        lb=np.asarray(lb, dtype=float),
        ub=np.asarray(ub, dtype=float),
        integrality=np.zeros(n, dtype=np.int8) if integrality is None
        else np.asarray(integrality, dtype=np.int8),
        sos_one_hot=[],
        var_index=vi,
        meta=meta,
    )


def test_unconstrained_diagonal_qp():
    prob = raw_problem([1.0, 2.0, 0.5], [], [], [], [],
                       [-10, -10, -10], [10, 10, 10])
    res = qp.solve_qp_relaxation(prob)
    assert res.status == qp.OPTIMAL
    assert res.objective == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(res.x, 0.0, atol=1e-9)


def test_active_bound():
    # min x^2 subject to x >= 3
    prob = raw_problem([1.0], [], [], [], [], [3.0], [10.0])
    res = qp.solve_qp_relaxation(prob)
    assert res.status == qp.OPTIMAL
    assert res.objective == pytest.approx(9.0, rel=1e-9)
    assert res.x[0] == pytest.approx(3.0, abs=1e-9)


def test_equality_and_inequality_mix():
    # min x1^2 + x2^2 s.t. x1 + x2 = 2, x1 - x2 <= 0  -> x = (1, 1)
    prob = raw_problem(
        [1.0, 1.0], [[1.0, 1.0]], [2.0], [[1.0, -1.0]], [0.0],
        [-5, -5], [5, 5],
    )
    res = qp.solve_qp_relaxation(prob)
    assert res.status == qp.OPTIMAL
    assert res.objective == pytest.approx(2.0, rel=1e-8)
    # the inequality is active with a zero multiplier; on that flat face
    # the argmin is only sqrt(mu)-accurate, unlike the objective
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-4)
    assert res.kkt["primal_feasibility"] <= 1e-7
    assert res.kkt["stationarity"] <= 1e-6


def test_inequality_binds():
    # min x1^2 + x2^2 s.t. x1 + x2 >= 2 (as -x1 - x2 <= -2) -> (1, 1)
    prob = raw_problem(
        [1.0, 1.0], [], [], [[-1.0, -1.0]], [-2.0], [-5, -5], [5, 5],
    )
    res = qp.solve_qp_relaxation(prob)
    assert res.status == qp.OPTIMAL
    assert res.objective == pytest.approx(2.0, rel=1e-8)


def test_infeasible_by_bounds_interval():
    # x1 + x2 = 5 with x in [0,1]^2 cannot hold
    prob = raw_problem([1.0, 1.0], [[1.0, 1.0]], [5.0], [], [],
                       [0, 0], [1, 1])
    res = qp.solve_qp_relaxation(prob)
    assert res.status == qp.INFEASIBLE
    assert res.infeasibility >= 3.0 - 1e-9


def test_infeasible_contradictory_rows():
    # x1 + x2 = 1 and x1 + x2 = 3 (harder: intervals alone allow both)
    prob = raw_problem(
        [0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]], [1.0, 3.0], [], [],
        [-10, -10], [10, 10],
    )
    res = qp.solve_qp_relaxation(prob)
    assert res.status == qp.INFEASIBLE
    assert res.infeasibility >= 1.0


def test_fixings_propagate_one_hot():
    # sum kappa = 1 with one pinned to 1 forces the others to 0
    prob = raw_problem(
        [0.0, 0.0, 0.0, 1.0],
        [[1.0, 1.0, 1.0, 0.0], [0.5, 0.0, 0.0, 1.0]], [1.0, 2.0],
        [], [],
        [0, 0, 0, -10], [1, 1, 1, 10],
        integrality=[1, 1, 1, 0],
    )
    res = qp.solve_qp_relaxation(prob, fixings={0: (1.0, 1.0)})
    assert res.status == qp.OPTIMAL
    assert res.x[1] == pytest.approx(0.0, abs=1e-10)
    assert res.x[2] == pytest.approx(0.0, abs=1e-10)
    assert res.x[3] == pytest.approx(1.5, abs=1e-8)
    assert res.objective == pytest.approx(2.25, rel=1e-8)


def test_redundant_rows_dropped_equivalently():
    # adding an always-true row must not change the optimum
    base = raw_problem([1.0, 1.0], [[1.0, 1.0]], [2.0], [], [], [-5, -5], [5, 5])
    padded = raw_problem(
        [1.0, 1.0], [[1.0, 1.0]], [2.0],
        [[1.0, 0.0]], [100.0],
        [-5, -5], [5, 5],
    )
    r1 = qp.solve_qp_relaxation(base)
    r2 = qp.solve_qp_relaxation(padded)
    assert r1.objective == pytest.approx(r2.objective, rel=1e-9)


def test_fixed_integer_vvo_relaxation_matches_flow_oracle(spec4):
    profiles = flat_profiles(4, {1: [0.05, 0.08, 0.03]})
    wind = WindMarkovModel(np.array([100.0, 500.0]), np.eye(2), 1000.0)
    opts = FormulationOptions(horizon=1, states_used=1, switching_budget=0, wind_node=None)
    prob = build_problem(spec4, spec4.default_config(), profiles, wind, 0, opts)
    res = qp.solve_qp_relaxation(prob)
    assert res.status == qp.OPTIMAL
    inj = InjectionSet(profiles.p_pu[:, 0], profiles.q_pu[:, 0],
                       np.zeros(4), np.zeros(4), np.zeros(4))
    sol = lindistflow_solve(spec4, spec4.default_config(), inj)
    assert res.objective == pytest.approx(
        quadratic_loss(spec4, spec4.default_config(), sol), abs=1e-10
    )


def test_voltage_bounds_make_loads_infeasible():
    # a band of +/-0.001 p.u. around 1.0 cannot carry a 0.3 p.u. load
    import dataclasses

    spec = line_graph_spec(3)
    nodes = tuple(dataclasses.replace(nd, v_min=0.999, v_max=1.001) for nd in spec.nodes)
    from gridvvo.grid import GridSpec

    tight = GridSpec(nodes=nodes, lines=spec.lines)
    profiles = flat_profiles(3, {1: [0.3, 0.3]})
    wind = WindMarkovModel(np.array([100.0, 500.0]), np.eye(2), 1000.0)
    opts = FormulationOptions(horizon=1, states_used=1, switching_budget=0, wind_node=None)
    prob = build_problem(tight, tight.default_config(), profiles, wind, 0, opts)
    res = qp.solve_qp_relaxation(prob)
    assert res.status == qp.INFEASIBLE


def test_determinism():
    prob = raw_problem(
        [1.0, 0.1, 0.0], [[1.0, 1.0, 1.0]], [1.5],
        [[1.0, -1.0, 0.0]], [0.3],
        [0, 0, 0], [1, 1, 1],
    )
    r1 = qp.solve_qp_relaxation(prob)
    r2 = qp.solve_qp_relaxation(prob)
    assert np.array_equal(r1.x, r2.x)
    assert r1.objective == r2.objective
