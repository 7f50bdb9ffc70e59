"""Day-ahead Volt-VAR optimization for radial distribution feeders.

Jointly schedules storage, shunt capacitors, a tap changer and
reconfiguration switches to minimize expected resistive loss under
Markov-modeled wind, and validates schedules against a full AC solve.
"""

from .grid import (
    GridSpec,
    GridSpecError,
    Line,
    Node,
    RadialConfig,
    check_radiality,
    load_grid_spec,
    neighbors,
    save_grid_spec,
)
from .powerflow import (
    FlowSolution,
    InjectionSet,
    NewtonDivergenceError,
    PowerFlowError,
    compare_solutions,
    lindistflow_solve,
    newton_ac_solve,
    quadratic_loss,
)
from .wind import WindMarkovModel, discretize, estimate_transitions, propagate
from .loads import DayProfileSet, LoadHistory, ingest_csv, typical_pattern
from .formulation import (
    FormulationError,
    FormulationOptions,
    VvoProblem,
    build_problem,
    export_problem,
    extract_schedule,
)
from .qp import QpResult, solve_qp_relaxation
from .bnb import SolveReport, branch_and_bound
from .schedule import VvoSchedule, validate_schedule
from .evaluate import MetricsReport, evaluate, replay_expected_loss, voltage_spread

__version__ = "0.1.0"
