import numpy as np
import pytest

from gridvvo.case33 import case33_spec
from gridvvo import datagen
from gridvvo.grid import (
    CapacitorBank,
    EquipmentInventory,
    GridSpec,
    Line,
    Node,
    StorageUnit,
    UltcSpec,
)
from gridvvo.loads import DayProfileSet, LoadHistory
from gridvvo.wind import WindMarkovModel, discretize, estimate_transitions

SEED_LOADS = 7
SEED_WIND = 8


@pytest.fixture(scope="session")
def spec33():
    return case33_spec()


@pytest.fixture(scope="session")
def spec33_bare():
    return case33_spec(with_equipment=False)


@pytest.fixture(scope="session")
def load_history():
    frame = datagen.generate_load_history(30, seed=SEED_LOADS)
    return LoadHistory(frame=frame.rename(columns={"node_id": "node"}))


@pytest.fixture(scope="session")
def wind_series():
    return datagen.generate_wind_series(30 * 24, seed=SEED_WIND)


@pytest.fixture(scope="session")
def wind_model(wind_series):
    levels, states = discretize(wind_series, 10, 1000.0)
    matrix = estimate_transitions(states, n_states=10)
    model = WindMarkovModel(state_levels_kw=levels, transition=matrix, rated_kw=1000.0)
    return model, int(states[-1])


def line_graph_spec(n: int, r: float = 0.01, x: float = 0.01) -> GridSpec:
    nodes = tuple(Node(i, is_substation=(i == 1), power_factor=0.95) for i in range(1, n + 1))
    lines = tuple(Line(i, i + 1, r, x, 10.0) for i in range(1, n))
    return GridSpec(nodes=nodes, lines=lines)


@pytest.fixture()
def spec4():
    return line_graph_spec(4)


def flat_profiles(n: int, p_by_hour=None) -> DayProfileSet:
    p = np.zeros((n, 24))
    if p_by_hour:
        for h, vals in p_by_hour.items():
            p[1:, h - 1] = vals
    q = p * 0.484
    return DayProfileSet(p_pu=p, q_pu=q)


def five_node_spec() -> GridSpec:
    """Tree 1-2-3-4-5 plus a tie (2,5); two switchable branches, one bank."""
    nodes = tuple(Node(i, is_substation=(i == 1), power_factor=0.9) for i in range(1, 6))
    lines = (
        Line(1, 2, 0.02, 0.02, 10.0),
        Line(2, 3, 0.02, 0.02, 10.0),
        Line(3, 4, 0.03, 0.02, 10.0),
        Line(4, 5, 0.03, 0.02, 10.0, switchable=True, normally_closed=True),
        Line(2, 5, 0.04, 0.03, 10.0, switchable=True, normally_closed=False),
    )
    equipment = EquipmentInventory(
        capacitor_banks=(CapacitorBank(node=4, module_kvar=100.0, max_modules=2),)
    )
    return GridSpec(nodes=nodes, lines=lines, equipment=equipment)


def mini_ultc_spec(tap_step: float = 0.02, halfwidth: float = 0.04) -> GridSpec:
    """4-node chain with a tap changer on the middle branch; voltage limits
    are wide enough that every tap position stays feasible."""
    nodes = tuple(
        Node(i, is_substation=(i == 1), power_factor=0.9, v_min=0.85, v_max=1.15)
        for i in range(1, 5)
    )
    lines = (
        Line(1, 2, 0.02, 0.02, 10.0),
        Line(2, 3, 0.02, 0.02, 10.0),
        Line(3, 4, 0.03, 0.02, 10.0),
    )
    equipment = EquipmentInventory(
        ultc=UltcSpec(from_node=2, to_node=3, ratio_halfwidth=halfwidth, tap_step=tap_step)
    )
    return GridSpec(nodes=nodes, lines=lines, equipment=equipment)


def storage_spec() -> GridSpec:
    """5-node chain with one storage unit and one zero-capacity unit."""
    nodes = tuple(Node(i, is_substation=(i == 1), power_factor=0.9) for i in range(1, 6))
    lines = tuple(Line(i, i + 1, 0.02, 0.02, 10.0) for i in range(1, 5))
    equipment = EquipmentInventory(
        storage_units=(
            StorageUnit(node=4, energy_kwh=200.0, power_kw=100.0),
            StorageUnit(node=5, energy_kwh=0.0, power_kw=50.0),
        )
    )
    return GridSpec(nodes=nodes, lines=lines, equipment=equipment)
