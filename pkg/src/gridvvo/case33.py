"""The 33-node, 12.66 kV radial test feeder with its usual five tie branches.

Branch impedances are the classic published ohm values, converted to per
unit on a 1 MVA / 12.66 kV base.  The nominal node loads are kept here as
well: they seed the synthetic load generator and fix each node's power
factor (reactive demand is modelled through a constant pf per node).
"""

from __future__ import annotations

import math

from .grid import (
    CapacitorBank,
    DssParams,
    EquipmentInventory,
    GridSpec,
    Line,
    Node,
    StorageUnit,
    UltcSpec,
    save_grid_spec,
)

__all__ = ["case33_spec", "write_case33_json", "NOMINAL_LOADS_KW", "TIE_BRANCHES"]

# (from, to, R ohm, X ohm) for the 32 tree branches
_BRANCHES_OHM = [
    (1, 2, 0.0922, 0.0470),
    (2, 3, 0.4930, 0.2511),
    (3, 4, 0.3660, 0.1864),
    (4, 5, 0.3811, 0.1941),
    (5, 6, 0.8190, 0.7070),
    (6, 7, 0.1872, 0.6188),
    (7, 8, 0.7114, 0.2351),
    (8, 9, 1.0300, 0.7400),
    (9, 10, 1.0440, 0.7400),
    (10, 11, 0.1966, 0.0650),
    (11, 12, 0.3744, 0.1238),
    (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129),
    (14, 15, 0.5910, 0.5260),
    (15, 16, 0.7463, 0.5450),
    (16, 17, 1.2890, 1.7210),
    (17, 18, 0.7320, 0.5740),
    (2, 19, 0.1640, 0.1565),
    (19, 20, 1.5042, 1.3554),
    (20, 21, 0.4095, 0.4784),
    (21, 22, 0.7089, 0.9373),
    (3, 23, 0.4512, 0.3083),
    (23, 24, 0.8980, 0.7091),
    (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034),
    (26, 27, 0.2842, 0.1447),
    (27, 28, 1.0590, 0.9337),
    (28, 29, 0.8042, 0.7006),
    (29, 30, 0.5075, 0.2585),
    (30, 31, 0.9744, 0.9630),
    (31, 32, 0.3105, 0.3619),
    (32, 33, 0.3410, 0.5302),
]

# normally-open tie branches
TIE_BRANCHES = [
    (8, 21, 2.0000, 2.0000),
    (9, 15, 2.0000, 2.0000),
    (12, 22, 2.0000, 2.0000),
    (18, 33, 0.5000, 0.5000),
    (25, 29, 0.5000, 0.5000),
]

# nominal (P kW, Q kvar) demands per node
NOMINAL_LOADS_KW = {
    2: (100, 60), 3: (90, 40), 4: (120, 80), 5: (60, 30), 6: (60, 20),
    7: (200, 100), 8: (200, 100), 9: (60, 20), 10: (60, 20), 11: (45, 30),
    12: (60, 35), 13: (60, 35), 14: (120, 80), 15: (60, 10), 16: (60, 20),
    17: (60, 20), 18: (90, 40), 19: (90, 40), 20: (90, 40), 21: (90, 40),
    22: (90, 40), 23: (90, 50), 24: (420, 200), 25: (420, 200), 26: (60, 25),
    27: (60, 25), 28: (60, 20), 29: (120, 70), 30: (200, 600), 31: (150, 70),
    32: (210, 100), 33: (60, 40),
}

# branches carrying remotely controllable switches: the five ties plus
# four normally-closed sectionalizers
_SWITCHABLE = {(8, 21), (9, 15), (12, 22), (18, 33), (25, 29),
               (6, 7), (10, 11), (14, 15), (29, 30)}


def case33_spec(
    base_mva: float = 1.0,
    base_kv: float = 12.66,
    v_min: float = 0.94,
    v_max: float = 1.06,
    smax_pu: float = 10.0,
    with_equipment: bool = True,
    tap_step: float = 0.01,
) -> GridSpec:
    """Build the feeder; ``with_equipment=False`` strips storage/caps/tap/switches."""
    z_base = base_kv ** 2 / base_mva

    nodes = []
    for nid in range(1, 34):
        p, q = NOMINAL_LOADS_KW.get(nid, (0.0, 0.0))
        pf = p / math.hypot(p, q) if p > 0 else 1.0
        nodes.append(
            Node(id=nid, is_substation=(nid == 1), power_factor=pf, v_min=v_min, v_max=v_max)
        )

    lines = []
    for f, t, r, x in _BRANCHES_OHM:
        lines.append(
            Line(
                from_node=f, to_node=t,
                r_pu=r / z_base, x_pu=x / z_base, smax_pu=smax_pu,
                switchable=with_equipment and (f, t) in _SWITCHABLE,
                normally_closed=True,
            )
        )
    for f, t, r, x in TIE_BRANCHES:
        lines.append(
            Line(
                from_node=f, to_node=t,
                r_pu=r / z_base, x_pu=x / z_base, smax_pu=smax_pu,
                switchable=with_equipment,
                normally_closed=False,
            )
        )

    if with_equipment:
        equipment = EquipmentInventory(
            storage_units=(
                StorageUnit(node=14, energy_kwh=200.0, power_kw=100.0),
                StorageUnit(node=15, energy_kwh=300.0, power_kw=100.0),
            ),
            capacitor_banks=(
                CapacitorBank(node=11, module_kvar=100.0, max_modules=4),
                CapacitorBank(node=25, module_kvar=100.0, max_modules=4),
            ),
            ultc=UltcSpec(from_node=6, to_node=26, ratio_halfwidth=0.1, tap_step=tap_step),
            dss_params=DssParams(beta_ch=0.85, beta_dis=0.85, dod=0.75),
        )
    else:
        equipment = EquipmentInventory()

    return GridSpec(
        nodes=tuple(nodes), lines=tuple(lines),
        equipment=equipment, base_mva=base_mva, base_kv=base_kv,
    )


WIND_NODE = 15
WIND_RATED_KW = 1000.0


def write_case33_json(path, **kwargs) -> GridSpec:
    spec = case33_spec(**kwargs)
    save_grid_spec(spec, path)
    return spec
