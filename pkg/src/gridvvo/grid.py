"""Network layout, equipment inventory and radial-configuration checks.

All electrical quantities are stored in per-unit on the system base
(``base_mva``, ``base_kv``).  Node ids are 1-based and contiguous, matching
the usual numbering of distribution test feeders.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, asdict

__all__ = [
    "GridSpecError",
    "Node",
    "Line",
    "StorageUnit",
    "CapacitorBank",
    "UltcSpec",
    "DssParams",
    "EquipmentInventory",
    "GridSpec",
    "RadialConfig",
    "load_grid_spec",
    "save_grid_spec",
    "check_radiality",
    "neighbors",
]

RADIAL = "radial"
NOT_CONNECTED = "not_connected"
HAS_CYCLE = "has_cycle"
WRONG_LINE_COUNT = "wrong_line_count"


class GridSpecError(ValueError):
    """Raised when a grid description violates the documented schema."""


@dataclass(frozen=True)
class Node:
    id: int
    is_substation: bool = False
    power_factor: float = 1.0  # constant pf used to derive reactive demand
    v_min: float = 0.94
    v_max: float = 1.06


@dataclass(frozen=True)
class Line:
    from_node: int
    to_node: int
    r_pu: float
    x_pu: float
    smax_pu: float
    switchable: bool = False
    normally_closed: bool = True


@dataclass(frozen=True)
class StorageUnit:
    node: int
    energy_kwh: float
    power_kw: float


@dataclass(frozen=True)
class CapacitorBank:
    node: int
    module_kvar: float
    max_modules: int


@dataclass(frozen=True)
class UltcSpec:
    """Tap changer on one branch; ratio spans 1 +/- ratio_halfwidth in steps."""

    from_node: int
    to_node: int
    ratio_halfwidth: float
    tap_step: float

    @property
    def max_tap(self) -> int:
        return int(round(self.ratio_halfwidth / self.tap_step))

    def tap_positions(self) -> list[int]:
        m = self.max_tap
        return list(range(-m, m + 1))

    def ratio(self, tap: int) -> float:
        return 1.0 + tap * self.tap_step


@dataclass(frozen=True)
class DssParams:
    beta_ch: float = 0.85
    beta_dis: float = 0.85
    dod: float = 0.75


@dataclass(frozen=True)
class EquipmentInventory:
    storage_units: tuple[StorageUnit, ...] = ()
    capacitor_banks: tuple[CapacitorBank, ...] = ()
    ultc: UltcSpec | None = None
    dss_params: DssParams = field(default_factory=DssParams)


@dataclass(frozen=True)
class GridSpec:
    """Immutable layout (all switches closed) plus equipment inventory."""

    nodes: tuple[Node, ...]
    lines: tuple[Line, ...]
    equipment: EquipmentInventory = field(default_factory=EquipmentInventory)
    base_mva: float = 1.0
    base_kv: float = 12.66

    def __post_init__(self):
        _validate_spec(self)

    # -- convenience ----------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def substations(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.is_substation)

    def node(self, node_id: int) -> Node:
        try:
            nd = self.nodes[node_id - 1]
        except IndexError:
            raise GridSpecError(f"unknown node {node_id}")
        if nd.id != node_id:
            raise GridSpecError(f"unknown node {node_id}")
        return nd

    def line_index(self, from_node: int, to_node: int) -> int:
        """Index of the layout line between two nodes (either orientation)."""
        for i, ln in enumerate(self.lines):
            if {ln.from_node, ln.to_node} == {from_node, to_node}:
                return i
        raise GridSpecError(f"no layout line between {from_node} and {to_node}")

    def ultc_line_index(self) -> int | None:
        u = self.equipment.ultc
        if u is None:
            return None
        return self.line_index(u.from_node, u.to_node)

    def default_config(self) -> "RadialConfig":
        """Configuration given by the normally_closed statuses."""
        return RadialConfig(tuple(ln.normally_closed for ln in self.lines))

    def kw_base(self) -> float:
        return self.base_mva * 1000.0


@dataclass(frozen=True)
class RadialConfig:
    """Switch-status vector over the layout lines (True = closed)."""

    switch_vector: tuple[bool, ...]

    @property
    def n_closed(self) -> int:
        return sum(self.switch_vector)

    def closed_line_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.switch_vector) if s]

    def validate(self, spec: GridSpec) -> None:
        if len(self.switch_vector) != spec.n_lines:
            raise GridSpecError(
                f"config has {len(self.switch_vector)} entries, layout has {spec.n_lines} lines"
            )
        for i, ln in enumerate(spec.lines):
            if not ln.switchable and self.switch_vector[i] != ln.normally_closed:
                raise GridSpecError(
                    f"non-switchable line ({ln.from_node},{ln.to_node}) cannot change status"
                )
        verdict = check_radiality(spec, self)
        if verdict != RADIAL:
            raise GridSpecError(f"configuration is not radial: {verdict}")


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------

def _adjacency(n_nodes: int, edges) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(n_nodes + 1)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    return adj


def _reachable(n_nodes: int, edges, start: int) -> set[int]:
    adj = _adjacency(n_nodes, edges)
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def _validate_spec(spec: GridSpec) -> None:
    ids = [n.id for n in spec.nodes]
    if len(set(ids)) != len(ids):
        raise GridSpecError("duplicate node id")
    if ids != list(range(1, len(ids) + 1)):
        raise GridSpecError("node ids must be contiguous 1..N")
    if not any(n.is_substation for n in spec.nodes):
        raise GridSpecError("at least one substation required")
    for n in spec.nodes:
        if not (0.0 < n.power_factor <= 1.0):
            raise GridSpecError(f"node {n.id}: power factor must be in (0,1]")
        if not (n.v_min < 1.0 < n.v_max):
            raise GridSpecError(f"node {n.id}: voltage limits must bracket 1.0 p.u.")

    n_nodes = len(ids)
    seen_pairs = set()
    for ln in spec.lines:
        if ln.from_node == ln.to_node:
            raise GridSpecError(f"line ({ln.from_node},{ln.to_node}): self-loop")
        if not (1 <= ln.from_node <= n_nodes and 1 <= ln.to_node <= n_nodes):
            raise GridSpecError(f"line ({ln.from_node},{ln.to_node}): unknown endpoint")
        if ln.r_pu <= 0.0 and ln.x_pu <= 0.0:
            raise GridSpecError(
                f"line ({ln.from_node},{ln.to_node}): zero-impedance line rejected"
            )
        if ln.r_pu < 0.0 or ln.x_pu < 0.0:
            raise GridSpecError(f"line ({ln.from_node},{ln.to_node}): negative impedance")
        if ln.smax_pu <= 0.0:
            raise GridSpecError(f"line ({ln.from_node},{ln.to_node}): ampacity must be > 0")
        key = frozenset((ln.from_node, ln.to_node))
        if key in seen_pairs:
            raise GridSpecError(f"parallel line ({ln.from_node},{ln.to_node}) not supported")
        seen_pairs.add(key)

    all_edges = [(ln.from_node, ln.to_node) for ln in spec.lines]
    start = spec.substations[0]
    if _reachable(n_nodes, all_edges, start) != set(ids):
        raise GridSpecError("disconnected layout")
    # Permanently-open branches are dead weight; the operable subgraph
    # (closable lines only) still has to reach every node.
    operable = [
        (ln.from_node, ln.to_node)
        for ln in spec.lines
        if ln.switchable or ln.normally_closed
    ]
    if _reachable(n_nodes, operable, start) != set(ids):
        raise GridSpecError("disconnected layout: permanently-open branch isolates nodes")

    eq = spec.equipment
    for su in eq.storage_units:
        if not (1 <= su.node <= n_nodes):
            raise GridSpecError(f"storage on unknown node {su.node}")
        if su.energy_kwh < 0 or su.power_kw < 0:
            raise GridSpecError(f"storage on node {su.node}: negative rating")
    for cb in eq.capacitor_banks:
        if not (1 <= cb.node <= n_nodes):
            raise GridSpecError(f"capacitor on unknown node {cb.node}")
        if cb.module_kvar < 0 or cb.max_modules < 0:
            raise GridSpecError(f"capacitor on node {cb.node}: negative rating")
    if eq.ultc is not None:
        u = eq.ultc
        idx = None
        for i, ln in enumerate(spec.lines):
            if {ln.from_node, ln.to_node} == {u.from_node, u.to_node}:
                idx = i
                break
        if idx is None:
            raise GridSpecError(f"tap changer branch ({u.from_node},{u.to_node}) not in layout")
        if spec.lines[idx].switchable or not spec.lines[idx].normally_closed:
            raise GridSpecError("tap changer branch must be non-switchable and normally closed")
        if u.tap_step <= 0 or u.ratio_halfwidth <= 0:
            raise GridSpecError("tap changer step and halfwidth must be positive")
        ratio = u.ratio_halfwidth / u.tap_step
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise GridSpecError("ratio_halfwidth / tap_step must be a positive integer")
    dp = eq.dss_params
    if not (0.0 < dp.beta_ch < 1.0) or not (0.0 < dp.beta_dis < 1.0):
        raise GridSpecError("storage efficiencies must be in (0,1)")
    if not (0.0 < dp.dod <= 1.0):
        raise GridSpecError("depth of discharge must be in (0,1]")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def check_radiality(spec: GridSpec, config: RadialConfig) -> str:
    """Classify a switch vector: spanning tree or what went wrong.

    Returns one of RADIAL, NOT_CONNECTED, HAS_CYCLE, WRONG_LINE_COUNT.
    """
    if len(config.switch_vector) != spec.n_lines:
        raise GridSpecError("config dimension does not match layout")
    n = spec.n_nodes
    closed = [
        (ln.from_node, ln.to_node)
        for ln, s in zip(spec.lines, config.switch_vector)
        if s
    ]
    if len(closed) < n - 1:
        return NOT_CONNECTED
    if len(closed) > n - 1:
        return WRONG_LINE_COUNT
    # exactly N-1 closed lines: connected <=> acyclic <=> spanning tree
    reach = _reachable(n, closed, spec.substations[0])
    if len(reach) == n:
        return RADIAL
    return HAS_CYCLE


def neighbors(spec: GridSpec, config: RadialConfig, node_id: int) -> set[int]:
    """Nodes adjacent to ``node_id`` through closed lines of the config."""
    spec.node(node_id)
    if len(config.switch_vector) != spec.n_lines:
        raise GridSpecError("config dimension does not match layout")
    out: set[int] = set()
    for ln, s in zip(spec.lines, config.switch_vector):
        if not s:
            continue
        if ln.from_node == node_id:
            out.add(ln.to_node)
        elif ln.to_node == node_id:
            out.add(ln.from_node)
    return out


# ---------------------------------------------------------------------------
# JSON round trip
# ---------------------------------------------------------------------------

def _spec_to_dict(spec: GridSpec) -> dict:
    d = {
        "base_mva": spec.base_mva,
        "base_kv": spec.base_kv,
        "nodes": [
            {
                "id": n.id,
                "substation": n.is_substation,
                "pf": n.power_factor,
                "vmin": n.v_min,
                "vmax": n.v_max,
            }
            for n in spec.nodes
        ],
        "lines": [
            {
                "from": ln.from_node,
                "to": ln.to_node,
                "r_pu": ln.r_pu,
                "x_pu": ln.x_pu,
                "smax_pu": ln.smax_pu,
                "switchable": ln.switchable,
                "normally_closed": ln.normally_closed,
            }
            for ln in spec.lines
        ],
        "storage": [
            {"node": s.node, "kwh": s.energy_kwh, "kw": s.power_kw}
            for s in spec.equipment.storage_units
        ],
        "capacitors": [
            {"node": c.node, "module_kvar": c.module_kvar, "modules": c.max_modules}
            for c in spec.equipment.capacitor_banks
        ],
        "dss_params": asdict(spec.equipment.dss_params),
    }
    if spec.equipment.ultc is not None:
        u = spec.equipment.ultc
        d["ultc"] = {
            "from": u.from_node,
            "to": u.to_node,
            "a": u.ratio_halfwidth,
            "delta": u.tap_step,
        }
    return d


def save_grid_spec(spec: GridSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(_spec_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_grid_spec(path) -> GridSpec:
    """Load and validate a grid spec from its JSON file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise GridSpecError(f"cannot parse {path}: {exc}") from exc
    return spec_from_dict(raw)


def spec_from_dict(raw: dict) -> GridSpec:
    try:
        nodes = tuple(
            Node(
                id=int(n["id"]),
                is_substation=bool(n.get("substation", False)),
                power_factor=float(n.get("pf", 1.0)),
                v_min=float(n.get("vmin", 0.94)),
                v_max=float(n.get("vmax", 1.06)),
            )
            for n in raw["nodes"]
        )
        lines = tuple(
            Line(
                from_node=int(ln["from"]),
                to_node=int(ln["to"]),
                r_pu=float(ln["r_pu"]),
                x_pu=float(ln["x_pu"]),
                smax_pu=float(ln.get("smax_pu", 10.0)),
                switchable=bool(ln.get("switchable", False)),
                normally_closed=bool(ln.get("normally_closed", True)),
            )
            for ln in raw["lines"]
        )
        storage = tuple(
            StorageUnit(node=int(s["node"]), energy_kwh=float(s["kwh"]), power_kw=float(s["kw"]))
            for s in raw.get("storage", [])
        )
        caps = tuple(
            CapacitorBank(
                node=int(c["node"]),
                module_kvar=float(c["module_kvar"]),
                max_modules=int(c["modules"]),
            )
            for c in raw.get("capacitors", [])
        )
        ultc = None
        if raw.get("ultc"):
            u = raw["ultc"]
            ultc = UltcSpec(
                from_node=int(u["from"]),
                to_node=int(u["to"]),
                ratio_halfwidth=float(u["a"]),
                tap_step=float(u["delta"]),
            )
        dp_raw = raw.get("dss_params", {})
        dss = DssParams(
            beta_ch=float(dp_raw.get("beta_ch", 0.85)),
            beta_dis=float(dp_raw.get("beta_dis", 0.85)),
            dod=float(dp_raw.get("dod", 0.75)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise GridSpecError(f"malformed grid spec: {exc}") from exc
    return GridSpec(
        nodes=nodes,
        lines=lines,
        equipment=EquipmentInventory(
            storage_units=storage, capacitor_banks=caps, ultc=ultc, dss_params=dss
        ),
        base_mva=float(raw.get("base_mva", 1.0)),
        base_kv=float(raw.get("base_kv", 12.66)),
    )


def two_node_spec(r_pu: float = 0.01, x_pu: float = 0.01, smax_pu: float = 10.0) -> GridSpec:
    """Smallest connected layout; handy for closed-form checks."""
    return GridSpec(
        nodes=(Node(1, is_substation=True), Node(2, power_factor=0.95)),
        lines=(Line(1, 2, r_pu, x_pu, smax_pu),),
    )


def _pf_from_pq(p_kw: float, q_kvar: float) -> float:
    if p_kw <= 0.0:
        return 1.0
    return p_kw / math.hypot(p_kw, q_kvar)
