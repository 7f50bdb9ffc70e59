"""Assembly of the day-ahead VVO program as a sparse mixed-integer QP.

The program minimizes expected resistive loss over wind scenarios.  Flow
and voltage variables are replicated per (hour, wind state); all decisions
(switches, taps, capacitor modules, storage powers) are shared across
states, which is what makes the schedule day-ahead rather than recourse.

Constraint families, per scenario unless noted:
  * lossless transport per line (forward plus reverse flow = 0),
  * nodal active/reactive balance with storage sign chosen by peak /
    off-peak membership and wind pinned at the scenario's state level,
  * linear voltage drop on closed non-switchable lines; a disjunctive
    band on switchable lines so an open line decouples its endpoints,
  * tap-changer voltage relation through binary tap selection and exact
    binary-times-continuous product envelopes,
  * ampacity as an inscribed regular polygon of half-planes,
  * disjunctive flow deactivation for open lines,
  * single-commodity fictitious flow radiality plus a switching budget
    (once, not per hour).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import GridSpec, RadialConfig, check_radiality, RADIAL
from .loads import DayProfileSet
from .schedule import VvoSchedule
from .wind import WindMarkovModel, propagate

__all__ = [
    "FormulationError",
    "FormulationOptions",
    "VariableIndex",
    "VvoProblem",
    "build_problem",
    "extract_schedule",
    "export_problem",
]


class FormulationError(ValueError):
    pass


@dataclass(frozen=True)
class FormulationOptions:
    horizon: int = 24
    states_used: int | None = None      # keep the S' most probable states per hour
    switching_budget: int = 6           # must be even
    ampacity_segments: int = 8
    disjunctive_d: float = 100.0
    peak_hours: tuple[int, ...] = tuple(range(9, 23))
    tap_daily: bool = False             # one tap setting for the whole day
    wind_node: int | None = None

    def __post_init__(self):
        if not (1 <= self.horizon <= 24):
            raise FormulationError("horizon must be within 1..24")
        if self.switching_budget < 0 or self.switching_budget % 2 != 0:
            raise FormulationError("switching budget must be a nonnegative even number")
        if self.ampacity_segments < 4:
            raise FormulationError("ampacity polygon needs at least 4 segments")
        if self.disjunctive_d <= 0:
            raise FormulationError("disjunctive constant must be positive")
        if self.states_used is not None and self.states_used < 1:
            raise FormulationError("states_used must be at least 1")
        hours = tuple(sorted(set(int(h) for h in self.peak_hours)))
        if any(h < 1 or h > 24 for h in hours):
            raise FormulationError("peak hours must be labels in 1..24")
        object.__setattr__(self, "peak_hours", hours)

    def peak_in_horizon(self) -> tuple[int, ...]:
        return tuple(h for h in range(1, self.horizon + 1) if h in self.peak_hours)

    def offpeak_in_horizon(self) -> tuple[int, ...]:
        return tuple(h for h in range(1, self.horizon + 1) if h not in self.peak_hours)


class VariableIndex:
    """Bijective map between structured variable keys and column indices."""

    def __init__(self):
        self._cols: dict[tuple, int] = {}
        self._keys: list[tuple] = []

    def add(self, key: tuple) -> int:
        if key in self._cols:
            raise FormulationError(f"variable {key} registered twice")
        col = len(self._keys)
        self._cols[key] = col
        self._keys.append(key)
        return col

    def __getitem__(self, key: tuple) -> int:
        return self._cols[key]

    def __contains__(self, key: tuple) -> bool:
        return key in self._cols

    def get(self, key: tuple, default=None):
        return self._cols.get(key, default)

    def key_of(self, col: int) -> tuple:
        return self._keys[col]

    def __len__(self) -> int:
        return len(self._keys)


@dataclass(frozen=True)
class FormulationMeta:
    spec: GridSpec
    options: FormulationOptions
    scenarios: tuple[tuple[int, int, float], ...]   # (hour label, state, weight)
    wind_levels_pu: tuple[float, ...]
    observed_state: int
    ybar: tuple[bool, ...]
    reconfig_active: bool
    tap_positions: tuple[int, ...]                  # empty when no tap changer
    block_of_hour: dict[int, int]
    storage_units: tuple[tuple[int, float, float], ...]  # (node, b_pu, p_max_pu)
    cap_banks: tuple[tuple[int, float, int], ...]        # (node, q_module_pu, c_max)
    profiles: DayProfileSet


@dataclass
class VvoProblem:
    """Sparse MIQP: min  x' diag(obj) x  s.t.  A_eq x = b_eq, A_in x <= b_in, lb <= x <= ub.

    Treated as immutable once assembled; the solvers never modify it, so one
    instance can back any number of concurrent relaxation solves.
    """

    obj_diag: np.ndarray
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    eq_tags: list[str]
    a_in: sp.csr_matrix
    b_in: np.ndarray
    in_tags: list[str]
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray            # 0 continuous, 1 binary, 2 bounded integer
    sos_one_hot: list[list[int]]       # tap selector blocks
    var_index: VariableIndex
    meta: FormulationMeta

    @property
    def n_vars(self) -> int:
        return len(self.lb)

    def objective_value(self, x: np.ndarray) -> float:
        return float(np.dot(self.obj_diag, np.asarray(x) ** 2))

    def integer_columns(self) -> np.ndarray:
        return np.flatnonzero(self.integrality > 0)

    def no_action_fixings(self) -> dict[int, tuple[float, float]]:
        """Pin integers to the do-nothing assignment (current switches,
        neutral tap, zero capacitor modules); storage stays free."""
        fix: dict[int, tuple[float, float]] = {}
        vi = self.var_index
        m = self.meta
        if m.reconfig_active:
            for li, closed in enumerate(m.ybar):
                fix[vi[("y", li)]] = (float(closed), float(closed))
        for block in sorted(set(m.block_of_hour.values())):
            for tap in m.tap_positions:
                val = 1.0 if tap == 0 else 0.0
                fix[vi[("kappa", tap, block)]] = (val, val)
        for bi in range(len(m.cap_banks)):
            for h in range(1, m.options.horizon + 1):
                fix[vi[("cap", bi, h)]] = (0.0, 0.0)
        return fix


class _Rows:
    def __init__(self):
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.rhs: list[float] = []
        self.tags: list[str] = []

    def add(self, cols, vals, rhs: float, tag: str) -> int:
        r = len(self.rhs)
        self.rows.extend([r] * len(cols))
        self.cols.extend(cols)
        self.vals.extend(vals)
        self.rhs.append(rhs)
        self.tags.append(tag)
        return r

    def matrix(self, n_vars: int) -> tuple[sp.csr_matrix, np.ndarray]:
        a = sp.csr_matrix(
            (self.vals, (self.rows, self.cols)), shape=(len(self.rhs), n_vars)
        )
        return a, np.array(self.rhs, dtype=float)


def _scenario_table(
    wind: WindMarkovModel, observed_state: int, opts: FormulationOptions
) -> list[tuple[int, int, float]]:
    """Top-probability truncation with renormalization, hour by hour."""
    path = propagate(wind, observed_state, opts.horizon)
    s_keep = opts.states_used or wind.n_states
    table: list[tuple[int, int, float]] = []
    for h in range(1, opts.horizon + 1):
        pi = path.at(h)
        order = sorted(range(wind.n_states), key=lambda i: (-pi[i], i))
        chosen = [i for i in order[:s_keep] if pi[i] > 0.0]
        total = sum(pi[i] for i in chosen)
        for i in sorted(chosen):
            table.append((h, i, float(pi[i] / total)))
    return table


def build_problem(
    spec: GridSpec,
    config0: RadialConfig,
    profiles: DayProfileSet,
    wind: WindMarkovModel,
    observed_state: int,
    opts: FormulationOptions,
) -> VvoProblem:
    """Assemble the full program around the current configuration ``config0``."""
    if len(config0.switch_vector) != spec.n_lines:
        raise FormulationError("config dimension does not match layout")
    for li, ln in enumerate(spec.lines):
        if not ln.switchable and config0.switch_vector[li] != ln.normally_closed:
            raise FormulationError(
                f"current config toggles non-switchable line ({ln.from_node},{ln.to_node})"
            )
    if profiles.n_nodes != spec.n_nodes:
        raise FormulationError("profiles cover a different node count")
    if opts.wind_node is not None:
        spec.node(opts.wind_node)
    if len(spec.substations) != 1:
        raise FormulationError("formulation requires exactly one substation")

    n = spec.n_nodes
    nl = spec.n_lines
    d_const = opts.disjunctive_d
    reconfig = any(ln.switchable for ln in spec.lines)
    ultc = spec.equipment.ultc
    ultc_line = spec.ultc_line_index()
    units = spec.equipment.storage_units
    banks = spec.equipment.capacitor_banks
    kw_base = spec.kw_base()
    dssp = spec.equipment.dss_params

    if not reconfig or opts.switching_budget == 0:
        # the topology cannot change: it has to be radial as provided
        if check_radiality(spec, config0) != RADIAL:
            raise FormulationError(
                "infeasible by construction: no switching freedom and the "
                "current configuration is not radial"
            )
    off_hours = opts.offpeak_in_horizon()
    peak_hours = opts.peak_in_horizon()
    if any(u.energy_kwh > 0 for u in units):
        if not off_hours or not peak_hours:
            raise FormulationError(
                "storage cycling needs both off-peak and peak hours inside the horizon"
            )

    scenarios = _scenario_table(wind, observed_state, opts)
    levels_pu = tuple(float(x) / kw_base for x in wind.state_levels_kw)
    taps = tuple(ultc.tap_positions()) if ultc is not None else ()
    block_of_hour = {
        h: (0 if opts.tap_daily else h) for h in range(1, opts.horizon + 1)
    }

    vi = VariableIndex()
    lb: list[float] = []
    ub: list[float] = []
    integ: list[int] = []
    obj: list[float] = []

    def new_var(key, lo, hi, kind=0, w=0.0) -> int:
        vi.add(key)
        lb.append(lo)
        ub.append(hi)
        integ.append(kind)
        obj.append(w)
        return len(lb) - 1

    # On a tree, a line flow equals the injection sum of the subtree on the
    # far side of the cut, so total system injection is a valid flow cap
    # regardless of which spanning tree the binaries select.
    fcap_p = 0.0
    fcap_q = 0.0
    rating_sum = sum(u.power_kw for u in units) / kw_base
    cap_sum = sum(b.module_kvar * b.max_modules for b in banks) / kw_base
    wind_max = max(levels_pu) if opts.wind_node is not None else 0.0
    for h in range(1, opts.horizon + 1):
        fcap_p = max(fcap_p, float(np.sum(profiles.p_pu[:, h - 1])) + wind_max + rating_sum)
        fcap_q = max(fcap_q, float(np.sum(profiles.q_pu[:, h - 1])) + cap_sum)

    # --- continuous block per scenario -----------------------------------
    for (h, i, w) in scenarios:
        wr = w / opts.horizon
        for li, ln in enumerate(spec.lines):
            pmax = min(ln.smax_pu, d_const, fcap_p)
            qmax = min(ln.smax_pu, d_const, fcap_q)
            if not reconfig and not config0.switch_vector[li]:
                pmax = qmax = 0.0
            new_var(("pf", li, h, i), -pmax, pmax, w=wr * ln.r_pu)
            new_var(("qf", li, h, i), -qmax, qmax, w=wr * ln.r_pu)
            new_var(("pr", li, h, i), -pmax, pmax)
            new_var(("qr", li, h, i), -qmax, qmax)
        for nd in spec.nodes:
            if nd.is_substation:
                new_var(("v2", nd.id, h, i), 1.0, 1.0)
            else:
                new_var(("v2", nd.id, h, i), nd.v_min ** 2, nd.v_max ** 2)
        # slack import at the substation keeps its balance row well posed
        new_var(("imp_p", h, i), -d_const, d_const)
        new_var(("imp_q", h, i), -d_const, d_const)
        if ultc is not None:
            f_node = spec.node(ultc.from_node)
            lo = (1.0 - ultc.ratio_halfwidth) ** 2 * f_node.v_min ** 2
            hi = (1.0 + ultc.ratio_halfwidth) ** 2 * f_node.v_max ** 2
            new_var(("vaux", h, i), lo, hi)
            for tap in taps:
                new_var(("vt", tap, h, i), 0.0, f_node.v_max ** 2)

    # --- hourly decisions --------------------------------------------------
    if ultc is not None:
        for block in sorted(set(block_of_hour.values())):
            for tap in taps:
                new_var(("kappa", tap, block), 0.0, 1.0, kind=1)
    for ui, u in enumerate(units):
        p_max = u.power_kw / kw_base
        for h in range(1, opts.horizon + 1):
            new_var(("dss", ui, h), 0.0, p_max)
    for bi, b in enumerate(banks):
        for h in range(1, opts.horizon + 1):
            new_var(("cap", bi, h), 0.0, float(b.max_modules), kind=2)

    # --- topology decisions --------------------------------------------------
    if reconfig:
        for li, ln in enumerate(spec.lines):
            if ln.switchable:
                new_var(("y", li), 0.0, 1.0, kind=1)
            else:
                s = 1.0 if ln.normally_closed else 0.0
                new_var(("y", li), s, s, kind=1)
        for li in range(nl):
            new_var(("alpha", li), 0.0, 1.0)
        kmax = float(n - 1)
        for li in range(nl):
            new_var(("k", li), -kmax, kmax)

    n_vars = len(lb)
    eq = _Rows()
    ineq = _Rows()

    dss_at_node: dict[int, list[int]] = {}
    for ui, u in enumerate(units):
        dss_at_node.setdefault(u.node, []).append(ui)
    bank_at_node: dict[int, list[int]] = {}
    for bi, b in enumerate(banks):
        bank_at_node.setdefault(b.node, []).append(bi)

    apothem = math.cos(math.pi / opts.ampacity_segments)
    angles = [2.0 * math.pi * j / opts.ampacity_segments for j in range(opts.ampacity_segments)]

    for (h, i, w) in scenarios:
        peak = h in opts.peak_hours
        for li, ln in enumerate(spec.lines):
            pf = vi[("pf", li, h, i)]
            qf = vi[("qf", li, h, i)]
            pr = vi[("pr", li, h, i)]
            qr = vi[("qr", li, h, i)]
            eq.add([pf, pr], [1.0, 1.0], 0.0, f"lossless_p[{li},{h},{i}]")
            eq.add([qf, qr], [1.0, 1.0], 0.0, f"lossless_q[{li},{h},{i}]")
            # ampacity polygon on each directed flow pair
            rhs = apothem * ln.smax_pu
            for j, ang in enumerate(angles):
                c_, s_ = math.cos(ang), math.sin(ang)
                cols_f, cols_r, vals_ = [], [], []
                if abs(c_) > 1e-12:
                    cols_f.append(pf); cols_r.append(pr); vals_.append(c_)
                if abs(s_) > 1e-12:
                    cols_f.append(qf); cols_r.append(qr); vals_.append(s_)
                ineq.add(cols_f, vals_, rhs, f"ampacity_f[{li},{h},{i},{j}]")
                ineq.add(cols_r, vals_, rhs, f"ampacity_r[{li},{h},{i},{j}]")
            if reconfig:
                y = vi[("y", li)]
                d_p = min(d_const, ln.smax_pu, fcap_p)
                d_q = min(d_const, ln.smax_pu, fcap_q)
                for v_, nm, dd in ((pf, "pf", d_p), (qf, "qf", d_q),
                                   (pr, "pr", d_p), (qr, "qr", d_q)):
                    ineq.add([v_, y], [1.0, -dd], 0.0, f"open_{nm}_hi[{li},{h},{i}]")
                    ineq.add([v_, y], [-1.0, -dd], 0.0, f"open_{nm}_lo[{li},{h},{i}]")

        # nodal balance
        for nd in spec.nodes:
            cols_p, vals_p = [], []
            cols_q, vals_q = [], []
            for li, ln in enumerate(spec.lines):
                if ln.from_node == nd.id:
                    cols_p.append(vi[("pf", li, h, i)]); vals_p.append(1.0)
                    cols_q.append(vi[("qf", li, h, i)]); vals_q.append(1.0)
                elif ln.to_node == nd.id:
                    cols_p.append(vi[("pr", li, h, i)]); vals_p.append(1.0)
                    cols_q.append(vi[("qr", li, h, i)]); vals_q.append(1.0)
            for ui in dss_at_node.get(nd.id, []):
                cols_p.append(vi[("dss", ui, h)])
                vals_p.append(-1.0 if peak else 1.0)
            if nd.is_substation:
                cols_p.append(vi[("imp_p", h, i)])
                vals_p.append(-1.0)
            p_gen = levels_pu[i] if (opts.wind_node == nd.id) else 0.0
            rhs_p = p_gen - profiles.p_pu[nd.id - 1, h - 1]
            eq.add(cols_p, vals_p, rhs_p, f"balance_p[{nd.id},{h},{i}]")
            for bi in bank_at_node.get(nd.id, []):
                cols_q.append(vi[("cap", bi, h)])
                vals_q.append(-banks[bi].module_kvar / kw_base)
            if nd.is_substation:
                cols_q.append(vi[("imp_q", h, i)])
                vals_q.append(-1.0)
            rhs_q = -profiles.q_pu[nd.id - 1, h - 1]
            eq.add(cols_q, vals_q, rhs_q, f"balance_q[{nd.id},{h},{i}]")

        # voltage coupling
        for li, ln in enumerate(spec.lines):
            vf = vi[("v2", ln.from_node, h, i)]
            vt = vi[("v2", ln.to_node, h, i)]
            pf = vi[("pf", li, h, i)]
            qf = vi[("qf", li, h, i)]
            if li == ultc_line:
                # tap relation into the internal node, then the plain drop
                va = vi[("vaux", h, i)]
                block = block_of_hour[h]
                if ultc.from_node == ln.from_node:
                    v_reg, v_far = vf, vt
                    p_c, q_c = pf, qf
                else:
                    v_reg, v_far = vt, vf
                    p_c, q_c = vi[("pr", li, h, i)], vi[("qr", li, h, i)]
                cols = [va, v_reg]
                vals = [1.0, -1.0]
                for tap in taps:
                    coeff = 2.0 * ultc.tap_step * tap + (ultc.tap_step * tap) ** 2
                    if coeff != 0.0:
                        cols.append(vi[("vt", tap, h, i)])
                        vals.append(-coeff)
                eq.add(cols, vals, 0.0, f"tap_ratio[{h},{i}]")
                # products sum to the regulated voltage (one-hot identity);
                # keeps the relaxation at the continuous-tap hull
                eq.add(
                    [vi[("vt", tap, h, i)] for tap in taps] + [v_reg],
                    [1.0] * len(taps) + [-1.0],
                    0.0,
                    f"tap_mass[{h},{i}]",
                )
                eq.add(
                    [v_far, va, p_c, q_c],
                    [1.0, -1.0, 2.0 * ln.r_pu, 2.0 * ln.x_pu],
                    0.0,
                    f"tap_drop[{li},{h},{i}]",
                )
                # exact product envelopes vt = kappa * v_reg
                f_nd = spec.node(ultc.from_node)
                vmax2 = f_nd.v_max ** 2
                vmin2 = f_nd.v_min ** 2
                for tap in taps:
                    vt_c = vi[("vt", tap, h, i)]
                    ka = vi[("kappa", tap, block)]
                    ineq.add([v_reg, vt_c, ka], [1.0, -1.0, vmax2], vmax2,
                             f"prod_lo[{tap},{h},{i}]")
                    ineq.add([vt_c, v_reg, ka], [1.0, -1.0, -vmin2], -vmin2,
                             f"prod_hi[{tap},{h},{i}]")
                    ineq.add([vt_c, ka], [1.0, -vmax2], 0.0, f"prod_cap[{tap},{h},{i}]")
                    ineq.add([vt_c, ka], [-1.0, vmin2], 0.0, f"prod_floor[{tap},{h},{i}]")
            elif ln.switchable and reconfig:
                y = vi[("y", li)]
                # tight per-line band constant: the expression can never
                # exceed this over the variable boxes, so binaries see the
                # same feasible set as with the global constant
                nf, nt = spec.node(ln.from_node), spec.node(ln.to_node)
                m_band = (max(nf.v_max, nt.v_max) ** 2 - min(nf.v_min, nt.v_min) ** 2
                          + 2.0 * ln.r_pu * min(ln.smax_pu, d_const, fcap_p)
                          + 2.0 * ln.x_pu * min(ln.smax_pu, d_const, fcap_q))
                m_band = min(d_const, m_band)
                expr_cols = [vt, vf, pf, qf]
                expr_vals = [1.0, -1.0, 2.0 * ln.r_pu, 2.0 * ln.x_pu]
                ineq.add(expr_cols + [y], expr_vals + [m_band], m_band,
                         f"drop_band_hi[{li},{h},{i}]")
                ineq.add(expr_cols + [y], [-v for v in expr_vals] + [m_band], m_band,
                         f"drop_band_lo[{li},{h},{i}]")
            elif config0.switch_vector[li]:
                eq.add([vt, vf, pf, qf],
                       [1.0, -1.0, 2.0 * ln.r_pu, 2.0 * ln.x_pu],
                       0.0, f"drop[{li},{h},{i}]")
            # fixed-open lines: no voltage coupling, flows are forced to zero

    # one-hot tap selector per block
    if ultc is not None:
        for block in sorted(set(block_of_hour.values())):
            cols = [vi[("kappa", tap, block)] for tap in taps]
            eq.add(cols, [1.0] * len(cols), 1.0, f"tap_onehot[{block}]")

    # storage cycling: fixed charge/discharge energy per day
    for ui, u in enumerate(units):
        b_pu = u.energy_kwh / kw_base
        cols = [vi[("dss", ui, h)] for h in off_hours]
        if cols or b_pu > 0:
            eq.add(cols, [1.0] * len(cols), dssp.dod / dssp.beta_ch * b_pu,
                   f"charge_energy[{ui}]")
        cols = [vi[("dss", ui, h)] for h in peak_hours]
        if cols or b_pu > 0:
            eq.add(cols, [1.0] * len(cols), dssp.beta_dis * dssp.dod * b_pu,
                   f"discharge_energy[{ui}]")

    # radiality and switching budget (topology is daily, not hourly)
    if reconfig:
        y_cols = [vi[("y", li)] for li in range(nl)]
        eq.add(y_cols, [1.0] * nl, float(n - 1), "tree_count")
        sub = spec.substations[0]
        for nd in spec.nodes:
            if nd.id == sub:
                continue
            cols, vals = [], []
            for li, ln in enumerate(spec.lines):
                if ln.to_node == nd.id:
                    cols.append(vi[("k", li)]); vals.append(1.0)
                elif ln.from_node == nd.id:
                    cols.append(vi[("k", li)]); vals.append(-1.0)
            eq.add(cols, vals, 1.0, f"commodity[{nd.id}]")
        for li in range(nl):
            k = vi[("k", li)]
            y = vi[("y", li)]
            ineq.add([k, y], [1.0, -d_const], 0.0, f"commodity_hi[{li}]")
            ineq.add([k, y], [-1.0, -d_const], 0.0, f"commodity_lo[{li}]")
        for li in range(nl):
            y = vi[("y", li)]
            a = vi[("alpha", li)]
            ybar = 1.0 if config0.switch_vector[li] else 0.0
            ineq.add([y, a], [1.0, -1.0], ybar, f"switch_up[{li}]")
            ineq.add([y, a], [-1.0, -1.0], -ybar, f"switch_down[{li}]")
        alpha_cols = [vi[("alpha", li)] for li in range(nl)]
        ineq.add(alpha_cols, [1.0] * nl, float(opts.switching_budget), "switch_budget")

    a_eq, b_eq = eq.matrix(n_vars)
    a_in, b_in = ineq.matrix(n_vars)

    sos = []
    if ultc is not None:
        for block in sorted(set(block_of_hour.values())):
            sos.append([vi[("kappa", tap, block)] for tap in taps])

    meta = FormulationMeta(
        spec=spec,
        options=opts,
        scenarios=tuple(scenarios),
        wind_levels_pu=levels_pu,
        observed_state=observed_state,
        ybar=tuple(config0.switch_vector),
        reconfig_active=reconfig,
        tap_positions=taps,
        block_of_hour=block_of_hour,
        storage_units=tuple(
            (u.node, u.energy_kwh / kw_base, u.power_kw / kw_base) for u in units
        ),
        cap_banks=tuple(
            (b.node, b.module_kvar / kw_base, b.max_modules) for b in banks
        ),
        profiles=profiles,
    )
    return VvoProblem(
        obj_diag=np.array(obj),
        a_eq=a_eq, b_eq=b_eq, eq_tags=eq.tags,
        a_in=a_in, b_in=b_in, in_tags=ineq.tags,
        lb=np.array(lb), ub=np.array(ub),
        integrality=np.array(integ, dtype=np.int8),
        sos_one_hot=sos,
        var_index=vi,
        meta=meta,
    )


INT_TOL = 1e-5


def extract_schedule(
    problem: VvoProblem,
    x: np.ndarray,
    expected_loss: float | None = None,
    gap: float | None = None,
) -> VvoSchedule:
    """Decode a solution vector into day-ahead decisions.

    Raises FormulationError when an integer variable strays beyond the
    rounding tolerance or a tap selector block is not one-hot.
    """
    x = np.asarray(x, dtype=float)
    if len(x) != problem.n_vars:
        raise FormulationError("solution vector has wrong length")
    m = problem.meta
    vi = problem.var_index
    opts = m.options
    spec = m.spec

    int_cols = problem.integer_columns()
    frac = np.abs(x[int_cols] - np.round(x[int_cols]))
    if len(int_cols) and frac.max() > INT_TOL:
        col = int(int_cols[int(np.argmax(frac))])
        raise FormulationError(
            f"integer variable {vi.key_of(col)} is fractional ({x[col]:.6f})"
        )

    if m.reconfig_active:
        switches = tuple(bool(round(x[vi[("y", li)]])) for li in range(spec.n_lines))
    else:
        switches = m.ybar

    taps = []
    ratios = []
    if m.tap_positions:
        ultc = spec.equipment.ultc
        for h in range(1, opts.horizon + 1):
            block = m.block_of_hour[h]
            on = [
                tap for tap in m.tap_positions
                if round(x[vi[("kappa", tap, block)]]) == 1
            ]
            if len(on) != 1:
                raise FormulationError(f"tap selector for hour {h} is not one-hot")
            taps.append(on[0])
            ratios.append(ultc.ratio(on[0]))
    else:
        taps = [0] * opts.horizon
        ratios = [1.0] * opts.horizon

    modules: dict[int, list[int]] = {}
    for bi, (node, _, _) in enumerate(m.cap_banks):
        counts = [int(round(x[vi[("cap", bi, h)]])) for h in range(1, opts.horizon + 1)]
        prev = modules.get(node)
        modules[node] = counts if prev is None else [a + b for a, b in zip(prev, counts)]
    storage: dict[int, list[float]] = {}
    for ui, (node, _, _) in enumerate(m.storage_units):
        powers = [
            max(0.0, float(x[vi[("dss", ui, h)]])) for h in range(1, opts.horizon + 1)
        ]
        prev = storage.get(node)
        storage[node] = powers if prev is None else [a + b for a, b in zip(prev, powers)]

    return VvoSchedule(
        horizon=opts.horizon,
        peak_hours=opts.peak_in_horizon(),
        switch_vector=switches,
        tap_position=tuple(taps),
        tap_ratio=tuple(ratios),
        capacitor_modules={k: tuple(v) for k, v in modules.items()},
        storage_power_pu={k: tuple(v) for k, v in storage.items()},
        expected_loss_pu=expected_loss,
        gap=gap,
    )


def export_problem(problem: VvoProblem, path) -> None:
    """Plain-text sparse dump for cross-checking against external solvers.

    Format (whitespace separated, one record per line):
      NVARS n / NEQ m / NLE m
      VAR j lb ub kind name      kind: C continuous, B binary, I integer
      OBJ j w                    objective is sum of w_j x_j^2
      EQ r j a / EQRHS r b       rows of A_eq x = b
      LE r j a / LERHS r b       rows of A_in x <= b
      SOS s j...                 one-hot selector blocks
    """
    buf = io.StringIO()
    kinds = {0: "C", 1: "B", 2: "I"}
    buf.write(f"NVARS {problem.n_vars}\n")
    buf.write(f"NEQ {len(problem.b_eq)}\n")
    buf.write(f"NLE {len(problem.b_in)}\n")
    for j in range(problem.n_vars):
        name = "_".join(str(p) for p in problem.var_index.key_of(j))
        buf.write(
            f"VAR {j} {problem.lb[j]:.17g} {problem.ub[j]:.17g} "
            f"{kinds[int(problem.integrality[j])]} {name}\n"
        )
    for j in np.flatnonzero(problem.obj_diag):
        buf.write(f"OBJ {j} {problem.obj_diag[j]:.17g}\n")
    coo = problem.a_eq.tocoo()
    for r, c, v in zip(coo.row, coo.col, coo.data):
        buf.write(f"EQ {r} {c} {v:.17g}\n")
    for r, b in enumerate(problem.b_eq):
        buf.write(f"EQRHS {r} {b:.17g}\n")
    coo = problem.a_in.tocoo()
    for r, c, v in zip(coo.row, coo.col, coo.data):
        buf.write(f"LE {r} {c} {v:.17g}\n")
    for r, b in enumerate(problem.b_in):
        buf.write(f"LERHS {r} {b:.17g}\n")
    for s, block in enumerate(problem.sos_one_hot):
        buf.write("SOS " + str(s) + " " + " ".join(str(j) for j in block) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())
