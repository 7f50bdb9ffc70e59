"""Power flow on a fixed radial configuration.

Two engines share one result type: a linearized branch-flow solve (lossless
transport, linear voltage drop) used inside the optimizer, and a full
Newton-Raphson AC solve used as the accuracy oracle and for post-hoc
schedule evaluation.  The tap changer is handled natively by both: the
linear engine applies the squared-ratio relation across the ideal
transformer, the AC engine folds the ratio into the branch admittances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import GridSpec, RadialConfig, check_radiality, RADIAL

__all__ = [
    "PowerFlowError",
    "NewtonDivergenceError",
    "InjectionSet",
    "FlowSolution",
    "lindistflow_solve",
    "newton_ac_solve",
    "quadratic_loss",
    "compare_solutions",
]


class PowerFlowError(RuntimeError):
    pass


class NewtonDivergenceError(PowerFlowError):
    """AC solve did not converge within the iteration cap."""


@dataclass(frozen=True)
class InjectionSet:
    """Per-node injections in p.u.; arrays are indexed by node id - 1.

    ``p_storage`` is the signed net storage injection (positive feeds the
    grid, i.e. discharging).  Wind enters through ``p_gen`` with zero
    reactive part; capacitors through ``q_gen``.
    """

    p_demand: np.ndarray
    q_demand: np.ndarray
    p_gen: np.ndarray
    q_gen: np.ndarray
    p_storage: np.ndarray

    def __post_init__(self):
        n = len(self.p_demand)
        for name in ("q_demand", "p_gen", "q_gen", "p_storage"):
            if len(getattr(self, name)) != n:
                raise PowerFlowError(f"injection array {name} has wrong length")
        for name in ("p_demand", "q_demand", "p_gen", "q_gen", "p_storage"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise PowerFlowError(f"injection array {name} contains NaN/inf")
        if np.any(self.p_demand < 0) or np.any(self.q_demand < 0):
            raise PowerFlowError("demands must be nonnegative")
        if np.any(self.p_gen < 0):
            raise PowerFlowError("generation must be nonnegative")

    @staticmethod
    def zeros(n_nodes: int) -> "InjectionSet":
        z = np.zeros(n_nodes)
        return InjectionSet(z.copy(), z.copy(), z.copy(), z.copy(), z.copy())

    def net_p(self) -> np.ndarray:
        return self.p_gen - self.p_demand + self.p_storage

    def net_q(self) -> np.ndarray:
        return self.q_gen - self.q_demand


@dataclass
class FlowSolution:
    """Line flows (canonical from -> to orientation), squared voltages, loss."""

    p_from: np.ndarray          # per layout line; NaN on open lines
    q_from: np.ndarray
    p_to: np.ndarray            # flow to -> from (receiving end)
    q_to: np.ndarray
    v2: np.ndarray              # squared voltage magnitude per node
    loss_total: float
    method: str
    iterations: int = 1
    residual: float = 0.0
    aux_v2: float | None = None  # squared voltage of the tap changer's internal node

    def v(self) -> np.ndarray:
        return np.sqrt(self.v2)


def _tree_structure(spec: GridSpec, config: RadialConfig):
    """BFS order, parent node and parent line per node, rooted at the substation."""
    if check_radiality(spec, config) != RADIAL:
        raise PowerFlowError("configuration is not radial")
    subs = spec.substations
    if len(subs) != 1:
        raise PowerFlowError("power flow requires exactly one substation")
    root = subs[0]
    n = spec.n_nodes
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n + 1)]
    for li in config.closed_line_indices():
        ln = spec.lines[li]
        adj[ln.from_node].append((ln.to_node, li))
        adj[ln.to_node].append((ln.from_node, li))
    order = [root]
    parent = {root: 0}
    parent_line = {root: -1}
    seen = {root}
    head = 0
    while head < len(order):
        u = order[head]
        head += 1
        for v, li in adj[u]:
            if v not in seen:
                seen.add(v)
                parent[v] = u
                parent_line[v] = li
                order.append(v)
    return root, order, parent, parent_line


def lindistflow_solve(
    spec: GridSpec,
    config: RadialConfig,
    inj: InjectionSet,
    tap_ratio: float = 1.0,
) -> FlowSolution:
    """Linearized branch-flow solve by tree traversal (exact nodal balance).

    Flows are aggregated leaf-to-root (lossless transport), then squared
    voltages propagate root-to-leaf through the linear drop relation.  The
    substation is pinned at 1.0 p.u.
    """
    if not np.isfinite(tap_ratio) or tap_ratio <= 0:
        raise PowerFlowError("tap ratio must be positive and finite")
    root, order, parent, parent_line = _tree_structure(spec, config)
    n = spec.n_nodes
    ultc_line = spec.ultc_line_index()
    ultc = spec.equipment.ultc

    net_p = inj.net_p()
    net_q = inj.net_q()

    # flow on the parent line of each node, oriented parent -> node
    flow_p = np.zeros(n + 1)
    flow_q = np.zeros(n + 1)
    for v in reversed(order):
        if v == root:
            continue
        flow_p[v] -= net_p[v - 1]
        flow_q[v] -= net_q[v - 1]
        u = parent[v]
        if u != root:
            flow_p[u] += flow_p[v]
            flow_q[u] += flow_q[v]

    p_from = np.full(spec.n_lines, np.nan)
    q_from = np.full(spec.n_lines, np.nan)
    v2 = np.zeros(n)
    v2[root - 1] = 1.0
    aux_v2 = None
    t2 = tap_ratio * tap_ratio

    for v in order:
        if v == root:
            continue
        u = parent[v]
        li = parent_line[v]
        ln = spec.lines[li]
        # canonical orientation sign
        if ln.from_node == u:
            p_from[li] = flow_p[v]
            q_from[li] = flow_q[v]
        else:
            p_from[li] = -flow_p[v]
            q_from[li] = -flow_q[v]
        drop = 2.0 * (ln.r_pu * flow_p[v] + ln.x_pu * flow_q[v])
        if li == ultc_line:
            if u == ultc.from_node:
                # ideal transformer at the upstream side, then the impedance
                aux = t2 * v2[u - 1]
                v2[v - 1] = aux - drop
            else:
                # traversal enters from the impedance side
                aux = v2[u - 1] - drop
                v2[v - 1] = aux / t2
            aux_v2 = aux
        else:
            v2[v - 1] = v2[u - 1] - drop

    closed = config.closed_line_indices()
    p_to = -p_from
    q_to = -q_from
    loss = float(
        sum(
            spec.lines[li].r_pu * (p_from[li] ** 2 + q_from[li] ** 2)
            for li in closed
        )
    )
    if not np.all(np.isfinite(v2)):
        raise PowerFlowError("overflow in voltage propagation")
    return FlowSolution(
        p_from=p_from, q_from=q_from, p_to=p_to, q_to=q_to,
        v2=v2, loss_total=loss, method="lindistflow",
        iterations=1, residual=0.0, aux_v2=aux_v2,
    )


def quadratic_loss(spec: GridSpec, config: RadialConfig, sol: FlowSolution) -> float:
    """Sum of r * (p^2 + q^2) over closed lines, sending-end flows."""
    total = 0.0
    for li in config.closed_line_indices():
        p, q = sol.p_from[li], sol.q_from[li]
        if not (np.isfinite(p) and np.isfinite(q)):
            raise PowerFlowError(f"flow solution misses closed line index {li}")
        total += spec.lines[li].r_pu * (p * p + q * q)
    return float(total)


def _branch_admittances(spec: GridSpec, config: RadialConfig, tap_ratio: float):
    """Per closed line: (yff, yft, ytf, ytt) w.r.t. the canonical orientation."""
    ultc_line = spec.ultc_line_index()
    ultc = spec.equipment.ultc
    out = {}
    for li in config.closed_line_indices():
        ln = spec.lines[li]
        y = 1.0 / complex(ln.r_pu, ln.x_pu)
        if li == ultc_line:
            t = tap_ratio
            if ultc.from_node == ln.from_node:
                # internal node voltage is t * v_from
                out[li] = (y * t * t, -y * t, -y * t, y)
            else:
                out[li] = (y, -y * t, -y * t, y * t * t)
        else:
            out[li] = (y, -y, -y, y)
    return out


# below this node count the dense Jacobian path wins on constant factors
_DENSE_LIMIT = 300


def newton_ac_solve(
    spec: GridSpec,
    config: RadialConfig,
    inj: InjectionSet,
    tap_ratio: float = 1.0,
    tol: float = 1e-8,
    max_iter: int = 50,
) -> FlowSolution:
    """Full AC solve, polar Newton-Raphson with the Jacobian rebuilt each pass.

    Converges when the largest nodal complex-power mismatch falls below
    ``tol``; raises NewtonDivergenceError past ``max_iter`` passes.  Small
    systems run a dense Jacobian, larger ones a sparse one.
    """
    if not np.isfinite(tap_ratio) or tap_ratio <= 0:
        raise PowerFlowError("tap ratio must be positive and finite")
    root, _, _, _ = _tree_structure(spec, config)
    n = spec.n_nodes
    admit = _branch_admittances(spec, config, tap_ratio)
    dense = n <= _DENSE_LIMIT

    rows, cols, vals = [], [], []
    for li, (yff, yft, ytf, ytt) in admit.items():
        f = spec.lines[li].from_node - 1
        t = spec.lines[li].to_node - 1
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [yff, yft, ytf, ytt]
    ybus_sp = sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)
    ybus = ybus_sp.toarray() if dense else ybus_sp

    s_spec = inj.net_p() + 1j * inj.net_q()
    slack = root - 1
    pq = np.array([i for i in range(n) if i != slack])
    m = len(pq)

    vm = np.ones(n)
    va = np.zeros(n)
    iterations = 0
    mismatch = np.inf
    for _ in range(max_iter):
        iterations += 1
        v = vm * np.exp(1j * va)
        ibus = ybus @ v
        s_calc = v * np.conj(ibus)
        ds = s_calc - s_spec
        mismatch = float(np.max(np.abs(ds[pq]))) if m else 0.0
        if mismatch <= tol:
            break

        if dense:
            vnorm = v / vm
            m1 = np.conj(np.diag(ibus) - ybus * v[None, :])
            ds_dva = 1j * v[:, None] * m1
            ds_dvm = v[:, None] * np.conj(ybus * vnorm[None, :]) \
                + np.diag(np.conj(ibus) * vnorm)
            sub_va = ds_dva[np.ix_(pq, pq)]
            sub_vm = ds_dvm[np.ix_(pq, pq)]
            jac = np.block([[sub_va.real, sub_vm.real], [sub_va.imag, sub_vm.imag]])
            rhs = -np.concatenate([np.real(ds[pq]), np.imag(ds[pq])])
            try:
                dx = np.linalg.solve(jac, rhs)
            except np.linalg.LinAlgError as exc:
                raise NewtonDivergenceError(f"singular Jacobian: {exc}") from exc
        else:
            diag_v = sp.diags(v).tocsr()
            diag_i = sp.diags(ibus).tocsr()
            diag_vnorm = sp.diags(v / vm).tocsr()
            ds_dva = (1j * diag_v @ (diag_i - ybus @ diag_v).conjugate()).tocsr()
            ds_dvm = (
                diag_v @ (ybus @ diag_vnorm).conjugate()
                + diag_i.conjugate() @ diag_vnorm
            ).tocsr()
            j11 = ds_dva[pq][:, pq].real
            j12 = ds_dvm[pq][:, pq].real
            j21 = ds_dva[pq][:, pq].imag
            j22 = ds_dvm[pq][:, pq].imag
            jac = sp.vstack(
                [sp.hstack([j11, j12]), sp.hstack([j21, j22])], format="csc"
            )
            rhs = -np.concatenate([np.real(ds[pq]), np.imag(ds[pq])])
            try:
                dx = spla.spsolve(jac, rhs)
            except RuntimeError as exc:
                raise NewtonDivergenceError(f"singular Jacobian: {exc}") from exc
        if not np.all(np.isfinite(dx)):
            raise NewtonDivergenceError("Jacobian solve produced non-finite step")
        va[pq] += dx[:m]
        vm[pq] += dx[m:]
        if np.any(vm <= 0):
            raise NewtonDivergenceError("voltage magnitude collapsed below zero")
    else:
        raise NewtonDivergenceError(
            f"no convergence in {max_iter} iterations (mismatch {mismatch:.3e})"
        )

    v = vm * np.exp(1j * va)
    p_from = np.full(spec.n_lines, np.nan)
    q_from = np.full(spec.n_lines, np.nan)
    p_to = np.full(spec.n_lines, np.nan)
    q_to = np.full(spec.n_lines, np.nan)
    loss = 0.0
    for li, (yff, yft, ytf, ytt) in admit.items():
        f = spec.lines[li].from_node - 1
        t = spec.lines[li].to_node - 1
        sf = v[f] * np.conj(yff * v[f] + yft * v[t])
        st = v[t] * np.conj(ytf * v[f] + ytt * v[t])
        p_from[li], q_from[li] = sf.real, sf.imag
        p_to[li], q_to[li] = st.real, st.imag
        loss += (sf + st).real

    aux_v2 = None
    ultc = spec.equipment.ultc
    if ultc is not None and spec.ultc_line_index() in admit:
        aux_v2 = (tap_ratio * vm[ultc.from_node - 1]) ** 2

    return FlowSolution(
        p_from=p_from, q_from=q_from, p_to=p_to, q_to=q_to,
        v2=vm ** 2, loss_total=float(loss), method="newton",
        iterations=iterations, residual=mismatch, aux_v2=aux_v2,
    )


@dataclass(frozen=True)
class SolutionErrorReport:
    mean_dv: float
    max_dv: float
    loss_error_abs: float
    loss_error_rel: float


def compare_solutions(a: FlowSolution, b: FlowSolution) -> SolutionErrorReport:
    """Voltage and loss discrepancy of ``a`` against reference ``b``."""
    if len(a.v2) != len(b.v2):
        raise PowerFlowError("solutions cover different node sets")
    dv = np.abs(np.sqrt(a.v2) - np.sqrt(b.v2))
    loss_abs = abs(a.loss_total - b.loss_total)
    loss_rel = loss_abs / abs(b.loss_total) if b.loss_total != 0 else (0.0 if loss_abs == 0 else np.inf)
    return SolutionErrorReport(
        mean_dv=float(np.mean(dv)),
        max_dv=float(np.max(dv)),
        loss_error_abs=float(loss_abs),
        loss_error_rel=float(loss_rel),
    )
