"""Branch and bound over the binary/integer variables of the day-ahead QP.

Every node solves the convex relaxation with its accumulated fixings.
Branching: tap selector blocks split their active index set around the
fractional mass center (special-ordered-set style), switch binaries split
on the most fractional variable, bounded-integer module counts split
floor/ceil.  Node selection plunges depth-first until a first incumbent
exists, then switches to best-bound.  Ties break on creation order, so
identical inputs explore identical trees.
"""

from __future__ import annotations

import heapq
import logging
import time
from dataclasses import dataclass

import numpy as np

from .formulation import VvoProblem, INT_TOL
from . import qp

__all__ = ["BnbNode", "SolveReport", "branch_and_bound"]

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NODE_CAP = "node_cap"
TIME_CAP = "time_cap"


@dataclass
class BnbNode:
    fixings: dict[int, tuple[float, float]]
    bound: float
    depth: int
    seq: int = 0


@dataclass
class SolveReport:
    status: str
    incumbent: np.ndarray | None
    objective: float | None
    best_bound: float
    gap: float
    nodes_explored: int
    wall_time: float
    qp_iterations: int = 0
    trace: list[dict] | None = None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "best_bound": self.best_bound,
            "gap": self.gap,
            "nodes_explored": self.nodes_explored,
            "wall_time_s": self.wall_time,
            "qp_iterations": self.qp_iterations,
        }


def _effective_bounds(problem: VvoProblem, fixings, col: int):
    lo, hi = problem.lb[col], problem.ub[col]
    if col in fixings:
        flo, fhi = fixings[col]
        lo, hi = max(lo, flo), min(hi, fhi)
    return lo, hi


def _pick_branch(problem: VvoProblem, fixings, x):
    """Most fractional undecided integer thing: a variable or a tap block.

    Topology binaries branch before module counts, tap selector blocks
    last (their relaxation is already near the continuous-tap hull, so
    they rarely need branching at practical gap tolerances).  Returns
    (kind, payload, frac) or None when the solution is integer feasible.
    """
    in_block = set()
    for block in problem.sos_one_hot:
        in_block.update(block)

    best_bin = None
    best_int = None
    for col in problem.integer_columns():
        if col in in_block:
            continue
        lo, hi = _effective_bounds(problem, fixings, int(col))
        if hi - lo <= INT_TOL:
            continue
        frac = float(abs(x[col] - round(x[col])))
        if frac <= INT_TOL:
            continue
        if problem.integrality[col] == 1:
            if best_bin is None or frac > best_bin[2]:
                best_bin = ("var", int(col), frac)
        else:
            if best_int is None or frac > best_int[2]:
                best_int = ("var", int(col), frac)
    if best_bin is not None:
        return best_bin
    if best_int is not None:
        return best_int

    best_block = None
    for bi, block in enumerate(problem.sos_one_hot):
        active = [j for j in block if _effective_bounds(problem, fixings, j)[1] > INT_TOL]
        if not active:
            continue
        vals = np.array([max(0.0, x[j]) for j in active])
        frac = 1.0 - float(vals.max(initial=0.0))
        if frac > INT_TOL and (best_block is None or frac > best_block[2]):
            best_block = ("block", (bi, active, vals), frac)
    return best_block


def _children(problem: VvoProblem, node: BnbNode, branch, x, value):
    """Two child fixings; the child matching the relaxation comes first."""
    kind, payload, _ = branch
    if kind == "var":
        col = payload
        lo, hi = _effective_bounds(problem, node.fixings, col)
        v = x[col]
        if problem.integrality[col] == 1:
            down = dict(node.fixings); down[col] = (0.0, 0.0)
            up = dict(node.fixings); up[col] = (1.0, 1.0)
            first, second = (up, down) if v >= 0.5 else (down, up)
        else:
            f = np.floor(v)
            if f < lo:
                f = lo
            if f + 1 > hi:
                f = hi - 1
            down = dict(node.fixings); down[col] = (lo, float(f))
            up = dict(node.fixings); up[col] = (float(f + 1), hi)
            first, second = (down, up) if (v - f) <= 0.5 else (up, down)
        return first, second
    # tap selector block: split actives around the fractional mass center
    _, active, vals = payload
    total = float(vals.sum())
    positions = np.arange(len(active), dtype=float)
    center = float(positions @ vals / total) if total > 0 else (len(active) - 1) / 2.0
    cut = int(np.floor(center))
    cut = min(max(cut, 0), len(active) - 2)
    left = active[: cut + 1]
    right = active[cut + 1:]
    left_mass = float(vals[: cut + 1].sum())
    child_l = dict(node.fixings)
    for j in right:
        child_l[j] = (0.0, 0.0)
    child_r = dict(node.fixings)
    for j in left:
        child_r[j] = (0.0, 0.0)
    return (child_l, child_r) if left_mass >= total / 2.0 else (child_r, child_l)


def branch_and_bound(
    problem: VvoProblem,
    gap_tol: float = 1e-3,
    node_cap: int = 100_000,
    time_cap: float | None = None,
    keep_trace: bool = False,
    warm_no_action: bool = True,
) -> SolveReport:
    """Solve the MIQP to the requested relative gap (or until a cap)."""
    t0 = time.monotonic()
    trace: list[dict] | None = [] if keep_trace else None
    eps = 1e-10

    incumbent: np.ndarray | None = None
    inc_obj = np.inf
    nodes_explored = 0
    qp_iters = 0
    seq = 0

    def record(**kw):
        if trace is not None:
            trace.append(kw)

    def cutoff() -> float:
        if not np.isfinite(inc_obj):
            return np.inf
        return inc_obj - gap_tol * max(abs(inc_obj), eps)

    # warm start: evaluate the do-nothing assignment as a first incumbent
    if warm_no_action and len(problem.integer_columns()):
        res = qp.solve_qp_relaxation(problem, problem.no_action_fixings())
        qp_iters += res.iterations
        if res.status == qp.OPTIMAL:
            branch = _pick_branch(problem, problem.no_action_fixings(), res.x)
            if branch is None:
                incumbent = res.x
                inc_obj = res.objective
                record(event="warm_incumbent", objective=inc_obj)

    root = BnbNode(fixings={}, bound=-np.inf, depth=0, seq=seq)
    seq += 1
    heap: list[tuple[float, int, BnbNode]] = []   # best-bound queue
    current: BnbNode | None = root                # plunge chain head
    pruned_min = np.inf    # pruned subtrees still bound the global optimum
    root_infeasible = False
    exhausted = False
    status = OPTIMAL

    def open_bound() -> float:
        vals = [b for b, _, _ in heap] + [pruned_min]
        if current is not None:
            vals = vals + [current.bound]
        return min(vals)

    while True:
        if time_cap is not None and time.monotonic() - t0 > time_cap:
            status = TIME_CAP
            break
        if nodes_explored >= node_cap:
            status = NODE_CAP
            break
        if current is None:
            if not heap:
                exhausted = True
                break
            _, _, current = heapq.heappop(heap)
        node, current = current, None

        if node.bound >= cutoff():
            pruned_min = min(pruned_min, node.bound)
            record(event="pruned_bound", seq=node.seq, depth=node.depth, bound=node.bound)
            continue

        nodes_explored += 1
        res = qp.solve_qp_relaxation(problem, node.fixings)
        qp_iters += res.iterations
        if res.status == qp.INFEASIBLE:
            if node.depth == 0:
                root_infeasible = True
            record(event="infeasible", seq=node.seq, depth=node.depth)
            continue
        if res.status != qp.OPTIMAL:
            # no usable bound: keep completeness by branching blindly
            log.warning("relaxation failed at node %d: %s", node.seq, res.message)
            branch = _blind_branch(problem, node.fixings)
            if branch is None:
                record(event="failed_leaf", seq=node.seq, depth=node.depth)
                continue
            x_fake = np.zeros(problem.n_vars)
            f1, f2 = _children(problem, node, branch, x_fake, node.bound)
            child2 = BnbNode(fixings=f2, bound=node.bound, depth=node.depth + 1, seq=seq)
            seq += 1
            child1 = BnbNode(fixings=f1, bound=node.bound, depth=node.depth + 1, seq=seq)
            seq += 1
            heapq.heappush(heap, (child2.bound, child2.seq, child2))
            current = child1
            continue

        value = max(res.objective, node.bound)   # bounds never regress
        if value >= cutoff():
            pruned_min = min(pruned_min, value)
            record(event="pruned_bound", seq=node.seq, depth=node.depth, bound=value)
            continue
        branch = _pick_branch(problem, node.fixings, res.x)
        if branch is None:
            exact = _polish_incumbent(problem, node.fixings, res)
            qp_iters += exact.iterations
            if exact.status != qp.OPTIMAL:
                record(event="polish_failed", seq=node.seq, depth=node.depth)
                continue
            if exact.objective < inc_obj:
                incumbent = exact.x
                inc_obj = exact.objective
                record(event="incumbent", seq=node.seq, depth=node.depth,
                       objective=exact.objective)
            continue
        record(
            event="branch", seq=node.seq, depth=node.depth, bound=value,
            kind=branch[0], frac=branch[2],
        )
        f1, f2 = _children(problem, node, branch, res.x, value)
        child2 = BnbNode(fixings=f2, bound=value, depth=node.depth + 1, seq=seq)
        seq += 1
        child1 = BnbNode(fixings=f1, bound=value, depth=node.depth + 1, seq=seq)
        seq += 1
        heapq.heappush(heap, (child2.bound, child2.seq, child2))
        current = child1   # plunge into the child matching the relaxation

        if np.isfinite(inc_obj) and open_bound() >= cutoff():
            break

    best_bound = min(open_bound(), inc_obj)
    if incumbent is None:
        objective = None
        gap = np.inf
        if exhausted or root_infeasible:
            status = INFEASIBLE
    else:
        objective = float(inc_obj)
        gap = max(0.0, (inc_obj - best_bound) / max(abs(inc_obj), eps))
        if status not in (NODE_CAP, TIME_CAP):
            status = OPTIMAL
    return SolveReport(
        status=status,
        incumbent=incumbent,
        objective=objective,
        best_bound=float(best_bound) if np.isfinite(best_bound) else np.inf,
        gap=float(gap),
        nodes_explored=nodes_explored,
        wall_time=time.monotonic() - t0,
        qp_iterations=qp_iters,
        trace=trace,
    )


def _polish_incumbent(problem: VvoProblem, fixings, res) -> qp.QpResult:
    """Re-solve with every integer pinned to its rounded value.

    A relaxation that lands integral within tolerance still carries the
    interior-point objective noise of the whole node; pinning gives the
    exact value of the integer assignment, which is what the incumbent,
    the gap and the decoded schedule should report.
    """
    pinned = dict(fixings)
    for col in problem.integer_columns():
        v = float(np.round(res.x[col]))
        pinned[int(col)] = (v, v)
    exact = qp.solve_qp_relaxation(problem, pinned)
    if exact.status != qp.OPTIMAL:
        log.warning("incumbent polish failed: %s", exact.message)
    return exact


def _blind_branch(problem: VvoProblem, fixings):
    """Fallback branch choice when a relaxation solve fails numerically."""
    for bi, block in enumerate(problem.sos_one_hot):
        active = [j for j in block if _effective_bounds(problem, fixings, j)[1] > INT_TOL]
        if len(active) > 1:
            vals = np.full(len(active), 1.0 / len(active))
            return ("block", (bi, active, vals), 1.0)
    for col in problem.integer_columns():
        lo, hi = _effective_bounds(problem, fixings, int(col))
        if hi - lo > INT_TOL:
            return ("var", int(col), 0.5)
    return None
