"""Convex QP relaxation solver for the day-ahead program.

Two stages: a vectorized bound-tightening presolve (interval feasibility
checks, redundant-row dropping, fixed-variable elimination), then a
Mehrotra predictor-corrector interior-point method.  Because the objective
is diagonal, every Newton step reduces to one sparse factorization of the
normal-equations matrix A D A' (scipy splu), which keeps the solver exact,
deterministic and quick at the sizes the formulation produces.

Infeasibility is certified constructively: when the main solve stalls, an
elastic feasibility problem (minimum total equality violation) is solved
with the same engine; a strictly positive minimum is the certificate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .formulation import VvoProblem

__all__ = ["QpResult", "solve_qp_relaxation"]

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"

# status-gate tolerances (reported residuals must beat these for "optimal")
FEAS_TOL = 1e-7
STAT_TOL = 1e-6

_DROP_TOL = 1e-12       # inequality redundant when max activity <= b + this
_INFEAS_TOL = 1e-7      # interval violation that certifies infeasibility
_TIGHTEN_MIN = 1e-10    # pass converged when no bound moved more than this
_FIX_WIDTH = 1e-11      # bounds closer than this collapse to a fixed value


@dataclass
class QpResult:
    status: str
    objective: float | None
    x: np.ndarray | None
    kkt: dict = field(default_factory=dict)
    iterations: int = 0
    infeasibility: float = 0.0
    message: str = ""


class _Infeasible(Exception):
    def __init__(self, measure: float, message: str):
        super().__init__(message)
        self.measure = measure


# ---------------------------------------------------------------------------
# presolve
# ---------------------------------------------------------------------------

@dataclass
class _Reduced:
    """Presolved problem plus the bookkeeping to undo the reduction."""

    q: np.ndarray
    c: np.ndarray
    a: sp.csr_matrix
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    n_eq_rows: int               # leading rows are equalities, rest are <=
    keep_cols: np.ndarray
    fixed_vals: np.ndarray       # full-length; NaN for kept columns
    obj_const: float

    def restore(self, x_red: np.ndarray) -> np.ndarray:
        x = self.fixed_vals.copy()
        x[self.keep_cols] = x_red
        return x


def _presolve(
    obj_diag, a_eq, b_eq, a_in, b_in, lb0, ub0,
    fixings: dict | None,
    max_passes: int = 15,
) -> _Reduced:
    lb = np.array(lb0, dtype=float)
    ub = np.array(ub0, dtype=float)
    if fixings:
        for col, bounds in fixings.items():
            if np.isscalar(bounds):
                flo = fhi = float(bounds)
            else:
                flo, fhi = float(bounds[0]), float(bounds[1])
            lb[col] = max(lb[col], flo)
            ub[col] = min(ub[col], fhi)
    if np.any(lb > ub + _INFEAS_TOL):
        j = int(np.argmax(lb - ub))
        raise _Infeasible(float(lb[j] - ub[j]), f"fixing crosses bounds on column {j}")
    np.minimum(lb, ub, out=lb)

    m_eq = a_eq.shape[0]
    m_in = a_in.shape[0]
    a_all = sp.vstack([a_eq, a_in], format="coo") if (m_eq + m_in) else None

    if a_all is not None and a_all.nnz:
        live = a_all.data != 0.0
        r_idx = a_all.row[live]
        c_idx = a_all.col[live]
        a_val = a_all.data[live]
        pos = a_val > 0
        m_all = m_eq + m_in
        b_hi = np.concatenate([b_eq, b_in]).astype(float)
        b_lo = np.concatenate([b_eq, np.full(m_in, -np.inf)])

        for _ in range(max_passes):
            lo_b = np.where(pos, lb[c_idx], ub[c_idx])
            hi_b = np.where(pos, ub[c_idx], lb[c_idx])
            term_lo = a_val * lo_b          # each in {-inf} U R
            term_hi = a_val * hi_b          # each in R U {+inf}
            lo_isinf = ~np.isfinite(term_lo)
            hi_isinf = ~np.isfinite(term_hi)
            lo_fin = np.where(lo_isinf, 0.0, term_lo)
            hi_fin = np.where(hi_isinf, 0.0, term_hi)
            min_fin = np.bincount(r_idx, weights=lo_fin, minlength=m_all)
            max_fin = np.bincount(r_idx, weights=hi_fin, minlength=m_all)
            min_cnt = np.bincount(r_idx, weights=lo_isinf, minlength=m_all)
            max_cnt = np.bincount(r_idx, weights=hi_isinf, minlength=m_all)
            min_act = np.where(min_cnt > 0, -np.inf, min_fin)
            max_act = np.where(max_cnt > 0, np.inf, max_fin)

            viol = np.maximum(min_act - b_hi, b_lo - max_act)
            worst = int(np.argmax(viol))
            if viol[worst] > _INFEAS_TOL:
                kind = "equality" if worst < m_eq else "inequality"
                raise _Infeasible(
                    float(viol[worst]),
                    f"{kind} row {worst if worst < m_eq else worst - m_eq} "
                    f"violates variable bounds by {viol[worst]:.3e}",
                )

            # interval propagation entrywise:  b_lo - oth_hi <= a_j x_j <= b_hi - oth_lo
            oth_lo = np.where(
                lo_isinf,
                np.where(min_cnt[r_idx] > 1, -np.inf, min_fin[r_idx]),
                np.where(min_cnt[r_idx] > 0, -np.inf, min_fin[r_idx] - lo_fin),
            )
            oth_hi = np.where(
                hi_isinf,
                np.where(max_cnt[r_idx] > 1, np.inf, max_fin[r_idx]),
                np.where(max_cnt[r_idx] > 0, np.inf, max_fin[r_idx] - hi_fin),
            )
            num_lo = b_lo[r_idx] - oth_hi
            num_hi = b_hi[r_idx] - oth_lo
            with np.errstate(invalid="ignore"):
                cand_lo = np.where(pos, num_lo, num_hi) / a_val
                cand_hi = np.where(pos, num_hi, num_lo) / a_val
            new_lb = lb.copy()
            new_ub = ub.copy()
            np.maximum.at(new_lb, c_idx, np.where(np.isfinite(cand_lo), cand_lo, -np.inf))
            np.minimum.at(new_ub, c_idx, np.where(np.isfinite(cand_hi), cand_hi, np.inf))
            crossing = new_lb - new_ub
            if np.any(crossing > _INFEAS_TOL):
                j = int(np.argmax(crossing))
                raise _Infeasible(
                    float(crossing[j]), f"propagation crossed bounds on column {j}"
                )
            pinch = crossing > 0
            if np.any(pinch):
                mid = 0.5 * (new_lb[pinch] + new_ub[pinch])
                new_lb[pinch] = mid
                new_ub[pinch] = mid
            moved = max(
                float(np.max(new_lb - lb, initial=0.0)),
                float(np.max(ub - new_ub, initial=0.0)),
            )
            lb, ub = new_lb, new_ub
            if moved <= _TIGHTEN_MIN:
                break

    fixed = (ub - lb) <= _FIX_WIDTH
    fixed_vals = np.full(len(lb), np.nan)
    fixed_vals[fixed] = 0.5 * (lb[fixed] + ub[fixed])
    keep = np.flatnonzero(~fixed)
    obj_const = float(np.sum(obj_diag[fixed] * fixed_vals[fixed] ** 2))
    fv = np.where(fixed, fixed_vals, 0.0)

    def _reduce_rows(a_mat: sp.csr_matrix, b_vec, is_eq: bool):
        a_csr = a_mat.tocsr()
        m = a_csr.shape[0]
        if m == 0:
            return a_csr[:, keep], np.zeros(0), np.zeros(0, dtype=int)
        shift = a_csr @ fv
        b_new = np.asarray(b_vec, dtype=float) - shift
        kept_mask = ~fixed
        # rows whose surviving support is empty: consistency check, then drop
        support = a_csr.copy()
        support.data = np.ones_like(support.data)
        kept_per_row = np.asarray(
            (support @ kept_mask.astype(float))
        ).ravel()
        empty = kept_per_row == 0
        if is_eq:
            bad = empty & (np.abs(b_new) > _INFEAS_TOL)
        else:
            bad = empty & (b_new < -_INFEAS_TOL)
        if np.any(bad):
            r = int(np.flatnonzero(bad)[0])
            raise _Infeasible(
                float(abs(b_new[r])),
                f"{'equality' if is_eq else 'inequality'} row {r} fixed inconsistently",
            )
        keep_rows = np.flatnonzero(~empty)
        return a_csr[keep_rows][:, keep], b_new[keep_rows], keep_rows

    a_eq_red, b_eq_red, _ = _reduce_rows(a_eq, b_eq, True)

    # recompute redundancy of inequality rows against the final bounds
    a_in_csr = a_in.tocsr()
    if a_in_csr.shape[0]:
        ap = a_in_csr.maximum(0)
        am = a_in_csr.minimum(0)
        big = 1e30
        ub_s = np.where(np.isfinite(ub), ub, big)
        lb_s = np.where(np.isfinite(lb), lb, -big)
        max_act = np.asarray(ap @ ub_s + am @ lb_s).ravel()
        redundant = (max_act <= b_in + _DROP_TOL) & (np.abs(max_act) < 1e29)
        a_in_live = a_in_csr[~redundant]
        b_in_live = np.asarray(b_in, dtype=float)[~redundant]
    else:
        a_in_live = a_in_csr
        b_in_live = np.asarray(b_in, dtype=float)
    a_in_red, b_in_red, _ = _reduce_rows(a_in_live, b_in_live, False)

    n_keep = len(keep)
    if a_eq_red.shape[0] + a_in_red.shape[0]:
        a = sp.vstack([a_eq_red, a_in_red], format="csr")
        b = np.concatenate([b_eq_red, b_in_red])
    else:
        a = sp.csr_matrix((0, n_keep))
        b = np.zeros(0)
    return _Reduced(
        q=np.asarray(obj_diag, dtype=float)[keep],
        c=np.zeros(n_keep),
        a=a,
        b=b,
        lb=lb[keep],
        ub=ub[keep],
        n_eq_rows=a_eq_red.shape[0],
        keep_cols=keep,
        fixed_vals=fixed_vals,
        obj_const=obj_const,
    )


# ---------------------------------------------------------------------------
# interior point core (equality rows + bounds after slack conversion)
# ---------------------------------------------------------------------------

@dataclass
class _IpmOut:
    converged: bool
    x: np.ndarray
    y: np.ndarray
    iterations: int
    primal_inf: float
    dual_inf: float
    mu: float


def _box_minimize(q, c, lb, ub):
    """Separable minimum of q x^2 + c x over a box."""
    x = np.zeros_like(lb)
    for j in range(len(x)):
        if q[j] > 0:
            x[j] = -c[j] / (2.0 * q[j])
        elif c[j] > 0:
            x[j] = lb[j]
        elif c[j] < 0:
            x[j] = ub[j]
        x[j] = min(max(x[j], lb[j]), ub[j])
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("unbounded separable minimum")
    return x


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest alpha in (0,1] with v + alpha dv >= 0 (v > 0 assumed)."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _ruiz_scale(a: sp.csr_matrix, passes: int = 4):
    """Row/column infinity-norm equilibration factors for A."""
    m, n = a.shape
    row = np.ones(m)
    col = np.ones(n)
    work = a.copy().tocsr()
    for _ in range(passes):
        aa = abs(work)
        r = np.sqrt(aa.max(axis=1).toarray().ravel())
        r[r == 0] = 1.0
        work = sp.diags(1.0 / r) @ work
        row *= r
        aa = abs(work)
        cmax = np.sqrt(aa.max(axis=0).toarray().ravel())
        cmax[cmax == 0] = 1.0
        work = work @ sp.diags(1.0 / cmax)
        col *= cmax
    return work.tocsr(), row, col


def _ipm(q, c, a, b, lb, ub, max_iter=100, tol_p=1e-9, tol_d=5e-9, tol_mu=1e-9):
    m, n = a.shape
    delta_p = 1e-8
    delta_d = 1e-8
    # a near-converged iterate is still accepted if the last steps break down
    fallback_p, fallback_d, fallback_mu = 1e-8, 1e-7, 1e-7

    if m == 0:
        x = _box_minimize(q, c, lb, ub)
        return _IpmOut(True, x, np.zeros(0), 0, 0.0, 0.0, 0.0)

    # equilibrate: x_s = C x, rows scaled by R^-1
    a_s, row_sc, col_sc = _ruiz_scale(a)
    b = b / row_sc
    q = q / col_sc ** 2
    c = c / col_sc
    lb = lb * col_sc
    ub = ub * col_sc
    a = a_s

    has_l = np.isfinite(lb)
    has_u = np.isfinite(ub)
    n_b = int(has_l.sum() + has_u.sum())
    at = a.T.tocsr()

    if n_b == 0:
        # pure equality QP: one regularized KKT solve
        kkt = sp.bmat(
            [[sp.diags(2.0 * q + delta_p), at], [a, -delta_d * sp.eye(m)]],
            format="csc",
        )
        sol = spla.splu(kkt).solve(np.concatenate([-c, b]))
        x, y = sol[:n], sol[n:]
        rp = float(np.max(np.abs(a @ x - b), initial=0.0))
        rd = float(np.max(np.abs(2 * q * x + c - at @ y), initial=0.0))
        return _IpmOut(rp < 1e-8 and rd < 1e-8, x / col_sc, y, 1, rp, rd, 0.0)

    # strictly interior start
    x = np.zeros(n)
    both = has_l & has_u
    x[both] = 0.5 * (lb[both] + ub[both])
    only_l = has_l & ~has_u
    x[only_l] = lb[only_l] + np.maximum(1.0, np.abs(lb[only_l]))
    only_u = has_u & ~has_l
    x[only_u] = ub[only_u] - np.maximum(1.0, np.abs(ub[only_u]))
    y = np.zeros(m)
    z_scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
    zl = np.where(has_l, z_scale, 0.0)
    zu = np.where(has_u, z_scale, 0.0)

    b_norm = 1.0 + float(np.max(np.abs(b), initial=0.0))
    eye_m = sp.eye(m, format="csc")
    tau = 0.9995

    it = 0
    primal_inf = dual_inf = np.inf
    mu = np.inf
    best = None
    for it in range(1, max_iter + 1):
        rl = np.where(has_l, x - lb, 1.0)
        ru = np.where(has_u, ub - x, 1.0)
        if np.any(rl[has_l] <= 0) or np.any(ru[has_u] <= 0):
            break
        grad = 2.0 * q * x + c
        r_dual = grad - at @ y - zl + zu
        r_prim = a @ x - b
        mu = (float(zl @ np.where(has_l, rl, 0.0)) +
              float(zu @ np.where(has_u, ru, 0.0))) / n_b
        primal_inf = float(np.max(np.abs(r_prim), initial=0.0)) / b_norm
        dual_inf = float(np.max(np.abs(r_dual), initial=0.0)) / (
            1.0 + float(np.max(np.abs(grad), initial=0.0))
        )
        if not np.isfinite(primal_inf) or not np.isfinite(mu):
            break
        if primal_inf <= tol_p and dual_inf <= tol_d and mu <= tol_mu:
            return _IpmOut(True, x / col_sc, y, it, primal_inf, dual_inf, mu)
        score = max(primal_inf / fallback_p, dual_inf / fallback_d, mu / fallback_mu)
        if best is None or score < best[0]:
            best = (score, x.copy(), y.copy(), it, primal_inf, dual_inf, mu)

        theta = np.where(has_l, np.minimum(zl / np.maximum(rl, 1e-14), 1e16), 0.0) \
            + np.where(has_u, np.minimum(zu / np.maximum(ru, 1e-14), 1e16), 0.0)
        h_diag = 2.0 * q + theta + delta_p
        kkt = sp.bmat(
            [[sp.diags(-h_diag), at], [a, delta_d * eye_m]], format="csc"
        )
        try:
            lu = spla.splu(kkt)
        except RuntimeError:
            delta_p *= 100.0
            delta_d *= 100.0
            continue

        def solve_step(t_l, t_u):
            # (H + theta) dx - A' dy = -r_dual + t_l/rl - t_u/ru  =: -r_hat
            r_hat = r_dual - np.where(has_l, t_l / rl, 0.0) + np.where(has_u, t_u / ru, 0.0)
            sol = lu.solve(np.concatenate([r_hat, -r_prim]))
            dx = sol[:n]
            dy = sol[n:]
            dzl = np.where(has_l, (t_l - zl * dx) / rl, 0.0)
            dzu = np.where(has_u, (t_u + zu * dx) / ru, 0.0)
            return dx, dy, dzl, dzu

        # predictor
        t_l = np.where(has_l, -rl * zl, 0.0)
        t_u = np.where(has_u, -ru * zu, 0.0)
        dx_a, dy_a, dzl_a, dzu_a = solve_step(t_l, t_u)
        ap = min(_max_step(rl[has_l], dx_a[has_l]),
                 _max_step(ru[has_u], -dx_a[has_u]))
        ad = min(_max_step(zl[has_l], dzl_a[has_l]),
                 _max_step(zu[has_u], dzu_a[has_u]))
        mu_aff = (
            float((zl + ad * dzl_a)[has_l] @ (rl + ap * dx_a)[has_l]) +
            float((zu + ad * dzu_a)[has_u] @ (ru - ap * dx_a)[has_u])
        ) / n_b
        if not np.isfinite(mu_aff):
            break
        sigma = min(max((max(mu_aff, 0.0) / mu) ** 3, 1e-8), 1.0 - 1e-8)

        # corrector
        t_l = np.where(has_l, -rl * zl + sigma * mu - dx_a * dzl_a, 0.0)
        t_u = np.where(has_u, -ru * zu + sigma * mu + dx_a * dzu_a, 0.0)
        dx, dy, dzl, dzu = solve_step(t_l, t_u)
        ap = tau * min(_max_step(rl[has_l], dx[has_l]),
                       _max_step(ru[has_u], -dx[has_u]))
        ad = tau * min(_max_step(zl[has_l], dzl[has_l]),
                       _max_step(zu[has_u], dzu[has_u]))
        x = x + ap * dx
        y = y + ad * dy
        zl = np.where(has_l, zl + ad * dzl, 0.0)
        zu = np.where(has_u, zu + ad * dzu, 0.0)
        if not (np.all(np.isfinite(x)) and np.isfinite(mu)):
            break

    if best is not None and best[0] <= 1.0:
        _, bx, by, bit, bp, bd, bmu = best
        return _IpmOut(True, bx / col_sc, by, bit, bp, bd, bmu)
    return _IpmOut(False, x / col_sc, y, it, primal_inf, dual_inf, mu)


def _solve_reduced(red: _Reduced, max_iter: int):
    """Slack conversion + IPM on the presolved problem."""
    m_all = red.a.shape[0]
    m_in = m_all - red.n_eq_rows
    n = red.a.shape[1]
    if m_in > 0:
        a_std = sp.hstack(
            [red.a,
             sp.vstack([sp.csr_matrix((red.n_eq_rows, m_in)), sp.eye(m_in)])],
            format="csr",
        )
        q_std = np.concatenate([red.q, np.zeros(m_in)])
        c_std = np.concatenate([red.c, np.zeros(m_in)])
        lb_std = np.concatenate([red.lb, np.zeros(m_in)])
        ub_std = np.concatenate([red.ub, np.full(m_in, np.inf)])
    else:
        a_std, q_std, c_std, lb_std, ub_std = red.a.tocsr(), red.q, red.c, red.lb, red.ub
    out = _ipm(q_std, c_std, a_std, red.b, lb_std, ub_std, max_iter=max_iter)
    return out, out.x[:n]


def _feasibility_minimum(red: _Reduced, max_iter: int):
    """Least total constraint violation; > 0 certifies infeasibility."""
    m_all = red.a.shape[0]
    m_in = m_all - red.n_eq_rows
    n = red.a.shape[1]
    blocks = [red.a]
    if m_in > 0:
        blocks.append(
            sp.vstack([sp.csr_matrix((red.n_eq_rows, m_in)), sp.eye(m_in)])
        )
    blocks.extend([sp.eye(m_all), -sp.eye(m_all)])
    a_std = sp.hstack(blocks, format="csr")
    n_slack = m_in
    n_el = m_all
    q_std = np.zeros(n + n_slack + 2 * n_el)
    c_std = np.concatenate([np.zeros(n + n_slack), np.ones(2 * n_el)])
    lb_std = np.concatenate([red.lb, np.zeros(n_slack + 2 * n_el)])
    ub_std = np.concatenate([red.ub, np.full(n_slack + 2 * n_el, np.inf)])
    out = _ipm(q_std, c_std, a_std, red.b, lb_std, ub_std,
               max_iter=max_iter, tol_mu=1e-9)
    violation = float(c_std @ out.x) if out.converged else np.inf
    return out, violation


# ---------------------------------------------------------------------------
# public entry point
# ---------------------------------------------------------------------------

def solve_qp_relaxation(
    problem: VvoProblem,
    fixings: dict | None = None,
    max_iter: int = 100,
) -> QpResult:
    """Solve the continuous relaxation with extra bound fixings imposed.

    ``fixings`` maps column -> value or (lo, hi) interval.  Integer marks
    are ignored (relaxed to their interval).  Returns a KKT-certified
    optimum, a certified infeasibility, or a numerical failure.
    """
    try:
        red = _presolve(
            problem.obj_diag, problem.a_eq, problem.b_eq,
            problem.a_in, problem.b_in, problem.lb, problem.ub, fixings,
        )
    except _Infeasible as inf:
        return QpResult(
            status=INFEASIBLE, objective=None, x=None,
            infeasibility=inf.measure, message=str(inf),
        )

    if red.a.shape[1] == 0:
        return _finish(problem, red.fixed_vals.copy(),
                       iterations=0, dual_inf=0.0, mu=0.0)

    out, x_red = _solve_reduced(red, max_iter)
    if out.converged:
        return _finish(problem, red.restore(x_red),
                       iterations=out.iterations, dual_inf=out.dual_inf, mu=out.mu)

    # main solve failed: decide between infeasible and numerical trouble
    feas_out, violation = _feasibility_minimum(red, max_iter)
    b_scale = 1.0 + float(np.max(np.abs(red.b), initial=0.0))
    if feas_out.converged and violation > FEAS_TOL * b_scale:
        return QpResult(
            status=INFEASIBLE, objective=None, x=None,
            iterations=out.iterations + feas_out.iterations,
            infeasibility=violation,
            message=f"elastic minimum violation {violation:.3e}",
        )
    # feasible but the solve stalled: one retry with a longer leash
    out, x_red = _solve_reduced(red, max_iter * 3)
    if out.converged:
        return _finish(problem, red.restore(x_red),
                       iterations=out.iterations, dual_inf=out.dual_inf, mu=out.mu)
    return QpResult(
        status=NUMERICAL_FAILURE, objective=None, x=None,
        iterations=out.iterations,
        message=f"no convergence (primal {out.primal_inf:.2e}, dual {out.dual_inf:.2e})",
    )


def _finish(problem: VvoProblem, x_full, iterations, dual_inf, mu):
    eq_res = 0.0
    if problem.a_eq.shape[0]:
        eq_res = float(np.max(np.abs(problem.a_eq @ x_full - problem.b_eq)))
    in_res = 0.0
    if problem.a_in.shape[0]:
        in_res = float(np.max(problem.a_in @ x_full - problem.b_in, initial=0.0))
    bound_res = float(
        max(
            np.max(problem.lb - x_full, initial=0.0),
            np.max(x_full - problem.ub, initial=0.0),
        )
    )
    primal = max(eq_res, in_res, bound_res)
    obj = problem.objective_value(x_full)
    kkt = {
        "primal_feasibility": primal,
        "stationarity": dual_inf,
        "complementarity": mu,
    }
    status = OPTIMAL if (primal <= FEAS_TOL and dual_inf <= STAT_TOL) else NUMERICAL_FAILURE
    return QpResult(
        status=status, objective=obj, x=x_full, kkt=kkt, iterations=iterations
    )
