"""
Weighted check-loss minimization with per-coefficient L1 weights.

Every estimator in the package reduces to one call of solve(): the L1
terms become pseudo-observations through |u| = rho_tau(u) + rho_tau(-u), so
the whole problem is a single weighted quantile regression written as a
linear program. HiGHS dual simplex solves the dual, which has one equality
row per coefficient; the coefficients are its equality multipliers. When the
duality gap is not closed the primal program is solved instead.
"""
import logging
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from ..exceptions import NoDataError, NumericError
from ..models import QrProblem, QrSolution, SubgradientReport

logger = logging.getLogger(__name__)

TOL_KKT = 1e-6
TOL_GAP = 1e-8
_SNAP = 1e-10

_OPTIONS_TIGHT = {
    'presolve': True,
    'primal_feasibility_tolerance': 1e-10,
    'dual_feasibility_tolerance': 1e-10,
}
_OPTIONS_RELAXED = {
    'presolve': False,
    'primal_feasibility_tolerance': 1e-8,
    'dual_feasibility_tolerance': 1e-8,
}
_ATTEMPTS = (
    ('highs-ipm', dict(_OPTIONS_TIGHT, ipm_optimality_tolerance=1e-10)),
    ('highs-ds', _OPTIONS_TIGHT),
    ('highs-ipm', dict(_OPTIONS_RELAXED, ipm_optimality_tolerance=1e-8)),
    ('highs-ds', _OPTIONS_RELAXED),
)


def check_loss(u, tau: float):
    """rho_tau(u) = u (tau - I(u < 0))."""
    u = np.asarray(u, dtype=float)
    out = u * (tau - (u < 0).astype(float))
    return out if out.ndim else float(out)


def weighted_loss(problem: QrProblem, coef: np.ndarray) -> float:
    keep = problem.obs_weights > 0
    resid = problem.response[keep] - problem.design[keep] @ coef
    return float(np.sum(problem.obs_weights[keep] * check_loss(resid, problem.tau)))


def objective_value(problem: QrProblem, coef: np.ndarray) -> float:
    """Weighted check loss plus weighted L1 penalty at coef."""
    return weighted_loss(problem, coef) + float(np.sum(problem.l1_weights * np.abs(coef)))


def _effective(problem: QrProblem) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    keep = problem.obs_weights > 0
    if not keep.any():
        raise NoDataError('All observation weights are zero')
    design = problem.design[keep]
    response = problem.response[keep]
    if not (np.all(np.isfinite(design)) and np.all(np.isfinite(response))
            and np.all(np.isfinite(problem.obs_weights)) and np.all(np.isfinite(problem.l1_weights))):
        raise NumericError('Non-finite values in a weighted row of the quantile regression problem')
    return design, response, problem.obs_weights[keep]


def _augment(problem: QrProblem, design, response, weights):
    """Append the +e_j / -e_j pseudo-observations carrying the L1 weights."""
    penalized = np.flatnonzero(problem.l1_weights > 0)
    if penalized.size == 0:
        return design, response, weights
    m = design.shape[1]
    k = penalized.size
    pseudo = np.zeros((2 * k, m))
    pseudo[np.arange(k), penalized] = 1.0
    pseudo[k + np.arange(k), penalized] = -1.0
    l1 = problem.l1_weights[penalized]
    return (np.vstack([design, pseudo]),
            np.concatenate([response, np.zeros(2 * k)]),
            np.concatenate([weights, l1, l1]))


def _run_lp(design, response, weights, tau) -> Tuple[Any, Dict]:
    n, m = design.shape
    # Variables: coef (m, free), u_plus (n), u_minus (n)
    c = np.concatenate([np.zeros(m), tau * weights, (1.0 - tau) * weights])
    a_eq = sparse.hstack([sparse.csr_matrix(design), sparse.eye(n), -sparse.eye(n)], format='csr')
    bounds = [(None, None)] * m + [(0.0, None)] * (2 * n)
    info: Dict = {}
    for method, options in _ATTEMPTS:
        res = linprog(c, A_eq=a_eq, b_eq=response, bounds=bounds, method=method, options=options)
        info = {
            'solver': method,
            'status': int(getattr(res, 'status', -1)),
            'message': str(getattr(res, 'message', '')),
            'nit': int(getattr(res, 'nit', -1)),
            'success': bool(getattr(res, 'success', False)),
        }
        if info['success']:
            return res, info
        logger.debug(f"LP attempt with {method} failed: {info['message']}")
    raise NumericError(f"LP solver failed: {info.get('message', 'unknown error')}")


def _run_dual(design, response, weights, tau) -> Tuple[Optional[np.ndarray], Dict]:
    """max y'a subject to D'a = 0 and (tau - 1) w <= a <= tau w.

    The multipliers of D'a = 0 are minus the primal coefficients.
    """
    m = design.shape[1]
    bounds = np.column_stack([(tau - 1.0) * weights, tau * weights])
    res = linprog(-response, A_eq=design.T, b_eq=np.zeros(m), bounds=bounds, method='highs-ds',
                  options=_OPTIONS_TIGHT)
    info = {
        'solver': 'highs-ds-dual',
        'status': int(getattr(res, 'status', -1)),
        'message': str(getattr(res, 'message', '')),
        'nit': int(getattr(res, 'nit', -1)),
        'success': bool(getattr(res, 'success', False)),
    }
    eqlin = getattr(res, 'eqlin', None)
    if not info['success'] or eqlin is None:
        return None, info
    info['dual_objective'] = float(-res.fun)
    return -np.asarray(eqlin.marginals, dtype=float), info


def solve(problem: QrProblem) -> QrSolution:
    """Global minimizer of sum_i w_i rho_tau(y_i - d_i'c) + sum_j l1_j |c_j|.

    Rows with zero weight are dropped before solving, so their contents are
    never read. Degenerate problems return a vertex minimizer.
    """
    design, response, weights = _effective(problem)
    m = design.shape[1]
    if problem.design_rank is not None:
        rank = int(problem.design_rank)
    else:
        rank = np.linalg.matrix_rank(design) if design.size else 0
    rank_deficient = rank < m
    if rank_deficient:
        logger.warning(f"Design has rank {rank} < {m} columns on the {len(response)} weighted rows")

    aug_design, aug_response, aug_weights = _augment(problem, design, response, weights)
    coef, info = _run_dual(aug_design, aug_response, aug_weights, problem.tau)
    if coef is not None:
        primal = objective_value(problem, coef)
        gap = abs(primal - info['dual_objective'])
        info['duality_gap'] = gap
        if not gap <= TOL_GAP * max(1.0, abs(primal)):
            logger.debug(f"Dual solution left a gap of {gap:.3g}; solving the primal")
            coef = None
    if coef is None:
        res, info = _run_lp(aug_design, aug_response, aug_weights, problem.tau)
        coef = np.array(res.x[:m], dtype=float)
        info['lp_objective'] = float(res.fun)
    else:
        info['lp_objective'] = info['dual_objective']

    scale = max(1.0, float(np.max(np.abs(coef))) if m else 1.0)
    linear = np.arange(m) < problem.n_linear
    coef[linear & (np.abs(coef) < _SNAP * scale)] = 0.0
    active = tuple(int(j) for j in np.flatnonzero(linear & (coef != 0.0)))

    info.update({
        'effective_rows': int(len(response)),
        'rank': int(rank),
        'rank_deficient': bool(rank_deficient),
    })
    return QrSolution(coef=coef, objective=objective_value(problem, coef), active_set=active, diagnostics=info)


def _subgradient_parts(problem: QrProblem, coef: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Loss subgradient split as g + A a, with a free on the zero-residual rows."""
    design, response, weights = _effective(problem)
    resid = response - design @ coef
    zero_tol = 1e-8 * max(1.0, float(np.max(np.abs(response))))
    on_d = np.abs(resid) <= zero_tol
    psi = problem.tau - (resid < 0).astype(float)
    g = -(design[~on_d].T @ (weights[~on_d] * psi[~on_d]))
    a_mat = -(design[on_d].T * weights[on_d])
    return g, a_mat


def zero_slope_bound(problem: QrProblem, coef: np.ndarray) -> Optional[float]:
    """Smallest attainable max |s_j| over the first n_linear coordinates at coef.

    The remaining coordinates must have s_j = 0. When coef has a zero linear
    block and optimal remaining coordinates, this is the smallest common L1
    weight on the linear block that keeps coef optimal. None if the LP fails.
    """
    coef = np.asarray(coef, dtype=float)
    g, a_mat = _subgradient_parts(problem, coef)
    p = problem.n_linear
    k = a_mat.shape[1]
    if p == 0:
        return 0.0
    if k == 0:
        return float(np.max(np.abs(g[:p])))
    # Variables: a (k) then t; minimize t
    a_ub = np.vstack([np.hstack([a_mat[:p], -np.ones((p, 1))]), np.hstack([-a_mat[:p], -np.ones((p, 1))])])
    b_ub = np.concatenate([-g[:p], g[:p]])
    free = a_mat[p:]
    a_eq = np.hstack([free, np.zeros((free.shape[0], 1))]) if free.size else None
    b_eq = -g[p:] if free.size else None
    bounds = [(problem.tau - 1.0, problem.tau)] * k + [(0.0, None)]
    res = linprog(np.append(np.zeros(k), 1.0), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=bounds, method='highs')
    if not res.success:
        logger.debug(f"Zero-slope LP failed: {res.message}")
        return None
    return float(res.x[-1])


def verify_subgradient(problem: QrProblem, solution: QrSolution, lam: float, tol: float = TOL_KKT) -> SubgradientReport:
    """Check the subgradient optimality conditions at a solution.

    s_j is the subgradient of the weighted loss in coordinate j, with free
    a_i in [tau - 1, tau] on the zero-residual set D. Coordinates that are
    unpenalized or nonzero must satisfy s_j + l1_j sign(c_j) = 0; penalized
    zero coordinates must satisfy |s_j| <= l1_j (and so |s_j| <= lambda
    whenever l1_j <= lambda). The a_i are chosen by a small LP minimizing the
    largest violation, so the report gives the best attainable values.
    """
    coef = np.asarray(solution.coef, dtype=float)
    tau = problem.tau
    g, a_mat = _subgradient_parts(problem, coef)

    l1 = problem.l1_weights
    sign = np.sign(coef)
    inactive = (l1 > 0) & (coef == 0.0)
    active = ~inactive
    target = np.where(active, -l1 * sign, 0.0)

    k = a_mat.shape[1]
    a_star = np.zeros(k)
    if k:
        m = len(coef)
        # Variables: a (k) then t; minimize t
        rows, rhs = [], []
        for j in range(m):
            base = np.append(a_mat[j], -1.0)
            neg = np.append(-a_mat[j], -1.0)
            if active[j]:
                rows += [base, neg]
                rhs += [target[j] - g[j], g[j] - target[j]]
            else:
                rows += [base, neg]
                rhs += [l1[j] - g[j], l1[j] + g[j]]
        bounds = [(tau - 1.0, tau)] * k + [(0.0, None)]
        res = linprog(np.append(np.zeros(k), 1.0), A_ub=np.array(rows), b_ub=np.array(rhs),
                      bounds=bounds, method='highs')
        if res.success:
            a_star = res.x[:k]
        else:
            logger.warning(f"Subgradient feasibility LP failed: {res.message}")

    s = g + (a_mat @ a_star if k else 0.0)
    max_active = float(np.max(np.abs(s[active] - target[active]))) if active.any() else 0.0
    max_inactive = float(np.max(np.abs(s[inactive]))) if inactive.any() else 0.0
    excess = float(np.max(np.maximum(np.abs(s[inactive]) - l1[inactive], 0.0))) if inactive.any() else 0.0
    return SubgradientReport(
        max_active=max_active,
        max_inactive=max_inactive,
        max_inactive_excess=excess,
        zero_residuals=k,
        lam=float(lam),
        tol=tol,
        subgradient=s,
    )
