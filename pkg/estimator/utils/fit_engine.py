"""
Weighted partial-linear quantile regression fits.

Every fit minimizes

    n^-1 sum_i w_i rho_tau(y_i - x_i' beta - b(z_i)' xi) + sum_j p_lambda(|beta_j|)

with w_i the inverse-probability weights (r_i for the naive estimator), so
rows with r_i = 0 never enter. Penalized fits use the local linear
approximation started from beta = 0; tuning parameters are chosen by the
weighted BIC score.
"""
import dataclasses
import itertools
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ..exceptions import ConfigError, IpwqrError, NoDataError, NumericError
from ..models import (
    Designation, DesignationKind, FitConfig, FitResult, IntervalReport, ModelFrame, PenaltyFamily,
    PenaltySpec, PipelineConfig, QrProblem, QrSolution, SplineBasis, WeightEstimate, WeightMethod,
)
from .frame_loader import regroup, split
from .ipw import estimate_weights
from .penalty import penalty_derivative, penalty_value
from .qr_solver import check_loss, solve, weighted_loss, zero_slope_bound
from .splines import AdditiveFunction, bases_for_frame, design_from_bases, evaluate_basis, place_knots

logger = logging.getLogger(__name__)

DESCENT_SLACK = 1e-9
LAMBDA_RATIO = 1e-3
LAMBDA_MARGIN = 1e-6
DESIGNATION_KNOTS = (0, 1, 2, 3, 4)


def _obs_weights(frame: ModelFrame, weights: WeightEstimate) -> np.ndarray:
    w = np.asarray(weights.weights, dtype=float)
    if len(w) != frame.n:
        raise ConfigError(f"Got {len(w)} weights for {frame.n} rows")
    if not np.any(w > 0):
        raise NoDataError('All observation weights are zero')
    frame.assert_observed(w)
    return w / frame.n


def _single_knots(config: FitConfig, d: int, knots: Optional[Sequence[int]]) -> Tuple[int, ...]:
    if knots is not None:
        if len(knots) != d:
            raise ConfigError(f"Got {len(knots)} knot counts for {d} nonlinear variables")
        return tuple(int(k) for k in knots)
    candidates = config.knot_candidates(d)
    if any(len(ks) != 1 for ks in candidates):
        raise ConfigError('A single fit needs exactly one knot count per nonlinear variable')
    return tuple(ks[0] for ks in candidates)


def _assemble(frame: ModelFrame, knots: Sequence[int], degree: int,
              columns: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, List[SplineBasis], List[int]]:
    """Design [x_columns, 1, b(z_1), ..., b(z_d)] and its bases."""
    columns = list(range(frame.p)) if columns is None else list(columns)
    if frame.d:
        bases = bases_for_frame(frame, knots, degree)
        spline = design_from_bases(frame.z, bases).matrix
    else:
        bases = []
        spline = np.ones((frame.n, 1))
    design = np.hstack([frame.x[:, columns], spline])
    return design, bases, columns


def _design_rank(design: np.ndarray, obs_weights: np.ndarray) -> int:
    return int(np.linalg.matrix_rank(design[obs_weights > 0]))


def _result(frame: ModelFrame, config: FitConfig, solution: QrSolution, bases: List[SplineBasis],
            columns: List[int], knots: Sequence[int], **extra) -> FitResult:
    coef = solution.coef
    beta = np.zeros(frame.p)
    beta[columns] = coef[:len(columns)]
    active = tuple(sorted(columns[j] for j in solution.active_set))
    ghat = AdditiveFunction(bases=bases, xi=coef[len(columns):].copy(), z_scale=frame.z_scale)
    result = FitResult(
        beta=beta, xi=ghat.xi, active_set=active, ghat=ghat, objective=solution.objective,
        tau=config.tau, x_names=frame.x_names, z_names=frame.z_names,
        selected_knots=tuple(knots), weight_method=config.weights.method,
        diagnostics=dict(solution.diagnostics), **extra,
    )
    result.qbic_value = qbic_score(frame, result, config.weights)
    return result


def fit_unpenalized(frame: ModelFrame, config: FitConfig, knots: Optional[Sequence[int]] = None) -> FitResult:
    """Weighted (or, with naive weights, complete-case) quantile regression without a penalty."""
    if config.penalty is not None:
        raise ConfigError('fit_unpenalized needs a configuration without a penalty')
    knots = _single_knots(config, frame.d, knots)
    design, bases, columns = _assemble(frame, knots, config.degree)
    problem = QrProblem(design, frame.y, config.tau, _obs_weights(frame, config.weights),
                        np.zeros(design.shape[1]), n_linear=len(columns))
    return _result(frame, config, solve(problem), bases, columns, knots, iterations=1)


def fit_oracle(frame: ModelFrame, config: FitConfig, support: Sequence[int],
               knots: Optional[Sequence[int]] = None) -> FitResult:
    """Unpenalized fit restricted to the linear columns in support."""
    support = sorted(int(j) for j in support)
    if any(j < 0 or j >= frame.p for j in support):
        raise ConfigError(f"Support {support} out of range for {frame.p} linear covariates")
    oracle_config = dataclasses.replace(config, penalty=None)
    knots = _single_knots(oracle_config, frame.d, knots)
    design, bases, columns = _assemble(frame, knots, config.degree, support)
    problem = QrProblem(design, frame.y, config.tau, _obs_weights(frame, config.weights),
                        np.zeros(design.shape[1]), n_linear=len(columns))
    return _result(frame, oracle_config, solve(problem), bases, columns, knots, iterations=1)


def penalized_objective(problem: QrProblem, coef: np.ndarray, spec: PenaltySpec) -> float:
    """Scaled weighted loss plus the concave penalty on the linear block."""
    beta = coef[:problem.n_linear]
    return weighted_loss(problem, coef) + float(np.sum(penalty_value(spec, np.abs(beta))))


def fit_lla(frame: ModelFrame, config: FitConfig, lam: Optional[float] = None,
            knots: Optional[Sequence[int]] = None) -> FitResult:
    """Penalized fit by local linear approximation from beta = 0.

    Each step solves a weighted-L1 problem with weights p'_lambda(|beta_j|)
    at the previous iterate. LASSO needs a single step.
    """
    if config.penalty is None:
        raise ConfigError('fit_lla needs a penalty')
    spec = config.penalty if lam is None else config.penalty.with_lambda(lam)
    knots = _single_knots(config, frame.d, knots)
    design, bases, columns = _assemble(frame, knots, config.degree)
    p = len(columns)
    obs_weights = _obs_weights(frame, config.weights)
    rank = _design_rank(design, obs_weights)

    beta_prev = np.zeros(p)
    trace: List[float] = []
    descent_ok = True
    converged = False
    solution = None
    max_iter = 1 if spec.family is PenaltyFamily.LASSO else config.lla_max_iter
    iteration = 0
    for iteration in range(1, max_iter + 1):
        l1 = np.zeros(design.shape[1])
        l1[:p] = penalty_derivative(spec, np.abs(beta_prev))
        problem = QrProblem(design, frame.y, config.tau, obs_weights, l1, n_linear=p, design_rank=rank)
        solution = solve(problem)
        beta = solution.coef[:p]
        value = penalized_objective(problem, solution.coef, spec)
        if trace and value > trace[-1] + DESCENT_SLACK * max(1.0, abs(trace[-1])):
            descent_ok = False
            logger.warning(f"LLA objective increased at iteration {iteration}: {trace[-1]:.12g} -> {value:.12g}")
        trace.append(value)
        step = float(np.sum(np.abs(beta - beta_prev)))
        beta_prev = beta
        if step < config.lla_tol or spec.family is PenaltyFamily.LASSO:
            converged = True
            break
    if not converged:
        logger.warning(f"LLA did not converge in {max_iter} iterations at lambda={spec.lam:.6g}")
    return _result(frame, config, solution, bases, columns, knots,
                   selected_lambda=spec.lam, converged=converged, iterations=iteration,
                   objective_trace=trace, descent_ok=descent_ok)


def qbic_value(loss: float, nu: int, n: int) -> float:
    """ln(loss) + nu ln(n) / (2n)."""
    if not loss > 0:
        raise NumericError(f"Weighted loss must be positive for a BIC score, got {loss}")
    return float(np.log(loss) + nu * np.log(n) / (2.0 * n))


def _fitted(frame: ModelFrame, fit: FitResult, rows: np.ndarray) -> np.ndarray:
    linear = frame.x[rows] @ fit.beta if frame.p else np.zeros(int(np.sum(rows)))
    return linear + fit.ghat.evaluate(frame.z[rows])


def qbic_score(frame: ModelFrame, fit: FitResult, weights: WeightEstimate) -> float:
    """Weighted quantile BIC: ln(sum_i w_i rho_tau(residual_i)) + nu ln(n)/(2n).

    nu counts the nonzero linear coefficients plus k_j + degree per spline
    block. Naive weights give the complete-case version.
    """
    w = np.asarray(weights.weights, dtype=float)
    rows = w > 0
    resid = frame.y[rows] - _fitted(frame, fit, rows)
    loss = float(np.sum(w[rows] * check_loss(resid, fit.tau)))
    return qbic_value(loss, fit.nu, frame.n)


def lambda_max(frame: ModelFrame, config: FitConfig, knots: Sequence[int]) -> float:
    """Smallest lambda at which the LASSO step zeroes every linear coefficient.

    beta = 0 with the restricted spline fit is optimal exactly when lambda
    bounds every linear subgradient, so one restricted solve and one small
    LP give the value. The closed-form bound max(tau, 1 - tau) max_j
    sum_i w_i |x_ij| stands in when that LP fails.
    """
    if frame.p == 0:
        raise ConfigError('lambda_max needs at least one linear covariate')
    design, _, columns = _assemble(frame, knots, config.degree)
    p = len(columns)
    obs_weights = _obs_weights(frame, config.weights)
    rows = obs_weights > 0
    bound = max(config.tau, 1.0 - config.tau) * float(np.max(np.abs(frame.x[rows]).T @ obs_weights[rows]))
    spline = design[:, p:]
    restricted = solve(QrProblem(spline, frame.y, config.tau, obs_weights, np.zeros(spline.shape[1])))
    coef = np.concatenate([np.zeros(p), restricted.coef])
    full = QrProblem(design, frame.y, config.tau, obs_weights, np.zeros(design.shape[1]), n_linear=p)
    exact = zero_slope_bound(full, coef)
    if exact is None or not 0.0 < exact <= bound * (1.0 + 1e-9):
        logger.warning(f"Exact lambda_max unavailable; using the closed-form bound {bound:.6g}")
        return bound
    top = exact * (1.0 + LAMBDA_MARGIN)
    logger.debug(f"lambda_max = {top:.6g} (bound {bound:.6g})")
    return top


def lambda_grid(frame: ModelFrame, config: FitConfig, knots: Sequence[int]) -> Tuple[float, ...]:
    """n_lambda log-spaced values over [lambda_max / 1000, lambda_max]."""
    top = lambda_max(frame, config, knots)
    return tuple(float(v) for v in np.geomspace(top * LAMBDA_RATIO, top, config.n_lambda))


def _grid_fit(frame: ModelFrame, config: FitConfig, lam: Optional[float], knots: Tuple[int, ...],
              support: Optional[Sequence[int]] = None) -> FitResult:
    if support is not None:
        return fit_oracle(frame, config, support, knots)
    if lam is None:
        return fit_unpenalized(frame, dataclasses.replace(config, penalty=None), knots)
    return fit_lla(frame, config, lam, knots)


def _saturated(fit: FitResult, spec: PenaltySpec, p: int) -> bool:
    """Every linear coefficient is active with zero penalty slope: the fit is the unpenalized one."""
    if spec.family is PenaltyFamily.LASSO or not fit.converged or len(fit.active_set) < p:
        return False
    slope = penalty_derivative(spec.with_lambda(fit.selected_lambda), np.abs(fit.beta))
    return not np.any(slope > 0)


def _knot_path(frame: ModelFrame, config: FitConfig, lams: Sequence[Optional[float]], knots: Tuple[int, ...],
               support: Optional[Sequence[int]] = None) -> List[Optional[FitResult]]:
    """Fits for one knot vector along the lambda grid, largest lambda first.

    Every fit starts from beta = 0. A SCAD or MCP path stops at the first
    saturated fit; the smaller lambdas are left as None.
    """
    fits: List[Optional[FitResult]] = [None] * len(lams)
    order = sorted(range(len(lams)), key=lambda i: -np.inf if lams[i] is None else -lams[i])
    for position, i in enumerate(order):
        fit = _grid_fit(frame, config, lams[i], knots, support)
        fits[i] = fit
        if lams[i] is not None and _saturated(fit, config.penalty, frame.p):
            skipped = len(order) - position - 1
            if skipped:
                logger.debug(f"Knots {knots} saturate at lambda={lams[i]:.6g}; skipping {skipped} smaller values")
            break
    return fits


def select_fit(frame: ModelFrame, config: FitConfig, support: Optional[Sequence[int]] = None) -> FitResult:
    """Minimize the weighted BIC over the lambda x knot grid.

    Ties go to the smaller nu, then the smaller lambda. Without a penalty
    (or without linear covariates) only the knot grid is searched; a given
    support searches the knot grid for the oracle fit on those columns.
    Each knot vector runs its own lambda path, so paths run in parallel;
    lambdas skipped after saturation stay in the score table with skipped
    set and no score.
    """
    knot_grid = list(itertools.product(*config.knot_candidates(frame.d)))
    penalized = config.penalty is not None and frame.p > 0 and support is None
    if penalized:
        grid = config.lambda_grid
        if grid is None:
            smallest = tuple(min(ks) for ks in config.knot_candidates(frame.d))
            grid = lambda_grid(frame, config, smallest)
        lams: List[Optional[float]] = list(grid)
    else:
        lams = [None]

    paths = Parallel(n_jobs=config.n_jobs)(
        delayed(_knot_path)(frame, config, lams, knots, support) for knots in knot_grid
    )
    tasks = [(lam, knots) for lam in lams for knots in knot_grid]
    fits = [paths[k][i] for i in range(len(lams)) for k in range(len(knot_grid))]

    def column(attr, missing=np.nan):
        return [missing if fit is None else getattr(fit, attr) for fit in fits]

    table = pd.DataFrame({
        'lambda': [np.nan if lam is None else lam for lam, _ in tasks],
        'knots': ['-'.join(str(k) for k in knots) for _, knots in tasks],
        'nu': column('nu'),
        'qbic': column('qbic_value'),
        'active': [np.nan if fit is None else len(fit.active_set) for fit in fits],
        'converged': column('converged', False),
        'iterations': column('iterations', 0),
        'skipped': [fit is None for fit in fits],
    })
    order = table.assign(lam_key=table['lambda'].fillna(0.0)).sort_values(
        ['qbic', 'nu', 'lam_key'], kind='mergesort').index
    best = fits[order[0]]
    table['selected'] = False
    table.loc[order[0], 'selected'] = True
    best.score_table = table
    logger.info(f"Selected lambda={best.selected_lambda} knots={best.selected_knots} "
                f"qbic={best.qbic_value:.6g} active={list(best.active_set)}")
    return best


def _is_binary(values: np.ndarray) -> bool:
    return len(np.unique(values[np.isfinite(values)])) <= 2


def wqbic_designate(frame: ModelFrame, variable: str, tau: float, weights: WeightEstimate) -> Designation:
    """Choose intercept-only, linear, or a cubic spline with 0-4 internal knots for one covariate.

    Each of the seven univariate models is fitted by weighted quantile
    regression and scored by ln(weighted loss) + coefficients ln(n)/(2n);
    ties go to the simpler model.
    """
    values = frame.covariate(variable, raw=True)
    if _is_binary(values):
        raise ConfigError(f"Binary covariate {variable} is always linear")
    w = np.asarray(weights.weights, dtype=float)
    rows = (w > 0) & np.isfinite(values)
    if not rows.any():
        raise NoDataError(f"No weighted rows observe {variable}")
    v = values[rows]
    scaled = (v - v.min()) / (v.max() - v.min())
    y, wr = frame.y[rows], w[rows]
    ones = np.ones((len(v), 1))

    candidates = [('intercept', DesignationKind.INTERCEPT_ONLY, None, ones),
                  ('linear', DesignationKind.LINEAR, None, np.column_stack([ones, v]))]
    for k in DESIGNATION_KNOTS:
        basis = SplineBasis(degree=3, internal_knots=place_knots(scaled, k))
        candidates.append((f"spline{k}", DesignationKind.NONLINEAR, k, np.hstack([ones, evaluate_basis(basis, scaled)])))

    scores: Dict[str, float] = {}
    for name, _, _, design in candidates:
        problem = QrProblem(design, y, tau, wr, np.zeros(design.shape[1]))
        solution = solve(problem)
        scores[name] = qbic_value(weighted_loss(problem, solution.coef), design.shape[1], frame.n)
    best = min(range(len(candidates)), key=lambda i: (scores[candidates[i][0]], i))
    _, kind, knots, _ = candidates[best]
    logger.debug(f"Designated {variable} at tau={tau:g} as {kind.value} (knots={knots})")
    return Designation(variable=variable, kind=kind, knots=knots, scores=scores)


def designate_all(frame: ModelFrame, tau: float, weights: WeightEstimate,
                  variables: Optional[Sequence[str]] = None) -> List[Designation]:
    """Designate every non-binary covariate (or the given ones); binary ones stay linear."""
    names = frame.covariate_names if variables is None else tuple(variables)
    out = []
    for name in names:
        if _is_binary(frame.covariate(name, raw=True)):
            if variables is not None:
                raise ConfigError(f"Binary covariate {name} is always linear")
            continue
        out.append(wqbic_designate(frame, name, tau, weights))
    return out


def designation_label(designation: Designation) -> str:
    if designation.kind is DesignationKind.NONLINEAR:
        return f"nonlinear({designation.knots})"
    return designation.kind.value


def _quantile_fit(train: ModelFrame, tau: float, weights: WeightEstimate,
                  pipeline: PipelineConfig) -> Tuple[FitResult, List[str], List[Designation]]:
    designations: List[Designation] = []
    knot_grid = None
    frame = train
    nonlinear = list(train.z_names)
    if pipeline.designate:
        designations = designate_all(train, tau, weights)
        chosen = [d for d in designations if not d.is_linear]
        nonlinear = [d.variable for d in chosen]
        knot_grid = [(d.knots,) for d in chosen]
        frame = regroup(train, nonlinear)
    config = FitConfig(
        tau=tau, weights=weights, penalty=PenaltySpec(pipeline.penalty, 1.0, pipeline.a),
        lambda_grid=pipeline.lambda_grid, knot_grid=knot_grid, degree=pipeline.degree,
        n_lambda=pipeline.n_lambda, n_jobs=pipeline.n_jobs,
    )
    return select_fit(frame, config), nonlinear, designations


def prediction_interval(train: ModelFrame, test: ModelFrame, lo_tau: float, hi_tau: float,
                        pipeline: Optional[PipelineConfig] = None) -> IntervalReport:
    """Designate, fit the lo and hi quantiles on train, and score [Q_lo, Q_hi] on test.

    Crossing pairs are counted and scored in sorted order. Test rows with a
    missing covariate are skipped and counted.
    """
    pipeline = pipeline or PipelineConfig()
    if not (0.0 < lo_tau < 1.0 and 0.0 < hi_tau < 1.0) or lo_tau > hi_tau:
        raise ConfigError(f"Need 0 < lo <= hi < 1, got lo={lo_tau}, hi={hi_tau}")
    weights = estimate_weights(train, pipeline.weight_method, cap=pipeline.cap, alpha=pipeline.screen_alpha)

    predictions = []
    labels: Dict[str, str] = {}
    for tau in (lo_tau, hi_tau):
        fit, nonlinear, designations = _quantile_fit(train, tau, weights, pipeline)
        for d in designations:
            labels[f"{tau:g}:{d.variable}"] = designation_label(d)
        scored_frame = regroup(test, nonlinear) if pipeline.designate else test
        predictions.append(fit.predict(scored_frame))

    q_lo, q_hi = predictions
    scored = np.isfinite(q_lo) & np.isfinite(q_hi)
    skipped = int((~scored).sum())
    if skipped:
        logger.info(f"Skipped {skipped} test rows with missing covariates")
    if not scored.any():
        raise NoDataError('No test row has every covariate observed')
    crossed = scored & (q_lo > q_hi)
    crossing = int(crossed.sum())
    if crossing:
        logger.warning(f"{crossing} prediction intervals cross (lower quantile above upper)")
    lower = np.minimum(q_lo, q_hi)[scored]
    upper = np.maximum(q_lo, q_hi)[scored]
    y = test.y[scored]
    captured = (lower <= y) & (y <= upper)
    lengths = upper - lower
    rows = pd.DataFrame({'row': np.flatnonzero(scored), 'y': y, 'lower': lower, 'upper': upper,
                         'length': lengths, 'captured': captured, 'crossed': crossed[scored]})
    return IntervalReport(
        capture_rate=float(captured.mean()),
        mean_length=float(lengths.mean()),
        sd_length=float(lengths.std(ddof=1)) if len(lengths) > 1 else 0.0,
        crossing_count=crossing, scored_rows=int(scored.sum()), skipped_rows=skipped,
        designations=labels, rows=rows,
    )


def _partition(frame: ModelFrame, lo_tau: float, hi_tau: float, pipeline: PipelineConfig,
               methods: Sequence[WeightMethod], test_size: int, seed: int, index: int) -> List[Tuple]:
    rng = np.random.default_rng([seed, index])
    test_rows = rng.choice(frame.n, size=test_size, replace=False)
    train, test = split(frame, test_rows)
    out = []
    for method in methods:
        run = dataclasses.replace(pipeline, weight_method=method, n_jobs=1)
        try:
            out.append((method, prediction_interval(train, test, lo_tau, hi_tau, run)))
        except IpwqrError as e:
            logger.warning(f"Partition {index} failed for {method.value} weights: {e}")
            out.append((method, None))
    return out


def repeated_prediction_intervals(frame: ModelFrame, lo_tau: float, hi_tau: float,
                                  pipeline: Optional[PipelineConfig] = None, partitions: int = 500,
                                  test_size: int = 100, seed: int = 0,
                                  methods: Optional[Sequence[WeightMethod]] = None) -> pd.DataFrame:
    """Repeat prediction_interval over random train/test partitions, one row per weighting method.

    Capture rate and interval-length moments pool every scored test row.
    """
    pipeline = pipeline or PipelineConfig()
    methods = tuple(WeightMethod(m) for m in (methods or (pipeline.weight_method,)))
    if not 0 < test_size < frame.n:
        raise ConfigError(f"test_size must lie strictly between 0 and {frame.n}")
    if partitions < 1:
        raise ConfigError('partitions must be at least 1')
    results = Parallel(n_jobs=pipeline.n_jobs)(
        delayed(_partition)(frame, lo_tau, hi_tau, pipeline, methods, test_size, seed, index)
        for index in range(partitions)
    )
    summary = []
    for method in methods:
        reports = [report for batch in results for m, report in batch if m is method]
        done = [r for r in reports if r is not None]
        if done:
            pooled = pd.concat([r.rows for r in done], ignore_index=True)
            lengths = pooled['length'].to_numpy()
            capture = float(pooled['captured'].mean())
            mean_length = float(lengths.mean())
            sd_length = float(lengths.std(ddof=1)) if len(lengths) > 1 else 0.0
        else:
            capture = mean_length = sd_length = float('nan')
        summary.append({
            'method': method.value,
            'partitions': len(reports),
            'failed': len(reports) - len(done),
            'capture_rate': capture,
            'mean_length': mean_length,
            'sd_length': sd_length,
            'crossing_count': sum(r.crossing_count for r in done),
            'skipped_rows': sum(r.skipped_rows for r in done),
        })
    return pd.DataFrame(summary).set_index('method')
