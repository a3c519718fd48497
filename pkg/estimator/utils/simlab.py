"""
Monte-Carlo experiments for the weighted penalized estimators.

Each replication draws

    Y = x1 - x3 + x_u + sin(2 pi z1) + z2^3 + e

with (x1..x_{p-1}) Gaussian with AR(0.7) correlation, x_u ~ U[0, sqrt(12)],
z1 ~ U[0, 1], z2 ~ U[-1, 1], and blanks x1, x7 and z2 together for rows
whose complete-case indicator is 0. Every replication has its own
counter-based random stream keyed by (seed, rep), so results do not depend
on the worker count.
"""
import logging
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import linalg, stats
from scipy.special import expit

from ..exceptions import ConfigError, IpwqrError
from ..models import (
    ErrorModel, FitConfig, FitResult, METHOD_LABELS, MissingModel, PenaltySpec, Replication,
    ReplicationScore, SimConfig, SimMethod, SimReport, SimTruth, WeightMethod,
)
from .fit_engine import select_fit
from .frame_loader import frame_from_arrays
from .ipw import estimate_weights, naive_weights, true_weights

logger = logging.getLogger(__name__)

AR_COEF = 0.7
MISSING_COLUMNS = ('x1', 'x7', 'z2')
FAILURE_SHARE = 0.01


def _rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, rep])))


def error_quantile(model: ErrorModel, tau: float) -> float:
    """tau-quantile of the error law at x_u = 0 (the intercept of g0).

    Both laws are symmetric, so the median is exactly zero.
    """
    model = ErrorModel(model)
    if tau == 0.5:
        return 0.0
    if model is ErrorModel.T3:
        return float(stats.t.ppf(tau, 3))
    return float(stats.norm.ppf(tau))


def true_beta(config: SimConfig) -> np.ndarray:
    beta = np.zeros(config.p)
    beta[0], beta[2], beta[-1] = 1.0, -1.0, 1.0
    if config.error_model is ErrorModel.HETERO_NORMAL:
        # (1 + x_u) xi shifts the x_u slope by the error quantile
        beta[-1] += stats.norm.ppf(config.tau)
    return beta


def true_g(z_raw: np.ndarray, config: SimConfig) -> np.ndarray:
    return np.sin(2 * np.pi * z_raw[:, 0]) + z_raw[:, 1] ** 3 + error_quantile(config.error_model, config.tau)


def complete_case_probability(model: MissingModel, y: np.ndarray, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    if MissingModel(model) is MissingModel.MODEL1:
        eta = 1.0 + 2.0 * y - 5.0 * x[:, 1] + 5.0 * x[:, 3] - 2.0 * z[:, 0]
    else:
        eta = -2.0 + y ** 3 + x[:, 2] ** 2
    return expit(eta)


def generate_replication(config: SimConfig, rep: int) -> Replication:
    """Draw one data set with its known truth."""
    rng = _rng(config.seed, rep)
    n, p = config.n, config.p
    chol = linalg.cholesky(linalg.toeplitz(AR_COEF ** np.arange(p - 1)), lower=True)
    x = np.empty((n, p))
    x[:, :p - 1] = rng.standard_normal((n, p - 1)) @ chol.T
    x[:, p - 1] = rng.uniform(0.0, np.sqrt(12.0), n)
    z = np.column_stack([rng.uniform(0.0, 1.0, n), rng.uniform(-1.0, 1.0, n)])
    if config.error_model is ErrorModel.T3:
        eps = rng.standard_t(3, n)
    else:
        eps = (1.0 + x[:, p - 1]) * rng.standard_normal(n)
    y = x[:, 0] - x[:, 2] + x[:, p - 1] + np.sin(2 * np.pi * z[:, 0]) + z[:, 1] ** 3 + eps

    pi0 = complete_case_probability(config.missing_model, y, x, z)
    r = rng.uniform(size=n) < pi0
    x_obs, z_obs = x.copy(), z.copy()
    x_obs[~r, 0] = np.nan
    x_obs[~r, 6] = np.nan
    z_obs[~r, 1] = np.nan

    x_names = tuple(f"x{j + 1}" for j in range(p))
    z_names = ('z1', 'z2')
    frame = frame_from_arrays(y, x_obs, z_obs, x_names, z_names, 'y', MISSING_COLUMNS)
    full_frame = frame_from_arrays(y, x, z, x_names, z_names, 'y', ())
    beta = true_beta(config)
    truth = SimTruth(beta=beta, support=tuple(int(j) for j in np.flatnonzero(beta)),
                     g0=true_g(z, config), z_full=z, pi0=pi0)
    return Replication(index=rep, frame=frame, full_frame=full_frame, truth=truth)


def score_replication(truth: SimTruth, fit: FitResult, rep: int = 0,
                      method: SimMethod = SimMethod.KERNEL, r_n: int = 0) -> ReplicationScore:
    """Selection counts and the average absolute deviation of g-hat on every row."""
    active = set(fit.active_set)
    support = set(truth.support)
    aade = float(np.mean(np.abs(fit.ghat.evaluate_raw(truth.z_full) - truth.g0)))
    return ReplicationScore(
        rep=rep, method=SimMethod(method), r_n=r_n,
        tv=len(active & support), fv=len(active - support), true_model=active == support,
        aade=aade, beta_hat=np.asarray(fit.beta, dtype=float).copy(),
        converged=fit.converged, descent_ok=fit.descent_ok,
    )


def _fit_method(replication: Replication, method: SimMethod, config: SimConfig) -> FitResult:
    frame = replication.frame
    support = None
    if method is SimMethod.FULL:
        frame = replication.full_frame
        weights = naive_weights(frame)
    elif method is SimMethod.NAIVE:
        weights = naive_weights(frame)
    elif method is SimMethod.TRUE:
        weights = true_weights(frame, replication.truth.pi0, config.cap)
    elif method is SimMethod.PARAMETRIC:
        weights = estimate_weights(frame, WeightMethod.PARAMETRIC, cap=config.cap, alpha=config.screen_alpha)
    else:
        weights = estimate_weights(frame, WeightMethod.KERNEL, cap=config.cap, alpha=config.screen_alpha)
        if method is SimMethod.ORACLE:
            support = replication.truth.support
    fit_config = FitConfig(
        tau=config.tau, weights=weights, penalty=PenaltySpec(config.penalty, 1.0, config.a),
        lambda_grid=config.lambda_grid, knot_grid=config.knot_grid, n_lambda=config.n_lambda, n_jobs=1,
    )
    return select_fit(frame, fit_config, support=support)


def run_replication(config: SimConfig, rep: int) -> List[ReplicationScore]:
    replication = generate_replication(config, rep)
    r_n = replication.frame.complete_case_count()
    scores = []
    for method in config.methods:
        try:
            fit = _fit_method(replication, method, config)
            scores.append(score_replication(replication.truth, fit, rep, method, r_n))
        except IpwqrError as e:
            logger.warning(f"Replication {rep} failed for {METHOD_LABELS[method]}: {e}")
            scores.append(ReplicationScore(rep=rep, method=method, r_n=r_n, failed=True, error=str(e)))
    return scores


def _raw_table(scores: List[ReplicationScore], p: int) -> pd.DataFrame:
    records = []
    for s in scores:
        record = {
            'rep': s.rep, 'method': METHOD_LABELS[s.method], 'r_n': s.r_n, 'TV': s.tv, 'FV': s.fv,
            'True': float(s.true_model), 'AADE': s.aade, 'converged': s.converged,
            'descent_ok': s.descent_ok, 'failed': s.failed, 'error': s.error,
        }
        beta = s.beta_hat if s.beta_hat is not None else np.full(p, np.nan)
        record.update({f"beta_{j + 1}": beta[j] for j in range(p)})
        records.append(record)
    return pd.DataFrame(records)


def _se(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else float('nan')


def summarize(raw: pd.DataFrame, beta0: np.ndarray, methods) -> Tuple[pd.DataFrame, Dict[str, int]]:
    """Per-method averages with Monte-Carlo standard errors.

    Bias is sum_j |mean beta_hat_j - beta_j0|; MSE averages sum_j
    (beta_hat_j - beta_j0)^2 over replications. The Bias standard error is
    the sum of the per-coefficient standard errors.
    """
    beta_columns = [f"beta_{j + 1}" for j in range(len(beta0))]
    rows, failures = [], {}
    for method in methods:
        label = METHOD_LABELS[method]
        block = raw[raw['method'] == label]
        ok = block[~block['failed']]
        failures[label] = int(block['failed'].sum())
        betas = ok[beta_columns].to_numpy(dtype=float)
        m = len(ok)
        row = {'Method': label, 'reps': m, 'failed': failures[label]}
        if m == 0:
            rows.append(row)
            continue
        sq = np.sum((betas - beta0) ** 2, axis=1)
        row.update({
            'r_n': ok['r_n'].mean(), 'TV': ok['TV'].mean(), 'FV': ok['FV'].mean(), 'True': ok['True'].mean(),
            'Bias': float(np.sum(np.abs(betas.mean(axis=0) - beta0))), 'MSE': float(sq.mean()),
            'AADE': ok['AADE'].mean(),
            'se_r_n': _se(ok['r_n'].to_numpy(dtype=float)), 'se_TV': _se(ok['TV'].to_numpy(dtype=float)),
            'se_FV': _se(ok['FV'].to_numpy(dtype=float)), 'se_True': _se(ok['True'].to_numpy(dtype=float)),
            'se_Bias': float(np.sum([_se(betas[:, j]) for j in range(betas.shape[1])])) if m > 1 else float('nan'),
            'se_MSE': _se(sq), 'se_AADE': _se(ok['AADE'].to_numpy(dtype=float)),
            'converged': ok['converged'].mean(), 'descent': ok['descent_ok'].mean(),
        })
        rows.append(row)
    columns = ['Method', 'reps', 'failed', 'r_n', 'TV', 'FV', 'True', 'Bias', 'MSE', 'AADE',
               'se_r_n', 'se_TV', 'se_FV', 'se_True', 'se_Bias', 'se_MSE', 'se_AADE', 'converged', 'descent']
    return pd.DataFrame(rows).reindex(columns=columns).set_index('Method'), failures


def run_experiment(config: SimConfig) -> SimReport:
    """Run every replication and method, then aggregate in replication order."""
    if not config.methods:
        raise ConfigError('At least one method is needed')
    logger.info(f"Simulating {config.replications} replications, n={config.n}, p={config.p}, "
                f"model {config.missing_model.value}, {config.error_model.value} errors")
    batches = Parallel(n_jobs=config.n_jobs)(
        delayed(run_replication)(config, rep) for rep in range(config.replications)
    )
    scores = [score for batch in batches for score in batch]
    raw = _raw_table(scores, config.p)
    table, failures = summarize(raw, true_beta(config), config.methods)
    table.insert(0, 'n', config.n)
    report = SimReport(config=config, table=table, raw=raw, failures=failures)
    if report.flagged:
        logger.warning(f"More than {FAILURE_SHARE:.0%} of replications failed: {failures}")
    return report
