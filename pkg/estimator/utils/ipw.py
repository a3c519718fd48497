"""
Complete-case probabilities and inverse-probability weights.

Three estimators of pi_i = P(R_i = 1 | t_i) are provided: the known
probabilities (simulation only), a logistic model fitted by Newton's method,
and a Nadaraya-Watson smoother with a Gaussian product kernel. Weights are
r_i / pi_i, capped.
"""
import logging
import warnings
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy import linalg, stats
from scipy.spatial.distance import cdist
from scipy.special import expit, logsumexp

from ipwqr import settings
from ..exceptions import ConfigError, ConvergenceError, DomainError, NoDataError, NumericError, SeparationError
from ..models import BandwidthRule, ModelFrame, SplineBasis, WeightEstimate, WeightMethod
from .splines import evaluate_basis, place_knots

logger = logging.getLogger(__name__)

SCORE_TOL = 1e-8
MAX_NEWTON_ITER = 100
_SCREEN_KNOTS = 2
_KERNEL_BLOCK = 2048


def cap_weights(pi: np.ndarray, r: np.ndarray, cap: float = settings.WEIGHT_CAP) -> Tuple[np.ndarray, int]:
    """r_i / pi_i with every weight above cap set to cap; zero where r_i = 0."""
    if not cap > 0:
        raise ConfigError(f"Weight cap must be positive, got {cap}")
    observed = np.asarray(r) == 1
    raw = np.zeros(len(pi))
    raw[observed] = 1.0 / pi[observed]
    capped = raw > cap
    raw[capped] = cap
    count = int(capped.sum())
    if count:
        logger.warning(f"{count} weights above {cap:g} were capped")
    return raw, count


def _t_columns(frame: ModelFrame, columns: Sequence[str]) -> np.ndarray:
    unknown = [c for c in columns if c not in frame.t_names]
    if unknown:
        raise ConfigError(f"Columns are not always observed: {unknown}")
    index = [frame.t_names.index(c) for c in columns]
    return frame.t[:, index]


def _check_has_complete(frame: ModelFrame) -> None:
    if frame.complete_case_count() == 0:
        raise NoDataError('No complete cases in the frame')


def naive_weights(frame: ModelFrame) -> WeightEstimate:
    """Weights r_i: complete cases count once, the rest are dropped."""
    _check_has_complete(frame)
    return WeightEstimate(pi=np.ones(frame.n), weights=frame.r.astype(float), method=WeightMethod.NAIVE, cap=np.inf)


def true_weights(frame: ModelFrame, pi0: Union[np.ndarray, Callable[[ModelFrame], np.ndarray]],
                 cap: float = settings.WEIGHT_CAP) -> WeightEstimate:
    """Weights from known complete-case probabilities."""
    _check_has_complete(frame)
    pi = np.asarray(pi0(frame) if callable(pi0) else pi0, dtype=float).ravel()
    if len(pi) != frame.n:
        raise ConfigError(f"Got {len(pi)} probabilities for {frame.n} rows")
    if not np.all((pi > 0.0) & (pi <= 1.0)):
        raise DomainError('Known probabilities must lie in (0, 1]')
    weights, count = cap_weights(pi, frame.r, cap)
    return WeightEstimate(pi=pi, weights=weights, method=WeightMethod.TRUE, cap=cap, capped_count=count)


def _intercept_only(frame: ModelFrame, method: WeightMethod, cap: float) -> WeightEstimate:
    pi = np.full(frame.n, frame.r.mean())
    weights, count = cap_weights(pi, frame.r, cap)
    eta = np.array([np.log(pi[0] / (1.0 - pi[0]))]) if pi[0] < 1.0 else np.array([np.inf])
    return WeightEstimate(pi=pi, weights=weights, method=method, cap=cap, capped_count=count,
                          eta_hat=eta if method is WeightMethod.PARAMETRIC else None,
                          diagnostics={'fallback': 'intercept-only'})


def _logistic_mle(design: np.ndarray, r: np.ndarray, tol: float, max_iter: int) -> Tuple[np.ndarray, dict]:
    """Newton-Raphson for the logistic likelihood with step halving."""
    def loglik(eta):
        lin = design @ eta
        return float(np.sum(r * lin - np.logaddexp(0.0, lin)))

    eta = np.zeros(design.shape[1])
    p0 = r.mean()
    eta[0] = np.log(p0 / (1.0 - p0))
    current = loglik(eta)
    grad_norm = np.inf
    for iteration in range(1, max_iter + 1):
        mu = expit(design @ eta)
        grad = design.T @ (r - mu)
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= tol:
            return eta, {'iterations': iteration - 1, 'score_norm': grad_norm}
        hess = (design.T * (mu * (1.0 - mu))) @ design
        try:
            step = linalg.solve(hess, grad, assume_a='pos')
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(hess, grad)[0]
        t = 1.0
        while t > 1e-10:
            candidate = eta + t * step
            value = loglik(candidate)
            if value >= current - 1e-12:
                break
            t *= 0.5
        eta, current = candidate, value
        # A log-likelihood near zero means every r_i is predicted exactly
        if current > -1e-6 or np.max(np.abs(eta)) > 1e6:
            raise SeparationError('Logistic coefficients diverge: the missingness indicator is separated')
    raise ConvergenceError(
        f"Logistic fit did not reach score norm {tol:g} in {max_iter} iterations",
        diagnostics={'iterations': max_iter, 'score_norm': grad_norm, 'eta': eta.tolist()},
    )


def fit_parametric_weights(frame: ModelFrame, columns: Sequence[str], cap: float = settings.WEIGHT_CAP,
                           tol: float = SCORE_TOL, max_iter: int = MAX_NEWTON_ITER) -> WeightEstimate:
    """Logistic model pi_i = expit([1, t_i]' eta) by maximum likelihood."""
    _check_has_complete(frame)
    r = frame.r.astype(float)
    if r.min() == r.max():
        raise SeparationError('The missingness indicator is constant; there is no missingness model to fit')
    columns = list(columns)
    if not columns:
        logger.warning('No screened columns; using the intercept-only missingness model')
        return _intercept_only(frame, WeightMethod.PARAMETRIC, cap)
    design = np.column_stack([np.ones(frame.n), _t_columns(frame, columns)])
    eta, info = _logistic_mle(design, r, tol, max_iter)
    pi = expit(design @ eta)
    fitted_exactly = np.max(np.abs(r - pi)) < 1e-8
    if fitted_exactly:
        raise SeparationError(f"Columns {columns} perfectly predict the missingness indicator")
    weights, count = cap_weights(pi, frame.r, cap)
    logger.debug(f"Logistic missingness model converged in {info['iterations']} iterations")
    return WeightEstimate(pi=pi, weights=weights, method=WeightMethod.PARAMETRIC, cap=cap, capped_count=count,
                          eta_hat=eta, screen_set=tuple(columns), diagnostics=info)


def _column_scale(t: np.ndarray) -> np.ndarray:
    scale = np.std(t, axis=0, ddof=1)
    if np.any(scale == 0) or not np.all(np.isfinite(scale)):
        raise NumericError('Kernel columns must vary to be standardized')
    return scale


def default_bandwidth(t: np.ndarray, rule: Union[BandwidthRule, str] = settings.BANDWIDTH_RULE) -> float:
    """Single bandwidth h = sigma_t * n^(-1/(s+2)).

    Under the pooled rule sigma_t is the standard deviation of every value
    of the kernel columns taken together and h applies to the raw columns.
    Under the standardized rule the columns are first scaled to unit
    standard deviation, so sigma_t is one.
    """
    n, s = t.shape
    rate = n ** (-1.0 / (s + 2))
    if BandwidthRule(rule) is BandwidthRule.STANDARDIZED:
        return float(rate)
    return float(np.std(t, ddof=1) * rate)


def kernel_probabilities(t: np.ndarray, r: np.ndarray, bandwidth: Union[float, np.ndarray]) -> np.ndarray:
    """Nadaraya-Watson smooth of r with a Gaussian product kernel.

    The normalizing constants of K_h cancel between numerator and
    denominator, so only the exponents are computed.
    """
    u = t / bandwidth
    n = len(r)
    r = np.asarray(r, dtype=float)
    pi = np.empty(n)
    for start in range(0, n, _KERNEL_BLOCK):
        stop = min(start + _KERNEL_BLOCK, n)
        log_k = -0.5 * cdist(u[start:stop], u, 'sqeuclidean')
        den = logsumexp(log_k, axis=1)
        if not np.all(np.isfinite(den)):
            raise NumericError('Zero kernel mass at some observation')
        with np.errstate(divide='ignore'):
            num = logsumexp(log_k, axis=1, b=r)
        pi[start:stop] = np.exp(num - den)
    return np.clip(pi, np.finfo(float).tiny, 1.0)


def fit_kernel_weights(frame: ModelFrame, columns: Sequence[str], bandwidth: Optional[float] = None,
                       cap: float = settings.WEIGHT_CAP,
                       rule: Union[BandwidthRule, str] = settings.BANDWIDTH_RULE) -> WeightEstimate:
    """Nonparametric complete-case probabilities from the always-observed columns.

    One scalar bandwidth serves every column. An explicit bandwidth is in
    the units the rule works in: raw columns for the pooled rule, unit-SD
    columns for the standardized one.
    """
    _check_has_complete(frame)
    rule = BandwidthRule(rule)
    columns = list(columns)
    if not columns:
        logger.warning('No screened columns; kernel weights fall back to the complete-case proportion')
        return _intercept_only(frame, WeightMethod.KERNEL, cap)
    t = _t_columns(frame, columns)
    if rule is BandwidthRule.STANDARDIZED:
        t = (t - t.mean(axis=0)) / _column_scale(t)
    h = default_bandwidth(t, rule) if bandwidth is None else float(bandwidth)
    if not np.isfinite(h) or h <= 0:
        raise NumericError(f"Bandwidth must be positive and finite, got {h}")
    pi = kernel_probabilities(t, frame.r, h)
    weights, count = cap_weights(pi, frame.r, cap)
    logger.debug(f"Kernel weights on {columns} with bandwidth {h:.4g} ({rule.value}); min pi {pi.min():.3g}")
    return WeightEstimate(pi=pi, weights=weights, method=WeightMethod.KERNEL, cap=cap, capped_count=count,
                          bandwidth=h, screen_set=tuple(columns), diagnostics={'bandwidth_rule': rule.value})


def _screen_design(values: np.ndarray, nonparametric: bool) -> np.ndarray:
    if not nonparametric:
        return values.reshape(-1, 1)
    lo, hi = values.min(), values.max()
    scaled = (values - lo) / (hi - lo)
    basis = SplineBasis(degree=3, internal_knots=place_knots(scaled, _SCREEN_KNOTS))
    return evaluate_basis(basis, scaled)


def _null_deviance(r: np.ndarray) -> float:
    p = r.mean()
    return float(-2.0 * len(r) * (p * np.log(p) + (1.0 - p) * np.log(1.0 - p)))


def _glm_deviance(r: np.ndarray, design: np.ndarray) -> Tuple[float, bool]:
    """Deviance of the logit GLM of r on [1, design]; second value flags separation."""
    exog = np.column_stack([np.ones(len(r)), design])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter('always')
        try:
            result = sm.GLM(r, exog, family=sm.families.Binomial()).fit()
        except Exception as e:
            logger.debug(f"Screening GLM failed: {e}")
            return 0.0, True
    separated = any('separation' in str(w.message).lower() for w in caught)
    deviance = float(result.deviance)
    fitted = np.asarray(result.fittedvalues)
    if not np.isfinite(deviance) or np.max(np.abs(r - fitted)) < 1e-6:
        separated = True
    return (0.0 if separated else deviance), separated


def screen_table(frame: ModelFrame, nonparametric: bool = False, alpha: float = settings.SCREEN_ALPHA) -> pd.DataFrame:
    """Univariate likelihood-ratio screening of every always-observed column.

    Each column is tested against the intercept-only logit model with a
    chi-square LR test; columns pass at level alpha / (number of columns).
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"Screening level must lie in (0, 1), got {alpha}")
    r = frame.r.astype(float)
    if r.min() == r.max():
        raise SeparationError('The missingness indicator is constant; nothing to screen')
    dev0 = _null_deviance(r)
    level = alpha / len(frame.t_names)
    rows = []
    for j, name in enumerate(frame.t_names):
        values = frame.t[:, j]
        if np.ptp(values) == 0:
            logger.warning(f"Screening skips constant column {name}")
            rows.append({'column': name, 'df': 0, 'lr': 0.0, 'p_value': 1.0, 'separated': False, 'selected': False})
            continue
        design = _screen_design(values, nonparametric)
        deviance, separated = _glm_deviance(r, design)
        if separated:
            logger.warning(f"Column {name} separates the missingness indicator; using the limiting LR statistic")
        lr = max(dev0 - deviance, 0.0)
        df = int(np.linalg.matrix_rank(np.column_stack([np.ones(frame.n), design]))) - 1
        p_value = float(stats.chi2.sf(lr, df))
        rows.append({'column': name, 'df': df, 'lr': lr, 'p_value': p_value,
                     'separated': separated, 'selected': p_value < level})
    return pd.DataFrame(rows, columns=['column', 'df', 'lr', 'p_value', 'separated', 'selected'])


def prune_screen_set(frame: ModelFrame, columns: Sequence[str], nonparametric: bool = False,
                     alpha: float = settings.SCREEN_ALPHA) -> Tuple[str, ...]:
    """Backward elimination of screened columns with joint LR tests.

    Each round fits the logit model on every kept column and drops the one
    whose removal is least significant, while its p-value is at or above
    the screening level alpha / (number of columns). Columns only ever
    leave the set.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"Screening level must lie in (0, 1), got {alpha}")
    r = frame.r.astype(float)
    level = alpha / len(frame.t_names)
    blocks = {name: _screen_design(_t_columns(frame, [name])[:, 0], nonparametric) for name in columns}
    kept = list(columns)
    while len(kept) > 1:
        full = np.column_stack([blocks[c] for c in kept])
        full_dev, separated = _glm_deviance(r, full)
        if separated:
            logger.warning(f"Joint missingness model on {kept} separates; using the limiting LR statistics")
        full_rank = np.linalg.matrix_rank(np.column_stack([np.ones(frame.n), full]))
        p_values = {}
        for name in kept:
            rest = np.column_stack([blocks[c] for c in kept if c != name])
            deviance, _ = _glm_deviance(r, rest)
            df = full_rank - np.linalg.matrix_rank(np.column_stack([np.ones(frame.n), rest]))
            p_values[name] = float(stats.chi2.sf(max(deviance - full_dev, 0.0), max(df, 1)))
        weakest = max(kept, key=lambda c: p_values[c])
        if p_values[weakest] < level:
            break
        logger.debug(f"Joint screening drops {weakest} (p = {p_values[weakest]:.3g})")
        kept.remove(weakest)
    return tuple(kept)


def screen_missing_model(frame: ModelFrame, nonparametric: bool = False,
                         alpha: float = settings.SCREEN_ALPHA, joint: bool = False) -> Tuple[str, ...]:
    """Always-observed columns significantly related to the missingness indicator.

    With joint set, the univariate selection is pruned to the columns that
    stay significant given the others.
    """
    table = screen_table(frame, nonparametric, alpha)
    selected = tuple(table.loc[table['selected'], 'column'])
    if joint and len(selected) > 1:
        selected = prune_screen_set(frame, selected, nonparametric, alpha)
    logger.info(f"Screening selected {list(selected)} from {len(table)} candidates")
    return selected


def missingness_summary(frame: ModelFrame, columns: Sequence[str]) -> pd.DataFrame:
    """Logistic regression of R on the given columns: estimate, SE, z and p per term."""
    r = frame.r.astype(float)
    if r.min() == r.max():
        raise SeparationError('The missingness indicator is constant; no missingness model to summarize')
    columns = list(columns)
    exog = pd.DataFrame(_t_columns(frame, columns), columns=columns) if columns else pd.DataFrame(index=range(frame.n))
    exog.insert(0, 'intercept', 1.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter('always')
        try:
            result = sm.Logit(r, exog).fit(disp=0, maxiter=MAX_NEWTON_ITER)
        except Exception as e:
            raise SeparationError(f"Logistic summary failed: {e}")
    if any('separation' in str(w.message).lower() for w in caught):
        raise SeparationError(f"Columns {columns} perfectly predict the missingness indicator")
    return pd.DataFrame({
        'term': exog.columns,
        'estimate': np.asarray(result.params),
        'std_error': np.asarray(result.bse),
        'z_value': np.asarray(result.tvalues),
        'p_value': np.asarray(result.pvalues),
    })


def estimate_weights(frame: ModelFrame, method: Union[WeightMethod, str], columns: Optional[Sequence[str]] = None,
                     bandwidth=None, cap: float = settings.WEIGHT_CAP, alpha: float = settings.SCREEN_ALPHA,
                     pi0=None, rule: Union[BandwidthRule, str] = settings.BANDWIDTH_RULE) -> WeightEstimate:
    """Weights by method name; columns None runs the screening first.

    Kernel weights screen with the spline-transformed test and keep only
    the columns that survive the joint pruning; parametric weights use the
    univariate linear screen. A frame without missing cells gets unit
    weights for every estimated method.
    """
    method = WeightMethod(method)
    if method is WeightMethod.NAIVE:
        return naive_weights(frame)
    if method is WeightMethod.TRUE:
        if pi0 is None:
            raise ConfigError('True weights need the known probabilities')
        return true_weights(frame, pi0, cap)
    if frame.r.min() == 1:
        logger.info(f"No missing cells; {method.value} weights are all one")
        return WeightEstimate(pi=np.ones(frame.n), weights=np.ones(frame.n), method=method, cap=cap,
                              diagnostics={'fallback': 'complete'})
    if columns is None:
        kernel = method is WeightMethod.KERNEL
        columns = screen_missing_model(frame, nonparametric=kernel, alpha=alpha, joint=kernel)
    if method is WeightMethod.PARAMETRIC:
        return fit_parametric_weights(frame, columns, cap)
    return fit_kernel_weights(frame, columns, bandwidth, cap, rule)
