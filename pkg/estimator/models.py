"""
Domain types for weighted partial-linear quantile regression.
"""
import enum
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ipwqr import settings
from .exceptions import ConfigError, NumericError


def _frozen(array, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ColumnRoles:
    """Role map for CSV ingestion.

    Every header column must appear in exactly one of response, linear,
    nonlinear or ignore. When missing_capable is None it is inferred from the
    data: any covariate column with at least one missing cell.
    """
    response: str
    linear: Tuple[str, ...] = ()
    nonlinear: Tuple[str, ...] = ()
    ignore: Tuple[str, ...] = ()
    missing_capable: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        seen = [self.response, *self.linear, *self.nonlinear, *self.ignore]
        duplicated = sorted({c for c in seen if seen.count(c) > 1})
        if duplicated:
            raise ConfigError(f"Columns assigned more than one role: {duplicated}")
        if self.missing_capable is not None:
            covariates = set(self.linear) | set(self.nonlinear)
            stray = sorted(set(self.missing_capable) - covariates)
            if stray:
                raise ConfigError(f"Missing-capable columns must be covariates: {stray}")

    @property
    def covariates(self) -> Tuple[str, ...]:
        return tuple(self.linear) + tuple(self.nonlinear)


@dataclass(frozen=True)
class MissingSpec:
    """Split of covariate columns into the missing-capable and always-observed blocks.

    Indices refer to the covariate order x columns then z columns.
    """
    missing_capable: Tuple[int, ...]
    always_observed: Tuple[int, ...]

    def __post_init__(self):
        m, a = set(self.missing_capable), set(self.always_observed)
        if m & a:
            raise ConfigError(f"Columns both missing-capable and always observed: {sorted(m & a)}")
        covered = m | a
        if covered != set(range(len(covered))):
            raise ConfigError("Missing-capable and always-observed blocks must cover every covariate")


@dataclass(frozen=True, eq=False)
class ModelFrame:
    """Observed data with missingness bookkeeping.

    Missing cells hold NaN and are never read by an estimator: every
    estimator gives rows with r == 0 zero weight. z columns are rescaled to
    [0, 1] with z_scale (observed min/max over complete cases); the raw values
    are kept for export and for moving columns between blocks.
    """
    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    r: np.ndarray
    t: np.ndarray
    x_names: Tuple[str, ...]
    z_names: Tuple[str, ...]
    t_names: Tuple[str, ...]
    response_name: str
    missing: MissingSpec
    z_scale: np.ndarray
    z_raw: np.ndarray

    def __post_init__(self):
        n = len(self.y)
        object.__setattr__(self, 'y', _frozen(self.y))
        object.__setattr__(self, 'x', _frozen(np.reshape(self.x, (n, -1)) if np.size(self.x) else np.empty((n, 0))))
        object.__setattr__(self, 'z', _frozen(np.reshape(self.z, (n, -1)) if np.size(self.z) else np.empty((n, 0))))
        object.__setattr__(self, 'z_raw', _frozen(np.reshape(self.z_raw, (n, -1)) if np.size(self.z_raw) else np.empty((n, 0))))
        object.__setattr__(self, 'r', _frozen(self.r, dtype=int))
        object.__setattr__(self, 't', _frozen(np.reshape(self.t, (n, -1))))
        object.__setattr__(self, 'z_scale', _frozen(np.reshape(self.z_scale, (-1, 2)) if np.size(self.z_scale) else np.empty((0, 2))))
        if self.x.shape[1] != len(self.x_names) or self.z.shape[1] != len(self.z_names):
            raise ConfigError('Column names do not match the covariate blocks')
        if not np.all(np.isfinite(self.y)):
            raise NumericError('The response must be observed in every row')
        if self.t.shape[1] == 0 or not np.array_equal(self.t[:, 0], self.y):
            raise ConfigError('The always-observed block must start with the response')

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def d(self) -> int:
        return self.z.shape[1]

    @property
    def covariate_names(self) -> Tuple[str, ...]:
        return tuple(self.x_names) + tuple(self.z_names)

    @property
    def complete(self) -> np.ndarray:
        """Boolean mask of complete cases."""
        return self.r == 1

    def complete_case_count(self) -> int:
        return int(self.r.sum())

    def covariate(self, name: str, raw: bool = True) -> np.ndarray:
        """Values of one covariate column (raw scale unless raw=False for z)."""
        if name in self.x_names:
            return self.x[:, self.x_names.index(name)]
        if name in self.z_names:
            j = self.z_names.index(name)
            return self.z_raw[:, j] if raw else self.z[:, j]
        raise ConfigError(f"Unknown covariate: {name}")

    def assert_observed(self, weights: np.ndarray) -> None:
        """Poison check: rows carrying weight must not touch a missing cell."""
        if not settings.DEBUG:
            return
        used = np.asarray(weights) > 0
        if np.isnan(self.x[used]).any() or np.isnan(self.z[used]).any():
            raise NumericError('An estimator read a missing cell (row with r == 0 carries weight)')


@dataclass(frozen=True)
class SplineBasis:
    """Normalized B-spline basis on [0, 1] with b_0 dropped.

    width is L = k_n + degree, the number of returned columns.
    """
    degree: int
    internal_knots: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.degree < 0:
            raise ConfigError('Spline degree must be non-negative')
        knots = tuple(float(k) for k in self.internal_knots)
        if any(k <= 0.0 or k >= 1.0 for k in knots) or list(knots) != sorted(knots):
            raise ConfigError('Internal knots must be sorted and lie strictly inside (0, 1)')
        object.__setattr__(self, 'internal_knots', knots)

    @property
    def k(self) -> int:
        return len(self.internal_knots)

    @property
    def width(self) -> int:
        return self.k + self.degree

    @property
    def knot_vector(self) -> np.ndarray:
        boundary = self.degree + 1
        return np.concatenate([np.zeros(boundary), self.internal_knots, np.ones(boundary)])


class PenaltyFamily(str, enum.Enum):
    LASSO = 'lasso'
    SCAD = 'scad'
    MCP = 'mcp'


DEFAULT_SHAPE = {PenaltyFamily.SCAD: 3.7, PenaltyFamily.MCP: 3.0}


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty family, tuning parameter lambda and shape a."""
    family: PenaltyFamily
    lam: float
    a: Optional[float] = None

    def __post_init__(self):
        family = PenaltyFamily(self.family)
        object.__setattr__(self, 'family', family)
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.a is None:
            object.__setattr__(self, 'a', DEFAULT_SHAPE.get(family))
        if family is PenaltyFamily.SCAD and not self.a > 2:
            raise ConfigError(f"SCAD requires a > 2, got {self.a}")
        if family is PenaltyFamily.MCP and not self.a > 1:
            raise ConfigError(f"MCP requires a > 1, got {self.a}")

    def with_lambda(self, lam: float) -> 'PenaltySpec':
        return PenaltySpec(self.family, lam, self.a)


@dataclass(frozen=True, eq=False)
class QrProblem:
    """Weighted check-loss problem with per-coefficient L1 weights.

    The first n_linear columns are the penalized linear covariates; the rest
    (spline block including the constant) carry zero L1 weight. design_rank,
    when known, is the rank of the rows with positive weight.
    """
    design: np.ndarray
    response: np.ndarray
    tau: float
    obs_weights: np.ndarray
    l1_weights: np.ndarray
    n_linear: int = 0
    design_rank: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        design = np.asarray(self.design, dtype=float)
        if design.ndim == 1:
            design = design.reshape(-1, 1)
        object.__setattr__(self, 'design', design)
        object.__setattr__(self, 'response', np.asarray(self.response, dtype=float).ravel())
        object.__setattr__(self, 'obs_weights', np.asarray(self.obs_weights, dtype=float).ravel())
        object.__setattr__(self, 'l1_weights', np.asarray(self.l1_weights, dtype=float).ravel())
        n, m = design.shape
        if len(self.response) != n or len(self.obs_weights) != n or len(self.l1_weights) != m:
            raise ConfigError('QrProblem shapes do not agree')
        if np.any(self.obs_weights < 0) or np.any(self.l1_weights < 0):
            raise ConfigError('Observation and L1 weights must be non-negative')


@dataclass
class QrSolution:
    coef: np.ndarray
    objective: float
    active_set: Tuple[int, ...]
    diagnostics: Dict = field(default_factory=dict)


@dataclass
class SubgradientReport:
    """Result of checking the optimality conditions at a solution."""
    max_active: float
    max_inactive: float
    max_inactive_excess: float
    zero_residuals: int
    lam: float
    tol: float
    subgradient: np.ndarray = field(repr=False, default=None)

    @property
    def ok(self) -> bool:
        return (self.max_active <= self.tol
                and self.max_inactive <= self.lam + self.tol
                and self.max_inactive_excess <= self.tol)


class WeightMethod(str, enum.Enum):
    NAIVE = 'naive'
    TRUE = 'true'
    PARAMETRIC = 'parametric'
    KERNEL = 'kernel'


class BandwidthRule(str, enum.Enum):
    """How the default kernel bandwidth scales the columns."""
    POOLED = 'pooled'
    STANDARDIZED = 'standardized'


@dataclass(eq=False)
class WeightEstimate:
    """Per-observation inverse-probability weights r_i / pi_i, capped."""
    pi: np.ndarray
    weights: np.ndarray
    method: WeightMethod
    cap: float = settings.WEIGHT_CAP
    capped_count: int = 0
    eta_hat: Optional[np.ndarray] = None
    bandwidth: Optional[float] = None
    screen_set: Tuple[str, ...] = ()
    diagnostics: Dict = field(default_factory=dict)


@dataclass
class FitConfig:
    """Settings shared by every fit on a frame.

    lambda_grid None means the automatic log-spaced grid below lambda_max.
    knot_grid holds one tuple of candidate internal-knot counts per
    nonlinear variable.
    """
    tau: float
    weights: WeightEstimate
    penalty: Optional[PenaltySpec] = None
    lambda_grid: Optional[Sequence[float]] = None
    knot_grid: Optional[Sequence[Sequence[int]]] = None
    degree: int = settings.SPLINE_DEGREE
    lla_tol: float = settings.LLA_TOL
    lla_max_iter: int = settings.LLA_MAX_ITER
    n_lambda: int = settings.N_LAMBDA
    n_jobs: int = 1

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if not self.lla_tol > 0:
            raise ConfigError('lla_tol must be positive')
        if self.lla_max_iter < 1 or self.n_lambda < 1:
            raise ConfigError('lla_max_iter and n_lambda must be at least 1')
        if self.lambda_grid is not None:
            grid = [float(v) for v in self.lambda_grid]
            if self.penalty is not None and not grid:
                raise ConfigError('lambda_grid must be non-empty when a penalty is set')
            if any(v <= 0 for v in grid):
                raise ConfigError('lambda_grid values must be positive')
            self.lambda_grid = tuple(grid)
        if self.knot_grid is not None:
            self.knot_grid = tuple(tuple(int(k) for k in ks) for ks in self.knot_grid)
            if any(not ks or min(ks) < 0 for ks in self.knot_grid):
                raise ConfigError('Each knot grid must be a non-empty set of non-negative counts')

    def knot_candidates(self, d: int) -> Tuple[Tuple[int, ...], ...]:
        if self.knot_grid is None:
            return tuple((0, 1, 2) for _ in range(d))
        if len(self.knot_grid) != d:
            raise ConfigError(f"knot_grid has {len(self.knot_grid)} entries for {d} nonlinear variables")
        return self.knot_grid


@dataclass(eq=False)
class FitResult:
    """A fitted additive partial-linear quantile model.

    ghat includes the intercept; active_set lists j with beta_j != 0.
    """
    beta: np.ndarray
    xi: np.ndarray
    active_set: Tuple[int, ...]
    ghat: Callable
    objective: float
    tau: float
    x_names: Tuple[str, ...] = ()
    z_names: Tuple[str, ...] = ()
    selected_lambda: Optional[float] = None
    selected_knots: Tuple[int, ...] = ()
    qbic_value: Optional[float] = None
    weight_method: Optional[WeightMethod] = None
    converged: bool = True
    iterations: int = 0
    objective_trace: List[float] = field(default_factory=list)
    descent_ok: bool = True
    score_table: Optional[pd.DataFrame] = None
    diagnostics: Dict = field(default_factory=dict)

    @property
    def nu(self) -> int:
        """Parameter count used by the BIC criteria."""
        return len(self.active_set) + sum(b.width for b in getattr(self.ghat, 'bases', ()))

    def linear_predictor(self, frame: ModelFrame) -> np.ndarray:
        if frame.p == 0:
            return np.zeros(frame.n)
        return frame.x @ self.beta

    def predict(self, frame: ModelFrame) -> np.ndarray:
        """x' beta + g(z) for each row; NaN where a covariate is missing."""
        return self.linear_predictor(frame) + self.ghat.evaluate_raw(frame.z_raw)


class DesignationKind(str, enum.Enum):
    INTERCEPT_ONLY = 'intercept-only'
    LINEAR = 'linear'
    NONLINEAR = 'nonlinear'


@dataclass
class Designation:
    variable: str
    kind: DesignationKind
    knots: Optional[int] = None
    scores: Dict[str, float] = field(default_factory=dict)

    @property
    def is_linear(self) -> bool:
        """Intercept-only and linear winners both enter the linear block."""
        return self.kind is not DesignationKind.NONLINEAR

    @property
    def weak_signal(self) -> bool:
        return self.kind is DesignationKind.INTERCEPT_ONLY


@dataclass
class PipelineConfig:
    """Options for the designate-then-fit prediction interval workflow."""
    weight_method: WeightMethod = WeightMethod.KERNEL
    penalty: PenaltyFamily = PenaltyFamily.SCAD
    a: Optional[float] = None
    lambda_grid: Optional[Sequence[float]] = None
    n_lambda: int = settings.N_LAMBDA
    cap: float = settings.WEIGHT_CAP
    screen_alpha: float = settings.SCREEN_ALPHA
    degree: int = settings.SPLINE_DEGREE
    designate: bool = True
    n_jobs: int = 1


@dataclass
class IntervalReport:
    capture_rate: float
    mean_length: float
    sd_length: float
    crossing_count: int = 0
    scored_rows: int = 0
    skipped_rows: int = 0
    designations: Dict[str, str] = field(default_factory=dict)
    rows: Optional[pd.DataFrame] = None


class ErrorModel(str, enum.Enum):
    T3 = 't3'
    HETERO_NORMAL = 'hetero'


class MissingModel(int, enum.Enum):
    MODEL1 = 1
    MODEL2 = 2


class SimMethod(str, enum.Enum):
    FULL = 'full'
    NAIVE = 'naive'
    PARAMETRIC = 'parametric'
    KERNEL = 'kernel'
    TRUE = 'true'
    ORACLE = 'oracle'


METHOD_LABELS = {
    SimMethod.FULL: 'SCAD Full',
    SimMethod.NAIVE: 'SCAD Naive',
    SimMethod.PARAMETRIC: 'SCAD P Wt',
    SimMethod.KERNEL: 'SCAD K Wt',
    SimMethod.TRUE: 'SCAD True Wt',
    SimMethod.ORACLE: 'Oracle K Wt',
}


@dataclass
class SimConfig:
    n: int = 200
    p: int = 8
    tau: float = 0.5
    error_model: ErrorModel = ErrorModel.T3
    missing_model: MissingModel = MissingModel.MODEL1
    replications: int = 300
    seed: int = 0
    methods: Tuple[SimMethod, ...] = (SimMethod.FULL, SimMethod.NAIVE, SimMethod.PARAMETRIC, SimMethod.KERNEL)
    knot_grid: Tuple[Tuple[int, ...], ...] = ((0, 1, 2), (0, 1, 2))
    lambda_grid: Optional[Sequence[float]] = None
    n_lambda: int = settings.N_LAMBDA
    penalty: PenaltyFamily = PenaltyFamily.SCAD
    a: Optional[float] = None
    cap: float = settings.WEIGHT_CAP
    screen_alpha: float = settings.SCREEN_ALPHA
    n_jobs: int = settings.THREADS

    def __post_init__(self):
        self.error_model = ErrorModel(self.error_model)
        self.missing_model = MissingModel(int(self.missing_model))
        self.methods = tuple(SimMethod(m) for m in self.methods)
        self.penalty = PenaltyFamily(self.penalty)
        if self.p < 8:
            raise ConfigError('The generating mechanism needs p >= 8')
        if self.n < 50:
            raise ConfigError('n must be at least 50')
        if self.replications < 1:
            raise ConfigError('replications must be at least 1')
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")


@dataclass(eq=False)
class SimTruth:
    """Known truth of one simulated replication."""
    beta: np.ndarray
    support: Tuple[int, ...]
    g0: np.ndarray
    z_full: np.ndarray
    pi0: np.ndarray


@dataclass(eq=False)
class Replication:
    index: int
    frame: ModelFrame
    full_frame: ModelFrame
    truth: SimTruth


@dataclass
class ReplicationScore:
    rep: int
    method: SimMethod
    r_n: int
    tv: int = 0
    fv: int = 0
    true_model: bool = False
    aade: float = float('nan')
    beta_hat: Optional[np.ndarray] = None
    converged: bool = True
    descent_ok: bool = True
    failed: bool = False
    error: str = ''


@dataclass
class SimReport:
    """Per-method summary table plus the raw per-replication log."""
    config: SimConfig
    table: pd.DataFrame
    raw: pd.DataFrame
    failures: Dict[str, int] = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        """True when more than 1% of replications failed for some method."""
        limit = 0.01 * self.config.replications
        return any(count > limit for count in self.failures.values())

    def row(self, method: SimMethod) -> pd.Series:
        return self.table.loc[METHOD_LABELS[SimMethod(method)]]
