"""
B-spline bases for the nonlinear covariates.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.interpolate import BSpline

from ipwqr import settings
from ..exceptions import ConfigError, DomainError
from ..models import ModelFrame, SplineBasis

logger = logging.getLogger(__name__)

_EDGE_TOL = 1e-12


def place_knots(values: np.ndarray, k: int) -> Tuple[float, ...]:
    """Internal knots at the j/(k+1) sample quantiles of the observed values.

    Tied quantiles (and quantiles on the boundary) collapse, so fewer than k
    knots may come back.
    """
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if k <= 0 or values.size == 0:
        return ()
    probs = np.arange(1, k + 1) / (k + 1)
    quantiles = np.quantile(values, probs)
    knots = np.unique(quantiles[(quantiles > 0.0) & (quantiles < 1.0)])
    if len(knots) < k:
        logger.warning(f"Requested {k} internal knots but ties left {len(knots)}")
    return tuple(float(v) for v in knots)


def _full_basis(basis: SplineBasis, z: np.ndarray) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if np.isnan(z).any():
        raise DomainError('Spline argument is missing')
    if z.size and (z.min() < -_EDGE_TOL or z.max() > 1.0 + _EDGE_TOL):
        raise DomainError(f"Spline argument outside [0, 1]: range [{z.min()}, {z.max()}]")
    z = np.clip(z, 0.0, 1.0)
    if basis.degree == 0:
        # design_matrix needs degree >= 1; a step basis is an interval lookup
        edges = np.concatenate([[0.0], basis.internal_knots, [1.0]])
        index = np.clip(np.searchsorted(edges, z, side='right') - 1, 0, len(edges) - 2)
        out = np.zeros((len(z), len(edges) - 1))
        out[np.arange(len(z)), index] = 1.0
        return out
    return BSpline.design_matrix(z, basis.knot_vector, basis.degree, extrapolate=False).toarray()


def evaluate_full(basis: SplineBasis, z) -> np.ndarray:
    """All L + 1 basis functions b_0..b_L at z (rows sum to one)."""
    return _full_basis(basis, z)


def evaluate_basis(basis: SplineBasis, z) -> np.ndarray:
    """Components b_1..b_L at z; b_0 is dropped to avoid collinearity with the constant.

    Scalar z returns a vector of length L, array z an (n, L) matrix.
    """
    out = _full_basis(basis, z)[:, 1:]
    return out[0] if np.ndim(z) == 0 else out


@dataclass
class SplineDesign:
    """Design block [1, b(z_1), ..., b(z_d)] with its column layout."""
    matrix: np.ndarray
    bases: List[SplineBasis]
    blocks: List[slice] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.matrix.shape[1]


def bases_for_frame(frame: ModelFrame, per_variable_knots: Sequence[int], degree: int) -> List[SplineBasis]:
    """Quantile-placed bases, knots taken from the complete cases of each z column."""
    if degree < 1:
        raise ConfigError(f"Spline degree must be at least 1, got {degree}")
    if len(per_variable_knots) != frame.d:
        raise ConfigError(f"Got {len(per_variable_knots)} knot counts for {frame.d} nonlinear variables")
    bases = []
    for j, k in enumerate(per_variable_knots):
        knots = place_knots(frame.z[frame.complete, j], int(k))
        bases.append(SplineBasis(degree=degree, internal_knots=knots))
    return bases


def design_from_bases(z: np.ndarray, bases: Sequence[SplineBasis]) -> SplineDesign:
    """Evaluate bases on the rows of z; rows with a missing cell come back as NaN."""
    z = np.asarray(z, dtype=float).reshape(len(z), -1)
    n = z.shape[0]
    observed = ~np.isnan(z).any(axis=1) if z.shape[1] else np.ones(n, dtype=bool)
    columns = [np.ones((n, 1))]
    blocks = []
    start = 1
    for j, basis in enumerate(bases):
        block = np.full((n, basis.width), np.nan)
        if observed.any():
            block[observed] = evaluate_basis(basis, z[observed, j].reshape(-1))
        columns.append(block)
        blocks.append(slice(start, start + basis.width))
        start += basis.width
    return SplineDesign(matrix=np.hstack(columns), bases=list(bases), blocks=blocks)


def build_design(frame: ModelFrame, per_variable_knots: Sequence[int], degree: int = settings.SPLINE_DEGREE) -> SplineDesign:
    """n x (1 + sum_j L_j) design: the constant column, then one basis block per z column."""
    if frame.d < 1:
        raise ConfigError('build_design needs at least one nonlinear covariate')
    bases = bases_for_frame(frame, per_variable_knots, degree)
    return design_from_bases(frame.z, bases)


@dataclass
class AdditiveFunction:
    """Fitted g(z) = b(z)' xi, intercept included.

    z_scale maps raw covariate values onto [0, 1]; raw values outside the
    fitted range are clamped.
    """
    bases: List[SplineBasis]
    xi: np.ndarray
    z_scale: np.ndarray

    def __call__(self, z) -> np.ndarray:
        return self.evaluate(z)

    @property
    def intercept(self) -> float:
        return float(self.xi[0])

    def evaluate(self, z) -> np.ndarray:
        """g at rescaled z (n x d, entries in [0, 1])."""
        z = np.asarray(z, dtype=float)
        if not self.bases:
            n = z.shape[0] if z.ndim else 1
            return np.full(n, self.intercept)
        z = z.reshape(-1, len(self.bases))
        return design_from_bases(z, self.bases).matrix @ self.xi

    def evaluate_raw(self, z_raw) -> np.ndarray:
        """g at raw covariate values, rescaled with z_scale and clamped to [0, 1]."""
        z_raw = np.asarray(z_raw, dtype=float)
        if not self.bases:
            return np.full(z_raw.shape[0], self.intercept)
        z_raw = z_raw.reshape(-1, len(self.bases))
        z = rescale(z_raw, self.z_scale, clamp=True)
        return self.evaluate(z)

    def component(self, j: int, grid: np.ndarray) -> np.ndarray:
        """Contribution of variable j alone on a grid of rescaled values."""
        grid = np.asarray(grid, dtype=float)
        start = 1 + sum(b.width for b in self.bases[:j])
        coef = self.xi[start:start + self.bases[j].width]
        return evaluate_basis(self.bases[j], grid) @ coef


def rescale(values: np.ndarray, scale: np.ndarray, clamp: bool = False) -> np.ndarray:
    """Affine map of each column from [lo, hi] onto [0, 1]."""
    values = np.asarray(values, dtype=float)
    scale = np.asarray(scale, dtype=float).reshape(-1, 2)
    lo, hi = scale[:, 0], scale[:, 1]
    span = np.where(hi > lo, hi - lo, 1.0)
    out = (values - lo) / span
    if clamp:
        outside = (out < 0.0) | (out > 1.0)
        if np.any(outside):
            logger.warning(f"Clamped {int(outside.sum())} covariate values outside the fitted range")
        out = np.where(np.isnan(out), np.nan, np.clip(out, 0.0, 1.0))
    return out
