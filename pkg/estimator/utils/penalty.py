"""
LASSO, SCAD and MCP penalties and their derivatives.
"""
from typing import Optional

import numpy as np
import pandas as pd

from ..models import PenaltyFamily, PenaltySpec


def penalty_value(spec: PenaltySpec, beta_abs):
    """p_lambda(|beta|), elementwise.

    SCAD: lambda*b on [0, lambda), (2a*lambda*b - b^2 - lambda^2) / (2(a-1)) on
    [lambda, a*lambda], (a+1)lambda^2/2 beyond. MCP: lambda*b - b^2/(2a) on
    [0, a*lambda), a*lambda^2/2 beyond.
    """
    b = np.abs(np.asarray(beta_abs, dtype=float))
    lam, a = spec.lam, spec.a
    if spec.family is PenaltyFamily.LASSO:
        out = lam * b
    elif spec.family is PenaltyFamily.SCAD:
        out = np.where(
            b < lam,
            lam * b,
            np.where(b <= a * lam,
                     (2 * a * lam * b - b ** 2 - lam ** 2) / (2 * (a - 1)),
                     (a + 1) * lam ** 2 / 2),
        )
    else:
        out = np.where(b < a * lam, lam * b - b ** 2 / (2 * a), a * lam ** 2 / 2)
    return out if out.ndim else float(out)


def penalty_derivative(spec: PenaltySpec, beta_abs):
    """p'_lambda(|beta|), elementwise; breakpoints take the left-branch value."""
    b = np.abs(np.asarray(beta_abs, dtype=float))
    lam, a = spec.lam, spec.a
    if spec.family is PenaltyFamily.LASSO:
        out = np.full_like(b, lam)
    elif spec.family is PenaltyFamily.SCAD:
        out = np.where(b <= lam, lam, np.where(b < a * lam, (a * lam - b) / (a - 1), 0.0))
    else:
        out = np.where(b < a * lam, lam - b / a, 0.0)
    return out if out.ndim else float(out)


def penalty_curve(family: PenaltyFamily, lam: float = 1.0, a: Optional[float] = None,
                  grid: Optional[np.ndarray] = None) -> pd.DataFrame:
    """Value and derivative of one penalty on a grid of |beta|."""
    spec = PenaltySpec(family, lam, a)
    if grid is None:
        grid = np.linspace(0.0, 2 * (spec.a or 3.7) * lam, 401)
    grid = np.asarray(grid, dtype=float)
    return pd.DataFrame({
        'beta': grid,
        'value': penalty_value(spec, grid),
        'derivative': penalty_derivative(spec, grid),
        'family': spec.family.value,
    })
