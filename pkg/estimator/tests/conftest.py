"""
Shared fixtures for the estimator tests.
"""
import logging

import numpy as np
import pandas as pd
import pytest

from estimator.models import FitConfig, PenaltyFamily, PenaltySpec
from estimator.utils.frame_loader import frame_from_arrays
from estimator.utils.ipw import naive_weights


def make_partial_linear(rng, n=200, p=4, missing=False, noise=0.3):
    """y = x1 - x2 + sin(2 pi z) + noise; with missing=True x1 is blanked depending on x3."""
    x = rng.standard_normal((n, p))
    z = rng.uniform(0.0, 1.0, (n, 1))
    y = x[:, 0] - x[:, 1] + np.sin(2 * np.pi * z[:, 0]) + noise * rng.standard_normal(n)
    x_names = tuple(f"x{j + 1}" for j in range(p))
    capable = ()
    if missing:
        pi = 1.0 / (1.0 + np.exp(-(1.0 + 1.5 * x[:, 2])))
        r = rng.uniform(size=n) < pi
        x = x.copy()
        x[~r, 0] = np.nan
        capable = ('x1',)
    return frame_from_arrays(y, x, z, x_names, ('z1',), 'y', capable)


@pytest.fixture(autouse=True)
def propagate_package_logs():
    """The CLI logging config stops propagation; caplog listens on the root logger."""
    for name in ('estimator', 'ipwqr'):
        logging.getLogger(name).propagate = True


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def complete_frame(rng):
    return make_partial_linear(rng)


@pytest.fixture
def missing_frame(rng):
    return make_partial_linear(rng, n=300, missing=True)


@pytest.fixture
def scad_config(complete_frame):
    return FitConfig(
        tau=0.5, weights=naive_weights(complete_frame), penalty=PenaltySpec(PenaltyFamily.SCAD, 0.05),
        lambda_grid=(0.02, 0.1), knot_grid=((1,),),
    )


@pytest.fixture
def write_csv(tmp_path):
    """Write a dict of columns (or a DataFrame) to a CSV in tmp_path and return its path."""
    def _write(data, name='data.csv', **kwargs):
        table = data if isinstance(data, pd.DataFrame) else pd.DataFrame(data)
        path = tmp_path / name
        table.to_csv(path, index=False, **kwargs)
        return path
    return _write
