"""
CSV ingestion and reshaping of model frames.
"""
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ipwqr import settings
from ..exceptions import ConfigError, ParseError
from ..models import ColumnRoles, MissingSpec, ModelFrame
from .splines import rescale

logger = logging.getLogger(__name__)


def _scale_for(values: np.ndarray, complete: np.ndarray) -> np.ndarray:
    """[min, max] of each column over complete cases (all observed rows if there are none)."""
    scale = np.zeros((values.shape[1], 2))
    for j in range(values.shape[1]):
        column = values[complete, j]
        column = column[np.isfinite(column)]
        if column.size == 0:
            column = values[np.isfinite(values[:, j]), j]
        if column.size == 0:
            scale[j] = (0.0, 1.0)
            continue
        scale[j] = (column.min(), column.max())
    return scale


def frame_from_arrays(y, x, z_raw, x_names: Sequence[str], z_names: Sequence[str],
                      response_name: str = 'y', missing_capable: Optional[Iterable[str]] = None,
                      z_scale: Optional[np.ndarray] = None) -> ModelFrame:
    """Build a ModelFrame from raw arrays, with NaN marking missing cells.

    missing_capable names the covariates allowed to hold missing cells; None
    infers them as every covariate column with at least one NaN. z columns
    are rescaled to [0, 1] with z_scale, or with the complete-case min/max
    when z_scale is None.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = len(y)
    x = np.asarray(x, dtype=float).reshape(n, -1) if np.size(x) else np.empty((n, 0))
    z_raw = np.asarray(z_raw, dtype=float).reshape(n, -1) if np.size(z_raw) else np.empty((n, 0))
    x_names, z_names = tuple(x_names), tuple(z_names)
    names = x_names + z_names
    if len(set(names + (response_name,))) != len(names) + 1:
        raise ConfigError(f"Duplicate column names: {names}")
    covariates = np.hstack([x, z_raw])

    missing_cells = np.isnan(covariates)
    if missing_capable is None:
        capable = tuple(j for j in range(len(names)) if missing_cells[:, j].any())
    else:
        wanted = set(missing_capable)
        unknown = sorted(wanted - set(names))
        if unknown:
            raise ConfigError(f"Unknown missing-capable columns: {unknown}")
        capable = tuple(j for j, name in enumerate(names) if name in wanted)
    observed = tuple(j for j in range(len(names)) if j not in capable)
    for j in observed:
        if missing_cells[:, j].any():
            row = int(np.flatnonzero(missing_cells[:, j])[0])
            raise ParseError('Missing cell in a column that is not missing-capable', row=row + 1, column=names[j])

    r = (~missing_cells[:, list(capable)].any(axis=1)).astype(int) if capable else np.ones(n, dtype=int)
    complete = r == 1

    if z_scale is None:
        z_scale = _scale_for(z_raw, complete)
    z = rescale(z_raw, z_scale) if z_raw.shape[1] else np.empty((n, 0))
    if z.size:
        # Rows outside the complete-case range never enter a spline fit
        outside = (z < 0.0) | (z > 1.0)
        if outside.any():
            rows = int(outside.any(axis=1).sum())
            logger.warning(f"Clamped {int(outside.sum())} z values in {rows} rows outside the complete-case range")
        z = np.where(np.isnan(z), np.nan, np.clip(z, 0.0, 1.0))

    t_names = (response_name,) + tuple(names[j] for j in observed)
    t = np.column_stack([y] + [covariates[:, j] for j in observed]) if observed else y.reshape(n, 1)
    return ModelFrame(
        y=y, x=x, z=z, r=r, t=t,
        x_names=x_names, z_names=z_names, t_names=t_names,
        response_name=response_name,
        missing=MissingSpec(missing_capable=capable, always_observed=observed),
        z_scale=z_scale, z_raw=z_raw,
    )


def _read_table(path: Union[str, Path]) -> pd.DataFrame:
    try:
        table = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ParseError(f"Empty CSV file: {path}")
    except pd.errors.ParserError as e:
        raise ParseError(f"Malformed CSV file {path}: {e}")
    if table.columns.empty:
        raise ParseError(f"No header row in {path}")
    return table


def _to_float(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return np.nan


def _numeric_column(table: pd.DataFrame, name: str, tokens: Sequence[str]) -> np.ndarray:
    raw = table[name].str.strip()
    missing = raw.eq('') | raw.isin(list(tokens))
    # float() parses correctly rounded, so exported '%.17g' cells read back bit-exact
    values = raw.where(~missing, 'nan').map(_to_float)
    bad = values.isna() & ~missing
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(f"Non-numeric value '{raw.iloc[row]}'", row=row + 1, column=name)
    return values.to_numpy(dtype=float)


def ingest_csv(path: Union[str, Path], roles: ColumnRoles, missing_tokens: Optional[Sequence[str]] = None) -> ModelFrame:
    """Read a CSV with a header row into a ModelFrame.

    Missing cells are empty fields or one of the missing tokens (settings
    default 'NA'). Row numbers in parse errors count data rows from 1.
    """
    tokens = settings.MISSING_TOKENS if missing_tokens is None else list(missing_tokens)
    table = _read_table(path)
    header = [str(c) for c in table.columns]
    assigned = [roles.response, *roles.linear, *roles.nonlinear, *roles.ignore]
    absent = [c for c in assigned if c not in header]
    if absent:
        raise ConfigError(f"Columns not in the header of {path}: {absent}")
    unassigned = [c for c in header if c not in assigned]
    if unassigned:
        raise ConfigError(f"Columns without a role: {unassigned}")

    y = _numeric_column(table, roles.response, tokens)
    if np.isnan(y).any():
        row = int(np.flatnonzero(np.isnan(y))[0])
        raise ParseError('The response must be observed in every row', row=row + 1, column=roles.response)
    x = np.column_stack([_numeric_column(table, c, tokens) for c in roles.linear]) if roles.linear else np.empty((len(y), 0))
    z = np.column_stack([_numeric_column(table, c, tokens) for c in roles.nonlinear]) if roles.nonlinear else np.empty((len(y), 0))

    frame = frame_from_arrays(y, x, z, roles.linear, roles.nonlinear, roles.response, roles.missing_capable)
    logger.info(f"Read {frame.n} rows from {path}: {frame.complete_case_count()} complete cases, "
                f"{frame.p} linear and {frame.d} nonlinear covariates")
    return frame


def read_header(path: Union[str, Path]) -> List[str]:
    return [str(c) for c in _read_table(path).columns]


def default_roles(header: Sequence[str], response: Optional[str] = None, linear: Sequence[str] = (),
                  nonlinear: Sequence[str] = (), ignore: Sequence[str] = (),
                  missing_capable: Optional[Sequence[str]] = None) -> ColumnRoles:
    """Role map with the omitted roles filled in from the header.

    Without a response the column named y is the response, or the first
    column when there is none. When neither linear nor nonlinear columns are
    given, every remaining column that is not ignored is linear.
    """
    header = list(header)
    if not response:
        response = 'y' if 'y' in header else header[0]
        logger.info(f"Using {response} as the response column")
    if not linear and not nonlinear:
        taken = {response, *ignore}
        linear = [c for c in header if c not in taken]
    return ColumnRoles(response=response, linear=tuple(linear), nonlinear=tuple(nonlinear), ignore=tuple(ignore),
                       missing_capable=tuple(missing_capable) if missing_capable else None)


def complete_case_count(frame: ModelFrame) -> int:
    return frame.complete_case_count()


def export_csv(frame: ModelFrame, path: Union[str, Path]) -> None:
    """Write the observed values back as CSV; missing cells become NA."""
    data = {frame.response_name: frame.y}
    for j, name in enumerate(frame.x_names):
        data[name] = frame.x[:, j]
    for j, name in enumerate(frame.z_names):
        data[name] = frame.z_raw[:, j]
    pd.DataFrame(data).to_csv(path, index=False, na_rep='NA', float_format='%.17g')


def roles_of(frame: ModelFrame) -> ColumnRoles:
    """Column roles that re-ingest an exported frame."""
    capable = tuple(frame.covariate_names[j] for j in frame.missing.missing_capable)
    return ColumnRoles(response=frame.response_name, linear=frame.x_names,
                       nonlinear=frame.z_names, missing_capable=capable)


def _raw_covariates(frame: ModelFrame) -> Tuple[np.ndarray, Tuple[str, ...]]:
    return np.hstack([frame.x, frame.z_raw]), frame.covariate_names


def regroup(frame: ModelFrame, nonlinear: Sequence[str], scale: Optional[np.ndarray] = None) -> ModelFrame:
    """Move covariates between the linear and nonlinear blocks.

    Columns named in nonlinear form the z block (in the given order), every
    other covariate joins the x block in its current order. The complete-case
    indicator is unchanged.
    """
    values, names = _raw_covariates(frame)
    unknown = [c for c in nonlinear if c not in names]
    if unknown:
        raise ConfigError(f"Unknown covariates: {unknown}")
    linear = [c for c in names if c not in nonlinear]
    x = values[:, [names.index(c) for c in linear]]
    z = values[:, [names.index(c) for c in nonlinear]]
    capable = [names[j] for j in frame.missing.missing_capable]
    return frame_from_arrays(frame.y, x, z, linear, list(nonlinear), frame.response_name, capable, scale)


def take_rows(frame: ModelFrame, rows: np.ndarray, z_scale: Optional[np.ndarray] = None) -> ModelFrame:
    names = frame.covariate_names
    rows = np.asarray(rows)
    capable = [names[j] for j in frame.missing.missing_capable]
    return frame_from_arrays(frame.y[rows], frame.x[rows], frame.z_raw[rows], frame.x_names, frame.z_names,
                             frame.response_name, capable, z_scale)


def split(frame: ModelFrame, test_rows: Sequence[int]) -> Tuple[ModelFrame, ModelFrame]:
    """Partition into (train, test); each part gets its own z rescaling."""
    test_mask = np.zeros(frame.n, dtype=bool)
    test_mask[np.asarray(test_rows, dtype=int)] = True
    if test_mask.all() or not test_mask.any():
        raise ConfigError('A split needs at least one train row and one test row')
    return take_rows(frame, np.flatnonzero(~test_mask)), take_rows(frame, np.flatnonzero(test_mask))


def column_list(value: Union[str, Sequence[str], None]) -> List[str]:
    """Comma-separated names (as given on the command line) to a list."""
    if value is None:
        return []
    if isinstance(value, str):
        return [c.strip() for c in value.split(',') if c.strip()]
    return list(value)
