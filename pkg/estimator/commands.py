"""
Handlers for the command-line subcommands.

Each handler takes the parsed argument namespace, runs one workflow and
writes its CSV tables; it returns the process exit code.
"""
from argparse import Namespace
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from .exceptions import ConfigError
from .models import (
    ColumnRoles, FitConfig, PenaltyFamily, PenaltySpec, PipelineConfig, SimConfig, SimMethod, WeightMethod,
)
from .serializers import (
    DataFrameSerializer, DesignationSerializer, FitResultSerializer, IntervalReportSerializer,
    SimReportSerializer,
)
from .utils.fit_engine import designate_all, prediction_interval, repeated_prediction_intervals, select_fit
from .utils.frame_loader import column_list, default_roles, ingest_csv, read_header
from .utils.ipw import estimate_weights, missingness_summary, screen_table
from .utils.penalty import penalty_curve
from .utils.simlab import run_experiment


def parse_grid(value: Optional[str]) -> Optional[Tuple[float, ...]]:
    """'0.1,0.01' -> (0.1, 0.01)."""
    if not value:
        return None
    try:
        return tuple(float(v) for v in value.split(',') if v.strip())
    except ValueError:
        raise ConfigError(f"Not a comma-separated list of numbers: {value}")


def parse_knots(value: Optional[str], d: int) -> Optional[Tuple[Tuple[int, ...], ...]]:
    """'0,1,2' applies to every nonlinear variable; '0,1;2' gives one set per variable."""
    if not value:
        return None
    try:
        groups = [tuple(int(k) for k in part.split(',') if k.strip()) for part in value.split(';')]
    except ValueError:
        raise ConfigError(f"Knot counts must be integers: {value}")
    if len(groups) == 1:
        return tuple(groups[0] for _ in range(d))
    if len(groups) != d:
        raise ConfigError(f"Got {len(groups)} knot sets for {d} nonlinear variables")
    return tuple(groups)


def _roles(args: Namespace, path: str) -> ColumnRoles:
    return default_roles(
        read_header(path),
        response=args.response,
        linear=column_list(args.linear),
        nonlinear=column_list(args.nonlinear),
        ignore=column_list(args.ignore),
        missing_capable=column_list(args.missing) or None,
    )


def _tokens(args: Namespace) -> Optional[List[str]]:
    return column_list(args.missing_tokens) or None


def _load(path: str, args: Namespace):
    return ingest_csv(path, _roles(args, path), _tokens(args))


def _known_pi(path: str, args: Namespace) -> Optional[np.ndarray]:
    if not getattr(args, 'pi0_column', None):
        return None
    if args.pi0_column not in column_list(args.ignore):
        raise ConfigError('--pi0-column must also be listed in --ignore')
    table = pd.read_csv(path, usecols=[args.pi0_column])
    return table[args.pi0_column].to_numpy(dtype=float)


def _weights(frame, args: Namespace, path: str):
    columns = column_list(args.screen_columns) or None
    return estimate_weights(frame, args.weights, columns=columns, bandwidth=args.bandwidth,
                            cap=args.cap, alpha=args.screen_alpha, pi0=_known_pi(path, args),
                            rule=args.bandwidth_rule)


def _penalty(args: Namespace) -> Optional[PenaltySpec]:
    if args.penalty == 'none':
        return None
    return PenaltySpec(PenaltyFamily(args.penalty), 1.0, args.a)


def fit_command(args: Namespace) -> int:
    frame = _load(args.data, args)
    weights = _weights(frame, args, args.data)
    config = FitConfig(
        tau=args.tau, weights=weights, penalty=_penalty(args), lambda_grid=parse_grid(args.lambda_grid),
        knot_grid=parse_knots(args.knots, frame.d), degree=args.degree, n_lambda=args.n_lambda,
        n_jobs=args.threads,
    )
    fit = select_fit(frame, config)
    FitResultSerializer(fit, points=args.grid_points).save(args.out)
    return 0


def simulate_command(args: Namespace) -> int:
    methods = tuple(SimMethod(m) for m in column_list(args.methods))
    config = SimConfig(
        n=args.n, p=args.p, tau=args.tau, error_model=args.error, missing_model=args.missing_model,
        replications=args.reps, seed=args.seed, methods=methods,
        knot_grid=parse_knots(args.knots, 2) or ((0, 1, 2), (0, 1, 2)),
        lambda_grid=parse_grid(args.lambda_grid), n_lambda=args.n_lambda, penalty=args.penalty,
        a=args.a, cap=args.cap, screen_alpha=args.screen_alpha, n_jobs=args.threads,
    )
    report = run_experiment(config)
    SimReportSerializer(report).save(args.out)
    return 0


def screen_command(args: Namespace) -> int:
    frame = _load(args.data, args)
    table = screen_table(frame, nonparametric=args.nonparametric, alpha=args.screen_alpha)
    tables = {'screen': table}
    if args.summary:
        selected = list(table.loc[table['selected'], 'column'])
        tables['missingness_model'] = missingness_summary(frame, selected)
    for name, t in tables.items():
        DataFrameSerializer(t, name).save(args.out)
    return 0


def _pipeline(args: Namespace, method: str) -> PipelineConfig:
    return PipelineConfig(
        weight_method=WeightMethod(method), penalty=PenaltyFamily(args.penalty), a=args.a,
        lambda_grid=parse_grid(args.lambda_grid), n_lambda=args.n_lambda, cap=args.cap,
        screen_alpha=args.screen_alpha, designate=not args.no_designate, n_jobs=args.threads,
    )


def predict_command(args: Namespace) -> int:
    if args.data:
        frame = _load(args.data, args)
        methods = column_list(args.methods) or [args.weights]
        summary = repeated_prediction_intervals(
            frame, args.lo, args.hi, _pipeline(args, methods[0]), partitions=args.partitions,
            test_size=args.test_size, seed=args.seed, methods=[WeightMethod(m) for m in methods],
        )
        DataFrameSerializer(summary, 'intervals', index=True).save(args.out)
        return 0
    if not (args.train and args.test):
        raise ConfigError('predict needs --train and --test, or --data for random partitions')
    train, test = _load(args.train, args), _load(args.test, args)
    report = prediction_interval(train, test, args.lo, args.hi, _pipeline(args, args.weights))
    IntervalReportSerializer(report).save(args.out)
    return 0


def designate_command(args: Namespace) -> int:
    frame = _load(args.data, args)
    weights = _weights(frame, args, args.data)
    variables = column_list(args.variables) or None
    designations = designate_all(frame, args.tau, weights, variables)
    DesignationSerializer(designations).save(args.out)
    return 0


def penalty_curve_command(args: Namespace) -> int:
    family = PenaltyFamily(args.family)
    spec = PenaltySpec(family, args.lam, args.a)
    top = args.max if args.max is not None else 2 * (spec.a or 3.7) * args.lam
    curve = penalty_curve(family, args.lam, args.a, np.linspace(0.0, top, args.points))
    DataFrameSerializer(curve, 'penalty_curve').save(args.out)
    return 0


COMMANDS = {
    'fit': fit_command,
    'simulate': simulate_command,
    'screen': screen_command,
    'predict': predict_command,
    'designate': designate_command,
    'penalty-curve': penalty_curve_command,
}
