"""
Command-line entry point: argument parsing, config files and dispatch.
"""
import argparse
import logging
import logging.config
import sys
from typing import List, Optional, Sequence

from dotenv import dotenv_values

from ipwqr import settings

logger = logging.getLogger(__name__)

USAGE_ERROR = 2
RUNTIME_ERROR = 1

_WEIGHTS = ['naive', 'parametric', 'kernel', 'true']
_PENALTIES = ['lasso', 'scad', 'mcp']


class UsageError(Exception):
    """Raised instead of exiting so dispatch() can return the usage exit code."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='KEY=value file whose entries override command-line flags')
    parser.add_argument('--threads', type=int, default=settings.THREADS,
                        help='worker processes for grids and replications (default: %(default)s)')
    parser.add_argument('--seed', type=int, default=0, help='random seed (default: %(default)s)')
    parser.add_argument('--out', help='output directory for CSV tables (default: main table to stdout)')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='warnings and errors only')


def _add_roles(parser: argparse.ArgumentParser, data: bool = True) -> None:
    if data:
        parser.add_argument('data', help='CSV file with a header row')
    parser.add_argument('--response', help='response column (default: the column named y, else the first column)')
    parser.add_argument('--linear', default='',
                        help='comma-separated linear covariates (default: all unassigned columns if --nonlinear is empty)')
    parser.add_argument('--nonlinear', default='', help='comma-separated nonlinear covariates')
    parser.add_argument('--ignore', default='', help='comma-separated columns to skip')
    parser.add_argument('--missing', default='',
                        help='comma-separated missing-capable covariates (default: inferred from the data)')
    parser.add_argument('--missing-tokens', default=','.join(settings.MISSING_TOKENS),
                        help='comma-separated cell values read as missing (default: %(default)s)')


def _add_weights(parser: argparse.ArgumentParser, full: bool = True) -> None:
    parser.add_argument('--weights', choices=_WEIGHTS, default='kernel', help='weighting method (default: %(default)s)')
    parser.add_argument('--cap', type=float, default=settings.WEIGHT_CAP, help='weight cap (default: %(default)s)')
    parser.add_argument('--screen-alpha', type=float, default=settings.SCREEN_ALPHA,
                        help='family-wise level of the screening tests (default: %(default)s)')
    if full:
        parser.add_argument('--bandwidth', type=float, help='kernel bandwidth (default: sd * n^(-1/(s+2)))')
        parser.add_argument('--bandwidth-rule', choices=['pooled', 'standardized'], default=settings.BANDWIDTH_RULE,
                            help='scale of the kernel columns and default bandwidth (default: %(default)s)')
        parser.add_argument('--screen-columns', default='',
                            help='comma-separated always-observed columns for the weight model (skips screening)')
        parser.add_argument('--pi0-column', help='ignored column holding known probabilities (--weights true)')


def _add_penalty(parser: argparse.ArgumentParser, allow_none: bool = False) -> None:
    choices = _PENALTIES + (['none'] if allow_none else [])
    parser.add_argument('--penalty', choices=choices, default='scad', help='penalty family (default: %(default)s)')
    parser.add_argument('--a', type=float, help='penalty shape (default: 3.7 SCAD, 3 MCP)')
    parser.add_argument('--lambda-grid', default='', help='comma-separated lambda values (default: automatic)')
    parser.add_argument('--n-lambda', type=int, default=settings.N_LAMBDA,
                        help='size of the automatic lambda grid (default: %(default)s)')


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='ipwqr', description='Weighted partial-linear quantile regression with missing covariates')
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)

    fit = sub.add_parser('fit', help='fit a penalized weighted model with BIC tuning')
    _add_roles(fit)
    _add_weights(fit)
    _add_penalty(fit, allow_none=True)
    fit.add_argument('--tau', type=float, default=0.5, help='quantile level (default: %(default)s)')
    fit.add_argument('--knots', default='', help="internal-knot counts, '0,1,2' or per variable '0,1;2' (default: 0,1,2)")
    fit.add_argument('--degree', type=int, default=settings.SPLINE_DEGREE, help='spline degree (default: %(default)s)')
    fit.add_argument('--grid-points', type=int, default=101, help='points per g-hat component grid (default: %(default)s)')
    _add_common(fit)

    sim = sub.add_parser('simulate', help='run a Monte-Carlo experiment')
    sim.add_argument('--n', type=int, default=200, help='sample size (default: %(default)s)')
    sim.add_argument('--p', type=int, default=8, help='linear covariates (default: %(default)s)')
    sim.add_argument('--tau', type=float, default=0.5, help='quantile level (default: %(default)s)')
    sim.add_argument('--error', choices=['t3', 'hetero'], default='t3', help='error law (default: %(default)s)')
    sim.add_argument('--missing-model', type=int, choices=[1, 2], default=1, help='missingness model (default: %(default)s)')
    sim.add_argument('--reps', type=int, default=300, help='replications (default: %(default)s)')
    sim.add_argument('--methods', default='full,naive,parametric,kernel',
                     help='comma-separated from full,naive,parametric,kernel,true,oracle (default: %(default)s)')
    sim.add_argument('--knots', default='', help='internal-knot counts per nonlinear variable (default: 0,1,2)')
    sim.add_argument('--cap', type=float, default=settings.WEIGHT_CAP, help='weight cap (default: %(default)s)')
    sim.add_argument('--screen-alpha', type=float, default=settings.SCREEN_ALPHA,
                     help='family-wise level of the screening tests (default: %(default)s)')
    _add_penalty(sim)
    _add_common(sim)

    screen = sub.add_parser('screen', help='screen always-observed columns for the missingness model')
    _add_roles(screen)
    screen.add_argument('--nonparametric', action='store_true', help='test a cubic spline of each column')
    screen.add_argument('--screen-alpha', type=float, default=settings.SCREEN_ALPHA,
                        help='family-wise level (default: %(default)s)')
    screen.add_argument('--summary', action='store_true', help='also fit the logistic model on the selected columns')
    _add_common(screen)

    predict = sub.add_parser('predict', help='prediction intervals from two quantile fits')
    _add_roles(predict, data=False)
    predict.add_argument('--train', help='training CSV')
    predict.add_argument('--test', help='test CSV')
    predict.add_argument('--data', help='single CSV split into random partitions')
    predict.add_argument('--lo', type=float, default=0.05, help='lower quantile (default: %(default)s)')
    predict.add_argument('--hi', type=float, default=0.95, help='upper quantile (default: %(default)s)')
    predict.add_argument('--partitions', type=int, default=500, help='random partitions with --data (default: %(default)s)')
    predict.add_argument('--test-size', type=int, default=100, help='test rows per partition (default: %(default)s)')
    predict.add_argument('--methods', default='', help='comma-separated weighting methods to compare with --data')
    predict.add_argument('--no-designate', action='store_true', help='keep the given linear/nonlinear roles')
    _add_weights(predict, full=False)
    _add_penalty(predict)
    _add_common(predict)

    designate = sub.add_parser('designate', help='choose linear or nonlinear terms by weighted BIC')
    _add_roles(designate)
    _add_weights(designate)
    designate.add_argument('--tau', type=float, default=0.5, help='quantile level (default: %(default)s)')
    designate.add_argument('--variables', default='', help='comma-separated covariates (default: every non-binary one)')
    _add_common(designate)

    curve = sub.add_parser('penalty-curve', help='penalty value and derivative on a grid')
    curve.add_argument('--family', choices=_PENALTIES, default='scad', help='penalty family (default: %(default)s)')
    curve.add_argument('--lam', type=float, default=1.0, help='lambda (default: %(default)s)')
    curve.add_argument('--a', type=float, help='penalty shape (default: 3.7 SCAD, 3 MCP)')
    curve.add_argument('--max', type=float, help='largest |beta| on the grid (default: 2 a lambda)')
    curve.add_argument('--points', type=int, default=401, help='grid points (default: %(default)s)')
    _add_common(curve)
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise UsageError(f"unknown command {command}")


def apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace) -> argparse.Namespace:
    """Override parsed flags with the KEY=value entries of --config."""
    if not args.config:
        return args
    values = dotenv_values(args.config)
    if not values and not _readable(args.config):
        raise UsageError(f"cannot read config file {args.config}")
    actions = {a.dest: a for a in _subparser(parser, args.command)._actions}
    for key, raw in values.items():
        dest = key.strip().lower().replace('-', '_')
        action = actions.get(dest)
        if action is None or dest in ('help', 'config'):
            raise UsageError(f"unknown config key '{key}' for {args.command}")
        if raw is None:
            raise UsageError(f"config key '{key}' has no value")
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.strip().lower() in ('1', 'true', 'yes', 'on')
        else:
            try:
                value = action.type(raw) if action.type else raw
            except ValueError:
                raise UsageError(f"invalid value '{raw}' for config key '{key}'")
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"config key '{key}' must be one of {list(action.choices)}")
        setattr(args, dest, value)
    return args


def _readable(path: str) -> bool:
    try:
        with open(path):
            return True
    except OSError:
        return False


def configure_logging(args: argparse.Namespace) -> None:
    logging.config.dictConfig(settings.LOGGING)
    level = None
    if getattr(args, 'verbose', False):
        level = logging.DEBUG
    elif getattr(args, 'quiet', False):
        level = logging.WARNING
    if level is not None:
        for name in ('estimator', 'ipwqr'):
            logging.getLogger(name).setLevel(level)


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns 0 on success, 1 on a runtime error, 2 on a usage error."""
    from estimator.commands import COMMANDS
    from estimator.exceptions import IpwqrError

    argv: List[str] = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return USAGE_ERROR
        args = apply_config(parser, args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return USAGE_ERROR
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    configure_logging(args)
    try:
        return COMMANDS[args.command](args)
    except (IpwqrError, OSError) as e:
        logger.debug('Command failed', exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return RUNTIME_ERROR


def main() -> None:
    sys.exit(dispatch())
