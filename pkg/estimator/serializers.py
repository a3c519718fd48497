"""
Serializers turning estimator results into CSV tables.

Each serializer wraps one result and builds named pandas tables.
TableSerializer.save writes the first table to stdout (10 significant
digits) when no directory is given; otherwise it writes every table to
<out_dir>/<name>.csv at full precision and returns the paths.
"""
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from .models import FitResult, IntervalReport, Designation, SimReport
from .utils.fit_engine import designation_label

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class TableSerializer:
    """Base class: subclasses build one DataFrame per output table."""
    fields: List[str] = []

    def __init__(self, instance):
        self.instance = instance

    def to_frame(self) -> pd.DataFrame:
        raise NotImplementedError

    def tables(self) -> Dict[str, pd.DataFrame]:
        """Named tables written by save(); the first is the one shown on stdout."""
        return {'table': self.to_frame()}

    def save(self, out_dir: Optional[PathLike] = None) -> List[Path]:
        """Write every table into out_dir as <name>.csv, or the main table to stdout."""
        tables = self.tables()
        if out_dir is None:
            next(iter(tables.values())).to_csv(sys.stdout, index=False, float_format='%.10g')
            return []
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, table in tables.items():
            path = out / f"{name}.csv"
            table.to_csv(path, index=False, float_format='%.17g')
            written.append(path)
        logger.info(f"Wrote {', '.join(p.name for p in written)} to {out}")
        return written


class CoefficientSerializer(TableSerializer):
    fields = ['term', 'block', 'coefficient', 'active']

    def to_frame(self) -> pd.DataFrame:
        fit: FitResult = self.instance
        rows = [{'term': name, 'block': 'linear', 'coefficient': float(fit.beta[j]), 'active': j in fit.active_set}
                for j, name in enumerate(fit.x_names)]
        rows.append({'term': '(intercept)', 'block': 'spline', 'coefficient': fit.ghat.intercept, 'active': True})
        start = 1
        for name, basis in zip(fit.z_names, fit.ghat.bases):
            for k in range(basis.width):
                rows.append({'term': f"{name}[b{k + 1}]", 'block': 'spline',
                             'coefficient': float(fit.xi[start + k]), 'active': True})
            start += basis.width
        return pd.DataFrame(rows, columns=self.fields)


class GhatGridSerializer(TableSerializer):
    """Each fitted component on an even grid, for plotting."""
    fields = ['variable', 'z', 'z_raw', 'component']

    def __init__(self, instance, points: int = 101):
        super().__init__(instance)
        self.points = points

    def to_frame(self) -> pd.DataFrame:
        fit: FitResult = self.instance
        grid = np.linspace(0.0, 1.0, self.points)
        parts = []
        for j, name in enumerate(fit.z_names):
            lo, hi = fit.ghat.z_scale[j]
            parts.append(pd.DataFrame({
                'variable': name, 'z': grid, 'z_raw': lo + grid * (hi - lo),
                'component': fit.ghat.component(j, grid),
            }))
        if not parts:
            return pd.DataFrame(columns=self.fields)
        return pd.concat(parts, ignore_index=True)[self.fields]


class FitResultSerializer(TableSerializer):
    fields = ['tau', 'weight_method', 'lambda', 'knots', 'qbic', 'nu', 'active_set',
              'objective', 'converged', 'iterations', 'descent_ok']

    def __init__(self, instance, points: int = 101):
        super().__init__(instance)
        self.points = points

    def to_frame(self) -> pd.DataFrame:
        fit: FitResult = self.instance
        return pd.DataFrame([{
            'tau': fit.tau,
            'weight_method': fit.weight_method.value if fit.weight_method else '',
            'lambda': fit.selected_lambda,
            'knots': '-'.join(str(k) for k in fit.selected_knots),
            'qbic': fit.qbic_value,
            'nu': fit.nu,
            'active_set': ';'.join(fit.x_names[j] for j in fit.active_set),
            'objective': fit.objective,
            'converged': fit.converged,
            'iterations': fit.iterations,
            'descent_ok': fit.descent_ok,
        }], columns=self.fields)

    def tables(self) -> Dict[str, pd.DataFrame]:
        fit: FitResult = self.instance
        tables = {
            'coefficients': CoefficientSerializer(fit).to_frame(),
            'summary': self.to_frame(),
            'ghat_grid': GhatGridSerializer(fit, self.points).to_frame(),
        }
        if fit.score_table is not None:
            tables['score_table'] = fit.score_table
        return tables


class SimReportSerializer(TableSerializer):
    def to_frame(self) -> pd.DataFrame:
        report: SimReport = self.instance
        return report.table.reset_index()

    def tables(self) -> Dict[str, pd.DataFrame]:
        report: SimReport = self.instance
        return {'summary': self.to_frame(), 'replications': report.raw}


class DesignationSerializer(TableSerializer):
    fields = ['variable', 'designation', 'weak_signal', 'intercept', 'linear',
              'spline0', 'spline1', 'spline2', 'spline3', 'spline4']

    def to_frame(self) -> pd.DataFrame:
        designations: List[Designation] = self.instance
        rows = []
        for d in designations:
            row = {'variable': d.variable, 'designation': designation_label(d), 'weak_signal': d.weak_signal}
            row.update(d.scores)
            rows.append(row)
        return pd.DataFrame(rows).reindex(columns=self.fields)


class IntervalReportSerializer(TableSerializer):
    fields = ['capture_rate', 'mean_length', 'sd_length', 'crossing_count', 'scored_rows', 'skipped_rows']

    def to_frame(self) -> pd.DataFrame:
        report: IntervalReport = self.instance
        return pd.DataFrame([{name: getattr(report, name) for name in self.fields}], columns=self.fields)

    def tables(self) -> Dict[str, pd.DataFrame]:
        report: IntervalReport = self.instance
        tables = {'summary': self.to_frame()}
        if report.rows is not None:
            tables['intervals'] = report.rows
        tables['designations'] = pd.DataFrame(
            [{'key': k, 'designation': v} for k, v in report.designations.items()], columns=['key', 'designation'])
        return tables


class DataFrameSerializer(TableSerializer):
    """Pass-through for results that already are tables."""

    def __init__(self, instance: pd.DataFrame, name: str = 'table', index: bool = False):
        super().__init__(instance)
        self.name = name
        self.index = index

    def to_frame(self) -> pd.DataFrame:
        return self.instance.reset_index() if self.index else self.instance

    def tables(self) -> Dict[str, pd.DataFrame]:
        return {self.name: self.to_frame()}
