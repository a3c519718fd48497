import numpy as np
import pandas as pd
import pytest

from estimator.exceptions import ConfigError, NumericError
from estimator.models import (
    ErrorModel, FitResult, METHOD_LABELS, MissingModel, SimConfig, SimMethod, SimTruth,
)
from estimator.utils import simlab
from estimator.utils.simlab import (
    error_quantile, generate_replication, run_experiment, score_replication, summarize, true_beta,
)


class ExactG:
    """g-hat that reproduces a fixed vector of values."""

    bases = ()

    def __init__(self, values):
        self.values = values

    def evaluate_raw(self, z_raw):
        return self.values


def quick_config(**kwargs):
    options = dict(n=120, replications=2, methods=(SimMethod.NAIVE, SimMethod.TRUE), lambda_grid=(0.05, 0.2),
                   knot_grid=((1,), (1,)), n_jobs=1, seed=3)
    options.update(kwargs)
    return SimConfig(**options)


class TestTruth:

    def test_support(self):
        config = SimConfig(p=10)
        beta = true_beta(config)
        assert tuple(np.flatnonzero(beta)) == (0, 2, 9)
        np.testing.assert_array_equal(beta[[0, 2, 9]], [1.0, -1.0, 1.0])

    def test_heteroscedastic_slope(self):
        beta = true_beta(SimConfig(error_model=ErrorModel.HETERO_NORMAL, tau=0.7))
        assert beta[-1] == pytest.approx(1.0 + 0.5244005127080407)

    def test_error_quantiles(self):
        assert error_quantile(ErrorModel.T3, 0.5) == 0.0
        assert error_quantile(ErrorModel.HETERO_NORMAL, 0.5) == 0.0
        assert error_quantile(ErrorModel.T3, 0.75) == pytest.approx(0.7648923284, abs=1e-8)

    def test_median_slope_is_exact(self):
        assert true_beta(SimConfig(error_model=ErrorModel.HETERO_NORMAL, tau=0.5))[-1] == 1.0
        with pytest.raises(ValueError):
            error_quantile('cauchy', 0.5)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SimConfig(p=5)
        with pytest.raises(ConfigError):
            SimConfig(n=10)


class TestGeneration:

    def test_shapes_and_missing_blocks(self):
        rep = generate_replication(SimConfig(n=200, seed=1), 0)
        frame = rep.frame
        assert frame.x_names == tuple(f"x{j}" for j in range(1, 9))
        assert frame.z_names == ('z1', 'z2')
        blank = frame.r == 0
        assert np.all(np.isnan(frame.x[blank][:, [0, 6]]))
        assert np.all(np.isnan(frame.z_raw[blank, 1]))
        assert not np.isnan(frame.x[~blank]).any()
        assert rep.full_frame.complete_case_count() == 200
        assert frame.t_names == ('y', 'x2', 'x3', 'x4', 'x5', 'x6', 'x8', 'z1')

    def test_deterministic_streams(self):
        config = SimConfig(n=100, seed=5)
        one, two = generate_replication(config, 4), generate_replication(config, 4)
        np.testing.assert_array_equal(one.frame.y, two.frame.y)
        np.testing.assert_array_equal(one.frame.r, two.frame.r)
        assert not np.array_equal(generate_replication(config, 5).frame.y, one.frame.y)

    def test_complete_case_counts(self):
        first = np.mean([generate_replication(SimConfig(n=200), rep).frame.complete_case_count() for rep in range(50)])
        second = np.mean([generate_replication(SimConfig(n=400, missing_model=MissingModel.MODEL2), rep)
                          .frame.complete_case_count() for rep in range(50)])
        assert first == pytest.approx(140, abs=15)
        assert second == pytest.approx(284, abs=20)

    def test_covariate_correlation(self):
        rep = generate_replication(SimConfig(n=5000, p=8), 0)
        x = rep.full_frame.x
        assert np.corrcoef(x[:, 0], x[:, 1])[0, 1] == pytest.approx(0.7, abs=0.03)
        assert np.corrcoef(x[:, 0], x[:, 2])[0, 1] == pytest.approx(0.49, abs=0.03)


class TestScoring:

    def _fit(self, active, g0):
        beta = np.zeros(8)
        beta[list(active)] = 1.0
        return FitResult(beta=beta, xi=np.zeros(1), active_set=tuple(active), ghat=ExactG(g0), objective=0.0, tau=0.5)

    def _truth(self):
        g0 = np.linspace(-1.0, 1.0, 10)
        return SimTruth(beta=true_beta(SimConfig()), support=(0, 2, 7), g0=g0, z_full=np.zeros((10, 2)),
                        pi0=np.ones(10))

    def test_perfect_recovery(self):
        truth = self._truth()
        score = score_replication(truth, self._fit((0, 2, 7), truth.g0), r_n=10)
        assert (score.tv, score.fv, score.true_model, score.aade) == (3, 0, True, 0.0)

    def test_over_selection(self):
        truth = self._truth()
        score = score_replication(truth, self._fit((0, 1, 2, 7), truth.g0 + 0.5))
        assert (score.tv, score.fv, score.true_model) == (3, 1, False)
        assert score.aade == pytest.approx(0.5)

    def test_summary_of_exact_estimates(self):
        beta0 = true_beta(SimConfig())
        raw = pd.DataFrame([
            {'rep': rep, 'method': METHOD_LABELS[SimMethod.KERNEL], 'r_n': 140 + rep, 'TV': 3, 'FV': 0, 'True': 1.0,
             'AADE': 0.1, 'converged': True, 'descent_ok': True, 'failed': False, 'error': '',
             **{f"beta_{j + 1}": beta0[j] for j in range(8)}}
            for rep in range(3)
        ])
        table, failures = summarize(raw, beta0, [SimMethod.KERNEL])
        row = table.loc['SCAD K Wt']
        assert row['Bias'] == 0.0 and row['MSE'] == 0.0
        assert row['r_n'] == 141.0
        assert row['se_Bias'] == 0.0
        assert failures == {'SCAD K Wt': 0}


class TestExperiment:

    def test_quick_run(self):
        report = run_experiment(quick_config())
        assert list(report.table.index) == ['SCAD Naive', 'SCAD True Wt']
        assert len(report.raw) == 4
        assert report.table['TV'].between(0, 3).all()
        assert (report.table['n'] == 120).all()
        assert not report.flagged

    def test_worker_count_does_not_change_results(self):
        one = run_experiment(quick_config())
        two = run_experiment(quick_config(n_jobs=2))
        pd.testing.assert_frame_equal(one.raw, two.raw)

    def test_failures_are_counted(self, monkeypatch):
        real = simlab._fit_method

        def flaky(replication, method, config):
            if method is SimMethod.TRUE:
                raise NumericError('solver gave up')
            return real(replication, method, config)

        monkeypatch.setattr(simlab, '_fit_method', flaky)
        report = run_experiment(quick_config())
        assert report.failures == {'SCAD Naive': 0, 'SCAD True Wt': 2}
        assert report.flagged
        assert report.table.loc['SCAD True Wt', 'reps'] == 0

    @pytest.mark.slow
    def test_weighting_reduces_bias(self):
        # 100 replications: a selection rate near .85 has a standard error near .036
        config = SimConfig(n=400, replications=100, seed=1, n_jobs=-1,
                           methods=(SimMethod.NAIVE, SimMethod.PARAMETRIC, SimMethod.KERNEL))
        table = run_experiment(config).table
        naive = table.loc['SCAD Naive', 'Bias']
        assert table.loc['SCAD P Wt', 'Bias'] < naive
        assert table.loc['SCAD K Wt', 'Bias'] < naive
        assert naive == pytest.approx(0.44, abs=0.15)
        assert table.loc['SCAD P Wt', 'Bias'] == pytest.approx(0.22, abs=0.15)
        assert table.loc['SCAD K Wt', 'Bias'] == pytest.approx(0.27, abs=0.15)
        for label, rate in (('SCAD Naive', 0.83), ('SCAD P Wt', 0.87), ('SCAD K Wt', 0.88)):
            assert table.loc[label, 'True'] == pytest.approx(rate, abs=0.12)
        assert table.loc['SCAD K Wt', 'converged'] >= 0.99
        assert table['descent'].min() == 1.0

    @pytest.mark.slow
    def test_kernel_weights_under_misspecification(self):
        config = SimConfig(n=400, replications=100, seed=2, missing_model=MissingModel.MODEL2, n_jobs=-1,
                           methods=(SimMethod.NAIVE, SimMethod.KERNEL))
        table = run_experiment(config).table
        assert table.loc['SCAD K Wt', 'Bias'] < table.loc['SCAD Naive', 'Bias']
        assert table.loc['SCAD K Wt', 'Bias'] == pytest.approx(0.09, abs=0.1)

    @pytest.mark.slow
    def test_kernel_weights_select_among_many_covariates(self):
        reps = 20
        config = SimConfig(n=1000, p=100, replications=reps, seed=4, methods=(SimMethod.KERNEL,),
                           n_lambda=15, knot_grid=((1,), (1,)), n_jobs=-1)
        table = run_experiment(config).table
        # three standard errors of a rate at .85 over 20 replications
        tolerance = 3.0 * np.sqrt(0.85 * 0.15 / reps)
        assert table.loc['SCAD K Wt', 'True'] >= 0.85 - tolerance
        assert table.loc['SCAD K Wt', 'FV'] <= 0.3 + 3.0 * np.sqrt(0.3 / reps)
        assert table['descent'].min() == 1.0

    @pytest.mark.slow
    def test_weighted_bias_shrinks_with_n(self):
        def bias(n):
            config = SimConfig(n=n, replications=50, seed=5, n_jobs=-1,
                               methods=(SimMethod.PARAMETRIC, SimMethod.KERNEL))
            return run_experiment(config).table['Bias']

        small, large = bias(200), bias(1000)
        for label in ('SCAD P Wt', 'SCAD K Wt'):
            assert large[label] <= 0.6 * small[label]
