import io

import numpy as np
import pandas as pd
import pytest

from estimator.commands import parse_grid, parse_knots
from estimator.exceptions import ConfigError
from estimator.utils.frame_loader import default_roles, export_csv, read_header
from ipwqr.cli import dispatch

ROLE_FLAGS = ['--response', 'y', '--linear', 'x1,x2,x3,x4', '--nonlinear', 'z1', '--threads', '1']


@pytest.fixture
def data_csv(missing_frame, tmp_path):
    path = tmp_path / 'data.csv'
    export_csv(missing_frame, path)
    return path


class TestUsage:

    def test_no_arguments(self, capsys):
        assert dispatch([]) == 2
        assert 'usage' in capsys.readouterr().err

    def test_unknown_command(self):
        assert dispatch(['bogus']) == 2

    def test_bad_flag_value(self):
        assert dispatch(['penalty-curve', '--family', 'ridge']) == 2

    def test_roles_default_from_header(self, data_csv, capsys):
        assert dispatch(['fit', '--tau', '0.5', '--penalty', 'scad', '--weights', 'kernel', str(data_csv)]) == 0
        table = pd.read_csv(io.StringIO(capsys.readouterr().out))
        assert set(table.loc[table['block'] == 'linear', 'term']) == {'x1', 'x2', 'x3', 'x4', 'z1'}

    def test_response_defaults_to_first_column(self, tmp_path):
        path = tmp_path / 'data.csv'
        pd.DataFrame({'out': [1.0, 2.0, 3.0], 'a': [0.5, 0.1, 0.9]}).to_csv(path, index=False)
        roles = default_roles(read_header(path))
        assert roles.response == 'out'
        assert roles.linear == ('a',)

    def test_given_roles_are_not_extended(self, data_csv):
        roles = default_roles(read_header(data_csv), linear=['x1'])
        assert roles.response == 'y'
        assert roles.linear == ('x1',)

    def test_help(self):
        assert dispatch(['fit', '--help']) == 0

    def test_unknown_config_key(self, data_csv, tmp_path):
        config = tmp_path / 'run.env'
        config.write_text('COLOUR=blue\n')
        assert dispatch(['fit', str(data_csv), *ROLE_FLAGS, '--config', str(config)]) == 2

    def test_bad_config_value(self, data_csv, tmp_path):
        config = tmp_path / 'run.env'
        config.write_text('WEIGHTS=magic\n')
        assert dispatch(['fit', str(data_csv), *ROLE_FLAGS, '--config', str(config)]) == 2


class TestRuntimeErrors:

    def test_missing_file(self, tmp_path, capsys):
        assert dispatch(['fit', str(tmp_path / 'absent.csv'), *ROLE_FLAGS]) == 1
        assert 'error' in capsys.readouterr().err

    def test_parse_error(self, tmp_path, capsys):
        path = tmp_path / 'bad.csv'
        path.write_text('y,x1\n1,2\n2,oops\n')
        assert dispatch(['fit', str(path), '--response', 'y', '--linear', 'x1']) == 1
        assert 'x1' in capsys.readouterr().err

    def test_unassigned_column(self, data_csv):
        assert dispatch(['fit', str(data_csv), '--response', 'y', '--linear', 'x1']) == 1


class TestCommands:

    def test_penalty_curve_to_stdout(self, capsys):
        assert dispatch(['penalty-curve', '--family', 'mcp', '--lam', '0.5', '--points', '5']) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == 'beta,value,derivative,family'
        assert len(out) == 6

    def test_penalty_curve_to_directory(self, tmp_path):
        assert dispatch(['penalty-curve', '--points', '11', '--out', str(tmp_path)]) == 0
        table = pd.read_csv(tmp_path / 'penalty_curve.csv')
        assert len(table) == 11
        assert table['beta'].iloc[-1] == pytest.approx(2 * 3.7)

    def test_fit_writes_tables(self, data_csv, tmp_path):
        out = tmp_path / 'fit'
        code = dispatch(['fit', str(data_csv), *ROLE_FLAGS, '--weights', 'naive', '--lambda-grid', '0.05,0.1',
                         '--knots', '0,1', '--out', str(out)])
        assert code == 0
        for name in ('coefficients', 'summary', 'ghat_grid', 'score_table'):
            assert (out / f"{name}.csv").exists()
        assert len(pd.read_csv(out / 'score_table.csv')) == 4
        coefficients = pd.read_csv(out / 'coefficients.csv')
        assert coefficients['term'].tolist()[:5] == ['x1', 'x2', 'x3', 'x4', '(intercept)']

    def test_config_overrides_flags(self, data_csv, tmp_path):
        config = tmp_path / 'run.env'
        config.write_text('TAU=0.25\nWEIGHTS=naive\nLAMBDA_GRID=0.1\nKNOTS=1\n')
        out = tmp_path / 'fit'
        assert dispatch(['fit', str(data_csv), *ROLE_FLAGS, '--tau', '0.9', '--config', str(config),
                         '--out', str(out)]) == 0
        summary = pd.read_csv(out / 'summary.csv')
        assert summary.loc[0, 'tau'] == 0.25
        assert summary.loc[0, 'weight_method'] == 'naive'

    def test_fit_with_kernel_weights(self, data_csv, tmp_path):
        out = tmp_path / 'fit'
        assert dispatch(['fit', str(data_csv), *ROLE_FLAGS, '--lambda-grid', '0.1', '--knots', '1',
                         '--out', str(out)]) == 0
        assert pd.read_csv(out / 'summary.csv').loc[0, 'weight_method'] == 'kernel'

    def test_screen(self, data_csv, tmp_path):
        assert dispatch(['screen', str(data_csv), *ROLE_FLAGS, '--summary', '--out', str(tmp_path)]) == 0
        table = pd.read_csv(tmp_path / 'screen.csv')
        assert table['column'].tolist() == ['y', 'x2', 'x3', 'x4', 'z1']
        assert (tmp_path / 'missingness_model.csv').exists()

    def test_designate(self, data_csv, tmp_path):
        assert dispatch(['designate', str(data_csv), *ROLE_FLAGS, '--weights', 'naive', '--variables', 'z1',
                         '--out', str(tmp_path)]) == 0
        table = pd.read_csv(tmp_path / 'table.csv')
        assert table['variable'].tolist() == ['z1']
        assert table.loc[0, 'designation'].startswith('nonlinear')

    def test_predict_train_test(self, missing_frame, tmp_path):
        from estimator.utils.frame_loader import split
        train, test = split(missing_frame, np.arange(250, 300))
        export_csv(train, tmp_path / 'train.csv')
        export_csv(test, tmp_path / 'test.csv')
        out = tmp_path / 'predict'
        code = dispatch(['predict', '--train', str(tmp_path / 'train.csv'), '--test', str(tmp_path / 'test.csv'),
                         *ROLE_FLAGS, '--weights', 'naive', '--no-designate', '--lambda-grid', '0.05',
                         '--lo', '0.1', '--hi', '0.9', '--out', str(out)])
        assert code == 0
        summary = pd.read_csv(out / 'summary.csv')
        assert summary.loc[0, 'scored_rows'] + summary.loc[0, 'skipped_rows'] == 50

    def test_predict_needs_data(self):
        assert dispatch(['predict', *ROLE_FLAGS]) == 1

    def test_simulate(self, tmp_path):
        code = dispatch(['simulate', '--n', '80', '--reps', '2', '--methods', 'naive,true', '--lambda-grid', '0.1',
                         '--knots', '1', '--threads', '1', '--out', str(tmp_path)])
        assert code == 0
        summary = pd.read_csv(tmp_path / 'summary.csv')
        assert summary['Method'].tolist() == ['SCAD Naive', 'SCAD True Wt']
        assert len(pd.read_csv(tmp_path / 'replications.csv')) == 4


class TestParsing:

    def test_grid(self):
        assert parse_grid('0.1, 0.01') == (0.1, 0.01)
        assert parse_grid('') is None
        with pytest.raises(ConfigError):
            parse_grid('a,b')

    def test_knots(self):
        assert parse_knots('0,1,2', 2) == ((0, 1, 2), (0, 1, 2))
        assert parse_knots('0,1;2', 2) == ((0, 1), (2,))
        with pytest.raises(ConfigError):
            parse_knots('1;2;3', 2)
