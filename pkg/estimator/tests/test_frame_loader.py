import logging

import numpy as np
import pytest

from ipwqr import settings
from estimator.exceptions import ConfigError, NumericError, ParseError
from estimator.models import ColumnRoles
from estimator.utils.frame_loader import (
    complete_case_count, export_csv, frame_from_arrays, ingest_csv, regroup, roles_of, split,
)


ROLES = ColumnRoles(response='y', linear=('x1', 'x2'), nonlinear=('z',))


class TestIngest:

    def test_no_missing_cells(self, tmp_path):
        path = tmp_path / 'a.csv'
        path.write_text('y,x1,x2,z\n1,2,3,0.5\n2,3,4,-1\n3,4,5,1\n')
        frame = ingest_csv(path, ROLES)
        assert list(frame.r) == [1, 1, 1]
        assert complete_case_count(frame) == 3

    def test_missing_cell_clears_indicator(self, tmp_path):
        path = tmp_path / 'a.csv'
        path.write_text('y,x1,x2,z\n1,2,3,0.5\n2,NA,4,-1\n3,4,5,1\n')
        frame = ingest_csv(path, ROLES)
        assert list(frame.r) == [1, 0, 1]
        assert frame.missing.missing_capable == (0,)
        assert np.isnan(frame.x[1, 0])

    def test_empty_field_is_missing(self, tmp_path):
        path = tmp_path / 'a.csv'
        path.write_text('y,x1,x2,z\n1,2,3,0.5\n2,3,,-1\n3,4,5,1\n')
        frame = ingest_csv(path, ROLES)
        assert list(frame.r) == [1, 0, 1]

    def test_z_rescaled_to_unit_interval(self, tmp_path):
        path = tmp_path / 'a.csv'
        path.write_text('y,x1,x2,z\n1,2,3,0\n2,3,4,-1\n3,4,5,1\n')
        frame = ingest_csv(path, ROLES)
        np.testing.assert_allclose(frame.z[:, 0], [0.5, 0.0, 1.0])
        np.testing.assert_allclose(frame.z_scale, [[-1.0, 1.0]])

    def test_non_numeric_cell_reports_row_and_column(self, tmp_path):
        path = tmp_path / 'a.csv'
        path.write_text('y,x1,x2,z\n1,2,3,0\n2,abc,4,-1\n')
        with pytest.raises(ParseError) as info:
            ingest_csv(path, ROLES)
        assert info.value.row == 2
        assert info.value.column == 'x1'

    def test_missing_response_rejected(self, tmp_path):
        path = tmp_path / 'a.csv'
        path.write_text('y,x1,x2,z\n1,2,3,0\nNA,3,4,-1\n')
        with pytest.raises(ParseError):
            ingest_csv(path, ROLES)

    def test_every_column_needs_a_role(self, tmp_path):
        path = tmp_path / 'a.csv'
        path.write_text('y,x1,x2,z,extra\n1,2,3,0,9\n')
        with pytest.raises(ConfigError):
            ingest_csv(path, ROLES)

    def test_ignored_column_skipped(self, tmp_path):
        path = tmp_path / 'a.csv'
        path.write_text('y,x1,x2,z,id\n1,2,3,0,a\n2,3,4,1,b\n')
        roles = ColumnRoles(response='y', linear=('x1', 'x2'), nonlinear=('z',), ignore=('id',))
        frame = ingest_csv(path, roles)
        assert frame.covariate_names == ('x1', 'x2', 'z')

    def test_custom_missing_token(self, tmp_path):
        path = tmp_path / 'a.csv'
        path.write_text('y,x1,x2,z\n1,2,3,0\n2,-999,4,1\n')
        frame = ingest_csv(path, ROLES, missing_tokens=['-999'])
        assert list(frame.r) == [1, 0]

    def test_duplicate_roles_rejected(self):
        with pytest.raises(ConfigError):
            ColumnRoles(response='y', linear=('x1',), nonlinear=('x1',))

    def test_empty_file(self, tmp_path):
        path = tmp_path / 'a.csv'
        path.write_text('')
        with pytest.raises(ParseError):
            ingest_csv(path, ROLES)


class TestFrameInvariants:

    def test_t_block_starts_with_response(self, missing_frame):
        np.testing.assert_array_equal(missing_frame.t[:, 0], missing_frame.y)
        assert missing_frame.t_names[0] == 'y'
        assert 'x1' not in missing_frame.t_names

    def test_blocks_cover_covariates(self, missing_frame):
        spec = missing_frame.missing
        assert set(spec.missing_capable) | set(spec.always_observed) == set(range(len(missing_frame.covariate_names)))

    def test_arrays_are_read_only(self, complete_frame):
        with pytest.raises(ValueError):
            complete_frame.x[0, 0] = 1.0

    def test_z_in_unit_interval(self, missing_frame):
        z = missing_frame.z[~np.isnan(missing_frame.z)]
        assert z.min() >= 0.0 and z.max() <= 1.0

    def test_clamping_incomplete_rows_is_logged(self, caplog):
        x = np.array([[1.0], [np.nan], [3.0], [np.nan]])
        z = np.array([[0.2], [5.0], [0.8], [0.5]])
        with caplog.at_level(logging.WARNING):
            frame = frame_from_arrays([1.0, 2.0, 3.0, 4.0], x, z, ('x1',), ('z1',), 'y', ('x1',))
        assert frame.z[1, 0] == 1.0
        assert 'Clamped 1 z values in 1 rows' in caplog.text

    def test_in_range_rows_log_nothing(self, caplog):
        x = np.array([[1.0], [np.nan], [3.0]])
        z = np.array([[0.2], [0.5], [0.8]])
        with caplog.at_level(logging.WARNING):
            frame_from_arrays([1.0, 2.0, 3.0], x, z, ('x1',), ('z1',), 'y', ('x1',))
        assert 'Clamped' not in caplog.text

    def test_missing_cell_in_observed_column_rejected(self):
        with pytest.raises(ParseError):
            frame_from_arrays([1.0, 2.0], [[1.0], [np.nan]], [], ('x1',), (), 'y', missing_capable=())

    def test_poison_check_in_debug_mode(self, missing_frame, monkeypatch):
        monkeypatch.setattr(settings, 'DEBUG', True)
        with pytest.raises(NumericError):
            missing_frame.assert_observed(np.ones(missing_frame.n))
        missing_frame.assert_observed(missing_frame.r.astype(float))


class TestExportAndReshape:

    def test_round_trip_is_bit_exact(self, missing_frame, tmp_path):
        path = tmp_path / 'out.csv'
        export_csv(missing_frame, path)
        again = ingest_csv(path, roles_of(missing_frame))
        np.testing.assert_array_equal(again.y, missing_frame.y)
        np.testing.assert_array_equal(again.x, missing_frame.x)
        np.testing.assert_array_equal(again.z_raw, missing_frame.z_raw)
        np.testing.assert_array_equal(again.r, missing_frame.r)

    def test_regroup_moves_columns(self, complete_frame):
        moved = regroup(complete_frame, ['x2', 'z1'])
        assert moved.x_names == ('x1', 'x3', 'x4')
        assert moved.z_names == ('x2', 'z1')
        np.testing.assert_array_equal(moved.z_raw[:, 0], complete_frame.x[:, 1])
        assert moved.z.min() == 0.0 and moved.z.max() == 1.0

    def test_regroup_keeps_indicator(self, missing_frame):
        moved = regroup(missing_frame, [])
        np.testing.assert_array_equal(moved.r, missing_frame.r)
        assert moved.d == 0

    def test_split_partitions_rows(self, complete_frame):
        train, test = split(complete_frame, [0, 5, 7])
        assert test.n == 3 and train.n == complete_frame.n - 3
        np.testing.assert_array_equal(test.y, complete_frame.y[[0, 5, 7]])

    def test_split_needs_both_parts(self, complete_frame):
        with pytest.raises(ConfigError):
            split(complete_frame, [])
