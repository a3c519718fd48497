from .frame_loader import ingest_csv, export_csv, frame_from_arrays, regroup, split
from .qr_solver import solve, verify_subgradient
from .ipw import estimate_weights, screen_missing_model
from .fit_engine import select_fit, fit_lla, fit_unpenalized, prediction_interval
from .simlab import run_experiment

__all__ = [
    'ingest_csv', 'export_csv', 'frame_from_arrays', 'regroup', 'split',
    'solve', 'verify_subgradient',
    'estimate_weights', 'screen_missing_model',
    'select_fit', 'fit_lla', 'fit_unpenalized', 'prediction_interval',
    'run_experiment',
]
