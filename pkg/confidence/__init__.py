# confidence/__init__.py
# Thiqa Confidence Package

from confidence.model import ConfidenceModel, score_arcs, load_model, save_model
from confidence.training import TrainConfig, train, select_model
from confidence.calibration import Calibrator, fit, calibrate, load_calibrator, save_calibrator

__all__ = [
    'ConfidenceModel',
    'score_arcs',
    'load_model',
    'save_model',
    'TrainConfig',
    'train',
    'select_model',
    'Calibrator',
    'fit',
    'calibrate',
    'load_calibrator',
    'save_calibrator'
]
