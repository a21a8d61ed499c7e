# evaluation/__init__.py
# Thiqa Evaluation Package

from evaluation.metrics import WerReport, DetectionReport, wer, eer, nce, det_curve
from evaluation.combine import CombinationReport, combine_utterance, run_combination_experiment

__all__ = [
    'WerReport',
    'DetectionReport',
    'wer',
    'eer',
    'nce',
    'det_curve',
    'CombinationReport',
    'combine_utterance',
    'run_combination_experiment'
]
