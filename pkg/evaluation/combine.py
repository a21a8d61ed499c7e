# evaluation/combine.py
# Thiqa - System combination by highest mean word confidence

import logging
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from confidence.calibration import Calibrator, calibrate_result
from evaluation.metrics import utterance_errors
from lattice.decoder import DecodeResult
from lattice.errors import ContractError, MetricInputError

logger = logging.getLogger(__name__)

COMBINATION_MODES = ["raw", "calibrated"]


@dataclass
class CombinationRecord:
    subset: Tuple[str, ...]
    best_system: str
    best_wer: float
    combined_wer: float
    best_errors: int
    combined_errors: int

    @property
    def outcome(self) -> str:
        if self.combined_errors < self.best_errors:
            return "better"
        if self.combined_errors > self.best_errors:
            return "worse"
        return "equal"


@dataclass
class CombinationReport:
    """Combined-vs-best-individual outcome for every recognizer subset of size >= 2."""
    mode: str
    records: List[CombinationRecord] = field(default_factory=list)

    def _tally(self, outcome: str) -> int:
        return sum(1 for r in self.records if r.outcome == outcome)

    @property
    def n_better(self) -> int:
        return self._tally("better")

    @property
    def n_worse(self) -> int:
        return self._tally("worse")

    @property
    def n_equal(self) -> int:
        return self._tally("equal")

    @property
    def n_subsets(self) -> int:
        return len(self.records)

    def tally_row(self) -> Dict[str, object]:
        n = max(self.n_subsets, 1)
        return {
            "mode": self.mode,
            "subsets": self.n_subsets,
            "better": self.n_better,
            "better (%)": round(100.0 * self.n_better / n, 1),
            "worse": self.n_worse,
            "worse (%)": round(100.0 * self.n_worse / n, 1),
            "equal": self.n_equal,
        }

    def records_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "subset": "+".join(r.subset),
                    "best_system": r.best_system,
                    "best WER (%)": round(100.0 * r.best_wer, 2),
                    "combined WER (%)": round(100.0 * r.combined_wer, 2),
                    "outcome": r.outcome,
                }
                for r in self.records
            ]
        )


def tally_table(reports: Sequence[CombinationReport]) -> pd.DataFrame:
    return pd.DataFrame([r.tally_row() for r in reports])


def _choose(results: Sequence[DecodeResult]) -> int:
    if not results:
        raise ContractError("combination needs at least one result")
    best = 0
    for i, result in enumerate(results):
        if result.mean_confidence is None:
            raise ContractError(f"{result.utterance_id}: result {i} has no mean confidence")
        if result.mean_confidence > results[best].mean_confidence:
            best = i
    return best


def combine_utterance(results: Sequence[DecodeResult]) -> DecodeResult:
    """The result with the highest mean confidence; ties go to the lowest index."""
    return results[_choose(results)]


def skew_results(
    results: Dict[str, DecodeResult], factor: float, offset: float = 0.0
) -> Dict[str, DecodeResult]:
    """
    Compress (factor < 1) and shift raw confidences around 0.5:
    y -> clip(0.5 + factor * (y - 0.5) + offset, 0, 1).
    """
    def squash(y: float) -> float:
        return float(np.clip(0.5 + factor * (y - 0.5) + offset, 0.0, 1.0))

    out = {}
    for utt, result in results.items():
        if result.mean_confidence is None:
            raise ContractError(f"{utt}: cannot skew an unscored result")
        words = tuple(squash(y) for y in result.word_confidences)
        mean = sum(words) / len(words) if words else squash(result.mean_confidence)
        out[utt] = replace(result, word_confidences=words, mean_confidence=mean)
    return out


def _check_ids(systems: Dict[str, Dict[str, DecodeResult]], refs: Dict[str, Sequence[str]]) -> List[str]:
    ids = sorted(refs)
    for name, results in systems.items():
        if set(results) != set(ids):
            raise MetricInputError(f"{name}: utterance ids differ from the references")
    return ids


def run_combination_experiment(
    systems: Dict[str, Dict[str, DecodeResult]],
    refs: Dict[str, Sequence[str]],
    mode: str = "raw",
    calibrators: Optional[Dict[str, Calibrator]] = None,
) -> CombinationReport:
    """
    Compare per-utterance combination against the best single system for
    every subset of two or more recognizers (in the given order).

    Error counts are integers, so "equal" means exactly equal.
    """
    if mode not in COMBINATION_MODES:
        raise ContractError(f"mode must be one of {COMBINATION_MODES}, got {mode!r}")
    if len(systems) < 2:
        raise ContractError("combination needs at least two recognizers")
    names = list(systems)
    ids = _check_ids(systems, refs)
    if mode == "calibrated":
        missing = [n for n in names if not calibrators or n not in calibrators]
        if missing:
            raise ContractError(f"calibrated mode needs a calibrator for {missing}")

    errors = np.zeros((len(names), len(ids)), dtype=np.int64)
    means = np.zeros((len(names), len(ids)), dtype=np.float64)
    for r, name in enumerate(names):
        for u, utt in enumerate(ids):
            result = systems[name][utt]
            if mode == "calibrated":
                result = calibrate_result(calibrators[name], result)
            if result.mean_confidence is None:
                raise ContractError(f"{name}/{utt}: result has no mean confidence")
            means[r, u] = result.mean_confidence
            errors[r, u] = sum(utterance_errors(result.words, refs[utt]))
    n_ref = max(sum(len(refs[utt]) for utt in ids), 1)
    totals = errors.sum(axis=1)

    report = CombinationReport(mode=mode)
    columns = np.arange(len(ids))
    for size in range(2, len(names) + 1):
        for subset in combinations(range(len(names)), size):
            rows = list(subset)
            # argmax returns the first maximum, i.e. the lowest recognizer index
            choice = np.argmax(means[rows], axis=0)
            combined = int(errors[rows][choice, columns].sum())
            best = min(rows, key=lambda r: (totals[r], r))
            report.records.append(
                CombinationRecord(
                    subset=tuple(names[r] for r in rows),
                    best_system=names[best],
                    best_wer=totals[best] / n_ref,
                    combined_wer=combined / n_ref,
                    best_errors=int(totals[best]),
                    combined_errors=combined,
                )
            )
    logger.info(
        "%s combination over %d subsets: %d better, %d worse, %d equal",
        mode, report.n_subsets, report.n_better, report.n_worse, report.n_equal,
    )
    return report


@dataclass
class ExpectedAccuracyReport:
    individual_expected: Dict[str, float]
    individual_realized: Dict[str, float]
    combined_expected: float
    combined_realized: float

    def frame(self) -> pd.DataFrame:
        rows = [
            {"system": name, "expected accuracy": self.individual_expected[name],
             "realized accuracy": self.individual_realized[name]}
            for name in self.individual_expected
        ]
        rows.append({"system": "combined", "expected accuracy": self.combined_expected,
                     "realized accuracy": self.combined_realized})
        return pd.DataFrame(rows)


def expected_accuracy(
    oracle: Dict[str, Dict[str, float]],
    realized: Dict[str, Dict[str, float]],
) -> ExpectedAccuracyReport:
    """
    Combine by the true correctness probabilities themselves.

    oracle[system][utt] is the generating probability that an output word is
    correct; realized[system][utt] the share that actually was.
    """
    names = list(oracle)
    if not names:
        raise ContractError("no systems")
    ids = sorted(oracle[names[0]])
    for name in names:
        if set(oracle[name]) != set(ids) or set(realized.get(name, {})) != set(ids):
            raise MetricInputError(f"{name}: utterance ids differ")
    probs = np.array([[oracle[n][u] for u in ids] for n in names])
    actual = np.array([[realized[n][u] for u in ids] for n in names])
    choice = np.argmax(probs, axis=0)
    columns = np.arange(len(ids))
    return ExpectedAccuracyReport(
        individual_expected={n: float(probs[r].mean()) for r, n in enumerate(names)},
        individual_realized={n: float(actual[r].mean()) for r, n in enumerate(names)},
        combined_expected=float(probs[choice, columns].mean()),
        combined_realized=float(actual[choice, columns].mean()),
    )
