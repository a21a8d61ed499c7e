# confidence/calibration.py
# Thiqa - Bayes calibration from sigmoid-smoothed miss / false-alarm curves
#
# The empirical miss and false-alarm curves of the training scores are
# smoothed with a logistic step of slope L; their derivatives give the class
# densities p(y|correct) and p(y|wrong), and Bayes' rule gives P(correct|y).

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from lattice.config import (
    CALIBRATION_GRID_POINTS,
    CALIBRATION_MODES,
    CALIBRATOR_FORMAT,
    CONFIDENCE_CLAMP,
    SMOOTHING_SCALE,
)
from lattice.decoder import DecodeResult
from lattice.errors import ContractError, FitError, FormatError
from lattice.hwcn import Hwcn

logger = logging.getLogger(__name__)

GRID_MARGIN = 5.0   # grid covers [min - 5/L, max + 5/L]
_CHUNK = 2048


def logistic_kernel_density(samples: np.ndarray, y, scale: float) -> np.ndarray:
    """
    Mean of L * e^{(s-y)L} / (1 + e^{(s-y)L})^2 over samples s.

    Written as L * sigmoid(d) * sigmoid(-d) so large |d| underflows to 0
    instead of overflowing.
    """
    ys = np.atleast_1d(np.asarray(y, dtype=np.float64))
    out = np.empty(ys.shape, dtype=np.float64)
    flat_y, flat_out = ys.ravel(), out.ravel()
    for start in range(0, flat_y.size, _CHUNK):
        chunk = flat_y[start:start + _CHUNK]
        d = (samples[None, :] - chunk[:, None]) * scale
        flat_out[start:start + _CHUNK] = (scale * expit(d) * expit(-d)).mean(axis=1)
    return out


@dataclass
class Calibrator:
    positive_scores: np.ndarray
    negative_scores: np.ndarray
    smoothing_scale: float = SMOOTHING_SCALE
    eval_mode: str = "exact"
    grid_points: int = CALIBRATION_GRID_POINTS
    _grid: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.positive_scores = np.sort(np.asarray(self.positive_scores, dtype=np.float64))
        self.negative_scores = np.sort(np.asarray(self.negative_scores, dtype=np.float64))
        if self.positive_scores.size < 1 or self.negative_scores.size < 1:
            raise FitError(
                f"calibration needs both classes (got {self.positive_scores.size} correct, "
                f"{self.negative_scores.size} wrong)"
            )
        if not self.smoothing_scale > 0:
            raise FitError(f"smoothing scale must be positive, got {self.smoothing_scale}")
        if self.eval_mode not in CALIBRATION_MODES:
            raise FitError(f"eval_mode must be one of {CALIBRATION_MODES}, got {self.eval_mode!r}")
        if self.grid_points < 2:
            raise FitError("grid_points must be >= 2")

    @property
    def n_correct(self) -> int:
        return int(self.positive_scores.size)

    @property
    def n_wrong(self) -> int:
        return int(self.negative_scores.size)

    @property
    def prior_correct(self) -> float:
        return self.n_correct / (self.n_correct + self.n_wrong)

    @property
    def prior_wrong(self) -> float:
        return self.n_wrong / (self.n_correct + self.n_wrong)

    def _grid_tables(self):
        if self._grid is None:
            lo = min(self.positive_scores[0], self.negative_scores[0]) - GRID_MARGIN / self.smoothing_scale
            hi = max(self.positive_scores[-1], self.negative_scores[-1]) + GRID_MARGIN / self.smoothing_scale
            grid = np.linspace(lo, hi, self.grid_points)
            self._grid = (
                grid,
                logistic_kernel_density(self.positive_scores, grid, self.smoothing_scale),
                logistic_kernel_density(self.negative_scores, grid, self.smoothing_scale),
            )
        return self._grid

    def _density(self, samples: np.ndarray, which: int, y) -> np.ndarray:
        ys = np.atleast_1d(np.asarray(y, dtype=np.float64))
        if self.eval_mode == "exact":
            return logistic_kernel_density(samples, ys, self.smoothing_scale)
        grid, dens_c, dens_w = self._grid_tables()
        table = dens_c if which == 0 else dens_w
        out = np.interp(ys, grid, table)
        outside = (ys < grid[0]) | (ys > grid[-1])
        if outside.any():
            out[outside] = logistic_kernel_density(samples, ys[outside], self.smoothing_scale)
        return out


def fit(
    scored: Iterable[Tuple[float, int]],
    smoothing_scale: float = SMOOTHING_SCALE,
    eval_mode: str = "exact",
    grid_points: int = CALIBRATION_GRID_POINTS,
) -> Calibrator:
    """Store the class-conditional training scores; priors come from their counts."""
    positives, negatives = [], []
    for score, label in scored:
        if not math.isfinite(score):
            raise FitError(f"non-finite score {score}")
        (positives if label else negatives).append(float(score))
    calibrator = Calibrator(
        positive_scores=np.array(positives),
        negative_scores=np.array(negatives),
        smoothing_scale=smoothing_scale,
        eval_mode=eval_mode,
        grid_points=grid_points,
    )
    logger.info(
        "calibrator: %d correct / %d wrong samples, L=%.3f, P(correct)=%.4f",
        calibrator.n_correct, calibrator.n_wrong, smoothing_scale, calibrator.prior_correct,
    )
    return calibrator


def density_correct(c: Calibrator, y):
    """p(y | correct). Scalar in, float out; array in, array out."""
    out = c._density(c.positive_scores, 0, y)
    return float(out[0]) if np.ndim(y) == 0 else out


def density_wrong(c: Calibrator, y):
    """p(y | wrong)."""
    out = c._density(c.negative_scores, 1, y)
    return float(out[0]) if np.ndim(y) == 0 else out


def calibrate(c: Calibrator, y):
    """
    P(correct | y). Falls back to the prior where both densities underflow.
    Not monotone in y in general.
    """
    ys = np.atleast_1d(np.asarray(y, dtype=np.float64))
    num = c._density(c.positive_scores, 0, ys) * c.prior_correct
    den = num + c._density(c.negative_scores, 1, ys) * c.prior_wrong
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), c.prior_correct)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if np.ndim(y) == 0 else out


def calibrate_hwcn(c: Calibrator, h: Hwcn) -> Hwcn:
    if not h.is_scored:
        raise ContractError(f"{h.utterance_id}: calibrating needs scored arcs")
    ids = [a.id for a in h.arcs]
    values = calibrate(c, np.array([a.confidence for a in h.arcs]))
    return h.with_confidences(dict(zip(ids, values.tolist())))


def calibrate_result(c: Calibrator, result: DecodeResult) -> DecodeResult:
    """Calibrate each word confidence of a decoded path and recompute its mean."""
    if len(result.word_confidences) != len(result.words):
        raise ContractError(f"{result.utterance_id}: decode result lacks per-word confidences")
    if not result.words:
        return replace(result, mean_confidence=0.0)
    values = tuple(float(v) for v in calibrate(c, np.array(result.word_confidences)))
    return replace(result, word_confidences=values, mean_confidence=sum(values) / len(values))


# ---------------------------------------------------------------------------
# Choosing L
# ---------------------------------------------------------------------------

def negative_log_likelihood(probabilities: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probabilities, CONFIDENCE_CLAMP, 1.0 - CONFIDENCE_CLAMP)
    return float(-np.mean(labels * np.log(p) + (1 - labels) * np.log1p(-p)))


def sweep_smoothing_scale(
    fit_scores: Sequence[Tuple[float, int]],
    heldout_scores: Sequence[Tuple[float, int]],
    scales: Sequence[float] = (0.5, 1.0, 1.8, 3.0, 5.0, 10.0, 20.0),
) -> Tuple[float, List[Dict[str, float]]]:
    """Pick L by held-out negative log-likelihood of the calibrated scores."""
    if not scales:
        raise ContractError("no smoothing scales to sweep")
    y = np.array([s for s, _ in heldout_scores], dtype=np.float64)
    t = np.array([l for _, l in heldout_scores], dtype=np.float64)
    rows = []
    for scale in scales:
        c = fit(fit_scores, smoothing_scale=scale)
        rows.append({"smoothing_scale": float(scale), "heldout_nll": negative_log_likelihood(calibrate(c, y), t)})
    best = min(rows, key=lambda r: r["heldout_nll"])
    logger.info("smoothing scale sweep: best L=%.3f (NLL %.5f)", best["smoothing_scale"], best["heldout_nll"])
    return best["smoothing_scale"], rows


# ---------------------------------------------------------------------------
# Calibrator file
# ---------------------------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(f"{v:.9g}" for v in values)


def serialize_calibrator(c: Calibrator) -> str:
    lines = [
        CALIBRATOR_FORMAT,
        f"smoothing_scale {c.smoothing_scale:.9g}",
        f"eval_mode {c.eval_mode}",
        f"grid_points {c.grid_points}",
        f"n_correct {c.n_correct}",
        f"n_wrong {c.n_wrong}",
        f"positive {_fmt(c.positive_scores)}",
        f"negative {_fmt(c.negative_scores)}",
        "end",
    ]
    return "\n".join(lines) + "\n"


def parse_calibrator(text: str) -> Calibrator:
    lines = text.splitlines()
    if not lines or lines[0] != CALIBRATOR_FORMAT:
        raise FormatError(f"not a calibrator file (expected header {CALIBRATOR_FORMAT!r})")
    if lines[-1] != "end":
        raise FormatError("calibrator file is truncated (no 'end' line)")
    fields = {}
    for line in lines[1:-1]:
        key, _, value = line.partition(" ")
        fields[key] = value
    try:
        positives = np.array([float(v) for v in fields["positive"].split()])
        negatives = np.array([float(v) for v in fields["negative"].split()])
        if len(positives) != int(fields["n_correct"]) or len(negatives) != int(fields["n_wrong"]):
            raise FormatError("sample counts do not match n_correct / n_wrong")
        return Calibrator(
            positive_scores=positives,
            negative_scores=negatives,
            smoothing_scale=float(fields["smoothing_scale"]),
            eval_mode=fields["eval_mode"],
            grid_points=int(fields["grid_points"]),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"corrupt calibrator file: {exc}")
    except FitError as exc:
        raise FormatError(f"calibrator file holds an invalid calibrator: {exc}")


def save_calibrator(c: Calibrator, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(serialize_calibrator(c))


def load_calibrator(path) -> Calibrator:
    with open(path, "r", encoding="utf-8") as f:
        return parse_calibrator(f.read())
