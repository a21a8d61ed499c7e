# evaluation/metrics.py
# Thiqa - Evaluation Metrics
# Measures: WER, EER, NCE, DET curves, calibration error

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from lattice.config import CONFIDENCE_CLAMP, DET_POINTS, ECE_BINS, EER_SCOPES
from lattice.core import align
from lattice.decoder import DecodeResult
from lattice.errors import MetricInputError
from lattice.hwcn import Hwcn

logger = logging.getLogger(__name__)

Scored = Sequence[Tuple[float, int]]
SCORE_COLUMNS = ["utterance_id", "arc_id", "score", "label"]


@dataclass
class WerReport:
    """Corpus-level edit counts, pooled over utterances."""
    substitutions: int
    deletions: int
    insertions: int
    ref_word_count: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / max(self.ref_word_count, 1)


@dataclass
class DetectionReport:
    eer: float
    eer_threshold: float
    nce: float
    det_points: List[Tuple[float, float, float]] = field(default_factory=list)  # (threshold, P_M, P_FA)


# ---------------------------------------------------------------------------
# WER
# ---------------------------------------------------------------------------

def utterance_errors(hyp: Sequence[str], ref: Sequence[str]) -> Tuple[int, int, int]:
    """(substitutions, deletions, insertions) of hyp against ref."""
    alignment = align(list(hyp), list(ref))
    # alignment ops edit hyp into ref: an 'insert' supplies a missing ref word
    return alignment.count("substitute"), alignment.count("insert"), alignment.count("delete")


def wer(hyps: Dict[str, Sequence[str]], refs: Dict[str, Sequence[str]]) -> WerReport:
    if set(hyps) != set(refs):
        missing = sorted(set(refs) - set(hyps))[:5]
        extra = sorted(set(hyps) - set(refs))[:5]
        raise MetricInputError(
            f"utterance ids differ (missing hypotheses: {missing}, unknown: {extra})"
        )
    s = d = i = n = 0
    for utt in sorted(refs):
        us, ud, ui = utterance_errors(hyps[utt], refs[utt])
        s, d, i = s + us, d + ud, i + ui
        n += len(refs[utt])
    return WerReport(substitutions=s, deletions=d, insertions=i, ref_word_count=n)


# ---------------------------------------------------------------------------
# Detection metrics
# ---------------------------------------------------------------------------

def _split(scores: Scored) -> Tuple[np.ndarray, np.ndarray]:
    if not scores:
        raise MetricInputError("no scores")
    values = np.array([s for s, _ in scores], dtype=np.float64)
    labels = np.array([int(l) for _, l in scores])
    if not np.all(np.isfinite(values)):
        raise MetricInputError("scores must be finite")
    pos, neg = np.sort(values[labels == 1]), np.sort(values[labels != 1])
    if pos.size == 0 or neg.size == 0:
        raise MetricInputError(
            f"both classes are required (got {pos.size} correct, {neg.size} wrong)"
        )
    return pos, neg


def error_rates(pos: np.ndarray, neg: np.ndarray, thresholds: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Accept as correct when score >= t:
    P_M(t) = share of correct with score < t, P_FA(t) = share of wrong with score >= t.
    """
    p_miss = np.searchsorted(pos, thresholds, side="left") / pos.size
    p_fa = (neg.size - np.searchsorted(neg, thresholds, side="left")) / neg.size
    return p_miss, p_fa


def eer(scores: Scored) -> Tuple[float, float]:
    """
    Equal error rate and its threshold.

    Thresholds are the distinct scores plus +inf. The first threshold where
    P_M >= P_FA is taken; when the curves cross strictly between it and the
    previous threshold, both the rate and the threshold are interpolated.
    """
    pos, neg = _split(scores)
    thresholds = np.append(np.unique(np.concatenate([pos, neg])), np.inf)
    p_miss, p_fa = error_rates(pos, neg, thresholds)
    gap = p_miss - p_fa
    k = int(np.argmax(gap >= 0))
    if gap[k] == 0 or k == 0:
        return float(p_miss[k]), float(thresholds[k])
    lam = -gap[k - 1] / (gap[k] - gap[k - 1])
    rate = p_miss[k - 1] + lam * (p_miss[k] - p_miss[k - 1])
    lo, hi = thresholds[k - 1], thresholds[k]
    threshold = lo + lam * (hi - lo) if math.isfinite(hi) else lo
    return float(rate), float(threshold)


def nce(scores: Scored) -> float:
    """Normalized cross entropy (log base 2) of clamped confidences."""
    pos, neg = _split(scores)
    pos = np.clip(pos, CONFIDENCE_CLAMP, 1.0 - CONFIDENCE_CLAMP)
    neg = np.clip(neg, CONFIDENCE_CLAMP, 1.0 - CONFIDENCE_CLAMP)
    n_c, n_w = pos.size, neg.size
    n = n_c + n_w
    p_c = n_c / n
    h_prior = -(n_c * math.log2(p_c) + n_w * math.log2(1.0 - p_c)) / n
    h_conf = -(np.log2(pos).sum() + np.log2(1.0 - neg).sum()) / n
    return float((h_prior - h_conf) / h_prior)


def det_curve(scores: Scored, n_points: int = DET_POINTS) -> DetectionReport:
    """P_M / P_FA at score-quantile thresholds, with -inf / +inf endpoints."""
    pos, neg = _split(scores)
    everything = np.concatenate([pos, neg])
    quantiles = np.quantile(everything, np.linspace(0.0, 1.0, max(n_points, 2)))
    thresholds = np.unique(np.concatenate([[-np.inf], quantiles, [np.inf]]))
    p_miss, p_fa = error_rates(pos, neg, thresholds)
    rate, threshold = eer(scores)
    return DetectionReport(
        eer=rate,
        eer_threshold=threshold,
        nce=nce(scores),
        det_points=[(float(t), float(m), float(f)) for t, m, f in zip(thresholds, p_miss, p_fa)],
    )


def expected_calibration_error(scores: Scored, n_bins: int = ECE_BINS) -> float:
    """Equal-width bins on [0, 1]; weighted gap between mean score and accuracy."""
    if not scores:
        raise MetricInputError("no scores")
    values = np.clip(np.array([s for s, _ in scores], dtype=np.float64), 0.0, 1.0)
    labels = np.array([int(l) for _, l in scores], dtype=np.float64)
    bins = np.minimum((values * n_bins).astype(int), n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        mask = bins == b
        if mask.any():
            total += mask.sum() / values.size * abs(values[mask].mean() - labels[mask].mean())
    return float(total)


# ---------------------------------------------------------------------------
# Collecting scores from HWCNs
# ---------------------------------------------------------------------------

def collect_arc_scores(hwcns: Iterable[Hwcn], scope: str = "all") -> List[Tuple[float, int]]:
    """
    (confidence, label) per word arc of labeled, scored HWCNs.

    scope "all" takes every non-silence arc; "competing" only arcs that share
    start and end node with a 1-best word.
    """
    if scope not in EER_SCOPES:
        raise MetricInputError(f"scope must be one of {EER_SCOPES}, got {scope!r}")
    out: List[Tuple[float, int]] = []
    for h in hwcns:
        if not (h.is_labeled and h.is_scored):
            raise MetricInputError(f"{h.utterance_id}: arcs need both labels and confidences")
        if scope == "competing":
            slots = {(a.start_node, a.end_node) for a in h.onebest_arcs if not a.is_silence}
            arcs = [a for a in h.arcs if (a.start_node, a.end_node) in slots]
        else:
            arcs = list(h.arcs)
        out.extend((float(a.confidence), int(a.label)) for a in arcs if not a.is_silence)
    return out


def decoded_word_scores(
    results: Dict[str, DecodeResult], refs: Dict[str, Sequence[str]]
) -> List[Tuple[float, int]]:
    """
    (confidence, correct) per decoded word; a word is correct iff the
    alignment against its reference matches it.
    """
    out: List[Tuple[float, int]] = []
    for utt in sorted(results):
        result = results[utt]
        if utt not in refs:
            raise MetricInputError(f"{utt}: no reference for decoded words")
        if len(result.word_confidences) != len(result.words):
            raise MetricInputError(f"{utt}: decoded words lack per-word confidences")
        correct = [0] * len(result.words)
        for op in align(list(result.words), list(refs[utt])).ops:
            if op.kind == "match":
                correct[op.hyp_index] = 1
        out.extend((float(c), ok) for c, ok in zip(result.word_confidences, correct))
    return out


def scores_frame(hwcns: Iterable[Hwcn]) -> pd.DataFrame:
    """Per-arc score table: utterance_id, arc_id, score, label."""
    rows = [
        {
            "utterance_id": h.utterance_id,
            "arc_id": a.id,
            "score": a.confidence,
            "label": a.label,
        }
        for h in hwcns
        for a in h.arcs
        if not a.is_silence
    ]
    return pd.DataFrame(rows, columns=SCORE_COLUMNS)


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def detection_table(reports: Dict[str, DetectionReport]) -> pd.DataFrame:
    """One row per scoring method: EER (%) and NCE."""
    return pd.DataFrame(
        [
            {"method": name, "EER (%)": round(100.0 * r.eer, 2), "NCE": round(r.nce, 3)}
            for name, r in reports.items()
        ],
        columns=["method", "EER (%)", "NCE"],
    )


def wer_table(rows: Dict[str, Dict[str, WerReport]]) -> pd.DataFrame:
    """rows[recognizer][decoder] -> WER (%) per decoder column."""
    decoders = []
    for per_decoder in rows.values():
        for name in per_decoder:
            if name not in decoders:
                decoders.append(name)
    records = []
    for recognizer, per_decoder in rows.items():
        record = {"recognizer": recognizer}
        for name in decoders:
            report = per_decoder.get(name)
            record[f"{name} WER (%)"] = round(100.0 * report.wer, 2) if report else None
        records.append(record)
    return pd.DataFrame(records, columns=["recognizer"] + [f"{d} WER (%)" for d in decoders])


def render_table(frame: pd.DataFrame, fmt: str = "text") -> str:
    if fmt == "tsv":
        return frame.to_csv(sep="\t", index=False, lineterminator="\n")
    if fmt == "text":
        return frame.to_string(index=False) + "\n"
    raise MetricInputError(f"unknown table format {fmt!r}")
