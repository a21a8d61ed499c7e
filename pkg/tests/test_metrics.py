# tests/test_metrics.py
# Thiqa - WER, EER, NCE, DET and table tests

import numpy as np
import pytest

from evaluation.metrics import (
    WerReport,
    collect_arc_scores,
    det_curve,
    detection_table,
    eer,
    expected_calibration_error,
    nce,
    render_table,
    scores_frame,
    utterance_errors,
    wer,
    wer_table,
)
from lattice.errors import MetricInputError


def _pairs(pos, neg):
    return [(s, 1) for s in pos] + [(s, 0) for s in neg]


def _sweep_oracle(pos, neg):
    """Average of the two rates where they are closest, over every cut."""
    pos, neg = np.asarray(pos), np.asarray(neg)
    best = None
    for t in np.append(np.unique(np.concatenate([pos, neg])), np.inf):
        p_miss = np.mean(pos < t)
        p_fa = np.mean(neg >= t)
        key = abs(p_miss - p_fa)
        if best is None or key < best[0]:
            best = (key, (p_miss + p_fa) / 2)
    return best[1]


class TestWer:
    def test_counts(self):
        report = wer({"u1": ["a", "b", "c"], "u2": ["x"]}, {"u1": ["a", "c"], "u2": ["x", "y"]})
        assert (report.substitutions, report.deletions, report.insertions) == (0, 1, 1)
        assert report.ref_word_count == 4
        assert report.wer == 0.5

    def test_utterance_errors(self):
        assert utterance_errors(["a", "z"], ["a", "b"]) == (1, 0, 0)
        assert utterance_errors([], ["a", "b"]) == (0, 2, 0)
        assert utterance_errors(["a"], []) == (0, 0, 1)

    def test_empty_reference_corpus(self):
        assert WerReport(0, 0, 2, 0).wer == 2.0

    def test_id_mismatch(self):
        with pytest.raises(MetricInputError):
            wer({"u1": ["a"]}, {"u2": ["a"]})


class TestEer:
    def test_exact_crossing(self):
        assert eer(_pairs([0.2, 0.6, 0.8], [0.1, 0.4, 0.7])) == pytest.approx((1 / 3, 0.6))

    def test_interpolated_crossing(self):
        rate, threshold = eer(_pairs([0.5, 0.9, 0.95], [0.1, 0.6]))
        assert rate == pytest.approx(1 / 3)
        assert threshold == pytest.approx(0.7)

    def test_separable(self):
        assert eer(_pairs([0.6, 0.9], [0.1, 0.3])) == pytest.approx((0.0, 0.6))

    def test_inverted(self):
        rate, _ = eer(_pairs([0.1, 0.2], [0.8, 0.9]))
        assert rate == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_threshold_sweep(self, seed):
        rng = np.random.default_rng(seed)
        pos = rng.normal(1.0, 1.0, size=int(rng.integers(20, 80)))
        neg = rng.normal(-0.5, 1.0, size=int(rng.integers(20, 80)))
        rate, _ = eer(_pairs(pos.tolist(), neg.tolist()))
        step = 1.0 / min(pos.size, neg.size)
        assert abs(rate - _sweep_oracle(pos, neg)) <= step

    @pytest.mark.parametrize(
        "scores", [[], [(0.3, 1), (0.4, 1)], [(0.3, 0)], [(float("nan"), 1), (0.2, 0)]]
    )
    def test_bad_input(self, scores):
        with pytest.raises(MetricInputError):
            eer(scores)


class TestNce:
    def test_prior_confidence_scores_zero(self):
        scores = _pairs([0.75] * 3, [0.75])
        assert nce(scores) == pytest.approx(0.0, abs=1e-12)

    def test_near_perfect(self):
        assert nce(_pairs([1.0, 1.0], [0.0])) == pytest.approx(1.0, abs=1e-6)

    def test_bad_confidences_go_negative(self):
        assert nce(_pairs([0.1, 0.1], [0.9, 0.9])) < 0.0


class TestDet:
    def test_endpoints_and_monotone(self):
        rng = np.random.default_rng(4)
        scores = _pairs(rng.uniform(0.3, 1.0, 50).tolist(), rng.uniform(0.0, 0.7, 40).tolist())
        report = det_curve(scores, n_points=21)
        thresholds = [t for t, _, _ in report.det_points]
        p_miss = [m for _, m, _ in report.det_points]
        p_fa = [f for _, _, f in report.det_points]
        assert thresholds[0] == -np.inf and thresholds[-1] == np.inf
        assert (p_miss[0], p_fa[0]) == (0.0, 1.0)
        assert (p_miss[-1], p_fa[-1]) == (1.0, 0.0)
        assert all(a <= b for a, b in zip(p_miss, p_miss[1:]))
        assert all(a >= b for a, b in zip(p_fa, p_fa[1:]))
        assert report.eer == eer(scores)[0]


class TestEce:
    def test_calibrated_bin(self):
        assert expected_calibration_error(_pairs([0.75] * 3, [0.75])) == pytest.approx(0.0)

    def test_overconfident(self):
        assert expected_calibration_error([(0.05, 1), (0.95, 0)]) == pytest.approx(0.95)

    def test_empty(self):
        with pytest.raises(MetricInputError):
            expected_calibration_error([])


class TestCollect:
    def _scored(self, h):
        return h.with_confidences({a.id: 0.5 for a in h.arcs})

    def test_scopes(self, sit_labeled):
        h = self._scored(sit_labeled)
        assert len(collect_arc_scores([h], "all")) == 11
        competing = collect_arc_scores([h], "competing")
        assert len(competing) == 8
        assert sum(label for _, label in competing) == 4

    def test_needs_labels_and_scores(self, sit_hwcn, sit_labeled):
        with pytest.raises(MetricInputError):
            collect_arc_scores([self._scored(sit_hwcn)])
        with pytest.raises(MetricInputError):
            collect_arc_scores([sit_labeled])

    def test_unknown_scope(self, sit_labeled):
        with pytest.raises(MetricInputError):
            collect_arc_scores([self._scored(sit_labeled)], "onebest")

    def test_scores_frame(self, sit_labeled):
        frame = scores_frame([self._scored(sit_labeled)])
        assert list(frame.columns) == ["utterance_id", "arc_id", "score", "label"]
        assert len(frame) == 11
        assert set(frame["utterance_id"]) == {"sit_there"}


class TestTables:
    def test_detection_table(self):
        frame = detection_table({"posterior": det_curve(_pairs([0.2, 0.6, 0.8], [0.1, 0.4, 0.7]))})
        assert list(frame.columns) == ["method", "EER (%)", "NCE"]
        assert frame.loc[0, "EER (%)"] == pytest.approx(33.33)

    def test_wer_table(self):
        frame = wer_table({
            "rec0": {"map": WerReport(1, 0, 0, 10), "maxmean": WerReport(0, 0, 0, 10)},
            "rec1": {"map": WerReport(2, 1, 0, 10)},
        })
        assert list(frame.columns) == ["recognizer", "map WER (%)", "maxmean WER (%)"]
        assert frame.loc[1, "map WER (%)"] == 30.0
        assert frame.loc[1, "maxmean WER (%)"] is None or np.isnan(frame.loc[1, "maxmean WER (%)"])

    def test_render(self):
        frame = wer_table({"rec0": {"map": WerReport(1, 0, 0, 10)}})
        assert render_table(frame, "tsv") == "recognizer\tmap WER (%)\nrec0\t10.0\n"
        assert "rec0" in render_table(frame, "text")
        with pytest.raises(MetricInputError):
            render_table(frame, "html")
