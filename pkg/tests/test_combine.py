# tests/test_combine.py
# Thiqa - System combination tests

import pytest

from confidence.calibration import fit
from evaluation.combine import (
    combine_utterance,
    expected_accuracy,
    run_combination_experiment,
    skew_results,
    tally_table,
)
from lattice.decoder import DecodeResult
from lattice.errors import ContractError, MetricInputError

REFS = {"u1": ["a", "b"], "u2": ["c", "d"], "u3": ["e"]}


def _result(utt, words, confs):
    mean = sum(confs) / len(confs) if confs else 0.0
    return DecodeResult(utt, tuple(words), tuple(range(len(words))), mean, tuple(confs))


def _system(outputs):
    """outputs: utt -> (words, confidences)."""
    return {utt: _result(utt, *outputs[utt]) for utt in REFS}


@pytest.fixture
def two_systems():
    # sys_a is right on u1/u3, sys_b right on u2; each is confident where right
    sys_a = _system({
        "u1": (["a", "b"], [0.9, 0.9]),
        "u2": (["c", "x"], [0.4, 0.2]),
        "u3": (["e"], [0.8]),
    })
    sys_b = _system({
        "u1": (["a", "y"], [0.5, 0.3]),
        "u2": (["c", "d"], [0.9, 0.7]),
        "u3": (["z"], [0.6]),
    })
    return {"sys_a": sys_a, "sys_b": sys_b}


class TestCombineUtterance:
    def test_highest_mean_wins(self):
        results = [_result("u", ["a"], [0.4]), _result("u", ["b"], [0.6])]
        assert combine_utterance(results).words == ("b",)

    def test_tie_goes_to_first(self):
        results = [_result("u", ["a"], [0.5]), _result("u", ["b"], [0.5])]
        assert combine_utterance(results).words == ("a",)

    def test_empty_and_unscored(self):
        with pytest.raises(ContractError):
            combine_utterance([])
        with pytest.raises(ContractError):
            combine_utterance([DecodeResult("u", ("a",), (0,), None)])


class TestExperiment:
    def test_two_systems(self, two_systems):
        report = run_combination_experiment(two_systems, REFS)
        assert report.n_subsets == 1
        record = report.records[0]
        assert record.best_system == "sys_a"
        assert record.best_errors == 1
        assert record.combined_errors == 0
        assert record.outcome == "better"
        assert record.combined_wer == 0.0
        assert record.best_wer == pytest.approx(1 / 5)

    def test_subset_count(self, two_systems):
        base = two_systems["sys_a"]
        systems = {f"s{i}": base for i in range(9)}
        report = run_combination_experiment(systems, REFS)
        assert report.n_subsets == 2 ** 9 - 1 - 9
        # identical systems combine to themselves
        assert report.n_equal == report.n_subsets

    def test_best_system_tie_goes_to_first(self, two_systems):
        systems = {"first": two_systems["sys_b"], "second": two_systems["sys_b"]}
        record = run_combination_experiment(systems, REFS).records[0]
        assert record.best_system == "first"

    def test_overconfident_system_makes_it_worse(self, two_systems):
        skewed = dict(two_systems)
        skewed["sys_b"] = skew_results(two_systems["sys_b"], factor=0.1, offset=0.45)
        report = run_combination_experiment(skewed, REFS)
        assert report.records[0].outcome == "worse"

    def test_calibrated_mode(self, two_systems):
        calibrators = {
            name: fit([(0.9, 1), (0.8, 1), (0.7, 1), (0.2, 0), (0.3, 0), (0.4, 0)], smoothing_scale=5.0)
            for name in two_systems
        }
        report = run_combination_experiment(two_systems, REFS, "calibrated", calibrators)
        assert report.mode == "calibrated"
        assert report.n_subsets == 1

    def test_calibrated_needs_calibrators(self, two_systems):
        with pytest.raises(ContractError):
            run_combination_experiment(two_systems, REFS, "calibrated", {})

    def test_needs_two_systems(self, two_systems):
        with pytest.raises(ContractError):
            run_combination_experiment({"sys_a": two_systems["sys_a"]}, REFS)

    def test_unknown_mode(self, two_systems):
        with pytest.raises(ContractError):
            run_combination_experiment(two_systems, REFS, "oracle")

    def test_utterance_mismatch(self, two_systems):
        systems = dict(two_systems)
        systems["sys_b"] = {u: r for u, r in two_systems["sys_b"].items() if u != "u3"}
        with pytest.raises(MetricInputError):
            run_combination_experiment(systems, REFS)

    def test_tables(self, two_systems):
        report = run_combination_experiment(two_systems, REFS)
        tally = tally_table([report])
        assert tally.loc[0, "better"] == 1
        assert tally.loc[0, "better (%)"] == 100.0
        frame = report.records_frame()
        assert frame.loc[0, "subset"] == "sys_a+sys_b"
        assert frame.loc[0, "combined WER (%)"] == 0.0


class TestSkew:
    def test_formula(self, two_systems):
        out = skew_results(two_systems["sys_a"], factor=0.5, offset=0.1)
        assert out["u1"].word_confidences == pytest.approx((0.8, 0.8))
        assert out["u1"].mean_confidence == pytest.approx(0.8)
        assert out["u1"].words == ("a", "b")

    def test_clipped(self, two_systems):
        out = skew_results(two_systems["sys_a"], factor=1.0, offset=0.5)
        assert out["u1"].word_confidences == (1.0, 1.0)

    def test_unscored(self):
        with pytest.raises(ContractError):
            skew_results({"u": DecodeResult("u", ("a",), (0,), None)}, 0.5)


class TestExpectedAccuracy:
    def test_combination_by_true_probability(self):
        oracle = {"a": {"u1": 0.9, "u2": 0.3}, "b": {"u1": 0.5, "u2": 0.8}}
        realized = {"a": {"u1": 1.0, "u2": 0.0}, "b": {"u1": 0.5, "u2": 1.0}}
        report = expected_accuracy(oracle, realized)
        assert report.individual_expected == pytest.approx({"a": 0.6, "b": 0.65})
        assert report.combined_expected == pytest.approx(0.85)
        assert report.combined_realized == pytest.approx(1.0)
        assert report.combined_expected >= max(report.individual_expected.values())
        assert len(report.frame()) == 3

    def test_mismatched_ids(self):
        with pytest.raises(MetricInputError):
            expected_accuracy({"a": {"u1": 0.5}}, {"a": {"u2": 0.5}})
