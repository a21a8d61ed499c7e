# tests/test_pipeline.py
# Thiqa - Parallel stages and the full experiment pipeline

import pytest

from cli.app import main
from confidence.model import ConfidenceModel
from confidence.training import TrainConfig
from evaluation.run_evaluation import ExperimentPipeline
from evaluation.stages import build_hwcns, decode_hwcns, parallel_map, score_hwcns, worker_count
from lattice.core import serialize_lattice
from lattice.errors import ContractError
from lattice.hwcn import serialize_hwcn
from lattice.simgen import format_sim_config

from conftest import tiny_config


def test_worker_count():
    assert worker_count(3) == 3
    assert worker_count(0) >= 1


def test_parallel_map_keeps_order(tiny_corpus):
    lattices = [tiny_corpus.recognizers[1].lattices[u] for u in tiny_corpus.utterance_ids]
    assert parallel_map(serialize_lattice, lattices, 3) == [serialize_lattice(x) for x in lattices]
    assert parallel_map(serialize_lattice, [], 4) == []


def test_parallel_build_matches_serial(tiny_corpus):
    rec = tiny_corpus.recognizers[0]
    serial = build_hwcns(rec.lattices, tiny_corpus.references, workers=1)
    parallel = build_hwcns(rec.lattices, tiny_corpus.references, workers=2)
    assert list(serial) == sorted(serial)
    assert list(serial) == list(parallel)
    for utt in serial:
        assert serialize_hwcn(serial[utt]) == serialize_hwcn(parallel[utt])


def test_parallel_score_and_decode(tiny_hwcns):
    hwcns = tiny_hwcns["good"]
    model = ConfidenceModel("posterior_passthrough")
    serial = decode_hwcns(score_hwcns(model, hwcns, 1), "maxmean", workers=1)
    parallel = decode_hwcns(score_hwcns(model, hwcns, 2), "maxmean", workers=2)
    assert serial == parallel


def test_build_needs_every_reference(tiny_corpus):
    rec = tiny_corpus.recognizers[0]
    with pytest.raises(ContractError):
        build_hwcns(rec.lattices, {}, workers=1)


def test_unknown_decode_mode(tiny_hwcns):
    with pytest.raises(ContractError):
        decode_hwcns(tiny_hwcns["good"], "viterbi", workers=1)


@pytest.mark.slow
def test_experiment_pipeline(tmp_path):
    pipeline = ExperimentPipeline(
        tiny_config(seed=4, utterances=80),
        output_dir=str(tmp_path),
        train_config=TrainConfig(epochs=3, seed=4),
        model_grid=[{"kind": "logistic"}],
        workers=1,
    )
    results = pipeline.run_complete_pipeline()
    summary = results["summary"]
    assert set(summary) == {
        "detection", "decoding_wer", "model_selection", "calibration",
        "combination", "combination_subsets", "expected_accuracy",
    }
    assert list(summary["combination"]["mode"]) == ["raw", "calibrated", "raw-skewed"]
    assert (tmp_path / "detection.tsv").is_file()
    assert (tmp_path / "charts").is_dir()
    assert all(v >= 0 for v in summary["calibration"]["ECE calibrated"])


@pytest.mark.slow
def test_experiment_subcommand(tmp_path):
    cfg_path = tmp_path / "sim.cfg"
    cfg_path.write_text(format_sim_config(tiny_config(seed=6, utterances=80)), encoding="utf-8")
    out = tmp_path / "results"
    assert main(["experiment", "--config", str(cfg_path), "--out", str(out), "--quick", "--workers", "1"]) == 0
    assert (out / "manifest.json").is_file()
    assert (out / "decoding_wer.tsv").is_file()


@pytest.fixture(scope="module")
def default_experiment(tmp_path_factory):
    """The five default recognizers on a full-size corpus, one model candidate each."""
    from lattice.simgen import SimConfig, default_profiles

    pipeline = ExperimentPipeline(
        SimConfig(seed=11, profiles=default_profiles()),
        output_dir=str(tmp_path_factory.mktemp("default_experiment")),
        train_config=TrainConfig(seed=11),
        model_grid=[{"kind": "lattice_rnn", "state_dim": 8, "hidden_dim": 4}],
        workers=1,
    )
    return pipeline.run_full_evaluation()


@pytest.mark.slow
def test_trained_model_beats_the_posterior(default_experiment):
    for name, run in default_experiment["runs"].items():
        assert run.detection["model"].eer < run.detection["posterior"].eer, name
        assert run.detection["model"].nce > run.detection["posterior"].nce, name


@pytest.mark.slow
def test_max_mean_decoding_never_loses_to_map(default_experiment):
    for name, run in default_experiment["runs"].items():
        assert run.wers["maxmean"].wer <= run.wers["map"].wer, name


@pytest.mark.slow
def test_calibrated_combination_beats_best_system(default_experiment):
    reports = {r.mode: r for r in default_experiment["combination"]}
    calibrated = reports["calibrated"]
    assert calibrated.n_subsets == 26
    assert calibrated.n_better >= 0.95 * calibrated.n_subsets


@pytest.mark.slow
def test_skewed_raw_scores_hurt_combination(default_experiment):
    skewed = {r.mode: r for r in default_experiment["combination"]}["raw-skewed"]
    assert skewed.n_worse > 0.5 * skewed.n_subsets


@pytest.mark.slow
def test_combining_by_true_probability(default_experiment):
    oracle = default_experiment["expected_accuracy"]
    assert oracle.combined_expected >= max(oracle.individual_expected.values()) - 0.005


def _snapshot(directory):
    """Every file's bytes; manifest timing is left out."""
    import json

    tree = {}
    for path in sorted(directory.rglob("*")):
        if not path.is_file():
            continue
        key = str(path.relative_to(directory))
        if path.name == "manifest.json":
            data = json.loads(path.read_text(encoding="utf-8"))
            data.pop("timing")
            tree[key] = json.dumps(data, sort_keys=True)
        else:
            tree[key] = path.read_bytes()
    return tree


@pytest.mark.slow
def test_experiment_reruns_are_identical(tmp_path):
    import shutil

    cfg_path = tmp_path / "sim.cfg"
    cfg_path.write_text(format_sim_config(tiny_config(seed=6, utterances=80)), encoding="utf-8")
    out = tmp_path / "results"
    argv = ["experiment", "--config", str(cfg_path), "--out", str(out), "--quick", "--workers", "1"]
    assert main(argv) == 0
    first = _snapshot(out)
    shutil.rmtree(out)
    assert main(argv) == 0
    second = _snapshot(out)
    assert "detection.csv" in first
    assert "manifest.json" in first
    assert first == second
