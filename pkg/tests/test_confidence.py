# tests/test_confidence.py
# Thiqa - Features, confidence models and training tests

import numpy as np
import pytest

from confidence.features import Standardizer, extract_features, feature_matrix, word_embedding
from confidence.model import (
    ConfidenceModel,
    build_plan,
    gradient_check,
    parse_model,
    score_arcs,
    serialize_model,
)
from confidence.training import TrainConfig, select_model, train
from lattice.config import EMBEDDING_DIM, FEATURE_DIM
from lattice.errors import ContractError, FormatError
from lattice.hwcn import label_arcs
from lattice.simgen import split_of

from conftest import RANDOM_VOCABULARY, random_hwcn


def _random_labeled(seed):
    """Random HWCN labeled against a random reference over the same words."""
    rng = np.random.default_rng([seed, 5])
    reference = [RANDOM_VOCABULARY[int(i)] for i in rng.integers(0, 4, size=int(rng.integers(1, 5)))]
    return label_arcs(random_hwcn(seed), reference)


def _split(hwcns, split):
    return [h for u, h in sorted(hwcns.items()) if split_of(u) == split]


class TestFeatures:
    def test_sit_scalars(self, sit_hwcn):
        feats = {f.arc_id: f for f in extract_features(sit_hwcn)}
        will = feats[4]
        assert will.phone_count == 3
        assert will.frame_count == 18
        assert will.on_onebest == 1
        assert will.is_silence == 0
        assert feats[7].phone_count == len("simmer")
        assert feats[7].on_onebest == 0
        assert will.log_posterior == sit_hwcn.arc_by_id[4].merged_log_posterior

    def test_embedding_is_stable(self):
        a = word_embedding("sit")
        assert a.shape == (EMBEDDING_DIM,)
        assert np.array_equal(a, word_embedding("sit"))
        assert not np.array_equal(a, word_embedding("seat"))
        assert np.all(np.abs(a) <= 1.0)

    def test_standardized_scalars_are_centered(self, sit_hwcn):
        std = Standardizer.fit([sit_hwcn])
        matrix = feature_matrix(sit_hwcn, std)
        assert matrix.shape == (len(sit_hwcn.arcs), FEATURE_DIM)
        assert np.allclose(matrix[:, EMBEDDING_DIM:].mean(axis=0), 0.0, atol=1e-12)
        raw = feature_matrix(sit_hwcn)
        assert np.array_equal(matrix[:, :EMBEDDING_DIM], raw[:, :EMBEDDING_DIM])


class TestModel:
    def test_passthrough_is_posterior(self, sit_hwcn):
        scored = score_arcs(ConfidenceModel("posterior_passthrough"), sit_hwcn)
        for arc in scored.arcs:
            assert arc.confidence == pytest.approx(np.exp(arc.merged_log_posterior), abs=1e-9)

    def test_untrained_logistic_says_half(self, sit_hwcn):
        scored = score_arcs(ConfidenceModel("logistic"), sit_hwcn)
        assert all(a.confidence == 0.5 for a in scored.arcs)

    def test_rnn_scores_in_open_interval(self, sit_hwcn):
        model = ConfidenceModel("lattice_rnn", state_dim=4, hidden_dim=3, seed=1)
        scored = score_arcs(model, sit_hwcn)
        assert scored.is_scored
        assert all(0.0 < a.confidence < 1.0 for a in scored.arcs)

    def test_unknown_kind(self):
        with pytest.raises(ContractError):
            ConfidenceModel("transformer")

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kind": "logistic"},
            {"kind": "logistic", "bias_only": True},
            {"kind": "lattice_rnn", "state_dim": 4, "hidden_dim": 3, "seed": 2},
        ],
    )
    def test_gradient_check(self, sit_labeled, kwargs):
        model = ConfidenceModel(**kwargs)
        if model.kind == "logistic":
            model.set_flat(np.random.default_rng(5).normal(0.0, 0.3, size=model.n_params))
        assert gradient_check(model, sit_labeled) < 1e-5

    @pytest.mark.parametrize("seed", range(20))
    def test_logistic_gradient_on_random_hwcns(self, seed):
        h = _random_labeled(seed)
        model = ConfidenceModel("logistic")
        model.set_flat(np.random.default_rng(seed).normal(0.0, 0.3, size=model.n_params))
        assert gradient_check(model, h) < 1e-6

    @pytest.mark.parametrize("seed", range(20))
    def test_rnn_gradient_on_random_hwcns(self, seed):
        model = ConfidenceModel("lattice_rnn", state_dim=4, hidden_dim=4, seed=seed)
        assert gradient_check(model, _random_labeled(seed)) < 1e-4

    def test_bias_only_gradient_is_exact(self, sit_labeled):
        model = ConfidenceModel("logistic", bias_only=True)
        model.set_flat(np.array([0.4]))
        assert gradient_check(model, sit_labeled) < 1e-9

    def test_gradient_check_needs_labels(self, sit_hwcn):
        with pytest.raises(ContractError):
            gradient_check(ConfidenceModel("logistic"), sit_hwcn)

    def test_model_file(self, sit_hwcn):
        model = ConfidenceModel("lattice_rnn", state_dim=4, hidden_dim=3, seed=3)
        model.standardizer = Standardizer.fit([sit_hwcn])
        restored = parse_model(serialize_model(model))
        assert restored.describe() == model.describe()
        before = model.predict(build_plan(sit_hwcn, model.standardizer))
        after = restored.predict(build_plan(sit_hwcn, restored.standardizer))
        assert np.allclose(before, after, atol=1e-6)

    @pytest.mark.parametrize("cut", ["end\n", "param co 1\n"])
    def test_truncated_model_file(self, cut):
        text = serialize_model(ConfidenceModel("lattice_rnn", state_dim=2, hidden_dim=2))
        with pytest.raises(FormatError):
            parse_model(text[: text.index(cut)])

    def test_wrong_header(self):
        with pytest.raises(FormatError):
            parse_model("THIQA-MODEL 9\nkind logistic\n")


class TestTraining:
    def test_logistic_loss_goes_down(self, tiny_hwcns):
        corpus = _split(tiny_hwcns["good"], "train")
        model, curve = train(ConfidenceModel("logistic"), corpus, TrainConfig(epochs=5, batch_size=4))
        assert len(curve) == 6
        assert curve[-1] < curve[0]
        assert model.standardizer is not None

    def test_training_is_deterministic(self, sit_labeled):
        cfg = TrainConfig(epochs=3, batch_size=1, seed=4)
        model = ConfidenceModel("lattice_rnn", state_dim=3, hidden_dim=2, seed=4)
        a, curve_a = train(model, [sit_labeled], cfg)
        b, curve_b = train(model, [sit_labeled], cfg)
        assert curve_a == curve_b
        assert np.array_equal(a.flat(), b.flat())

    def test_zero_epochs_keeps_parameters(self, sit_labeled):
        model = ConfidenceModel("lattice_rnn", state_dim=3, hidden_dim=2, seed=4)
        trained, curve = train(model, [sit_labeled], TrainConfig(epochs=0))
        assert len(curve) == 1
        assert np.array_equal(trained.flat(), model.flat())

    def test_unlabeled_corpus_rejected(self, sit_hwcn):
        with pytest.raises(ContractError):
            train(ConfidenceModel("logistic"), [sit_hwcn])

    def test_passthrough_cannot_train(self, sit_labeled):
        with pytest.raises(ContractError):
            train(ConfidenceModel("posterior_passthrough"), [sit_labeled])

    @pytest.mark.parametrize("field,value", [("learning_rate", -1.0), ("epochs", -1), ("batch_size", 0)])
    def test_bad_config(self, sit_labeled, field, value):
        cfg = TrainConfig(**{field: value})
        with pytest.raises(ContractError):
            train(ConfidenceModel("logistic"), [sit_labeled], cfg)

    def test_select_keeps_lowest_dev_eer(self, tiny_hwcns):
        hwcns = tiny_hwcns["poor"]
        grid = [{"kind": "posterior_passthrough"}, {"kind": "logistic"}]
        best, candidates = select_model(
            _split(hwcns, "train"), _split(hwcns, "dev"), grid, TrainConfig(epochs=3, batch_size=8)
        )
        assert len(candidates) == 2
        assert best.dev_eer == min(c.dev_eer for c in candidates)
        assert candidates[0].loss_curve == []
        assert candidates[1].as_row()["model"] == "logistic"
