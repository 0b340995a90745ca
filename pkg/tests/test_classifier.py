import json

import numpy as np
import pytest
from sklearn.base import clone

from softlabel.classifier import (
    SoftLabelClassifier,
    TrainConfig,
    empirical_soft_risk,
    evaluate,
    grad_check,
    load_checkpoint,
    save_checkpoint,
    train,
)
from softlabel.exceptions import MissingDistributionError, TrainingDivergedError
from softlabel.supervision import build_soft_dataset
from softlabel.synth import SyntheticConfig, generate, generate_arrays


@pytest.fixture(scope="module")
def soft_batch():
    rng = np.random.default_rng(5)
    return rng.normal(size=(40, 8)), rng.dirichlet(np.ones(4), size=40)


class TestGradients:
    @pytest.mark.parametrize("width,tol", [(None, 1e-6), (16, 1e-5), (32, 1e-5)])
    def test_against_central_differences(self, soft_batch, width, tol):
        X, Y = soft_batch
        model = SoftLabelClassifier(hidden_width=width, epochs=2, weight_decay=1e-3, random_state=1).fit(X, Y)
        assert grad_check(model, X, Y, n_params=100) <= tol

    def test_zero_inputs_leave_only_weight_decay(self, soft_batch):
        X, Y = soft_batch
        model = SoftLabelClassifier(epochs=1, weight_decay=0.3).fit(X, Y)
        grads = model.gradients(np.zeros_like(X), Y)
        np.testing.assert_allclose(grads[0], 2 * 0.3 * model.coefs_[0], atol=1e-15)


class TestFit:
    def test_separable_data_is_learned(self):
        train_split, _ = generate_arrays(SyntheticConfig(2, 2, 400, 0, seed=2, class_separation=100.0))
        model = SoftLabelClassifier(epochs=100).fit(train_split.X, train_split.y)
        assert model.score(train_split.X, train_split.y) >= 0.99

    def test_zero_epochs_keep_initialisation(self, soft_batch):
        X, Y = soft_batch
        model = SoftLabelClassifier(epochs=0, random_state=9).fit(X, Y)
        bound = 1 / np.sqrt(X.shape[1])
        assert np.all(np.abs(model.coefs_[0]) <= bound) and model.loss_curve_ == []
        rng = np.random.default_rng(9)
        np.testing.assert_array_equal(model.coefs_[0], rng.uniform(-bound, bound, size=(8, 4)))

    @pytest.mark.parametrize("solver", ["sgd", "adam"])
    def test_same_seed_same_weights(self, soft_batch, solver):
        X, Y = soft_batch
        a = SoftLabelClassifier(hidden_width=8, epochs=5, solver=solver, learning_rate=0.01).fit(X, Y)
        b = SoftLabelClassifier(hidden_width=8, epochs=5, solver=solver, learning_rate=0.01).fit(X, Y)
        for p, q in zip(a.params_, b.params_):
            assert p.tobytes() == q.tobytes()

    def test_full_batch_loss_never_rises(self):
        train_split, _ = generate_arrays(SyntheticConfig(6, 20, 1000, 0, seed=0))
        model = SoftLabelClassifier(epochs=50, batch_size=None, learning_rate=1e-3).fit(train_split.X, train_split.p_star)
        assert np.all(np.diff(model.loss_curve_) <= 1e-8)

    def test_divergence_is_reported(self, soft_batch):
        X, Y = soft_batch
        # each decay step multiplies the weights by 1 - 2 * 10 * 10 = -199
        with pytest.raises(TrainingDivergedError) as info:
            SoftLabelClassifier(epochs=500, learning_rate=10.0, weight_decay=10.0).fit(X, Y)
        assert 0 < info.value.epoch < 500

    def test_outputs_are_distributions(self, soft_batch):
        X, Y = soft_batch
        model = SoftLabelClassifier(hidden_width=4, epochs=1).fit(X, Y)
        P = model.predict_proba(np.random.default_rng(0).normal(scale=50, size=(500, 8)))
        assert np.all(P >= 0)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


class TestRisk:
    def test_entropy_when_model_outputs_the_labels(self, soft_batch):
        X, _ = soft_batch
        model = SoftLabelClassifier(epochs=1).fit(X, np.arange(40) % 4)
        P = model.predict_proba(X)
        entropy = -np.sum(P * np.log(P), axis=1).mean()
        assert empirical_soft_risk(model, X, P) == pytest.approx(entropy, abs=1e-12)

    def test_uniform_labels_average_the_loss(self, soft_batch):
        X, _ = soft_batch
        model = SoftLabelClassifier(epochs=1).fit(X, np.arange(40) % 4)
        assert empirical_soft_risk(model, X[:1], [[0.25] * 4], "zero_one") == pytest.approx(0.75)

    def test_matches_double_loop(self, soft_batch):
        X, Y = soft_batch
        model = SoftLabelClassifier(epochs=1).fit(X, Y)
        P = model.predict_proba(X)
        total = 0.0
        for i in range(len(X)):
            for y in range(4):
                total += Y[i, y] * -np.log(P[i, y])
        assert empirical_soft_risk(model, X, Y) == pytest.approx(total / len(X), abs=1e-10)

    def test_linear_in_the_label_distribution(self):
        train_set, _ = generate(SyntheticConfig(4, 3, 80, 0, seed=1))
        soft = build_soft_dataset(train_set, "t2oc", 0.7)
        X = np.stack([x.features for x in soft])
        model = train(soft, TrainConfig(epochs=3))
        hard = np.eye(4)[[x.hard for x in soft]]
        p_a = np.stack([x.p_a.probs for x in soft])
        p_lam = np.stack([x.p_lambda.probs for x in soft])
        mixed = 0.7 * empirical_soft_risk(model, X, hard) + 0.3 * empirical_soft_risk(model, X, p_a)
        assert empirical_soft_risk(model, X, p_lam) == pytest.approx(mixed, abs=1e-10)

    def test_train_needs_soft_labels(self):
        train_set, _ = generate(SyntheticConfig(3, 2, 5, 0, seed=1))
        with pytest.raises(MissingDistributionError):
            train(train_set)


class TestEvaluate:
    def test_accuracy_matches_a_loop(self):
        tr, te = generate_arrays(SyntheticConfig(4, 4, 300, 200, seed=3))
        model = SoftLabelClassifier(epochs=20).fit(tr.X, tr.y)
        result = evaluate(model, te.X, te.y, te.p_star)
        pred = model.predict(te.X)
        assert result["accuracy"] == sum(int(p == y) for p, y in zip(pred, te.y)) / len(te.y)
        assert 0 <= result["true_risk_01"] <= 1

    def test_constant_model_is_at_chance(self):
        tr, te = generate_arrays(SyntheticConfig(4, 2, 40, 4000, seed=0, class_separation=0.0))
        model = SoftLabelClassifier(epochs=0).fit(tr.X, tr.y)
        model.coefs_[0][:] = 0.0
        model.intercepts_[0][:] = [0.0, 1.0, 0.0, 0.0]
        assert evaluate(model, te.X, te.y)["accuracy"] == pytest.approx(0.25, abs=0.03)

    def test_empty(self):
        model = SoftLabelClassifier(epochs=0).fit(np.zeros((2, 1)), [0, 1])
        with pytest.raises(ValueError):
            evaluate(model, np.zeros((0, 1)), [])


class TestEstimatorApi:
    def test_get_params_and_clone(self):
        model = SoftLabelClassifier(hidden_width=8, learning_rate=0.05, solver="adam")
        params = clone(model).get_params()
        assert params["hidden_width"] == 8 and params["solver"] == "adam"

    @pytest.mark.parametrize("kwargs", [{"hidden_width": 65}, {"solver": "lbfgs"}, {"learning_rate": 0.0}])
    def test_bad_params(self, kwargs):
        with pytest.raises(ValueError):
            SoftLabelClassifier(**kwargs).fit(np.zeros((2, 1)), [0, 1])

    def test_checkpoint_round_trip(self, soft_batch, tmp_path):
        X, Y = soft_batch
        model = SoftLabelClassifier(hidden_width=6, epochs=2).fit(X, Y)
        path = tmp_path / "model.json"
        save_checkpoint(model, path)
        assert json.loads(path.read_text())["architecture"] == "mlp"
        back = load_checkpoint(path)
        np.testing.assert_array_equal(back.predict_proba(X), model.predict_proba(X))

    def test_train_config_rejects_unknown_fields(self):
        from softlabel.exceptions import ConfigError

        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"momentum": 0.9})
