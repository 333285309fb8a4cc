import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from convnlu.errors import ConfigError, DataError, DimensionError
from convnlu.estimator import ConvJointNLU, StructuredPruner, check_tags, check_utterances

PARAMS = dict(num_filters=16, kernel_size=3, embed_dim=16, max_seq_len=30, lr=1e-2, max_epochs=6)


def _xy(examples):
    return [ex.tokens for ex in examples], [ex.intent for ex in examples], [ex.slot_tags for ex in examples]


@pytest.fixture(scope="module")
def data(corpus):
    return _xy(corpus["train"]), _xy(corpus["dev"]), _xy(corpus["test"])


@pytest.fixture(scope="module")
def fitted(data):
    (X, y, t), dev, _ = data
    return ConvJointNLU(**PARAMS).fit(X, y, t, eval_set=dev)


class TestValidation:
    def test_utterances(self):
        assert check_utterances(["a b", ["c"]]) == [["a", "b"], ["c"]]
        for bad in ("a b", [], ["a", ""]):
            with pytest.raises(DataError):
                check_utterances(bad)

    def test_tags(self):
        assert check_tags([["a", "b"]], ["O B-x"]) == [["O", "B-x"]]
        with pytest.raises(DimensionError):
            check_tags([["a", "b"]], [["O"]])
        with pytest.raises(DimensionError):
            check_tags([["a"]], [])

    def test_joint_needs_tags(self, data):
        X, y, _ = data[0]
        with pytest.raises(ConfigError):
            ConvJointNLU(**PARAMS).fit(X, y)

    def test_intent_needs_labels(self, data):
        X, _, t = data[0]
        with pytest.raises(ConfigError):
            ConvJointNLU(task="intent", **PARAMS).fit(X, tags=t)

    def test_label_count(self, data):
        X, y, t = data[0]
        with pytest.raises(DimensionError):
            ConvJointNLU(**PARAMS).fit(X, y[:-1], t)

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            ConvJointNLU().predict(["a"])


class TestConvJointNLU:
    def test_params_round_trip(self):
        est = ConvJointNLU(num_filters=7, alpha=0.4)
        c = clone(est)
        assert c.get_params() == est.get_params()
        assert c.set_params(kernel_size=3).kernel_size == 3

    def test_fitted_attributes(self, fitted, data):
        assert fitted.model_.num_filters == 16
        assert set(data[0][1]) <= set(fitted.classes_)
        assert fitted.slot_tags_[0] == "O"
        assert fitted.n_params_ == fitted.model_.num_filters * (3 * 16 + 1 + len(fitted.classes_)
                                                                 + len(fitted.slot_tags_)) + \
            len(fitted.classes_) + len(fitted.slot_tags_)
        assert 1 <= fitted.best_epoch_ <= len(fitted.history_)

    def test_predict_and_score(self, fitted, data):
        X, y, t = data[2]
        pred = fitted.predict(X)
        assert pred.shape == (len(X),)
        assert fitted.score(X, y) == pytest.approx(np.mean(pred == np.array(y)))
        tags = fitted.predict_tags(X)
        assert [len(a) for a in tags] == [len(b) for b in t]
        assert fitted.score(X, y) > 0.5

    def test_accepts_strings(self, fitted, data):
        X = data[2][0][:5]
        np.testing.assert_array_equal(fitted.predict([" ".join(x) for x in X]), fitted.predict(X))

    def test_long_utterance_tags_padded(self, fitted):
        (tags,) = fitted.predict_tags([["w"] * 40])
        assert len(tags) == 40 and tags[30:] == ["O"] * 10

    def test_deterministic(self, data):
        (X, y, t), dev, test = data
        a = ConvJointNLU(**{**PARAMS, "max_epochs": 2}).fit(X, y, t, eval_set=dev)
        b = ConvJointNLU(**{**PARAMS, "max_epochs": 2}).fit(X, y, t, eval_set=dev)
        np.testing.assert_array_equal(a.model_.conv_w.data, b.model_.conv_w.data)

    def test_holdout_without_eval_set(self, data):
        X, y, t = data[0]
        est = ConvJointNLU(**{**PARAMS, "max_epochs": 1}).fit(X, y, t)
        assert len(est.history_) == 1

    def test_save_and_reload(self, fitted, data, tmp_path):
        path = fitted.save(tmp_path / "m.ckpt")
        again = ConvJointNLU.from_checkpoint(path, max_seq_len=30)
        X = data[2][0]
        np.testing.assert_array_equal(again.predict(X), fitted.predict(X))
        assert again.num_filters == 16

    def test_slot_only_score_is_f1(self, data):
        (X, _, t), (Xd, _, td), (Xt, _, tt) = data
        est = ConvJointNLU(task="slot", **PARAMS).fit(X, tags=t, eval_set=(Xd, None, td))
        assert est.classes_.size == 0
        with pytest.raises(ConfigError):
            est.predict(Xt)
        from convnlu.metrics import slot_f1

        assert est.score(Xt, tt) == slot_f1(est.predict_tags(Xt), tt)[2]


class TestStructuredPruner:
    def test_one_shot(self, fitted, data):
        p = StructuredPruner(fitted, mode="one-shot", target_sparsity=0.5).fit()
        assert p.estimator_.model_.num_filters == 8
        assert p.estimator_.num_filters == 8
        assert fitted.model_.num_filters == 16
        assert p.predict(data[2][0]).shape == (len(data[2][0]),)

    def test_iterative(self, fitted, data):
        (X, y, t), dev, test = data
        base = clone(fitted).set_params(max_epochs=1)
        base._set_model(fitted.model_)
        p = StructuredPruner(base, target_sparsity=0.25, step_fraction=0.125).fit(X, y, t, eval_set=dev)
        assert [pt.filters_remaining for pt in p.curve_] == [14, 12]
        assert p.estimator_.model_.num_filters == 12
        assert 0.0 <= p.score(test[0], test[1]) <= 1.0

    def test_iterative_needs_data(self, fitted):
        with pytest.raises(ConfigError):
            StructuredPruner(fitted).fit()

    def test_needs_estimator(self):
        with pytest.raises(ConfigError):
            StructuredPruner().fit()
