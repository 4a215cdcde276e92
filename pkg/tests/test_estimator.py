import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from softood import SoftOodDetector


def blob_data(seed=0, n_classes=3, n_per_class=40, dim=8, scale=6.0, sigma=0.6):
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= scale
    X, y = [], []
    for c in range(n_classes):
        X.append(centers[c] + sigma * rng.standard_normal((n_per_class, dim)))
        y.extend([c] * n_per_class)
    return np.vstack(X), np.asarray(y), centers


def fast_detector(**overrides):
    params = dict(
        lr_encoder=1e-3,
        lr_heads=1e-2,
        batch_ind=16,
        batch_ood=16,
        max_epochs=15,
        patience=15,
        head_dropout=0.3,
        feature_dim=16,
        proj_dim=8,
        random_state=0,
    )
    params.update(overrides)
    return SoftOodDetector(**params)


class TestEstimatorApi:
    def test_get_set_params_round_trip(self):
        det = fast_detector()
        params = det.get_params()
        assert params["label_scheme"] == "asoul"
        det.set_params(graph_weight=0.8)
        assert det.graph_weight == 0.8

    def test_clone_compatible(self):
        det = fast_detector(graph_weight=0.7)
        twin = clone(det)
        assert twin.get_params() == det.get_params()

    def test_unfitted_predict_raises(self):
        with pytest.raises(NotFittedError):
            fast_detector().predict(np.zeros((1, 8)))

    def test_fit_predict_in_domain(self):
        # The containment loss pins each radius at the class-median distance,
        # so a sizable share of in-domain shell mass is rejected by design;
        # what must hold is that accepted points are classified correctly.
        X, y, _ = blob_data()
        det = fast_detector().fit(X, y)
        preds = det.predict(X)
        in_domain = preds != det.ood_label
        assert in_domain.mean() > 0.3
        acc = (preds[in_domain] == y[in_domain]).mean()
        assert acc > 0.9

    def test_far_points_rejected(self):
        X, y, centers = blob_data()
        det = fast_detector().fit(X, y)
        rng = np.random.default_rng(9)
        far = rng.standard_normal((30, X.shape[1])) * 0.1 + 40.0
        preds = det.predict(far)
        assert (preds == det.ood_label).mean() > 0.9

    def test_predict_proba_shape_and_rows(self):
        X, y, _ = blob_data()
        det = fast_detector(max_epochs=3).fit(X, y)
        proba = det.predict_proba(X[:7])
        assert proba.shape == (7, len(det.classes_) + 1)
        np.testing.assert_allclose(proba.sum(axis=1), np.ones(7), atol=1e-9)

    def test_string_labels_supported(self):
        X, y, _ = blob_data()
        names = np.array(["alpha", "beta", "gamma"])[y]
        det = fast_detector(max_epochs=3, ood_label="ood").fit(X, names)
        preds = det.predict(X[:5])
        valid = set(det.classes_) | {"ood"}
        assert all(p in valid for p in preds)

    def test_ood_label_collision_rejected(self):
        X, y, _ = blob_data()
        with pytest.raises(ValueError, match="collides"):
            fast_detector(max_epochs=2, ood_label=0).fit(X, y)

    def test_decision_margins_shape(self):
        X, y, _ = blob_data()
        det = fast_detector(max_epochs=3).fit(X, y)
        margins = det.decision_margins(X[:4])
        assert margins.shape == (4, len(det.classes_) + 1)

    def test_deterministic_under_random_state(self):
        X, y, _ = blob_data()
        a = fast_detector(max_epochs=3).fit(X, y).predict(X[:20])
        b = fast_detector(max_epochs=3).fit(X, y).predict(X[:20])
        np.testing.assert_array_equal(a, b)
