"""Scikit-learn-style estimator wrapping the full detection pipeline.

``fit(X, y)`` takes in-domain feature vectors with their intent labels,
synthesizes pseudo-OOD samples, co-trains the dual-head detector, and fits
the per-class decision boundaries.  ``predict`` returns the training labels
or ``ood_label`` for rejected inputs; ``predict_proba`` exposes the averaged
(k+1)-way head distribution whose last column is the OOD class.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_X_y

from softood.cotrain import TrainConfig, train, train_knowd_teacher
from softood.data import Dataset, Example, IntentSpace
from softood.detector import detect_batch, fit_boundaries
from softood.embedding import default_encoder_config
from softood.oodgen import PseudoOodConfig, generate


class SoftOodDetector(BaseEstimator, ClassifierMixin):
    """Out-of-domain intent detector with graph-smoothed soft pseudo-labels."""

    def __init__(
        self,
        ood_method: str = "fm",
        label_scheme: str = "asoul",
        prior_weight: float = 0.11,
        graph_weight: float = 0.9,
        contrast_temp: float = 0.1,
        graph_temp: float = 0.1,
        head_dropout: float = 0.6,
        lr_encoder: float = 1e-5,
        lr_heads: float = 1e-4,
        batch_ind: int = 100,
        batch_ood: int = 100,
        max_epochs: int = 50,
        patience: int = 5,
        feature_dim: int = 64,
        proj_dim: int = 32,
        pseudo_count: int | None = None,
        valid_fraction: float = 0.1,
        ood_label=-1,
        ood_source: str | None = None,
        random_state: int = 0,
    ):
        self.ood_method = ood_method
        self.label_scheme = label_scheme
        self.prior_weight = prior_weight
        self.graph_weight = graph_weight
        self.contrast_temp = contrast_temp
        self.graph_temp = graph_temp
        self.head_dropout = head_dropout
        self.lr_encoder = lr_encoder
        self.lr_heads = lr_heads
        self.batch_ind = batch_ind
        self.batch_ood = batch_ood
        self.max_epochs = max_epochs
        self.patience = patience
        self.feature_dim = feature_dim
        self.proj_dim = proj_dim
        self.pseudo_count = pseudo_count
        self.valid_fraction = valid_fraction
        self.ood_label = ood_label
        self.ood_source = ood_source
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            label_scheme=self.label_scheme,
            prior_weight=self.prior_weight,
            graph_weight=self.graph_weight,
            contrast_temp=self.contrast_temp,
            graph_temp=self.graph_temp,
            head_dropout=self.head_dropout,
            lr_encoder=self.lr_encoder,
            lr_heads=self.lr_heads,
            batch_ind=self.batch_ind,
            batch_ood=self.batch_ood,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.random_state,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two in-domain intents")
        if any(np.asarray(self.ood_label == c).any() for c in self.classes_):
            raise ValueError("ood_label collides with a training label")
        index_of = {label: i for i, label in enumerate(self.classes_)}
        indices = np.array([index_of[label] for label in y])

        space = IntentSpace(tuple(str(c) for c in self.classes_))
        if not 0.0 < self.valid_fraction < 1.0:
            raise ValueError("valid_fraction must be in (0, 1)")

        # Seeded stratified holdout for early stopping.
        rng = np.random.default_rng(self.random_state)
        valid_mask = np.zeros(len(y), dtype=bool)
        for c in range(space.k):
            members = np.flatnonzero(indices == c)
            if members.size < 2:
                raise ValueError("every intent needs at least two examples")
            n_hold = max(1, round(self.valid_fraction * members.size))
            n_hold = min(n_hold, members.size - 1)
            valid_mask[rng.choice(members, size=n_hold, replace=False)] = True

        def build(mask, provenance="ind"):
            return Dataset(
                [
                    Example(
                        id=f"fit-{i}",
                        features=X[i],
                        label=int(indices[i]),
                        provenance=provenance,
                    )
                    for i in np.flatnonzero(mask)
                ],
                space,
                X.shape[1],
            )

        train_ds = build(~valid_mask)
        valid_ds = build(valid_mask)

        ood_cfg = PseudoOodConfig(
            method=self.ood_method,
            count=self.pseudo_count or len(train_ds),
            seed=self.random_state,
            source=self.ood_source,
        )
        pseudo = generate(train_ds, ood_cfg)

        config = self._train_config()
        encoder_config = default_encoder_config(
            input_dim=X.shape[1],
            feature_dim=self.feature_dim,
            proj_dim=self.proj_dim,
            contrast_temp=self.contrast_temp,
        )
        teacher = None
        if config.label_scheme == "knowd":
            teacher = train_knowd_teacher(train_ds, config, encoder_config, valid_ds=valid_ds)
        self.model_, self.history_ = train(
            train_ds, pseudo, valid_ds, config, encoder_config, teacher=teacher
        )
        boundaries, self.boundary_fit_info_ = fit_boundaries(self.model_, train_ds, pseudo)
        self.model_.boundaries = boundaries
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this SoftOodDetector instance is not fitted yet")

    def predict(self, X):
        self._check_fitted()
        X = check_array(X, dtype=np.float64)
        predictions = detect_batch(self.model_, self.model_.boundaries, X)
        out = []
        for pred in predictions:
            if pred.label == self.model_.space.ood_index:
                out.append(self.ood_label)
            else:
                out.append(self.classes_[pred.label])
        return np.asarray(out)

    def predict_proba(self, X):
        """Averaged dual-head distribution; the last column is the OOD class."""
        self._check_fitted()
        X = check_array(X, dtype=np.float64)
        from softood.detector import avg_predict

        return avg_predict(self.model_, X)

    def decision_margins(self, X):
        """Per-class boundary margins (distance minus radius); negative = inside."""
        self._check_fitted()
        X = check_array(X, dtype=np.float64)
        return np.stack(
            [p.margins for p in detect_batch(self.model_, self.model_.boundaries, X)]
        )
