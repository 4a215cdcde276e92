"""Inference: averaged head prediction, per-class boundaries, decision rule.

Each class (including the OOD class, fitted on pseudo samples) gets a
centroid in encoder-feature space and a radius.  An input outside every
boundary is rejected as OOD; otherwise the argmax of the averaged head
distribution decides, which may itself pick the OOD class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from softood.cotrain import DetectorModel, TeacherModel, head_predict
from softood.data import Dataset, Example, IntentSpace, PSEUDO_PROVENANCES
from softood.embedding import encode
from softood.validation import as_matrix

BOUNDARY_LR = 0.05
BOUNDARY_MAX_ITER = 1000
BOUNDARY_TOL = 1e-6


@dataclass
class Boundaries:
    centroids: np.ndarray  # (n_fitted, feature_dim)
    radii: np.ndarray  # (n_fitted,), strictly positive
    class_indices: np.ndarray  # class index per row (all k+1 by default)
    fitted_on: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.centroids = as_matrix(self.centroids, name="centroids")
        self.radii = np.asarray(self.radii, dtype=np.float64)
        self.class_indices = np.asarray(self.class_indices, dtype=np.int64)
        if self.radii.shape[0] != self.centroids.shape[0]:
            raise ValueError("one radius per centroid required")
        if self.class_indices.shape[0] != self.centroids.shape[0]:
            raise ValueError("one class index per centroid required")
        if np.any(self.radii <= 0.0):
            raise ValueError("boundary radii must be positive")


@dataclass
class BoundaryFitInfo:
    converged: bool
    iterations: int
    final_loss: float
    final_grad_norm: float


@dataclass(frozen=True)
class Prediction:
    label: int
    distribution: np.ndarray
    distances: np.ndarray
    margins: np.ndarray  # distance_i - radius_i per fitted class
    rejected_by_boundary: bool

    @property
    def min_boundary_margin(self) -> float:
        """Positive iff the input sits outside every fitted boundary."""
        return float(self.margins.min())


def avg_predict(model: DetectorModel, x: np.ndarray) -> np.ndarray:
    """Elementwise mean of the two head distributions (dropout off)."""
    feats, _ = encode(model.encoder_config, model.store, np.atleast_2d(x), train=False)
    p1, _ = head_predict(model, feats, 1, train=False)
    p2, _ = head_predict(model, feats, 2, train=False)
    avg = (p1 + p2) / 2.0
    return avg[0] if np.asarray(x).ndim == 1 else avg


def _class_features(
    model: DetectorModel,
    train_ds: Dataset,
    pseudo: list[Example],
    include_pseudo: bool,
) -> tuple[np.ndarray, np.ndarray]:
    for ex in pseudo:
        if ex.provenance not in PSEUDO_PROVENANCES:
            raise ValueError(f"example {ex.id!r} is not a pseudo-OOD sample")
    rows = [ex.features for ex in train_ds.examples]
    labels = list(train_ds.labels())
    if include_pseudo:
        rows += [ex.features for ex in pseudo]
        labels += [model.space.ood_index] * len(pseudo)
    feats, _ = encode(model.encoder_config, model.store, np.stack(rows), train=False)
    return feats, np.asarray(labels)


def fit_centroids(
    model: DetectorModel,
    train_ds: Dataset,
    pseudo: list[Example],
    ind_only: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class mean of encoder features; pseudo samples form the OOD class.

    Returns (centroids, class_indices).  With ``ind_only`` the OOD class is
    left without a centroid and the decision rule quantifies over the k
    in-domain classes only.
    """
    feats, labels = _class_features(model, train_ds, pseudo, include_pseudo=not ind_only)
    classes = list(range(model.space.k)) + ([] if ind_only else [model.space.ood_index])
    centroids = []
    for c in classes:
        members = feats[labels == c]
        if members.shape[0] == 0:
            raise ValueError(f"class {c} has no examples to fit a centroid")
        centroids.append(members.mean(axis=0))
    return np.stack(centroids), np.asarray(classes, dtype=np.int64)


def _softplus(w: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, w)


def _softplus_inv(b: np.ndarray) -> np.ndarray:
    b = np.maximum(b, 1e-6)
    return b + np.log1p(-np.exp(-b))


def boundary_loss(w: np.ndarray, dists: np.ndarray, rows: np.ndarray) -> float:
    """Containment loss over free radius parameters: mean |d - softplus(w)|."""
    b = _softplus(np.asarray(w, dtype=np.float64))
    return float(np.abs(dists - b[rows]).mean())


def boundary_loss_grad(w: np.ndarray, dists: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Analytic gradient of :func:`boundary_loss` w.r.t. the free parameters."""
    w = np.asarray(w, dtype=np.float64)
    b = _softplus(w)
    outside = dists > b[rows]
    d_b = np.zeros_like(w)
    np.add.at(d_b, rows, np.where(outside, -1.0, 1.0))
    d_b /= dists.shape[0]
    sigmoid = 1.0 / (1.0 + np.exp(-w))
    return d_b * sigmoid


def fit_boundaries(
    model: DetectorModel,
    train_ds: Dataset,
    pseudo: list[Example],
    centroids: np.ndarray | None = None,
    class_indices: np.ndarray | None = None,
    lr: float = BOUNDARY_LR,
    ind_only: bool = False,
) -> tuple[Boundaries, BoundaryFitInfo]:
    """Learn one radius per class by gradient descent on the containment loss.

    With the trained model frozen, each example pays (d - b) when outside its
    class radius and (b - d) when inside, i.e. mean |d - b| per class; the
    minimizer balances contained against excluded same-class mass.  Radii are
    ``softplus`` of free parameters so they stay positive.  The loss
    separates per class, so the best visited radius is tracked per class.
    """
    if centroids is None or class_indices is None:
        centroids, class_indices = fit_centroids(model, train_ds, pseudo, ind_only=ind_only)
    feats, labels = _class_features(model, train_ds, pseudo, include_pseudo=not ind_only)
    n_classes = centroids.shape[0]
    pos_of_class = {int(c): i for i, c in enumerate(class_indices)}
    rows = np.array([pos_of_class[int(y)] for y in labels])
    dists = np.linalg.norm(feats - centroids[rows], axis=1)
    n = dists.shape[0]

    # Warm start at each class's mean distance.
    init_b = np.array(
        [max(dists[rows == i].mean(), 1e-3) for i in range(n_classes)]
    )
    w = _softplus_inv(init_b)

    def class_losses(b: np.ndarray) -> np.ndarray:
        per_class = np.zeros(n_classes)
        np.add.at(per_class, rows, np.abs(dists - b[rows]))
        return per_class / n

    best_b = _softplus(w).copy()
    best_class_losses = class_losses(best_b)
    prev_total = best_class_losses.sum()
    converged = False
    iterations = 0
    grad_norm = math.inf
    for iterations in range(1, BOUNDARY_MAX_ITER + 1):
        grad = boundary_loss_grad(w, dists, rows)
        w = w - lr * grad
        grad_norm = float(np.linalg.norm(grad))

        b = _softplus(w)
        losses = class_losses(b)
        improved = losses < best_class_losses
        best_b[improved] = b[improved]
        best_class_losses[improved] = losses[improved]
        total = losses.sum()
        if abs(total - prev_total) < BOUNDARY_TOL:
            converged = True
            break
        prev_total = total

    boundaries = Boundaries(
        centroids=centroids,
        radii=best_b,
        class_indices=class_indices,
        fitted_on={"n_examples": int(n), "lr": lr, "ind_only": ind_only},
    )
    info = BoundaryFitInfo(
        converged=converged,
        iterations=iterations,
        final_loss=float(best_class_losses.sum()),
        final_grad_norm=grad_norm,
    )
    return boundaries, info


def detect(model: DetectorModel, boundaries: Boundaries, x: np.ndarray) -> Prediction:
    """Decision rule: OOD when outside every boundary, otherwise argmax."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("detect takes a single feature vector")
    feats, _ = encode(model.encoder_config, model.store, x, train=False)
    dists = np.linalg.norm(boundaries.centroids - feats, axis=1)
    margins = dists - boundaries.radii
    rejected = bool(np.all(margins > 0.0))
    distribution = avg_predict(model, x)
    if rejected:
        label = model.space.ood_index
    else:
        label = int(np.argmax(distribution))  # ties already break to lowest index
    return Prediction(
        label=label,
        distribution=distribution,
        distances=dists,
        margins=margins,
        rejected_by_boundary=rejected,
    )


def detect_batch(
    model: DetectorModel, boundaries: Boundaries, x: np.ndarray
) -> list[Prediction]:
    return [detect(model, boundaries, row) for row in as_matrix(x, name="inputs")]


@dataclass
class MspResult:
    threshold: float
    labels: np.ndarray
    max_probs: np.ndarray


def msp_decide(probs: np.ndarray, threshold: float, ood_index: int) -> np.ndarray:
    """OOD whenever the max softmax probability falls below the threshold."""
    max_prob = probs.max(axis=1)
    labels = probs.argmax(axis=1)
    return np.where(max_prob < threshold, ood_index, labels)


def msp_baseline(
    teacher: TeacherModel,
    valid_ind: Dataset,
    valid_ood: Dataset,
    test: Dataset,
) -> MspResult:
    """Threshold the k-way max softmax probability, tuned on validation F1.

    The threshold sweeps the 99 percentile candidates of the validation
    max-probabilities (in-domain plus the held-out OOD batch) and keeps the
    one with the best validation macro F1 over all k+1 classes.
    """
    from softood.evaluation import confusion, metrics

    if len(valid_ood) == 0:
        raise ValueError("the MSP baseline needs validation OOD examples")
    space = teacher.space
    valid_x = np.vstack([valid_ind.features(), valid_ood.features()])
    valid_gold = np.concatenate(
        [valid_ind.labels(), np.full(len(valid_ood), space.ood_index, dtype=np.int64)]
    )
    valid_probs = teacher.predict(valid_x)
    max_probs = valid_probs.max(axis=1)
    candidates = np.quantile(max_probs, np.arange(1, 100) / 100.0)

    best_threshold = float(candidates[0])
    best_f1 = -1.0
    for theta in candidates:
        preds = msp_decide(valid_probs, float(theta), space.ood_index)
        report = metrics(confusion(valid_gold, preds, space.k))
        if report.f1_all > best_f1:
            best_f1 = report.f1_all
            best_threshold = float(theta)

    test_probs = teacher.predict(test.features())
    labels = msp_decide(test_probs, best_threshold, space.ood_index)
    return MspResult(
        threshold=best_threshold, labels=labels, max_probs=test_probs.max(axis=1)
    )
