"""Dual classification heads, co-training losses, and the training loop.

Two (k+1)-way heads share one encoder.  In-domain batches pay a contrastive
loss plus the averaged cross-entropy of both heads against their one-hot
intents.  Pseudo-OOD batches pay a cross loss: each head is trained against
a soft target built from the other head's side (scheme-dependent), with the
target always treated as a constant so no gradient flows through the head
that produced it.  All three components are optimized as batch means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from softood.data import Dataset, Example, IntentSpace, PSEUDO_PROVENANCES
from softood.embedding import (
    EncoderConfig,
    encode,
    encode_backward,
    contrastive_loss,
    init_encoder_params,
)
from softood.graph import build_graph, smooth_all
from softood.numerics.functional import LOG_EPS, softmax
from softood.numerics.mlp import MlpCache, MlpSpec, init_mlp_params, mlp_backward, mlp_forward
from softood.numerics.optim import OptimConfig, optimizer_step
from softood.numerics.params import ParamStore
from softood.validation import as_matrix, check_prob_vector

SCHEMES = ("asoul", "onehot", "asoul-ct", "asoul-gs", "usoul", "knowd")
HEAD_PREFIXES = ("head1", "head2")
MIN_DELTA = 1e-4  # validation-loss improvement threshold for early stopping

# Seed-derivation tags, so every random stream is a pure function of the run seed.
_TAG_INIT_ENCODER = 0
_TAG_INIT_HEAD1 = 1
_TAG_INIT_HEAD2 = 2
_TAG_SHUFFLE_IND = 3
_TAG_SHUFFLE_OOD = 4
_TAG_DROPOUT = 5
_TAG_INIT_TEACHER = 6


def derive_seed(base: int, *parts: int) -> int:
    seq = np.random.SeedSequence([int(base), *[int(p) for p in parts]])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    label_scheme: str = "asoul"
    prior_weight: float = 0.11  # own-prior weight in graph smoothing
    graph_weight: float = 0.9  # smoothed-label weight inside soft targets
    contrast_temp: float = 0.1
    graph_temp: float = 0.1
    head_dropout: float = 0.6
    lr_encoder: float = 1e-5
    lr_heads: float = 1e-4
    encoder_weight_decay: float = 0.01
    batch_ind: int = 100
    batch_ood: int = 100
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    usoul_epsilon: float = 0.1
    graph_refresh_every: int = 1
    include_self: bool = False
    graph_top_m: int | None = None  # None = exact fully connected graph

    def __post_init__(self) -> None:
        if self.label_scheme not in SCHEMES:
            raise ValueError(f"label_scheme must be one of {SCHEMES}")
        for name in ("prior_weight", "graph_weight"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.contrast_temp <= 0.0 or self.graph_temp <= 0.0:
            raise ValueError("temperatures must be positive")
        if not 0.0 <= self.head_dropout < 1.0:
            raise ValueError("head_dropout must be in [0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_ind < 2:
            raise ValueError("batch_ind must be >= 2 (contrastive loss needs pairs)")
        if self.batch_ood < 1:
            raise ValueError("batch_ood must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if not 0.0 < self.usoul_epsilon < 1.0:
            raise ValueError("usoul_epsilon must be in (0, 1)")
        if self.graph_refresh_every < 1:
            raise ValueError("graph_refresh_every must be >= 1")
        if self.graph_top_m is not None and self.graph_top_m < 1:
            raise ValueError("graph_top_m must be >= 1 or null")


@dataclass
class DetectorModel:
    space: IntentSpace
    encoder_config: EncoderConfig
    head_spec: MlpSpec  # feature_dim -> ... -> k+1, instantiated per head
    store: ParamStore
    boundaries: "object | None" = None  # softood.detector.Boundaries once fitted

    def __post_init__(self) -> None:
        if self.head_spec.in_dim != self.encoder_config.feature_dim:
            raise ValueError("head input width must equal the encoder feature width")
        if self.head_spec.out_dim != self.space.n_classes:
            raise ValueError("head output width must be k+1")


def default_head_spec(
    feature_dim: int, n_classes: int, dropout: float = 0.6, negative_slope: float = 0.01
) -> MlpSpec:
    return MlpSpec(
        widths=(feature_dim, feature_dim, n_classes),
        negative_slope=negative_slope,
        dropout=dropout,
    )


def init_detector_model(
    space: IntentSpace,
    encoder_config: EncoderConfig,
    head_spec: MlpSpec,
    seed: int,
) -> DetectorModel:
    store = ParamStore()
    init_encoder_params(
        encoder_config, store, np.random.default_rng(derive_seed(seed, _TAG_INIT_ENCODER))
    )
    init_mlp_params(
        head_spec, store, "head1", np.random.default_rng(derive_seed(seed, _TAG_INIT_HEAD1))
    )
    init_mlp_params(
        head_spec, store, "head2", np.random.default_rng(derive_seed(seed, _TAG_INIT_HEAD2))
    )
    return DetectorModel(
        space=space, encoder_config=encoder_config, head_spec=head_spec, store=store
    )


def head_predict(
    model: DetectorModel,
    feats: np.ndarray,
    head: int,
    train: bool = False,
    mask_seed: int | None = None,
) -> tuple[np.ndarray, MlpCache]:
    """Softmax-normalized (k+1)-way distribution from one head."""
    if head not in (1, 2):
        raise ValueError("head must be 1 or 2")
    out, cache = mlp_forward(
        model.head_spec, model.store, HEAD_PREFIXES[head - 1], feats,
        train=train, mask_seed=mask_seed,
    )
    return softmax(out), cache


def _one_hot_rows(labels: np.ndarray, n_classes: int) -> np.ndarray:
    rows = np.zeros((labels.shape[0], n_classes))
    rows[np.arange(labels.shape[0]), labels] = 1.0
    return rows


def _ce_rows(targets: np.ndarray, probs: np.ndarray) -> np.ndarray:
    return -(targets * np.log(np.maximum(probs, LOG_EPS))).sum(axis=1)


def ind_cls_loss(
    model: DetectorModel,
    x: np.ndarray,
    labels: np.ndarray,
    train: bool = False,
    mask_seeds: tuple[int | None, int | None, int | None] = (None, None, None),
    accumulate: bool = True,
    scale: float = 1.0,
) -> float:
    """Sum over the batch of the two heads' averaged cross-entropy (one-hot)."""
    x = as_matrix(x, cols=model.encoder_config.input_dim, name="ind batch")
    labels = np.asarray(labels)
    if labels.shape != (x.shape[0],):
        raise ValueError("labels must align with the batch")
    if np.any(labels < 0) or np.any(labels >= model.space.k):
        raise ValueError("classification loss is defined on in-domain examples only")

    enc_seed, h1_seed, h2_seed = mask_seeds
    feats, enc_cache = encode(model.encoder_config, model.store, x, train=train, mask_seed=enc_seed)
    targets = _one_hot_rows(labels, model.space.n_classes)
    total = 0.0
    d_feats = np.zeros_like(feats)
    for head, seed in ((1, h1_seed), (2, h2_seed)):
        probs, cache = head_predict(model, feats, head, train=train, mask_seed=seed)
        total += 0.5 * float(_ce_rows(targets, probs).sum())
        if accumulate:
            d_out = 0.5 * (probs - targets)
            d_feats += mlp_backward(
                model.head_spec, model.store, HEAD_PREFIXES[head - 1], cache, d_out, scale=scale
            )
    if accumulate:
        encode_backward(model.encoder_config, model.store, enc_cache, d_feats, scale=scale)
    return total


def make_soft_target(
    scheme: str,
    space: IntentSpace,
    graph_label: np.ndarray | None = None,
    head_pred: np.ndarray | None = None,
    graph_weight: float = 0.9,
    usoul_epsilon: float = 0.1,
    teacher_pred: np.ndarray | None = None,
) -> np.ndarray:
    """Per-example soft target for one head's side of the co-training loss."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    ood = np.zeros(space.n_classes)
    ood[space.ood_index] = 1.0
    if scheme == "onehot":
        return ood
    if scheme == "usoul":
        target = np.full(space.n_classes, usoul_epsilon / space.k)
        target[space.ood_index] = 1.0 - usoul_epsilon
        return target
    if scheme == "knowd":
        if teacher_pred is None:
            raise ValueError("knowd needs the teacher's k-way prediction")
        teacher = check_prob_vector(teacher_pred, name="teacher prediction")
        if teacher.shape[0] != space.k:
            raise ValueError("teacher prediction must be k-way")
        lifted = np.zeros(space.n_classes)
        lifted[: space.k] = teacher  # exact zero OOD mass before interpolation
        return graph_weight * ood + (1.0 - graph_weight) * lifted
    if scheme == "asoul-ct":
        if graph_label is None:
            raise ValueError("asoul-ct needs the graph-smoothed label")
        return check_prob_vector(graph_label, name="graph label").copy()
    if head_pred is None:
        raise ValueError(f"{scheme} needs the producing head's prediction")
    pred = check_prob_vector(head_pred, name="head prediction")
    if scheme == "asoul-gs":
        base = ood
    else:  # asoul
        if graph_label is None:
            raise ValueError("asoul needs the graph-smoothed label")
        base = check_prob_vector(graph_label, name="graph label")
    return graph_weight * base + (1.0 - graph_weight) * pred


def _co_target_rows(
    config: TrainConfig,
    space: IntentSpace,
    ids: list[str],
    head_probs: np.ndarray,
    graph_labels: dict[str, np.ndarray] | None,
    knowd_targets: dict[str, np.ndarray] | None,
) -> np.ndarray:
    scheme = config.label_scheme
    n = head_probs.shape[0]
    ood = np.zeros(space.n_classes)
    ood[space.ood_index] = 1.0
    if scheme == "onehot":
        return np.tile(ood, (n, 1))
    if scheme == "usoul":
        row = np.full(space.n_classes, config.usoul_epsilon / space.k)
        row[space.ood_index] = 1.0 - config.usoul_epsilon
        return np.tile(row, (n, 1))
    if scheme == "knowd":
        if knowd_targets is None:
            raise ValueError("knowd scheme needs precomputed teacher targets")
        return np.stack([knowd_targets[i] for i in ids])
    if scheme == "asoul-gs":
        return config.graph_weight * ood + (1.0 - config.graph_weight) * head_probs
    # asoul / asoul-ct need the smoothed labels
    if graph_labels is None:
        raise ValueError(f"{scheme} scheme needs graph-smoothed labels")
    smoothed = np.stack([graph_labels[i] for i in ids])
    if scheme == "asoul-ct":
        return smoothed
    return config.graph_weight * smoothed + (1.0 - config.graph_weight) * head_probs


def co_loss(
    model: DetectorModel,
    x: np.ndarray,
    ids: list[str],
    config: TrainConfig,
    graph_labels: dict[str, np.ndarray] | None = None,
    knowd_targets: dict[str, np.ndarray] | None = None,
    train: bool = False,
    mask_seeds: tuple[int | None, int | None, int | None] = (None, None, None),
    accumulate: bool = True,
    scale: float = 1.0,
) -> float:
    """Cross co-training loss on pseudo samples: CE(target_i, other head).

    Targets are built from each head's own prediction (scheme-dependent) and
    frozen, so gradients reach only the consuming head and the encoder.
    """
    x = as_matrix(x, cols=model.encoder_config.input_dim, name="pseudo batch")
    if len(ids) != x.shape[0]:
        raise ValueError("ids must align with the batch")
    enc_seed, h1_seed, h2_seed = mask_seeds
    feats, enc_cache = encode(model.encoder_config, model.store, x, train=train, mask_seed=enc_seed)
    probs1, cache1 = head_predict(model, feats, 1, train=train, mask_seed=h1_seed)
    probs2, cache2 = head_predict(model, feats, 2, train=train, mask_seed=h2_seed)
    target1 = _co_target_rows(config, model.space, ids, probs1, graph_labels, knowd_targets)
    target2 = _co_target_rows(config, model.space, ids, probs2, graph_labels, knowd_targets)

    total = 0.5 * float(_ce_rows(target1, probs2).sum() + _ce_rows(target2, probs1).sum())
    if accumulate:
        d_out2 = 0.5 * (probs2 - target1)
        d_out1 = 0.5 * (probs1 - target2)
        d_feats = mlp_backward(model.head_spec, model.store, "head2", cache2, d_out2, scale=scale)
        d_feats += mlp_backward(model.head_spec, model.store, "head1", cache1, d_out1, scale=scale)
        encode_backward(model.encoder_config, model.store, enc_cache, d_feats, scale=scale)
    return total


@dataclass
class LossBreakdown:
    contrastive: float
    ind: float
    co: float

    @property
    def total(self) -> float:
        return self.contrastive + self.ind + self.co


def total_loss(
    model: DetectorModel,
    ind_x: np.ndarray,
    ind_labels: np.ndarray,
    ood_x: np.ndarray | None,
    ood_ids: list[str],
    config: TrainConfig,
    graph_labels: dict[str, np.ndarray] | None = None,
    knowd_targets: dict[str, np.ndarray] | None = None,
    train: bool = False,
    mask_seeds: dict[str, int | None] | None = None,
    accumulate: bool = True,
) -> LossBreakdown:
    """Unweighted sum of the three components, each as a batch mean."""
    seeds = mask_seeds or {}
    n_ind = ind_x.shape[0]
    ctr_sum, _ = contrastive_loss(
        model.encoder_config,
        model.store,
        ind_x,
        ind_labels,
        train=train,
        mask_seeds=(seeds.get("ctr_encoder"), seeds.get("ctr_projection")),
        accumulate=accumulate,
        scale=1.0 / n_ind,
    )
    ind_sum = ind_cls_loss(
        model,
        ind_x,
        ind_labels,
        train=train,
        mask_seeds=(seeds.get("cls_encoder"), seeds.get("cls_head1"), seeds.get("cls_head2")),
        accumulate=accumulate,
        scale=1.0 / n_ind,
    )
    co_mean = 0.0
    if ood_x is not None and ood_x.shape[0] > 0:
        co_sum = co_loss(
            model,
            ood_x,
            ood_ids,
            config,
            graph_labels=graph_labels,
            knowd_targets=knowd_targets,
            train=train,
            mask_seeds=(seeds.get("co_encoder"), seeds.get("co_head1"), seeds.get("co_head2")),
            accumulate=accumulate,
            scale=1.0 / ood_x.shape[0],
        )
        co_mean = co_sum / ood_x.shape[0]
    return LossBreakdown(contrastive=ctr_sum / n_ind, ind=ind_sum / n_ind, co=co_mean)


@dataclass
class EpochStats:
    epoch: int
    contrastive: float
    ind: float
    co: float
    valid: float

    def as_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "loss_contrastive": self.contrastive,
            "loss_ind": self.ind,
            "loss_co": self.co,
            "loss_valid": self.valid,
        }


def validation_loss(model: DetectorModel, valid: Dataset) -> float:
    """Mean in-domain classification loss, dropout off."""
    return ind_cls_loss(
        model, valid.features(), valid.labels(), train=False, accumulate=False
    ) / len(valid)


def _check_pseudo(pseudo: list[Example]) -> None:
    for ex in pseudo:
        if ex.provenance not in PSEUDO_PROVENANCES or ex.label is not None:
            raise ValueError(f"example {ex.id!r} is not a pseudo-OOD sample")


def knowd_soft_targets(
    teacher: "TeacherModel", pseudo: list[Example], graph_weight: float
) -> dict[str, np.ndarray]:
    """Static distillation targets: interpolate one-hot OOD with the teacher."""
    if not pseudo:
        return {}
    feats = np.stack([ex.features for ex in pseudo])
    preds = teacher.predict(feats)
    space = teacher.space
    ood = np.zeros(space.n_classes)
    ood[space.ood_index] = 1.0
    lifted = np.zeros((len(pseudo), space.n_classes))
    lifted[:, : space.k] = preds
    rows = graph_weight * ood + (1.0 - graph_weight) * lifted
    return {ex.id: rows[i] for i, ex in enumerate(pseudo)}


def train(
    train_ds: Dataset,
    pseudo: list[Example],
    valid_ds: Dataset,
    config: TrainConfig,
    encoder_config: EncoderConfig,
    head_spec: MlpSpec | None = None,
    teacher: "TeacherModel | None" = None,
) -> tuple[DetectorModel, list[EpochStats]]:
    """Full co-training loop with per-epoch graph refresh and early stopping.

    Per epoch: rebuild the embedding graph (when the scheme needs it), smooth
    labels for every pseudo sample, then walk seeded in-domain minibatches
    paired with cycling pseudo-OOD minibatches, stepping the encoder with
    decoupled-decay Adam and the projection/heads with plain Adam.  Stops
    when the validation in-domain loss fails to improve by more than 1e-4
    for ``patience`` consecutive epochs; returns the best snapshot.
    """
    if len(train_ds) == 0 or len(valid_ds) == 0:
        raise ValueError("train and valid sets must be non-empty")
    _check_pseudo(pseudo)
    if config.label_scheme == "knowd" and pseudo and teacher is None:
        raise ValueError("knowd scheme needs a trained k-way teacher")

    space = train_ds.space
    if head_spec is None:
        head_spec = default_head_spec(
            encoder_config.feature_dim, space.n_classes, dropout=config.head_dropout
        )
    model = init_detector_model(space, encoder_config, head_spec, config.seed)

    encoder_opt = OptimConfig(
        lr=config.lr_encoder, mode="adamw", weight_decay=config.encoder_weight_decay
    )
    heads_opt = OptimConfig(lr=config.lr_heads, mode="adam")
    encoder_blocks = model.store.block_names("encoder")
    head_blocks = (
        model.store.block_names("proj")
        + model.store.block_names("head1")
        + model.store.block_names("head2")
    )

    train_x = train_ds.features()
    train_y = train_ds.labels()
    pseudo_x = np.stack([ex.features for ex in pseudo]) if pseudo else None
    pseudo_ids = [ex.id for ex in pseudo]

    needs_graph = config.label_scheme in ("asoul", "asoul-ct") and bool(pseudo)
    knowd_targets = None
    if config.label_scheme == "knowd" and pseudo:
        knowd_targets = knowd_soft_targets(teacher, pseudo, config.graph_weight)

    history: list[EpochStats] = []
    best_loss = math.inf
    best_params = model.store.copy()
    epochs_without_improvement = 0
    graph_labels: dict[str, np.ndarray] | None = None

    for epoch in range(config.max_epochs):
        if needs_graph and epoch % config.graph_refresh_every == 0:
            graph = build_graph(
                encoder_config,
                model.store,
                train_ds.examples + pseudo,
                space,
                temperature=config.graph_temp,
                prior_weight=config.prior_weight,
                include_self=config.include_self,
                top_m=config.graph_top_m,
            )
            graph_labels = smooth_all(graph, pseudo_ids)

        ind_order = np.random.default_rng(
            derive_seed(config.seed, _TAG_SHUFFLE_IND, epoch)
        ).permutation(len(train_ds))
        if pseudo:
            ood_order = np.random.default_rng(
                derive_seed(config.seed, _TAG_SHUFFLE_OOD, epoch)
            ).permutation(len(pseudo))
        ood_cursor = 0

        sums = np.zeros(3)
        n_steps = 0
        for step, start in enumerate(range(0, len(train_ds), config.batch_ind)):
            ind_idx = ind_order[start : start + config.batch_ind]
            if ind_idx.size < 2:
                continue  # contrastive loss needs at least a pair
            ood_x = None
            ood_batch_ids: list[str] = []
            if pseudo:
                take = [
                    ood_order[(ood_cursor + j) % len(pseudo)]
                    for j in range(min(config.batch_ood, len(pseudo)))
                ]
                ood_cursor += len(take)
                ood_x = pseudo_x[take]
                ood_batch_ids = [pseudo_ids[j] for j in take]

            seeds = {
                name: derive_seed(config.seed, _TAG_DROPOUT, epoch, step, slot)
                for slot, name in enumerate(
                    (
                        "ctr_encoder",
                        "ctr_projection",
                        "cls_encoder",
                        "cls_head1",
                        "cls_head2",
                        "co_encoder",
                        "co_head1",
                        "co_head2",
                    )
                )
            }
            breakdown = total_loss(
                model,
                train_x[ind_idx],
                train_y[ind_idx],
                ood_x,
                ood_batch_ids,
                config,
                graph_labels=graph_labels,
                knowd_targets=knowd_targets,
                train=True,
                mask_seeds=seeds,
                accumulate=True,
            )
            if not math.isfinite(breakdown.total):
                raise TrainingDiverged(epoch, step, breakdown.total)
            optimizer_step(model.store, encoder_opt, blocks=encoder_blocks)
            optimizer_step(model.store, heads_opt, blocks=head_blocks)
            sums += (breakdown.contrastive, breakdown.ind, breakdown.co)
            n_steps += 1

        valid = validation_loss(model, valid_ds)
        if not math.isfinite(valid):
            raise TrainingDiverged(epoch, -1, valid)
        denom = max(n_steps, 1)
        history.append(
            EpochStats(
                epoch=epoch,
                contrastive=sums[0] / denom,
                ind=sums[1] / denom,
                co=sums[2] / denom,
                valid=valid,
            )
        )
        if valid < best_loss - MIN_DELTA:
            best_loss = valid
            best_params = model.store.copy()
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= config.patience:
                break

    model.store = best_params
    return model, history


@dataclass
class TeacherModel:
    """Plain k-way intent classifier used by the distillation scheme."""

    space: IntentSpace
    encoder_config: EncoderConfig
    head_spec: MlpSpec
    store: ParamStore

    def predict(self, x: np.ndarray) -> np.ndarray:
        feats, _ = encode(self.encoder_config, self.store, x, train=False)
        out, _ = mlp_forward(self.head_spec, self.store, "teacher", feats, train=False)
        return softmax(out, axis=-1)


def train_knowd_teacher(
    train_ds: Dataset,
    config: TrainConfig,
    encoder_config: EncoderConfig,
    valid_ds: Dataset | None = None,
) -> TeacherModel:
    """Train the k-way classifier whose predictions seed distillation targets."""
    if len(train_ds) == 0:
        raise ValueError("teacher needs a non-empty training set")
    space = train_ds.space
    head_spec = MlpSpec(
        widths=(encoder_config.feature_dim, encoder_config.feature_dim, space.k),
        negative_slope=encoder_config.encoder.negative_slope,
        dropout=0.0,
    )
    store = ParamStore()
    seed = derive_seed(config.seed, _TAG_INIT_TEACHER)
    init_encoder_params(encoder_config, store, np.random.default_rng(derive_seed(seed, 0)))
    init_mlp_params(head_spec, store, "teacher", np.random.default_rng(derive_seed(seed, 1)))
    teacher = TeacherModel(
        space=space, encoder_config=encoder_config, head_spec=head_spec, store=store
    )

    encoder_opt = OptimConfig(
        lr=config.lr_encoder, mode="adamw", weight_decay=config.encoder_weight_decay
    )
    heads_opt = OptimConfig(lr=config.lr_heads, mode="adam")
    encoder_blocks = store.block_names("encoder")
    head_blocks = store.block_names("teacher")

    train_x = train_ds.features()
    train_y = train_ds.labels()
    best_loss = math.inf
    best_params = store.copy()
    bad_epochs = 0

    def batch_loss(x, y, accumulate):
        feats, enc_cache = encode(encoder_config, store, x, train=False)
        out, cache = mlp_forward(head_spec, store, "teacher", feats, train=False)
        probs = softmax(out, axis=-1)
        targets = _one_hot_rows(y, space.k)
        value = float(_ce_rows(targets, probs).sum())
        if accumulate:
            scale = 1.0 / x.shape[0]
            d_feats = mlp_backward(head_spec, store, "teacher", cache, probs - targets, scale=scale)
            encode_backward(encoder_config, store, enc_cache, d_feats, scale=scale)
        return value

    for epoch in range(config.max_epochs):
        order = np.random.default_rng(
            derive_seed(seed, _TAG_SHUFFLE_IND, epoch)
        ).permutation(len(train_ds))
        for start in range(0, len(train_ds), config.batch_ind):
            idx = order[start : start + config.batch_ind]
            if idx.size == 0:
                continue
            value = batch_loss(train_x[idx], train_y[idx], accumulate=True)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, start // config.batch_ind, value)
            optimizer_step(store, encoder_opt, blocks=encoder_blocks)
            optimizer_step(store, heads_opt, blocks=head_blocks)
        if valid_ds is not None and len(valid_ds) > 0:
            valid = batch_loss(valid_ds.features(), valid_ds.labels(), accumulate=False) / len(valid_ds)
            if valid < best_loss - MIN_DELTA:
                best_loss = valid
                best_params = store.copy()
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    break

    if valid_ds is not None and len(valid_ds) > 0 and config.max_epochs > 0:
        teacher.store = best_params
    return teacher
