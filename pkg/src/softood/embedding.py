"""Encoder, projection head, and the supervised contrastive loss.

The encoder is a trainable MLP over precomputed feature vectors; the
projection maps its output onto the unit sphere where the contrastive loss
pulls same-intent samples together.  Gradients are accumulated into the
shared parameter store by the ``*_backward`` halves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from softood.numerics.functional import l2_normalize, l2_normalize_backward
from softood.numerics.mlp import MlpCache, MlpSpec, init_mlp_params, mlp_backward, mlp_forward
from softood.numerics.params import ParamStore
from softood.validation import as_matrix

ENCODER_PREFIX = "encoder"
PROJECTION_PREFIX = "proj"


@dataclass(frozen=True)
class EncoderConfig:
    encoder: MlpSpec  # input_dim -> ... -> feature_dim
    projection: MlpSpec  # feature_dim -> ... -> proj_dim
    contrast_temp: float = 0.1

    def __post_init__(self) -> None:
        if self.projection.in_dim != self.encoder.out_dim:
            raise ValueError(
                f"projection input width {self.projection.in_dim} must equal "
                f"encoder output width {self.encoder.out_dim}"
            )
        if self.contrast_temp <= 0.0:
            raise ValueError("contrastive temperature must be positive")

    @property
    def input_dim(self) -> int:
        return self.encoder.in_dim

    @property
    def feature_dim(self) -> int:
        return self.encoder.out_dim

    @property
    def proj_dim(self) -> int:
        return self.projection.out_dim


def default_encoder_config(
    input_dim: int,
    feature_dim: int = 1024,
    proj_dim: int = 128,
    negative_slope: float = 0.01,
    encoder_dropout: float = 0.0,
    projection_dropout: float = 0.0,
    contrast_temp: float = 0.1,
) -> EncoderConfig:
    """Two-layer encoder and projection MLPs with shared hidden width."""
    return EncoderConfig(
        encoder=MlpSpec(
            widths=(input_dim, feature_dim, feature_dim),
            negative_slope=negative_slope,
            dropout=encoder_dropout,
        ),
        projection=MlpSpec(
            widths=(feature_dim, feature_dim, proj_dim),
            negative_slope=negative_slope,
            dropout=projection_dropout,
        ),
        contrast_temp=contrast_temp,
    )


def init_encoder_params(config: EncoderConfig, store: ParamStore, rng: np.random.Generator) -> None:
    init_mlp_params(config.encoder, store, ENCODER_PREFIX, rng)
    init_mlp_params(config.projection, store, PROJECTION_PREFIX, rng)


def encode(
    config: EncoderConfig,
    store: ParamStore,
    x: np.ndarray,
    train: bool = False,
    mask_seed: int | None = None,
) -> tuple[np.ndarray, MlpCache]:
    """Shared representation used by both the projection and the heads."""
    return mlp_forward(config.encoder, store, ENCODER_PREFIX, x, train=train, mask_seed=mask_seed)


def encode_backward(
    config: EncoderConfig, store: ParamStore, cache: MlpCache, d_out: np.ndarray, scale: float = 1.0
) -> np.ndarray:
    return mlp_backward(config.encoder, store, ENCODER_PREFIX, cache, d_out, scale=scale)


@dataclass
class EmbedCache:
    encoder: MlpCache
    projection: MlpCache
    pre_norm: np.ndarray


def embed(
    config: EncoderConfig,
    store: ParamStore,
    x: np.ndarray,
    train: bool = False,
    mask_seeds: tuple[int, int] | None = None,
) -> tuple[np.ndarray, EmbedCache]:
    """Unit-norm embedding of one vector or a batch of rows."""
    enc_seed, proj_seed = mask_seeds if mask_seeds is not None else (None, None)
    feats, enc_cache = encode(config, store, x, train=train, mask_seed=enc_seed)
    pre, proj_cache = mlp_forward(
        config.projection, store, PROJECTION_PREFIX, feats, train=train, mask_seed=proj_seed
    )
    z = l2_normalize(pre)
    return z, EmbedCache(encoder=enc_cache, projection=proj_cache, pre_norm=pre)


def embed_backward(
    config: EncoderConfig, store: ParamStore, cache: EmbedCache, d_z: np.ndarray, scale: float = 1.0
) -> np.ndarray:
    d_pre = l2_normalize_backward(cache.pre_norm, d_z)
    d_feats = mlp_backward(config.projection, store, PROJECTION_PREFIX, cache.projection, d_pre, scale=scale)
    return mlp_backward(config.encoder, store, ENCODER_PREFIX, cache.encoder, d_feats, scale=scale)


@dataclass
class ContrastiveInfo:
    n_anchors: int
    skipped_anchors: int
    per_anchor_mean: float


def contrastive_loss(
    config: EncoderConfig,
    store: ParamStore,
    x: np.ndarray,
    labels: np.ndarray,
    train: bool = False,
    mask_seeds: tuple[int, int] | None = None,
    accumulate: bool = True,
    scale: float = 1.0,
) -> tuple[float, ContrastiveInfo]:
    """Supervised contrastive loss over a batch of in-domain samples.

    Each anchor with a non-empty positive set (same-label others in the
    batch) contributes the mean over positives of
    ``-log softmax(z_i . z_j / temp)`` where the softmax runs over every
    other sample in the batch.  Anchors without positives are skipped and
    counted.  Returns the sum over anchors; gradients (scaled by ``scale``)
    flow through both the projection and the encoder when ``accumulate``.
    """
    x = as_matrix(x, name="contrastive batch")
    labels = np.asarray(labels)
    n = x.shape[0]
    if n < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    if labels.shape != (n,):
        raise ValueError("labels must align with the batch")
    if np.any(labels < 0):
        raise ValueError("contrastive batch must be fully labeled in-domain")

    temp = config.contrast_temp
    z, cache = embed(config, store, x, train=train, mask_seeds=mask_seeds)
    sims = (z @ z.T) / temp
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(n, dtype=bool)
    positives = same & off_diag

    # Row-wise log-sum-exp over the batch minus the anchor itself.
    shifted = sims - sims.max(axis=1, keepdims=True)
    exp = np.exp(shifted) * off_diag
    lse = np.log(exp.sum(axis=1)) + sims.max(axis=1)

    pos_counts = positives.sum(axis=1)
    used = pos_counts > 0
    total = 0.0
    d_sims = np.zeros_like(sims)
    for i in np.flatnonzero(used):
        pos_idx = np.flatnonzero(positives[i])
        total += float((lse[i] - sims[i, pos_idx]).mean())
        # d loss_i / d sims[i, k] = p_ik - 1[k positive]/|positives|.
        p_row = exp[i] / exp[i].sum()
        d_sims[i] += p_row
        d_sims[i, pos_idx] -= 1.0 / pos_counts[i]

    n_used = int(used.sum())
    info = ContrastiveInfo(
        n_anchors=n_used,
        skipped_anchors=int(n - n_used),
        per_anchor_mean=total / n_used if n_used else 0.0,
    )
    if accumulate and n_used:
        d_z = (d_sims @ z + d_sims.T @ z) / temp
        embed_backward(config, store, cache, d_z, scale=scale)
    return total, info
