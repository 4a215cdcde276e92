"""Pseudo-OOD sample construction: mixup, open-domain, low-density, ingest.

All generators are deterministic under their seed and emit unlabeled
examples; the graph module alone decides what prior such samples get.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from softood.data import Dataset, DatasetError, Example, FeatureRow, load_feature_rows

METHODS = ("fm", "os", "lg", "pd-ingest")


@dataclass(frozen=True)
class PseudoOodConfig:
    method: str = "fm"
    count: int = 1
    seed: int = 0
    # feature mixup
    lambda_lo: float = 0.3
    lambda_hi: float = 0.7
    cross_class_only: bool = True
    # latent low-density sampling
    quantile: float = 0.05
    # open-domain sampling / phrase-distortion ingestion
    source: str | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not 0.0 < self.lambda_lo <= self.lambda_hi < 1.0:
            raise ValueError("lambda range must satisfy 0 < lo <= hi < 1")
        if not 0.0 < self.quantile < 1.0:
            raise ValueError("quantile must be in (0, 1)")


def feature_mixup(train: Dataset, config: PseudoOodConfig) -> list[Example]:
    """Convex combinations of in-domain feature pairs, distinct classes by default."""
    labels = train.labels()
    classes = np.unique(labels)
    if config.cross_class_only and classes.size < 2:
        raise ValueError("cross-class mixup needs at least two in-domain classes")
    if len(train) < 2:
        raise ValueError("mixup needs at least two training examples")
    rng = np.random.default_rng(config.seed)
    feats = train.features()
    out: list[Example] = []
    for i in range(config.count):
        while True:
            a, b = rng.choice(len(train), size=2, replace=False)
            if not config.cross_class_only or labels[a] != labels[b]:
                break
        lam = rng.uniform(config.lambda_lo, config.lambda_hi)
        mixed = lam * feats[a] + (1.0 - lam) * feats[b]
        out.append(
            Example(id=f"fm-{i:05d}", features=mixed, label=None, provenance="pseudo-fm")
        )
    return out


def open_domain_sample(
    source_path: str | Path, feature_dim: int, config: PseudoOodConfig
) -> list[Example]:
    """Seeded sample without replacement from an external corpus file."""
    rows = _load_source_rows(source_path, feature_dim)
    if len(rows) < config.count:
        raise DatasetError(
            f"requested {config.count} open-domain samples, only {len(rows)} available"
        )
    rng = np.random.default_rng(config.seed)
    picks = rng.choice(len(rows), size=config.count, replace=False)
    out = []
    for i, idx in enumerate(picks):
        src = rows[idx]
        out.append(
            Example(
                id=f"os-{i:05d}",
                features=src.features,
                label=None,
                provenance="pseudo-os",
                text=src.text,
            )
        )
    return out


def latent_lowdensity_sample(train: Dataset, config: PseudoOodConfig) -> list[Example]:
    """Rejection-sample the low-density region between the class Gaussians.

    Per-class diagonal Gaussians are fitted on the training features; a
    proposal (drawn from a Gaussian at the global mean with the pooled
    within-class variance) is accepted when its best per-class log-density
    falls below the ``quantile`` level of the training points' own best
    log-densities.
    """
    labels = train.labels()
    classes = np.unique(labels)
    feats = train.features()
    for c in classes:
        if (labels == c).sum() < 2:
            raise ValueError(f"class {c} needs at least two examples to fit a Gaussian")

    means = np.stack([feats[labels == c].mean(axis=0) for c in classes])
    variances = np.stack([feats[labels == c].var(axis=0) for c in classes])
    variances = np.maximum(variances, 1e-12)

    def best_log_density(points: np.ndarray) -> np.ndarray:
        # max over classes of the diagonal-Gaussian log pdf
        scores = np.full(points.shape[0], -np.inf)
        for mu, var in zip(means, variances):
            log_pdf = -0.5 * (
                ((points - mu) ** 2 / var).sum(axis=1)
                + np.log(2.0 * np.pi * var).sum()
            )
            scores = np.maximum(scores, log_pdf)
        return scores

    threshold = float(np.quantile(best_log_density(feats), config.quantile))

    global_mean = feats.mean(axis=0)
    counts = np.array([(labels == c).sum() for c in classes], dtype=np.float64)
    pooled_var = np.maximum(
        (variances * counts[:, None]).sum(axis=0) / counts.sum(), 1e-12
    )
    pooled_std = np.sqrt(pooled_var)

    rng = np.random.default_rng(config.seed)
    accepted: list[np.ndarray] = []
    proposals_left = 1000 * config.count
    batch = max(64, config.count)
    while len(accepted) < config.count:
        if proposals_left <= 0:
            raise RuntimeError(
                f"low-density sampler accepted only {len(accepted)}/{config.count} "
                f"after {1000 * config.count} proposals; lower the quantile"
            )
        n = min(batch, proposals_left)
        draws = global_mean + pooled_std * rng.standard_normal((n, feats.shape[1]))
        proposals_left -= n
        keep = best_log_density(draws) < threshold
        accepted.extend(draws[keep])
    return [
        Example(id=f"lg-{i:05d}", features=accepted[i], label=None, provenance="pseudo-lg")
        for i in range(config.count)
    ]


def ingest_pd(
    path: str | Path, feature_dim: int, config: PseudoOodConfig | None = None
) -> tuple[list[Example], int]:
    """Load externally generated phrase-distortion samples.

    Labels found in the file are overwritten to unlabeled; the count of such
    overwrites is returned so callers can warn.
    """
    rows = _load_source_rows(path, feature_dim)
    if not rows:
        raise DatasetError(f"{Path(path).name}: no examples to ingest")
    overwritten = 0
    out = []
    for src in rows:
        if src.label_name is not None:
            overwritten += 1
        out.append(
            Example(
                id=src.id,
                features=src.features,
                label=None,
                provenance="pseudo-pd",
                text=src.text,
            )
        )
    return out, overwritten


def generate(
    train: Dataset, config: PseudoOodConfig, feature_dim: int | None = None
) -> list[Example]:
    """Dispatch on the configured generation method."""
    dim = feature_dim if feature_dim is not None else train.feature_dim
    if config.method == "fm":
        return feature_mixup(train, config)
    if config.method == "os":
        if config.source is None:
            raise ValueError("open-domain sampling needs a source file")
        return open_domain_sample(config.source, dim, config)
    if config.method == "lg":
        return latent_lowdensity_sample(train, config)
    if config.method == "pd-ingest":
        if config.source is None:
            raise ValueError("phrase-distortion ingestion needs a source file")
        examples, _ = ingest_pd(config.source, dim, config)
        return examples
    raise ValueError(f"unknown method {config.method!r}")


def _load_source_rows(path: str | Path, feature_dim: int) -> list[FeatureRow]:
    return load_feature_rows(path, feature_dim)
