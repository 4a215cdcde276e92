"""Confusion matrices, the metric suite, experiment running, and sweeps."""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from softood.cotrain import TrainConfig, train, train_knowd_teacher
from softood.data import (
    Dataset,
    DatasetBundle,
    SplitSpec,
    load_dataset_dir,
    make_ind_split,
    synth_clusters,
)
from softood.detector import detect_batch, fit_boundaries, msp_baseline
from softood.embedding import default_encoder_config
from softood.oodgen import PseudoOodConfig, generate

HEADLINE_METRICS = ("acc_all", "f1_all", "f1_ood", "f1_ind")
CSV_COLUMNS = ("Acc-All", "F1-All", "F1-OOD", "F1-IND")
REPORT_FORMAT_VERSION = 1


def confusion(golds, preds, k: int) -> np.ndarray:
    """(k+1) x (k+1) count matrix, rows gold, columns predicted."""
    golds = np.asarray(golds, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    if golds.shape != preds.shape or golds.ndim != 1:
        raise ValueError("golds and preds must be equal-length 1-D arrays")
    if golds.size == 0:
        raise ValueError("cannot build a confusion matrix from zero examples")
    n_classes = k + 1
    if golds.min() < 0 or golds.max() >= n_classes or preds.min() < 0 or preds.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (golds, preds), 1)
    return matrix


@dataclass
class MetricReport:
    acc_all: float
    f1_all: float
    f1_ind: float
    f1_ood: float
    micro_f1_all: float
    per_class: list[dict]
    seed: int | None = None
    config_hash: str | None = None

    def headline(self) -> dict:
        return {name: getattr(self, name) for name in HEADLINE_METRICS}

    def as_dict(self) -> dict:
        return {
            **self.headline(),
            "micro_f1_all": self.micro_f1_all,
            "per_class": self.per_class,
            "seed": self.seed,
            "config_hash": self.config_hash,
        }


def metrics(matrix: np.ndarray) -> MetricReport:
    """Accuracy plus macro/micro F1; 0/0 precision, recall, or F1 become 0.

    For single-label classification the micro F1 over all classes equals the
    overall accuracy, so it is reported from the same trace.
    """
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 2:
        raise ValueError("confusion matrix must be square with k+1 >= 2 classes")
    total = matrix.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    n_classes = matrix.shape[0]
    diag = np.diag(matrix).astype(np.float64)
    gold_counts = matrix.sum(axis=1).astype(np.float64)
    pred_counts = matrix.sum(axis=0).astype(np.float64)

    per_class = []
    f1s = np.zeros(n_classes)
    for c in range(n_classes):
        precision = diag[c] / pred_counts[c] if pred_counts[c] > 0 else 0.0
        recall = diag[c] / gold_counts[c] if gold_counts[c] > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        f1s[c] = f1
        per_class.append(
            {
                "class_index": c,
                "precision": float(precision),
                "recall": float(recall),
                "f1": float(f1),
                "support": int(gold_counts[c]),
            }
        )

    acc = float(diag.sum() / total)
    return MetricReport(
        acc_all=acc,
        f1_all=float(f1s.mean()),
        f1_ind=float(f1s[:-1].mean()),
        f1_ood=float(f1s[-1]),
        micro_f1_all=acc,
        per_class=per_class,
    )


def welch_p_value(a, b) -> float:
    """Welch's unequal-variance t-test; identical samples count as p = 1."""
    import warnings

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape == b.shape and np.allclose(a, b, rtol=0, atol=0):
        return 1.0
    if np.var(a) == 0.0 and np.var(b) == 0.0:
        return 1.0 if a.mean() == b.mean() else 0.0
    with warnings.catch_warnings():
        # scipy warns about catastrophic cancellation on near-identical data
        warnings.simplefilter("ignore", RuntimeWarning)
        return float(stats.ttest_ind(a, b, equal_var=False).pvalue)


# ---------------------------------------------------------------------------
# Pipeline configuration and the multi-seed runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    n_intents: int = 8
    dim: int = 16
    n_per_intent: int = 100
    center_scale: float = 4.0
    noise_sigma: float = 1.0


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 64
    proj_dim: int = 32
    negative_slope: float = 0.01
    encoder_dropout: float = 0.0
    projection_dropout: float = 0.0


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one seeded run needs: data, split, generation, training."""

    data: SynthConfig | str = field(default_factory=SynthConfig)
    split_ratio: float | None = 0.5
    valid_ood_n: int | None = None  # carved for the MSP baseline when set
    pseudo_count: int | None = None  # defaults to the IND train size
    oodgen: PseudoOodConfig = field(default_factory=PseudoOodConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    with_msp: bool = False

    def resolved(self, seed: int) -> "PipelineConfig":
        return replace(
            self,
            oodgen=replace(self.oodgen, seed=seed),
            train=replace(self.train, seed=seed),
        )

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if isinstance(self.data, str):
            out["data"] = {"dir": self.data}
        return out


def config_hash(config: PipelineConfig, seed: int | None = None) -> str:
    payload = config.as_dict()
    if seed is not None:
        payload["seed"] = seed
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def _load_bundle(config: PipelineConfig, seed: int) -> DatasetBundle:
    if isinstance(config.data, str):
        return load_dataset_dir(config.data)
    return synth_clusters(
        n_intents=config.data.n_intents,
        dim=config.data.dim,
        n_per_intent=config.data.n_per_intent,
        center_scale=config.data.center_scale,
        noise_sigma=config.data.noise_sigma,
        seed=seed,
    )


@dataclass
class PipelineArtifacts:
    model: object
    history: list
    bundle: DatasetBundle
    pseudo: list
    msp_report: MetricReport | None = None


def run_pipeline(
    config: PipelineConfig, seed: int, return_artifacts: bool = False
) -> MetricReport | tuple[MetricReport, PipelineArtifacts]:
    """split -> generate -> train -> fit boundaries -> detect -> metrics."""
    resolved = config.resolved(seed)
    bundle = _load_bundle(resolved, seed)
    if resolved.split_ratio is not None:
        bundle = make_ind_split(
            bundle,
            SplitSpec(ind_ratio=resolved.split_ratio, seed=seed),
            valid_ood_n=resolved.valid_ood_n,
        )

    pseudo_count = resolved.pseudo_count or len(bundle.train)
    ood_cfg = replace(resolved.oodgen, count=pseudo_count)
    pseudo = generate(bundle.train, ood_cfg)

    encoder_config = default_encoder_config(
        input_dim=bundle.feature_dim,
        feature_dim=resolved.model.feature_dim,
        proj_dim=resolved.model.proj_dim,
        negative_slope=resolved.model.negative_slope,
        encoder_dropout=resolved.model.encoder_dropout,
        projection_dropout=resolved.model.projection_dropout,
        contrast_temp=resolved.train.contrast_temp,
    )
    teacher = None
    if resolved.train.label_scheme == "knowd" or resolved.with_msp:
        teacher = train_knowd_teacher(
            bundle.train, resolved.train, encoder_config, valid_ds=bundle.valid
        )
    model, history = train(
        bundle.train, pseudo, bundle.valid, resolved.train, encoder_config, teacher=teacher
    )
    boundaries, _ = fit_boundaries(model, bundle.train, pseudo)
    model.boundaries = boundaries

    predictions = detect_batch(model, boundaries, bundle.test.features())
    golds = bundle.test.labels()
    preds = np.array([p.label for p in predictions])
    report = metrics(confusion(golds, preds, model.space.k))
    report.seed = seed
    report.config_hash = config_hash(config, seed)

    msp_report = None
    if resolved.with_msp:
        if bundle.valid_ood is None:
            raise ValueError("the MSP baseline needs a valid_ood split (set valid_ood_n)")
        msp = msp_baseline(teacher, bundle.valid, bundle.valid_ood, bundle.test)
        msp_report = metrics(confusion(golds, msp.labels, model.space.k))
        msp_report.seed = seed

    if return_artifacts:
        return report, PipelineArtifacts(
            model=model, history=history, bundle=bundle, pseudo=pseudo, msp_report=msp_report
        )
    return report


@dataclass
class ExperimentResult:
    seeds: list[int]
    per_config: dict[str, list[MetricReport]]
    means: dict[str, dict[str, float]]
    ttests: dict[str, dict[str, float]]
    config_hashes: dict[str, str]
    msp_per_config: dict[str, list[MetricReport]] = field(default_factory=dict)

    def to_json_dict(self, metadata: dict | None = None) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "metadata": metadata or {},
            "seeds": self.seeds,
            "results": {
                name: {
                    "config_hash": self.config_hashes[name],
                    "per_seed": [r.as_dict() for r in reports],
                    "mean": self.means[name],
                }
                for name, reports in self.per_config.items()
            },
            "msp": {
                name: [r.as_dict() for r in reports]
                for name, reports in self.msp_per_config.items()
            },
            "ttests": self.ttests,
        }

    def csv_rows(self) -> list[dict]:
        rows = []
        for name, reports in self.per_config.items():
            for report in reports:
                rows.append(_csv_row(name, report.seed, report.headline()))
            rows.append(_csv_row(name, "mean", self.means[name]))
        return rows


def _csv_row(name, seed, headline: dict) -> dict:
    row = {"config": name, "seed": seed}
    for column, key in zip(CSV_COLUMNS, HEADLINE_METRICS):
        row[column] = headline[key]
    return row


def run_experiment(
    configs: dict[str, PipelineConfig],
    n_seeds: int = 10,
    base_seed: int = 0,
    jobs: int = 1,
) -> ExperimentResult:
    """Run every named configuration over the same seeds and compare them.

    Failures abort the offending seed for that configuration; at least one
    surviving seed per configuration is required.  Welch t-test p-values are
    reported for every config pair on every headline metric.
    """
    if not configs:
        raise ValueError("need at least one named configuration")
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    seeds = [base_seed + i for i in range(n_seeds)]

    tasks = [(name, cfg, seed) for name, cfg in configs.items() for seed in seeds]
    failures: list[str] = []

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_experiment_task, tasks))
    else:
        outcomes = [_run_experiment_task(task) for task in tasks]

    per_config: dict[str, list[MetricReport]] = {name: [] for name in configs}
    msp_per_config: dict[str, list[MetricReport]] = {}
    for name, seed, report, msp_report, error in outcomes:
        if error is not None:
            failures.append(f"{name} seed {seed}: {error}")
            continue
        per_config[name].append(report)
        if msp_report is not None:
            msp_per_config.setdefault(name, []).append(msp_report)

    for name, reports in per_config.items():
        if not reports:
            raise RuntimeError(
                f"configuration {name!r} has no surviving seeds: {failures}"
            )

    means = {
        name: {
            metric: float(np.mean([getattr(r, metric) for r in reports]))
            for metric in HEADLINE_METRICS
        }
        for name, reports in per_config.items()
    }
    ttests: dict[str, dict[str, float]] = {}
    names = list(configs)
    for a, b in itertools.combinations(names, 2):
        ttests[f"{a}|{b}"] = {
            metric: welch_p_value(
                [getattr(r, metric) for r in per_config[a]],
                [getattr(r, metric) for r in per_config[b]],
            )
            for metric in HEADLINE_METRICS
        }
    return ExperimentResult(
        seeds=seeds,
        per_config=per_config,
        means=means,
        ttests=ttests,
        config_hashes={name: config_hash(cfg) for name, cfg in configs.items()},
        msp_per_config=msp_per_config,
    )


def _run_experiment_task(task):
    name, cfg, seed = task
    try:
        if cfg.with_msp:
            report, artifacts = run_pipeline(cfg, seed, return_artifacts=True)
            return name, seed, report, artifacts.msp_report, None
        return name, seed, run_pipeline(cfg, seed), None, None
    except Exception as exc:
        return name, seed, None, None, f"{type(exc).__name__}: {exc}"


SWEEPABLE = {
    "graph_temp": "graph_temp",
    "head_dropout": "head_dropout",
    "prior_weight": "prior_weight",
    "graph_weight": "graph_weight",
}


@dataclass
class SweepRow:
    position: int
    point: dict[str, float]
    config_hash: str
    mean: dict[str, float]
    per_seed: list[MetricReport]


def sweep(
    base: PipelineConfig,
    grid: dict[str, list[float]],
    n_seeds: int = 10,
    base_seed: int = 0,
    jobs: int = 1,
) -> list[SweepRow]:
    """Cartesian-product hyperparameter sweep with shared seeds per cell."""
    if not grid:
        raise ValueError("sweep grid must be non-empty")
    for key in grid:
        if key not in SWEEPABLE:
            raise ValueError(f"cannot sweep {key!r}; choose from {sorted(SWEEPABLE)}")
    keys = list(grid)
    rows: list[SweepRow] = []
    for position, values in enumerate(itertools.product(*(grid[k] for k in keys))):
        point = dict(zip(keys, values))
        cfg = replace(base, train=replace(base.train, **point))
        result = run_experiment({"point": cfg}, n_seeds=n_seeds, base_seed=base_seed, jobs=jobs)
        rows.append(
            SweepRow(
                position=position,
                point=point,
                config_hash=result.config_hashes["point"],
                mean=result.means["point"],
                per_seed=result.per_config["point"],
            )
        )
    return rows
