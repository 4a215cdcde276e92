"""Command-line surface: every pipeline stage as an independent subcommand.

All randomized subcommands require an explicit ``--seed`` and are idempotent:
re-running with identical inputs and seed produces byte-identical outputs
(timestamps appear only inside report metadata).  Validation failures print
a machine-readable JSON object on stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

import softood
from softood.checkpoint import load_model, save_model
from softood.config import (
    ConfigError,
    dump_tree,
    pipeline_from_tree,
    resolve_config,
)
from softood.cotrain import SCHEMES, TrainConfig, train, train_knowd_teacher
from softood.data import (
    DatasetError,
    SplitSpec,
    load_dataset_dir,
    load_examples,
    load_feature_rows,
    make_ind_split,
    synth_clusters,
    write_dataset_dir,
    write_examples,
)
from softood.detector import detect_batch, fit_boundaries
from softood.embedding import default_encoder_config, embed, encode
from softood.evaluation import (
    CSV_COLUMNS,
    HEADLINE_METRICS,
    PipelineConfig,
    config_hash,
    confusion,
    metrics,
    run_experiment,
    sweep as run_sweep,
)
from softood.graph import build_graph, prior_label, smooth_all
from softood.oodgen import PseudoOodConfig, generate, ingest_pd


class CliError(ValueError):
    """User-facing validation error raised by subcommands."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": "usage", "message": message}), file=sys.stderr)
        raise SystemExit(2)


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="softood", description=__doc__)
    parser.add_argument("--version", action="version", version=softood.__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic intent-cluster dataset")
    p.add_argument("--intents", type=int, default=8, help="number of intent clusters")
    p.add_argument("--dim", type=int, default=16, help="feature dimension")
    p.add_argument("--per-intent", type=int, default=100, help="examples per intent")
    p.add_argument("--center-scale", type=float, default=4.0, help="radius of the sphere carrying cluster centers")
    p.add_argument("--noise-sigma", type=float, default=1.0, help="within-cluster standard deviation")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("-o", "--out", required=True, help="output dataset directory")

    p = sub.add_parser("split", help="select IND intents and relabel the rest to OOD")
    p.add_argument("--data", required=True, help="input dataset directory")
    p.add_argument("--ratio", type=float, required=True, help="fraction of intents kept in-domain")
    p.add_argument("--valid-ood", type=int, default=None, help="carve this many discarded validation examples as an OOD set")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("-o", "--out", required=True, help="output dataset directory")

    p = sub.add_parser("gen-ood", help="generate pseudo-OOD samples from the training split")
    p.add_argument("--data", required=True, help="split dataset directory (train split supplies IND features)")
    p.add_argument("--method", choices=["fm", "os", "lg", "pd-ingest"], default="fm", help="generation method")
    p.add_argument("--count", type=int, default=None, help="number of samples (default: IND train size)")
    p.add_argument("--lambda-lo", type=float, default=0.3, help="mixup lower bound")
    p.add_argument("--lambda-hi", type=float, default=0.7, help="mixup upper bound")
    p.add_argument("--allow-same-class", action="store_true", help="let mixup pair same-class examples")
    p.add_argument("--quantile", type=float, default=0.05, help="low-density acceptance quantile")
    p.add_argument("--source", default=None, help="source JSONL for os / pd-ingest methods")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("-o", "--out", required=True, help="output JSONL file")

    p = sub.add_parser("train", help="co-train the detector and fit decision boundaries")
    p.add_argument("--data", required=True, help="split dataset directory")
    p.add_argument("--pseudo", required=True, help="pseudo-OOD JSONL file")
    p.add_argument("--config", default=None, help="YAML run config (overrides the built-in profile)")
    p.add_argument("--scheme", choices=list(SCHEMES), default=None, help="labeling scheme override")
    p.add_argument("--max-epochs", type=int, default=None, help="epoch cap override")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("-o", "--out", required=True, help="output checkpoint path")
    p.add_argument("--history", default=None, help="optional training-history CSV path")

    p = sub.add_parser("detect", help="classify a JSONL file with a trained checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--input", required=True, help="input JSONL file")
    p.add_argument("-o", "--out", required=True, help="output predictions CSV")

    p = sub.add_parser("eval", help="score predictions, or run the pipeline over seeds")
    p.add_argument("--pred", default=None, help="predictions CSV (file-scoring mode)")
    p.add_argument("--gold", default=None, help="gold JSONL (file-scoring mode)")
    p.add_argument("--config", default=None, help="YAML run config (pipeline mode)")
    p.add_argument("--seeds", type=int, default=None, help="number of seeds (pipeline mode)")
    p.add_argument("--seed", type=int, default=None, help="base seed (pipeline mode)")
    p.add_argument("--with-msp", action="store_true", help="also run the MSP threshold baseline")
    p.add_argument("--jobs", type=int, default=1, help="parallel independent runs")
    p.add_argument("-o", "--out", required=True, help="output report path (JSON) or directory (pipeline mode)")

    p = sub.add_parser("ablate", help="compare labeling schemes over shared seeds")
    p.add_argument("--schemes", default=",".join(SCHEMES), help="comma-separated scheme list")
    p.add_argument("--seeds", type=int, default=10, help="number of shared seeds")
    p.add_argument("--config", default=None, help="YAML run config")
    p.add_argument("--seed", type=int, required=True, help="base seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel independent runs")
    p.add_argument("-o", "--out", required=True, help="output directory")

    p = sub.add_parser("sweep", help="hyperparameter grid over shared seeds")
    p.add_argument("--param", action="append", required=True, metavar="NAME=V1,V2",
                   help="grid values, e.g. graph_temp=0.1,1,10 (repeatable)")
    p.add_argument("--seeds", type=int, default=10, help="number of shared seeds")
    p.add_argument("--config", default=None, help="YAML run config")
    p.add_argument("--seed", type=int, required=True, help="base seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel independent runs")
    p.add_argument("-o", "--out", required=True, help="output directory")

    p = sub.add_parser("dump-labels", help="write prior and smoothed labels per pseudo sample")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="split dataset directory")
    p.add_argument("--pseudo", required=True, help="pseudo-OOD JSONL file")
    p.add_argument("--graph-temp", type=float, default=0.1, help="attention temperature")
    p.add_argument("--prior-weight", type=float, default=0.11, help="own-prior weight")
    p.add_argument("-o", "--out", required=True, help="output CSV path")

    p = sub.add_parser("project2d", help="exact 2-D PCA coordinates for external plotting")
    p.add_argument("--input", required=True, help="input JSONL file")
    p.add_argument("--ckpt", default=None, help="checkpoint (needed for feature/embedding spaces)")
    p.add_argument("--space", choices=["input", "feature", "embedding"], default="input",
                   help="representation to project")
    p.add_argument("--dim", type=int, default=None, help="feature dimension when no checkpoint is given")
    p.add_argument("-o", "--out", required=True, help="output CSV path")

    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _summary(command: str, details: dict) -> None:
    parts = " ".join(f"{k}={v}" for k, v in details.items())
    print(f"[softood {command}] {parts}")


def _write_csv(path: str | Path, rows: list[dict], columns: list[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _report_metadata(tree: dict | None = None) -> dict:
    meta = {"version": softood.__version__, "created_at": time.strftime("%Y-%m-%dT%H:%M:%S")}
    if tree is not None:
        meta["resolved_config"] = tree
    return meta


def _overrides_from_flags(args) -> dict:
    overrides: dict = {}
    if getattr(args, "scheme", None):
        overrides.setdefault("train", {})["label_scheme"] = args.scheme
    if getattr(args, "max_epochs", None) is not None:
        overrides.setdefault("train", {})["max_epochs"] = args.max_epochs
    return overrides


def _pca_2d(points: np.ndarray) -> np.ndarray:
    centered = points - points.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    # Deterministic sign: largest-magnitude loading of each component is positive.
    for row in components:
        anchor = np.argmax(np.abs(row))
        if row[anchor] < 0:
            row *= -1
    return centered @ components.T


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    bundle = synth_clusters(
        n_intents=args.intents,
        dim=args.dim,
        n_per_intent=args.per_intent,
        center_scale=args.center_scale,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    write_dataset_dir(bundle, args.out)
    _summary("synth", {"intents": args.intents, "dim": args.dim,
                       "per_intent": args.per_intent, "seed": args.seed, "out": args.out})
    return 0


def cmd_split(args) -> int:
    bundle = load_dataset_dir(args.data)
    split = make_ind_split(
        bundle, SplitSpec(ind_ratio=args.ratio, seed=args.seed), valid_ood_n=args.valid_ood
    )
    write_dataset_dir(split, args.out)
    _summary("split", {"data": args.data, "ratio": args.ratio, "k": split.space.k,
                       "seed": args.seed, "out": args.out})
    return 0


def cmd_gen_ood(args) -> int:
    bundle = load_dataset_dir(args.data)
    count = args.count if args.count is not None else len(bundle.train)
    config = PseudoOodConfig(
        method=args.method,
        count=count,
        seed=args.seed,
        lambda_lo=args.lambda_lo,
        lambda_hi=args.lambda_hi,
        cross_class_only=not args.allow_same_class,
        quantile=args.quantile,
        source=args.source,
    )
    examples = generate(bundle.train, config)
    write_examples(args.out, examples, bundle.space)
    _summary("gen-ood", {"method": args.method, "count": len(examples),
                         "seed": args.seed, "out": args.out})
    return 0


def cmd_train(args) -> int:
    overrides = _overrides_from_flags(args)
    tree = resolve_config(args.config, overrides)
    bundle = load_dataset_dir(args.data)
    pseudo = load_examples(Path(args.pseudo), bundle.feature_dim, bundle.space)

    pipeline = pipeline_from_tree(tree)
    train_cfg = dataclasses.replace(pipeline.train, seed=args.seed)
    encoder_config = default_encoder_config(
        input_dim=bundle.feature_dim,
        feature_dim=pipeline.model.feature_dim,
        proj_dim=pipeline.model.proj_dim,
        negative_slope=pipeline.model.negative_slope,
        encoder_dropout=pipeline.model.encoder_dropout,
        projection_dropout=pipeline.model.projection_dropout,
        contrast_temp=train_cfg.contrast_temp,
    )
    teacher = None
    if train_cfg.label_scheme == "knowd":
        teacher = train_knowd_teacher(bundle.train, train_cfg, encoder_config, valid_ds=bundle.valid)
    model, history = train(bundle.train, pseudo, bundle.valid, train_cfg, encoder_config, teacher=teacher)
    boundaries, fit_info = fit_boundaries(model, bundle.train, pseudo)
    model.boundaries = boundaries
    save_model(model, args.out, config=tree, seed=args.seed)
    if args.history:
        _write_csv(
            args.history,
            [h.as_dict() for h in history],
            ["epoch", "loss_contrastive", "loss_ind", "loss_co", "loss_valid"],
        )
    _summary("train", {"scheme": train_cfg.label_scheme, "epochs_run": len(history),
                       "boundary_converged": fit_info.converged, "seed": args.seed,
                       "out": args.out})
    return 0


def cmd_detect(args) -> int:
    model, _, _ = load_model(args.ckpt)
    if model.boundaries is None:
        raise CliError("checkpoint has no fitted boundaries; re-run train")
    rows = load_feature_rows(args.input, model.encoder_config.input_dim)
    features = np.stack([r.features for r in rows])
    predictions = detect_batch(model, model.boundaries, features)
    out_rows = []
    for row, pred in zip(rows, predictions):
        out_rows.append(
            {
                "id": row.id,
                "label": model.space.name_of(pred.label),
                "max_prob": repr(float(pred.distribution.max())),
                "min_boundary_margin": repr(pred.min_boundary_margin),
            }
        )
    _write_csv(args.out, out_rows, ["id", "label", "max_prob", "min_boundary_margin"])
    _summary("detect", {"inputs": len(rows), "out": args.out})
    return 0


def cmd_eval(args) -> int:
    file_mode = args.pred is not None or args.gold is not None
    if file_mode:
        if args.pred is None or args.gold is None:
            raise CliError("file-scoring mode needs both --pred and --gold")
        return _eval_files(args)
    if args.seeds is None or args.seed is None:
        raise CliError("pipeline mode needs --seeds and --seed")
    tree = resolve_config(args.config)
    pipeline = pipeline_from_tree(tree, with_msp=args.with_msp or None)
    result = run_experiment({"run": pipeline}, n_seeds=args.seeds, base_seed=args.seed, jobs=args.jobs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(result.to_json_dict(_report_metadata(tree)), sort_keys=True, indent=2) + "\n"
    )
    _write_csv(out_dir / "metrics.csv", result.csv_rows(), ["config", "seed", *CSV_COLUMNS])
    (out_dir / "resolved_config.json").write_text(dump_tree(tree))
    _summary("eval", {"seeds": args.seeds, "mean_f1_all": round(result.means["run"]["f1_all"], 4),
                      "out": str(out_dir)})
    return 0


def _eval_files(args) -> int:
    with Path(args.pred).open(encoding="utf-8") as fh:
        pred_rows = {row["id"]: row["label"] for row in csv.DictReader(fh)}
    if not pred_rows:
        raise CliError("predictions file is empty")
    gold_rows = load_feature_rows(args.gold, _peek_feature_dim(args.gold))
    names = sorted({r.label_name for r in gold_rows if r.label_name and r.label_name != "OOD"})
    from softood.data import IntentSpace

    space = IntentSpace(tuple(names))
    golds, preds = [], []
    for row in gold_rows:
        if row.id not in pred_rows:
            raise CliError(f"no prediction for gold example {row.id!r}")
        if row.label_name is None:
            raise CliError(f"gold example {row.id!r} is unlabeled")
        golds.append(space.index_of(row.label_name))
        preds.append(space.index_of(pred_rows[row.id]))
    report = metrics(confusion(golds, preds, space.k))
    payload = {
        "format_version": 1,
        "metadata": _report_metadata(),
        "metrics": report.as_dict(),
    }
    Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    _summary("eval", {"examples": len(golds), "f1_all": round(report.f1_all, 4), "out": args.out})
    return 0


def _peek_feature_dim(path: str) -> int:
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                return len(json.loads(line)["features"])
    raise CliError(f"{path}: empty gold file")


def cmd_ablate(args) -> int:
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    for scheme in schemes:
        if scheme not in SCHEMES:
            raise CliError(f"unknown scheme {scheme!r}; choose from {list(SCHEMES)}")
    tree = resolve_config(args.config)
    base = pipeline_from_tree(tree)
    configs = {
        scheme: dataclasses.replace(base, train=dataclasses.replace(base.train, label_scheme=scheme))
        for scheme in schemes
    }
    result = run_experiment(configs, n_seeds=args.seeds, base_seed=args.seed, jobs=args.jobs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(result.to_json_dict(_report_metadata(tree)), sort_keys=True, indent=2) + "\n"
    )
    mean_rows = [
        {"scheme": scheme, **{col: result.means[scheme][key] for col, key in zip(CSV_COLUMNS, HEADLINE_METRICS)}}
        for scheme in schemes
    ]
    _write_csv(out_dir / "ablation.csv", mean_rows, ["scheme", *CSV_COLUMNS])
    _write_csv(out_dir / "per_seed.csv", result.csv_rows(), ["config", "seed", *CSV_COLUMNS])
    (out_dir / "resolved_config.json").write_text(dump_tree(tree))
    _summary("ablate", {"schemes": ",".join(schemes), "seeds": args.seeds, "out": str(out_dir)})
    return 0


def cmd_sweep(args) -> int:
    grid: dict[str, list[float]] = {}
    for spec in args.param:
        if "=" not in spec:
            raise CliError(f"--param needs NAME=V1,V2 form, got {spec!r}")
        name, _, values = spec.partition("=")
        grid[name.strip()] = _float_list(values)
        if not grid[name.strip()]:
            raise CliError(f"--param {name!r} has no values")
    tree = resolve_config(args.config)
    base = pipeline_from_tree(tree)
    rows = run_sweep(base, grid, n_seeds=args.seeds, base_seed=args.seed, jobs=args.jobs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_rows = [
        {
            "position": row.position,
            **{k: row.point[k] for k in grid},
            "config_hash": row.config_hash,
            **{col: row.mean[key] for col, key in zip(CSV_COLUMNS, HEADLINE_METRICS)},
        }
        for row in rows
    ]
    _write_csv(out_dir / "sweep.csv", csv_rows, ["position", *grid.keys(), "config_hash", *CSV_COLUMNS])
    (out_dir / "resolved_config.json").write_text(dump_tree(tree))
    _summary("sweep", {"grid": ";".join(f"{k}x{len(v)}" for k, v in grid.items()),
                       "seeds": args.seeds, "out": str(out_dir)})
    return 0


def cmd_dump_labels(args) -> int:
    model, _, _ = load_model(args.ckpt)
    bundle = load_dataset_dir(args.data)
    if bundle.space.ind_names != model.space.ind_names:
        raise CliError("dataset intents do not match the checkpoint")
    pseudo = load_examples(Path(args.pseudo), bundle.feature_dim, bundle.space)
    graph = build_graph(
        model.encoder_config,
        model.store,
        bundle.train.examples + pseudo,
        model.space,
        temperature=args.graph_temp,
        prior_weight=args.prior_weight,
    )
    smoothed = smooth_all(graph, [ex.id for ex in pseudo])
    n = model.space.n_classes
    columns = ["id"] + [f"prior_{i}" for i in range(n)] + [f"smoothed_{i}" for i in range(n)]
    rows = []
    for ex in pseudo:
        prior = prior_label(ex, model.space)
        smooth = smoothed[ex.id]
        row = {"id": ex.id}
        row.update({f"prior_{i}": repr(float(prior[i])) for i in range(n)})
        row.update({f"smoothed_{i}": repr(float(smooth[i])) for i in range(n)})
        rows.append(row)
    _write_csv(args.out, rows, columns)
    _summary("dump-labels", {"pseudo": len(pseudo), "out": args.out})
    return 0


def cmd_project2d(args) -> int:
    if args.space != "input" and args.ckpt is None:
        raise CliError(f"--space {args.space} needs a checkpoint")
    model = None
    if args.ckpt is not None:
        model, _, _ = load_model(args.ckpt)
        dim = model.encoder_config.input_dim
    elif args.dim is not None:
        dim = args.dim
    else:
        dim = _peek_feature_dim(args.input)
    rows = load_feature_rows(args.input, dim)
    points = np.stack([r.features for r in rows])
    if args.space == "feature":
        points, _ = encode(model.encoder_config, model.store, points, train=False)
    elif args.space == "embedding":
        points, _ = embed(model.encoder_config, model.store, points, train=False)
    coords = _pca_2d(points)
    out_rows = [
        {
            "id": row.id,
            "x": repr(float(coords[i, 0])),
            "y": repr(float(coords[i, 1])),
            "label": row.label_name or "",
        }
        for i, row in enumerate(rows)
    ]
    _write_csv(args.out, out_rows, ["id", "x", "y", "label"])
    _summary("project2d", {"space": args.space, "points": len(rows), "out": args.out})
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "gen-ood": cmd_gen_ood,
    "train": cmd_train,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "dump-labels": cmd_dump_labels,
    "project2d": cmd_project2d,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (CliError, ConfigError, DatasetError, ValueError, KeyError, RuntimeError, OSError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
