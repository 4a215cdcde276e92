"""Run configuration: YAML files, strict key checking, CLI overrides.

The file mirrors the pipeline structure section by section; unknown keys
anywhere are hard errors so typos never pass silently.  A base file can be
pointed at with the ``SOFTOOD_CONFIG`` environment variable; explicit
``--config`` files and CLI flags override it in that order.
"""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path

import yaml

from softood.cotrain import TrainConfig
from softood.evaluation import ModelConfig, PipelineConfig, SynthConfig
from softood.oodgen import PseudoOodConfig

ENV_CONFIG_VAR = "SOFTOOD_CONFIG"


class ConfigError(ValueError):
    """Malformed run configuration."""


_SECTION_FIELDS = {
    "data": {"dir", "synth"},
    "synth": {f.name for f in dataclasses.fields(SynthConfig)},
    "split": {"ratio", "valid_ood"},
    "oodgen": {f.name for f in dataclasses.fields(PseudoOodConfig)} - {"seed"},
    "model": {f.name for f in dataclasses.fields(ModelConfig)},
    "train": {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"},
    "eval": {"n_seeds", "with_msp"},
}
_TOP_LEVEL = {"data", "split", "oodgen", "model", "train", "eval"}


def _check_keys(section: str, obj: dict, allowed: set[str]) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(
                f"{section}.{key} is not a recognized key "
                f"(expected one of {sorted(allowed)})"
            )


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a mapping at the top level")
    return raw


def default_config_tree() -> dict:
    """The synthetic-benchmark profile: 8 Gaussian intents, desk-scale model.

    The cluster geometry deliberately overlaps (mixup pseudo samples land
    inside in-domain tails), which is the regime soft labels exist for.
    Smoothing weights and temperatures keep their published defaults; the
    learning rates are scaled for a run that sees a few hundred gradient
    steps instead of hours of fine-tuning, and the epoch budget is trained
    in full (the snapshot rule still returns the best validation epoch).
    """
    return {
        "data": {
            "synth": {
                "n_intents": 8,
                "dim": 16,
                "n_per_intent": 100,
                "center_scale": 5.0,
                "noise_sigma": 1.25,
            }
        },
        "split": {"ratio": 0.5, "valid_ood": None},
        "oodgen": {
            "method": "fm",
            "count": None,
            "lambda_lo": 0.3,
            "lambda_hi": 0.7,
            "cross_class_only": True,
            "quantile": 0.05,
            "source": None,
        },
        "model": {
            "feature_dim": 64,
            "proj_dim": 32,
            "negative_slope": 0.01,
            "encoder_dropout": 0.0,
            "projection_dropout": 0.0,
        },
        "train": {
            "label_scheme": "asoul",
            "prior_weight": 0.11,
            "graph_weight": 0.9,
            "contrast_temp": 0.1,
            "graph_temp": 0.1,
            "head_dropout": 0.6,
            "lr_encoder": 1e-3,
            "lr_heads": 1e-2,
            "encoder_weight_decay": 0.01,
            "batch_ind": 100,
            "batch_ood": 100,
            "max_epochs": 60,
            "patience": 60,
            "usoul_epsilon": 0.1,
            "graph_refresh_every": 1,
            "include_self": False,
            "graph_top_m": None,
        },
        "eval": {"n_seeds": 10, "with_msp": False},
    }


def resolve_config(
    config_path: str | Path | None = None, overrides: dict | None = None
) -> dict:
    """default profile <- SOFTOOD_CONFIG <- --config file <- CLI overrides."""
    tree = default_config_tree()
    env_path = os.environ.get(ENV_CONFIG_VAR)
    if env_path:
        tree = _deep_merge(tree, load_config_file(env_path))
    if config_path is not None:
        tree = _deep_merge(tree, load_config_file(config_path))
    if overrides:
        tree = _deep_merge(tree, overrides)
    validate_tree(tree)
    return tree


def validate_tree(tree: dict) -> None:
    _check_keys("<top>", tree, _TOP_LEVEL)
    for section in ("split", "oodgen", "model", "train", "eval"):
        if section in tree:
            if not isinstance(tree[section], dict):
                raise ConfigError(f"section {section!r} must be a mapping")
            _check_keys(section, tree[section], _SECTION_FIELDS[section])
    data = tree.get("data", {})
    if not isinstance(data, dict):
        raise ConfigError("section 'data' must be a mapping")
    _check_keys("data", data, _SECTION_FIELDS["data"])
    if "synth" in data:
        if not isinstance(data["synth"], dict):
            raise ConfigError("data.synth must be a mapping")
        _check_keys("data.synth", data["synth"], _SECTION_FIELDS["synth"])
    if "dir" in data and "synth" in data:
        raise ConfigError("data.dir and data.synth are mutually exclusive")


def pipeline_from_tree(tree: dict, with_msp: bool | None = None) -> PipelineConfig:
    data = tree["data"]
    if "dir" in data and data["dir"]:
        source: SynthConfig | str = str(data["dir"])
    else:
        source = SynthConfig(**data["synth"])
    eval_section = tree.get("eval", {})
    oodgen_kwargs = dict(tree["oodgen"])
    pseudo_count = oodgen_kwargs.pop("count", None)  # None -> one per IND example
    return PipelineConfig(
        data=source,
        split_ratio=tree["split"]["ratio"],
        valid_ood_n=tree["split"].get("valid_ood"),
        pseudo_count=pseudo_count,
        oodgen=PseudoOodConfig(**oodgen_kwargs),
        train=TrainConfig(**tree["train"]),
        model=ModelConfig(**tree["model"]),
        with_msp=eval_section.get("with_msp", False) if with_msp is None else with_msp,
    )


def dump_tree(tree: dict) -> str:
    return json.dumps(tree, sort_keys=True, indent=2) + "\n"
