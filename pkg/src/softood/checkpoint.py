"""Versioned JSON checkpoints for trained detectors.

Floats are serialized with Python's shortest round-trip repr, so writing and
re-reading a checkpoint reproduces every parameter bit-exactly.  Keys are
sorted and no timestamps are embedded: identical models produce identical
bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from softood.cotrain import DetectorModel
from softood.data import IntentSpace
from softood.detector import Boundaries
from softood.embedding import EncoderConfig
from softood.numerics.mlp import MlpSpec
from softood.numerics.params import ParamStore

CHECKPOINT_VERSION = 1


def _spec_dict(spec: MlpSpec) -> dict:
    return {
        "widths": list(spec.widths),
        "negative_slope": spec.negative_slope,
        "dropout": spec.dropout,
    }


def _spec_from_dict(obj: dict) -> MlpSpec:
    return MlpSpec(
        widths=tuple(obj["widths"]),
        negative_slope=obj["negative_slope"],
        dropout=obj["dropout"],
    )


def save_model(
    model: DetectorModel,
    path: str | Path,
    config: dict | None = None,
    seed: int | None = None,
) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "seed": seed,
        "config": config,
        "intent_names": list(model.space.ind_names),
        "encoder_config": {
            "encoder": _spec_dict(model.encoder_config.encoder),
            "projection": _spec_dict(model.encoder_config.projection),
            "contrast_temp": model.encoder_config.contrast_temp,
        },
        "head_spec": _spec_dict(model.head_spec),
        "params": {
            name: {
                "shape": list(model.store[name].shape),
                "values": model.store[name].ravel().tolist(),
            }
            for name in model.store.block_names()
        },
        "boundaries": None,
    }
    if model.boundaries is not None:
        b: Boundaries = model.boundaries
        payload["boundaries"] = {
            "centroids": b.centroids.tolist(),
            "radii": b.radii.tolist(),
            "class_indices": b.class_indices.tolist(),
            "fitted_on": b.fitted_on,
        }
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )


def load_model(path: str | Path) -> tuple[DetectorModel, dict | None, int | None]:
    """Returns (model, config, seed) from a checkpoint file."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint format_version {payload.get('format_version')}"
        )
    space = IntentSpace(tuple(payload["intent_names"]))
    encoder_config = EncoderConfig(
        encoder=_spec_from_dict(payload["encoder_config"]["encoder"]),
        projection=_spec_from_dict(payload["encoder_config"]["projection"]),
        contrast_temp=payload["encoder_config"]["contrast_temp"],
    )
    head_spec = _spec_from_dict(payload["head_spec"])
    store = ParamStore()
    for name, block in payload["params"].items():
        store.add(name, np.array(block["values"], dtype=np.float64).reshape(block["shape"]))
    boundaries = None
    if payload.get("boundaries") is not None:
        raw = payload["boundaries"]
        boundaries = Boundaries(
            centroids=np.array(raw["centroids"], dtype=np.float64),
            radii=np.array(raw["radii"], dtype=np.float64),
            class_indices=np.array(raw["class_indices"], dtype=np.int64),
            fitted_on=raw.get("fitted_on", {}),
        )
    model = DetectorModel(
        space=space,
        encoder_config=encoder_config,
        head_spec=head_spec,
        store=store,
        boundaries=boundaries,
    )
    return model, payload.get("config"), payload.get("seed")
