"""Write encoded datasets in the detector library's JSONL + manifest contract."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from embed_export.datasets import (
    BENCHMARK_TABLE,
    OOD_NAME,
    TextDataset,
    read_dataset,
    validate_against_table,
)
from embed_export.encoders import make_encoder

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ExportConfig:
    dataset: str
    data_dir: str
    out_dir: str
    encoder: str = "hf:bert-base-uncased"
    format: str = "auto"  # clinc | tsv | auto (inferred from the name)
    device: str = "cpu"
    batch_size: int = 32


def _split_provenance(split: str) -> str:
    return "test" if split == "test" else "ind"


def write_jsonl(path: Path, rows: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def export(config: ExportConfig) -> dict:
    """Encode every split and write the JSONL files plus the manifest.

    Known benchmarks are validated against their published split sizes
    before any encoding happens; a mismatch is a hard error.
    Returns the manifest.
    """
    dataset = read_dataset(config.dataset, config.data_dir, fmt=config.format)
    validate_against_table(dataset)
    encoder = make_encoder(config.encoder, device=config.device, batch_size=config.batch_size)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for split, samples in dataset.splits.items():
        features = encoder.encode([s.text for s in samples])
        if features.shape != (len(samples), encoder.dim):
            raise RuntimeError(
                f"encoder returned shape {features.shape}, expected "
                f"({len(samples)}, {encoder.dim})"
            )
        rows = [
            {
                "id": f"{split}-{i:05d}",
                "label": samples[i].label,
                "features": [float(v) for v in features[i]],
                "provenance": _split_provenance(split),
                "text": samples[i].text,
            }
            for i in range(len(samples))
        ]
        write_jsonl(out_dir / f"{split}.jsonl", rows)

    manifest = {
        "name": dataset.name,
        "feature_dim": encoder.dim,
        "classes": dataset.classes,
        "counts": dataset.counts(),
        "format_version": FORMAT_VERSION,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest
