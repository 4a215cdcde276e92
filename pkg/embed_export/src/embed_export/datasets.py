"""Readers for the published benchmark formats.

clinc150 ships as one JSON file (``data_full.json``) whose splits are lists
of ``[text, intent]`` pairs; every ``oos_*`` sample is grouped into the test
split under the reserved ``OOD`` label.  stackoverflow and banking ship as
``train/dev/test`` TSV files with ``text<TAB>label`` rows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

OOD_NAME = "OOD"

# Published split sizes; exports of these datasets must match exactly.
BENCHMARK_TABLE = {
    "clinc150": {"train": 15_000, "valid": 3_000, "test": 5_700, "classes": 150},
    "stackoverflow": {"train": 12_000, "valid": 2_000, "test": 6_000, "classes": 20},
    "banking": {"train": 9_003, "valid": 1_000, "test": 3_080, "classes": 77},
}


class DatasetFormatError(ValueError):
    """Source files do not look like the expected published format."""


@dataclass(frozen=True)
class TextSample:
    text: str
    label: str | None  # None only for unlabeled rows


@dataclass
class TextDataset:
    name: str
    splits: dict[str, list[TextSample]]  # train / valid / test
    classes: list[str]

    def counts(self) -> dict[str, int]:
        return {split: len(samples) for split, samples in self.splits.items()}


def read_clinc150(data_dir: str | Path) -> TextDataset:
    path = Path(data_dir) / "data_full.json"
    if not path.exists():
        raise DatasetFormatError(f"expected {path} (clinc150 full release)")
    raw = json.loads(path.read_text(encoding="utf-8"))
    for key in ("train", "val", "test", "oos_train", "oos_val", "oos_test"):
        if key not in raw:
            raise DatasetFormatError(f"{path.name} is missing the {key!r} split")

    def pairs(key, label_override=None):
        out = []
        for row in raw[key]:
            if not isinstance(row, list) or len(row) != 2:
                raise DatasetFormatError(f"{key}: rows must be [text, intent] pairs")
            out.append(TextSample(text=row[0], label=label_override or row[1]))
        return out

    train = pairs("train")
    valid = pairs("val")
    # every out-of-scope sample joins the test split as the OOD class
    test = pairs("test") + [
        sample
        for key in ("oos_train", "oos_val", "oos_test")
        for sample in pairs(key, label_override=OOD_NAME)
    ]
    classes = sorted({s.label for s in train})
    return TextDataset(
        name="clinc150",
        splits={"train": train, "valid": valid, "test": test},
        classes=classes,
    )


def _read_tsv_split(path: Path) -> list[TextSample]:
    if not path.exists():
        raise DatasetFormatError(f"expected split file {path}")
    samples = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if reader.fieldnames is None or not {"text", "label"} <= set(reader.fieldnames):
            raise DatasetFormatError(f"{path.name} needs 'text' and 'label' columns")
        for row in reader:
            samples.append(TextSample(text=row["text"], label=row["label"]))
    return samples


def read_tsv_dataset(name: str, data_dir: str | Path) -> TextDataset:
    data_dir = Path(data_dir)
    splits = {
        "train": _read_tsv_split(data_dir / "train.tsv"),
        "valid": _read_tsv_split(data_dir / "dev.tsv"),
        "test": _read_tsv_split(data_dir / "test.tsv"),
    }
    classes = sorted({s.label for s in splits["train"]})
    return TextDataset(name=name, splits=splits, classes=classes)


_CLINC_FORMAT_NAMES = {"clinc150"}
FORMATS = ("auto", "clinc", "tsv")


def read_dataset(name: str, data_dir: str | Path, fmt: str = "auto") -> TextDataset:
    """Read by explicit format, or infer it from a known benchmark name."""
    if fmt not in FORMATS:
        raise DatasetFormatError(f"unknown format {fmt!r}; choose from {FORMATS}")
    if fmt == "auto":
        fmt = "clinc" if name in _CLINC_FORMAT_NAMES else "tsv"
    if fmt == "clinc":
        dataset = read_clinc150(data_dir)
        return TextDataset(name=name, splits=dataset.splits, classes=dataset.classes)
    return read_tsv_dataset(name, data_dir)


def validate_against_table(dataset: TextDataset) -> None:
    """Hard error when a known benchmark's counts differ from the published ones."""
    expected = BENCHMARK_TABLE.get(dataset.name)
    if expected is None:
        return
    counts = dataset.counts()
    for split in ("train", "valid", "test"):
        if counts[split] != expected[split]:
            raise DatasetFormatError(
                f"{dataset.name} {split} has {counts[split]} samples, expected "
                f"{expected[split]}; this usually means a wrong dataset version"
            )
    if len(dataset.classes) != expected["classes"]:
        raise DatasetFormatError(
            f"{dataset.name} has {len(dataset.classes)} intents, expected "
            f"{expected['classes']}"
        )
