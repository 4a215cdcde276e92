"""Dataset model, JSONL ingestion, IND-ratio splitting, synthetic clusters.

File contract: one JSON object per line with keys ``id``, ``label`` (intent
name, the reserved name ``OOD``, or null for pseudo/unlabeled samples),
``features``, ``provenance`` and optional ``text``.  A companion manifest
carries ``name``, ``feature_dim``, ``classes`` (in-domain intent names only),
``counts`` for the three splits, and ``format_version``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from softood.validation import as_vector

FORMAT_VERSION = 1
OOD_NAME = "OOD"

PROVENANCES = ("ind", "pseudo-fm", "pseudo-os", "pseudo-lg", "pseudo-pd", "test")
PSEUDO_PROVENANCES = ("pseudo-fm", "pseudo-os", "pseudo-lg", "pseudo-pd")

SPLIT_RATIOS = (0.25, 0.50, 0.75)


class DatasetError(ValueError):
    """Malformed dataset file or manifest/content mismatch."""


@dataclass(frozen=True)
class IntentSpace:
    """The k in-domain intents plus the reserved OOD class at index k."""

    ind_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.ind_names) < 1:
            raise ValueError("need at least one in-domain intent")
        if len(set(self.ind_names)) != len(self.ind_names):
            raise ValueError("intent names must be unique")
        if OOD_NAME in self.ind_names:
            raise ValueError(f"{OOD_NAME!r} is reserved for the OOD class")

    @property
    def k(self) -> int:
        return len(self.ind_names)

    @property
    def ood_index(self) -> int:
        return self.k

    @property
    def n_classes(self) -> int:
        return self.k + 1

    def index_of(self, name: str) -> int:
        if name == OOD_NAME:
            return self.ood_index
        try:
            return self.ind_names.index(name)
        except ValueError:
            raise KeyError(f"unknown intent name {name!r}") from None

    def name_of(self, index: int) -> str:
        if index == self.ood_index:
            return OOD_NAME
        if 0 <= index < self.k:
            return self.ind_names[index]
        raise IndexError(f"class index {index} out of range for k={self.k}")


@dataclass(frozen=True)
class Example:
    id: str
    features: np.ndarray
    label: int | None  # IND index, the OOD index, or None for pseudo samples
    provenance: str
    text: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", as_vector(self.features, name="features"))
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.provenance == "ind" and self.label is None:
            raise ValueError("ind provenance requires an intent label")
        if self.provenance in PSEUDO_PROVENANCES and self.label is not None:
            raise ValueError("pseudo provenance requires an unlabeled example")


@dataclass
class Dataset:
    examples: list[Example]
    space: IntentSpace
    feature_dim: int

    def __post_init__(self) -> None:
        for ex in self.examples:
            if ex.features.shape[0] != self.feature_dim:
                raise DatasetError(
                    f"example {ex.id!r} has dimension {ex.features.shape[0]}, "
                    f"expected {self.feature_dim}"
                )
            if ex.label is not None and not 0 <= ex.label < self.space.n_classes:
                raise DatasetError(f"example {ex.id!r} has out-of-range label {ex.label}")

    def __len__(self) -> int:
        return len(self.examples)

    def features(self) -> np.ndarray:
        if not self.examples:
            return np.zeros((0, self.feature_dim))
        return np.stack([ex.features for ex in self.examples])

    def labels(self, allow_unlabeled: bool = False) -> np.ndarray:
        out = []
        for ex in self.examples:
            if ex.label is None:
                if not allow_unlabeled:
                    raise DatasetError(f"example {ex.id!r} is unlabeled")
                out.append(-1)
            else:
                out.append(ex.label)
        return np.array(out, dtype=np.int64)

    def ids(self) -> list[str]:
        return [ex.id for ex in self.examples]


@dataclass
class DatasetBundle:
    """Train/valid/test splits sharing one intent space and feature dim."""

    name: str
    train: Dataset
    valid: Dataset
    test: Dataset
    valid_ood: Dataset | None = None

    @property
    def space(self) -> IntentSpace:
        return self.train.space

    @property
    def feature_dim(self) -> int:
        return self.train.feature_dim

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "feature_dim": self.feature_dim,
            "classes": list(self.space.ind_names),
            "counts": {
                "train": len(self.train),
                "valid": len(self.valid),
                "test": len(self.test),
            },
            "format_version": FORMAT_VERSION,
        }


@dataclass(frozen=True)
class SplitSpec:
    """Fraction of intents kept in-domain; the rest collapse into OOD."""

    ind_ratio: float
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 < self.ind_ratio <= 1.0:
            raise ValueError("ind_ratio must be in (0, 1]")

    def n_ind(self, total_intents: int) -> int:
        return max(1, round(self.ind_ratio * total_intents))


def _parse_line(
    raw: str, line_no: int, feature_dim: int, space: IntentSpace
) -> Example:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"line {line_no}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise DatasetError(f"line {line_no}: expected an object")
    for key in ("id", "features", "provenance"):
        if key not in obj:
            raise DatasetError(f"line {line_no}: missing key {key!r}")
    features = np.asarray(obj["features"], dtype=np.float64)
    if features.ndim != 1 or features.shape[0] != feature_dim:
        raise DatasetError(
            f"line {line_no}: expected {feature_dim} features, got {features.shape}"
        )
    if not np.all(np.isfinite(features)):
        raise DatasetError(f"line {line_no}: non-finite feature value")
    label_name = obj.get("label")
    if label_name is None:
        label = None
    elif isinstance(label_name, str):
        try:
            label = space.index_of(label_name)
        except KeyError:
            raise DatasetError(f"line {line_no}: unknown label {label_name!r}") from None
    else:
        raise DatasetError(f"line {line_no}: label must be a string or null")
    provenance = obj["provenance"]
    try:
        return Example(
            id=str(obj["id"]),
            features=features,
            label=label,
            provenance=provenance,
            text=obj.get("text"),
        )
    except ValueError as exc:
        raise DatasetError(f"line {line_no}: {exc}") from None


def load_examples(
    path: str | Path,
    feature_dim: int,
    space: IntentSpace,
    expected_count: int | None = None,
) -> list[Example]:
    """Parse a JSONL file, reporting the offending line number on error."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such file: {path}")
    examples: list[Example] = []
    with path.open(encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            examples.append(_parse_line(raw, line_no, feature_dim, space))
    if expected_count is not None and len(examples) != expected_count:
        raise DatasetError(
            f"{path.name}: manifest says {expected_count} examples, found {len(examples)}"
        )
    return examples


def write_examples(path: str | Path, examples: list[Example], space: IntentSpace) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            obj = {
                "id": ex.id,
                "label": None if ex.label is None else space.name_of(ex.label),
                "features": [float(v) for v in ex.features],
                "provenance": ex.provenance,
            }
            if ex.text is not None:
                obj["text"] = ex.text
            fh.write(json.dumps(obj) + "\n")


@dataclass(frozen=True)
class FeatureRow:
    """A tolerantly parsed JSONL row: features plus whatever metadata came along."""

    id: str
    features: np.ndarray
    label_name: str | None
    text: str | None


def load_feature_rows(path: str | Path, feature_dim: int) -> list[FeatureRow]:
    """Parse a JSONL file without interpreting labels against an intent space."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such file: {path}")
    rows: list[FeatureRow] = []
    with path.open(encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: invalid JSON ({exc.msg})") from None
            features = np.asarray(obj.get("features"), dtype=np.float64)
            if features.ndim != 1 or features.shape[0] != feature_dim:
                raise DatasetError(
                    f"line {line_no}: expected {feature_dim} features, got {features.shape}"
                )
            if not np.all(np.isfinite(features)):
                raise DatasetError(f"line {line_no}: non-finite feature value")
            label = obj.get("label")
            if label is not None and not isinstance(label, str):
                raise DatasetError(f"line {line_no}: label must be a string or null")
            rows.append(
                FeatureRow(
                    id=str(obj.get("id", f"row-{line_no}")),
                    features=features,
                    label_name=label,
                    text=obj.get("text"),
                )
            )
    return rows


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such manifest: {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    for key in ("name", "feature_dim", "classes", "counts", "format_version"):
        if key not in manifest:
            raise DatasetError(f"manifest missing key {key!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise DatasetError(
            f"unsupported manifest format_version {manifest['format_version']}"
        )
    return manifest


def load_dataset_dir(directory: str | Path) -> DatasetBundle:
    """Load manifest + train/valid/test (+ optional valid_ood) from a directory."""
    directory = Path(directory)
    manifest = load_manifest(directory / "manifest.json")
    space = IntentSpace(tuple(manifest["classes"]))
    dim = int(manifest["feature_dim"])
    splits = {}
    for split in ("train", "valid", "test"):
        splits[split] = Dataset(
            load_examples(
                directory / f"{split}.jsonl",
                dim,
                space,
                expected_count=int(manifest["counts"][split]),
            ),
            space,
            dim,
        )
    valid_ood = None
    ood_path = directory / "valid_ood.jsonl"
    if ood_path.exists():
        valid_ood = Dataset(load_examples(ood_path, dim, space), space, dim)
    return DatasetBundle(
        name=manifest["name"],
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        valid_ood=valid_ood,
    )


def write_dataset_dir(bundle: DatasetBundle, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = bundle.manifest()
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    for split in ("train", "valid", "test"):
        ds: Dataset = getattr(bundle, split)
        write_examples(directory / f"{split}.jsonl", ds.examples, bundle.space)
    if bundle.valid_ood is not None:
        write_examples(directory / "valid_ood.jsonl", bundle.valid_ood.examples, bundle.space)


def make_ind_split(
    bundle: DatasetBundle, spec: SplitSpec, valid_ood_n: int | None = None
) -> DatasetBundle:
    """Keep a seeded subset of intents as IND; relabel the rest to OOD in test.

    Train and valid keep only examples of the selected intents.  Test keeps
    everything, with non-selected intents collapsed into the OOD class.  When
    ``valid_ood_n`` is given, that many discarded validation examples are
    returned as an OOD-labeled validation set (used only by threshold
    baselines).
    """
    old_space = bundle.space
    if old_space.k < 2:
        raise ValueError("need at least two intents to split")
    n_ind = spec.n_ind(old_space.k)
    rng = np.random.default_rng(spec.seed)
    selected = np.sort(rng.choice(old_space.k, size=n_ind, replace=False))
    new_space = IntentSpace(tuple(old_space.ind_names[i] for i in selected))
    remap = {int(old): new for new, old in enumerate(selected)}

    def relabel(ex: Example, keep_all: bool, provenance: str) -> Example | None:
        if ex.label is None or ex.label == old_space.ood_index:
            raise DatasetError(f"cannot split example {ex.id!r} without an intent label")
        if ex.label in remap:
            return replace(ex, label=remap[ex.label], provenance=provenance)
        if keep_all:
            return replace(ex, label=new_space.ood_index, provenance=provenance)
        return None

    def filter_split(ds: Dataset, keep_all: bool, provenance: str) -> list[Example]:
        out = []
        for ex in ds.examples:
            new_ex = relabel(ex, keep_all, provenance)
            if new_ex is not None:
                out.append(new_ex)
        return out

    train = Dataset(filter_split(bundle.train, False, "ind"), new_space, bundle.feature_dim)
    valid = Dataset(filter_split(bundle.valid, False, "ind"), new_space, bundle.feature_dim)
    test = Dataset(filter_split(bundle.test, True, "test"), new_space, bundle.feature_dim)

    valid_ood = None
    if valid_ood_n is not None:
        discarded = [
            relabel(ex, True, "test")
            for ex in bundle.valid.examples
            if ex.label not in remap
        ]
        if len(discarded) < valid_ood_n:
            raise DatasetError(
                f"requested {valid_ood_n} validation OOD examples, "
                f"only {len(discarded)} available"
            )
        pick = rng.choice(len(discarded), size=valid_ood_n, replace=False)
        valid_ood = Dataset(
            [discarded[i] for i in np.sort(pick)], new_space, bundle.feature_dim
        )

    return DatasetBundle(
        name=f"{bundle.name}-ind{int(round(spec.ind_ratio * 100))}",
        train=train,
        valid=valid,
        test=test,
        valid_ood=valid_ood,
    )


def synth_clusters(
    n_intents: int,
    dim: int,
    n_per_intent: int,
    center_scale: float,
    noise_sigma: float,
    seed: int,
) -> DatasetBundle:
    """Gaussian intent clusters with centers on a sphere; 70/10/20 splits."""
    if n_intents < 1 or n_per_intent < 1:
        raise ValueError("counts must be positive")
    if dim < 2:
        raise ValueError("need at least two dimensions")
    if noise_sigma <= 0.0:
        raise ValueError("noise_sigma must be positive")
    rng = np.random.default_rng(seed)
    names = tuple(f"intent_{i:02d}" for i in range(n_intents))
    space = IntentSpace(names)
    centers = rng.standard_normal((n_intents, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= center_scale

    n_train = round(0.7 * n_per_intent)
    n_valid = round(0.1 * n_per_intent)
    splits: dict[str, list[Example]] = {"train": [], "valid": [], "test": []}
    for i in range(n_intents):
        points = centers[i] + noise_sigma * rng.standard_normal((n_per_intent, dim))
        for j in range(n_per_intent):
            if j < n_train:
                split = "train"
            elif j < n_train + n_valid:
                split = "valid"
            else:
                split = "test"
            splits[split].append(
                Example(
                    id=f"synth-{i:02d}-{j:03d}",
                    features=points[j],
                    label=i,
                    provenance="ind" if split != "test" else "test",
                )
            )
    return DatasetBundle(
        name=f"synth{n_intents}",
        train=Dataset(splits["train"], space, dim),
        valid=Dataset(splits["valid"], space, dim),
        test=Dataset(splits["test"], space, dim),
    )
