"""Phrase-distortion pseudo-OOD text: mask a random span, let an LM fill it.

The mask filler is injectable: any callable mapping a text containing one
``[MASK]`` placeholder to the filled text.  Lines whose fill fails are
skipped and counted.  An optional scorer can reject fills below a threshold.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

MASK_TOKEN = "[MASK]"


@dataclass(frozen=True)
class PdConfig:
    n: int
    replacement_rate: float = 0.15
    seed: int = 0
    mask_model: str = "bert-base-uncased"
    min_score: float | None = None  # optional fill-quality threshold

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 <= self.replacement_rate < 1.0:
            raise ValueError("replacement_rate must be in [0, 1)")


def mask_random_span(text: str, rate: float, rng: np.random.Generator) -> str:
    """Replace a contiguous token span (ceil(rate * len) tokens) with [MASK]."""
    tokens = text.split()
    if not tokens or rate == 0.0:
        return text
    span = max(1, int(np.ceil(rate * len(tokens))))
    span = min(span, len(tokens))
    start = int(rng.integers(0, len(tokens) - span + 1))
    return " ".join(tokens[:start] + [MASK_TOKEN] + tokens[start + span :])


def hf_mask_filler(model_id: str = "bert-base-uncased", device: str = "cpu"):
    """Fill-mask callable backed by a pretrained masked LM."""
    try:  # pragma: no cover - environment dependent
        from transformers import pipeline
    except ImportError as exc:  # pragma: no cover
        raise RuntimeError("the hf mask filler needs the 'transformers' package") from exc
    filler = pipeline("fill-mask", model=model_id, device=-1 if device == "cpu" else 0)

    def fill(text: str) -> tuple[str, float]:  # pragma: no cover - needs weights
        best = filler(text.replace(MASK_TOKEN, filler.tokenizer.mask_token))[0]
        return best["sequence"], float(best["score"])

    return fill


@dataclass
class PdResult:
    rows: list[dict]
    skipped: int


def gen_pd_text(
    texts: list[str],
    config: PdConfig,
    mask_fill: Callable[[str], tuple[str, float]],
    encoder,
) -> PdResult:
    """Distort up to ``n`` utterances and encode the results.

    Output rows follow the shared JSONL contract with null labels and
    ``pseudo-pd`` provenance.
    """
    if config.replacement_rate == 0.0:
        warnings.warn("replacement_rate is 0; distorted texts equal their inputs")
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(texts))
    distorted: list[str] = []
    skipped = 0
    for idx in order:
        if len(distorted) >= config.n:
            break
        source = texts[int(idx)]
        masked = mask_random_span(source, config.replacement_rate, rng)
        if MASK_TOKEN not in masked:
            distorted.append(source)  # degenerate rate-0 path
            continue
        try:
            filled, score = mask_fill(masked)
        except Exception:
            skipped += 1
            continue
        if config.min_score is not None and score < config.min_score:
            skipped += 1
            continue
        distorted.append(filled)

    features = encoder.encode(distorted) if distorted else np.zeros((0, encoder.dim))
    rows = [
        {
            "id": f"pd-{i:05d}",
            "label": None,
            "features": [float(v) for v in features[i]],
            "provenance": "pseudo-pd",
            "text": distorted[i],
        }
        for i in range(len(distorted))
    ]
    return PdResult(rows=rows, skipped=skipped)


def read_texts_jsonl(path: str | Path) -> list[str]:
    """Pull the text field out of an exported JSONL file."""
    texts = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "text" not in obj or obj["text"] is None:
                raise ValueError(f"line {line_no}: no text field to distort")
            texts.append(obj["text"])
    return texts
