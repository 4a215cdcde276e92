"""Sentence encoders: a pretrained transformer with mean pooling, plus a
deterministic hashing encoder for offline tests and smoke runs.

Encoder specs are strings: ``hf:bert-base-uncased`` or ``hash:256``.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9']+")


class HashingEncoder:
    """Feature-hashed bag of tokens, L2-normalized. Fully offline."""

    def __init__(self, dim: int = 256):
        if dim < 2:
            raise ValueError("hashing encoder needs dim >= 2")
        self.dim = int(dim)
        self.name = f"hash:{self.dim}"

    def _token_slot(self, token: str) -> tuple[int, float]:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        index = int.from_bytes(digest[:4], "little") % self.dim
        sign = 1.0 if digest[4] % 2 == 0 else -1.0
        return index, sign

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            for token in _TOKEN_RE.findall(text.lower()):
                index, sign = self._token_slot(token)
                out[i, index] += sign
            norm = np.linalg.norm(out[i])
            if norm > 0:
                out[i] /= norm
            else:
                out[i, 0] = 1.0  # degenerate empty text
        return out


class HfMeanPoolEncoder:
    """Pretrained transformer with an averaging-pooling layer on top.

    Token embeddings from the final hidden state are mean-pooled under the
    attention mask; inference runs in eval mode with gradients disabled so
    repeated exports agree.
    """

    def __init__(self, model_id: str = "bert-base-uncased", device: str = "cpu", batch_size: int = 32):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:  # pragma: no cover - environment dependent
            raise RuntimeError(
                "the hf encoder needs the 'transformers' and 'torch' packages"
            ) from exc
        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.model = AutoModel.from_pretrained(model_id).to(device).eval()
        self.device = device
        self.batch_size = batch_size
        self.dim = int(self.model.config.hidden_size)
        self.name = f"hf:{model_id}"

    def encode(self, texts: list[str]) -> np.ndarray:  # pragma: no cover - needs weights
        torch = self._torch
        chunks = []
        with torch.no_grad():
            for start in range(0, len(texts), self.batch_size):
                batch = texts[start : start + self.batch_size]
                tokens = self.tokenizer(
                    batch, padding=True, truncation=True, return_tensors="pt"
                ).to(self.device)
                hidden = self.model(**tokens).last_hidden_state
                mask = tokens["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)
                chunks.append(pooled.cpu().numpy().astype(np.float64))
        return np.vstack(chunks)


def make_encoder(spec: str, device: str = "cpu", batch_size: int = 32):
    kind, _, arg = spec.partition(":")
    if kind == "hash":
        return HashingEncoder(dim=int(arg) if arg else 256)
    if kind == "hf":
        return HfMeanPoolEncoder(
            model_id=arg or "bert-base-uncased", device=device, batch_size=batch_size
        )
    raise ValueError(f"unknown encoder spec {spec!r}; use hash:<dim> or hf:<model-id>")
