"""Embedding graph over labeled and pseudo samples, and label smoothing.

Every node carries a unit-norm embedding and a one-hot prior (its intent, or
the OOD class for pseudo samples).  A pseudo sample's smoothed label is the
convex combination of its own prior with the attention-weighted priors of
its neighbors; with squared Euclidean distance this is exactly the minimizer
of the underlying smoothing objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from softood.data import Example, IntentSpace, PSEUDO_PROVENANCES
from softood.embedding import EncoderConfig, embed
from softood.numerics.params import ParamStore
from softood.validation import as_matrix, as_vector


def prior_label(example: Example, space: IntentSpace) -> np.ndarray:
    """One-hot prior: the example's intent, or the OOD class when pseudo."""
    if example.provenance == "test":
        raise ValueError(f"test example {example.id!r} has no prior label")
    vec = np.zeros(space.n_classes)
    if example.label is None:
        vec[space.ood_index] = 1.0
    else:
        if not 0 <= example.label < space.k:
            raise ValueError(f"example {example.id!r} has non-IND label {example.label}")
        vec[example.label] = 1.0
    return vec


@dataclass
class EmbeddingGraph:
    """Fully connected graph over the embeddings of D_I and D_P."""

    ids: tuple[str, ...]
    embeddings: np.ndarray  # (N, proj_dim), unit rows
    priors: np.ndarray  # (N, k+1), one-hot rows
    pseudo_mask: np.ndarray  # (N,) bool
    temperature: float = 0.1
    prior_weight: float = 0.11
    include_self: bool = False
    top_m: int | None = None  # None = exact over all neighbors
    _pos: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.embeddings = as_matrix(self.embeddings, name="embeddings")
        self.priors = as_matrix(self.priors, name="priors")
        n = self.embeddings.shape[0]
        if len(self.ids) != n or self.priors.shape[0] != n or self.pseudo_mask.shape[0] != n:
            raise ValueError("ids, embeddings, priors, and pseudo_mask must align")
        if self.temperature <= 0.0:
            raise ValueError("graph temperature must be positive")
        if not 0.0 <= self.prior_weight <= 1.0:
            raise ValueError("prior weight must be in [0, 1]")
        if self.top_m is not None and self.top_m < 1:
            raise ValueError("top_m must be >= 1 (or None for the exact graph)")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("graph nodes must be unit-norm embeddings")
        hot = self.priors.sum(axis=1)
        if np.any(np.abs(hot - 1.0) > 1e-9) or np.any((self.priors != 0) & (self.priors != 1)):
            raise ValueError("priors must be one-hot")
        self._pos = {node_id: i for i, node_id in enumerate(self.ids)}
        if len(self._pos) != n:
            raise ValueError("node ids must be unique")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_classes(self) -> int:
        return self.priors.shape[1]

    def position(self, node_id: str) -> int:
        if node_id not in self._pos:
            raise KeyError(f"node {node_id!r} is not in the graph")
        return self._pos[node_id]


def build_graph(
    config: EncoderConfig,
    store: ParamStore,
    examples: list[Example],
    space: IntentSpace,
    temperature: float = 0.1,
    prior_weight: float = 0.11,
    include_self: bool = False,
    top_m: int | None = None,
) -> EmbeddingGraph:
    """Embed every sample (dropout off) and attach its one-hot prior."""
    if not examples:
        raise ValueError("cannot build a graph over zero examples")
    feats = np.stack([ex.features for ex in examples])
    z, _ = embed(config, store, feats, train=False)
    priors = np.stack([prior_label(ex, space) for ex in examples])
    pseudo = np.array([ex.provenance in PSEUDO_PROVENANCES for ex in examples])
    return EmbeddingGraph(
        ids=tuple(ex.id for ex in examples),
        embeddings=z,
        priors=priors,
        pseudo_mask=pseudo,
        temperature=temperature,
        prior_weight=prior_weight,
        include_self=include_self,
        top_m=top_m,
    )


def attention_weights(
    graph: EmbeddingGraph, z: np.ndarray, exclude_id: str | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Similarity softmax over neighbor nodes.

    Returns (weights, neighbor_positions).  The query's own node is excluded
    when the graph was built with ``include_self`` false.  With ``top_m``
    set, only the m most similar neighbors keep weight (renormalized).
    """
    z = as_vector(z, size=graph.embeddings.shape[1], name="query embedding")
    if abs(np.linalg.norm(z) - 1.0) > 1e-6:
        raise ValueError("query embedding must be unit-norm")
    neighbors = np.arange(len(graph))
    if exclude_id is not None and not graph.include_self:
        neighbors = neighbors[neighbors != graph.position(exclude_id)]
    if neighbors.size == 0:
        raise ValueError("no neighbors left after self-exclusion")
    sims = graph.embeddings[neighbors] @ z / graph.temperature
    if graph.top_m is not None and graph.top_m < neighbors.size:
        keep = np.sort(np.argsort(sims)[-graph.top_m :])
        neighbors = neighbors[keep]
        sims = sims[keep]
    shifted = np.exp(sims - sims.max())
    return shifted / shifted.sum(), neighbors


def graph_smoothed_label(example_id: str, graph: EmbeddingGraph) -> np.ndarray:
    """Convex combination of the node's prior with its neighbors' priors."""
    pos = graph.position(example_id)
    if not graph.pseudo_mask[pos]:
        raise ValueError(f"node {example_id!r} is not a pseudo sample")
    alpha = graph.prior_weight
    weights, neighbors = attention_weights(
        graph, graph.embeddings[pos], exclude_id=example_id
    )
    aggregated = weights @ graph.priors[neighbors]
    return alpha * graph.priors[pos] + (1.0 - alpha) * aggregated


def smooth_all(graph: EmbeddingGraph, pseudo_ids: list[str] | None = None) -> dict[str, np.ndarray]:
    """Smoothed label per pseudo node; in-domain nodes keep their priors."""
    if pseudo_ids is None:
        pseudo_ids = [graph.ids[i] for i in np.flatnonzero(graph.pseudo_mask)]
    return {node_id: graph_smoothed_label(node_id, graph) for node_id in pseudo_ids}
