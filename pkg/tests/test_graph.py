import numpy as np
import pytest

from softood.data import Example, IntentSpace
from softood.graph import (
    EmbeddingGraph,
    attention_weights,
    build_graph,
    graph_smoothed_label,
    prior_label,
    smooth_all,
)

from oracles import pgd_smoothing_minimizer


def make_graph(embeddings, priors, pseudo_mask, temperature=1.0, prior_weight=0.11, include_self=False):
    n = len(embeddings)
    return EmbeddingGraph(
        ids=tuple(f"n{i}" for i in range(n)),
        embeddings=np.asarray(embeddings, dtype=np.float64),
        priors=np.asarray(priors, dtype=np.float64),
        pseudo_mask=np.asarray(pseudo_mask, dtype=bool),
        temperature=temperature,
        prior_weight=prior_weight,
        include_self=include_self,
    )


def one_hot(idx, n):
    v = np.zeros(n)
    v[idx] = 1.0
    return v


def random_graph(rng, n_nodes, k, temperature=1.0, prior_weight=0.11):
    z = rng.normal(size=(n_nodes, 4))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    pseudo = rng.random(n_nodes) < 0.5
    pseudo[0] = True  # keep at least one pseudo node
    priors = np.stack(
        [
            one_hot(k if pseudo[i] else int(rng.integers(0, k)), k + 1)
            for i in range(n_nodes)
        ]
    )
    return make_graph(z, priors, pseudo, temperature=temperature, prior_weight=prior_weight)


class TestPriorLabel:
    def test_ind_example(self):
        space = IntentSpace(("a", "b", "c"))
        ex = Example(id="x", features=np.zeros(2), label=1, provenance="ind")
        np.testing.assert_array_equal(prior_label(ex, space), [0, 1, 0, 0])

    def test_pseudo_example(self):
        space = IntentSpace(("a", "b", "c"))
        ex = Example(id="p", features=np.zeros(2), label=None, provenance="pseudo-fm")
        np.testing.assert_array_equal(prior_label(ex, space), [0, 0, 0, 1])

    def test_single_intent(self):
        space = IntentSpace(("a",))
        ex = Example(id="x", features=np.zeros(2), label=0, provenance="ind")
        np.testing.assert_array_equal(prior_label(ex, space), [1, 0])

    def test_test_provenance_rejected(self):
        space = IntentSpace(("a",))
        ex = Example(id="t", features=np.zeros(2), label=0, provenance="test")
        with pytest.raises(ValueError, match="test example"):
            prior_label(ex, space)


class TestAttentionWeights:
    def test_single_neighbor_gets_full_weight(self):
        for temp in (0.1, 1.0, 10.0):
            graph = make_graph(
                [[1.0, 0.0], [0.0, 1.0]],
                [[0, 0, 1], [1, 0, 0]],
                [True, False],
                temperature=temp,
            )
            weights, neighbors = attention_weights(graph, np.array([1.0, 0.0]), exclude_id="n0")
            np.testing.assert_array_equal(neighbors, [1])
            np.testing.assert_allclose(weights, [1.0])

    def test_hand_worked_two_neighbors(self):
        graph = make_graph(
            [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            [[0, 0, 1], [1, 0, 0], [0, 1, 0]],
            [True, False, False],
            temperature=1.0,
        )
        weights, neighbors = attention_weights(graph, graph.embeddings[0], exclude_id="n0")
        np.testing.assert_array_equal(neighbors, [1, 2])
        np.testing.assert_allclose(
            weights, [0.7310585786300049, 0.2689414213699951], atol=1e-15
        )

    def test_small_temperature_concentrates_on_nearest(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(6, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        graph = make_graph(
            z,
            [one_hot(0, 3)] * 6,
            [False] * 6,
            temperature=1e-3,
        )
        query = z[0]
        sims = z[1:] @ query
        gap = np.sort(sims)[-1] - np.sort(sims)[-2]
        if gap >= 0.1:
            weights, neighbors = attention_weights(graph, query, exclude_id="n0")
            assert weights.max() > 0.999

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(4)
        graph = random_graph(rng, 20, k=3)
        weights, _ = attention_weights(graph, graph.embeddings[0], exclude_id="n0")
        assert abs(weights.sum() - 1.0) <= 1e-12

    def test_empty_neighbors_rejected(self):
        graph = make_graph([[1.0, 0.0]], [[0, 1]], [True])
        with pytest.raises(ValueError, match="no neighbors"):
            attention_weights(graph, np.array([1.0, 0.0]), exclude_id="n0")

    def test_include_self_keeps_own_node(self):
        # Literal reading of the neighbor sum: the query contributes itself.
        graph = make_graph(
            [[1.0, 0.0], [0.0, 1.0]],
            [[0, 1], [1, 0]],
            [True, False],
            include_self=True,
        )
        weights, neighbors = attention_weights(graph, graph.embeddings[0], exclude_id="n0")
        np.testing.assert_array_equal(neighbors, [0, 1])
        assert weights[0] > weights[1]  # self-similarity dominates


class TestGraphSmoothedLabel:
    def test_full_prior_weight_returns_prior(self):
        rng = np.random.default_rng(1)
        graph = random_graph(rng, 10, k=2, prior_weight=1.0)
        pseudo_id = graph.ids[0]
        np.testing.assert_allclose(
            graph_smoothed_label(pseudo_id, graph),
            graph.priors[0],
            atol=1e-12,
        )

    def test_single_identical_neighbor_half_weight(self):
        graph = make_graph(
            [[1.0, 0.0], [1.0, 0.0]],
            [[0, 1], [1, 0]],  # pseudo prior OOD at index 1 (k=1)
            [True, False],
            prior_weight=0.5,
        )
        np.testing.assert_allclose(
            graph_smoothed_label("n0", graph), [0.5, 0.5], atol=1e-12
        )

    def test_hand_worked_two_class_case(self):
        graph = make_graph(
            [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            [[0, 0, 1], [1, 0, 0], [0, 1, 0]],
            [True, False, False],
            temperature=1.0,
            prior_weight=0.11,
        )
        smoothed = graph_smoothed_label("n0", graph)
        expected = np.array([0.6506421349807044, 0.2393578650192956, 0.11])
        np.testing.assert_allclose(smoothed, expected, atol=1e-12)
        # Cross-check with the projected-gradient minimizer of the objective.
        weights, neighbors = attention_weights(graph, graph.embeddings[0], exclude_id="n0")
        numeric = pgd_smoothing_minimizer(
            graph.priors[0], graph.priors[neighbors], weights, alpha=0.11
        )
        np.testing.assert_allclose(smoothed, numeric, atol=1e-8)

    def test_closed_form_matches_pgd_on_random_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            k = int(rng.integers(1, 5))
            graph = random_graph(rng, int(rng.integers(4, 15)), k=k)
            pseudo_id = graph.ids[0]
            smoothed = graph_smoothed_label(pseudo_id, graph)
            weights, neighbors = attention_weights(
                graph, graph.embeddings[0], exclude_id=pseudo_id
            )
            numeric = pgd_smoothing_minimizer(
                graph.priors[0], graph.priors[neighbors], weights, alpha=graph.prior_weight
            )
            assert np.abs(smoothed - numeric).max() <= 1e-6

    def test_distance_to_prior_linear_in_mixing(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(8, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        priors = np.stack([one_hot(2, 3)] + [one_hot(int(rng.integers(0, 2)), 3) for _ in range(7)])
        pseudo = [True] + [False] * 7
        base = None
        for alpha in (0.0, 0.11, 0.5, 1.0):
            graph = make_graph(z, priors, pseudo, prior_weight=alpha)
            smoothed = graph_smoothed_label("n0", graph)
            dist = np.linalg.norm(smoothed - priors[0])
            if base is None:
                base = dist  # alpha = 0 distance
            assert dist == pytest.approx((1.0 - alpha) * base, abs=1e-12)

    def test_identical_embeddings_get_identical_labels(self):
        rng = np.random.default_rng(9)
        z = rng.normal(size=(6, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        z[1] = z[0]
        priors = np.stack([one_hot(3, 4)] * 2 + [one_hot(int(rng.integers(0, 3)), 4) for _ in range(4)])
        graph = make_graph(z, priors, [True, True, False, False, False, False])
        a = graph_smoothed_label("n0", graph)
        b = graph_smoothed_label("n1", graph)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_rigid_rotation_invariance(self):
        rng = np.random.default_rng(12)
        graph = random_graph(rng, 12, k=3)
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        rotated = make_graph(
            graph.embeddings @ q.T,
            graph.priors,
            graph.pseudo_mask,
            temperature=graph.temperature,
            prior_weight=graph.prior_weight,
        )
        for node_id in smooth_all(graph):
            np.testing.assert_allclose(
                graph_smoothed_label(node_id, graph),
                graph_smoothed_label(node_id, rotated),
                atol=1e-9,
            )

    def test_probability_vector_invariant(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            graph = random_graph(rng, int(rng.integers(3, 20)), k=int(rng.integers(1, 5)))
            for node_id, smoothed in smooth_all(graph).items():
                assert np.all(smoothed >= -1e-12)
                assert abs(smoothed.sum() - 1.0) <= 1e-9

    def test_non_pseudo_node_rejected(self):
        graph = make_graph(
            [[1.0, 0.0], [0.0, 1.0]], [[1, 0, 0], [0, 1, 0]], [False, False]
        )
        with pytest.raises(ValueError, match="not a pseudo sample"):
            graph_smoothed_label("n0", graph)

    def test_unknown_node_rejected(self):
        graph = make_graph([[1.0, 0.0], [0.0, 1.0]], [[0, 1], [1, 0]], [True, False])
        with pytest.raises(KeyError):
            graph_smoothed_label("missing", graph)


class TestTopMTruncation:
    def test_weights_renormalize_over_top_neighbors(self):
        rng = np.random.default_rng(31)
        z = rng.normal(size=(8, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        priors = [one_hot(2, 3)] + [one_hot(int(rng.integers(0, 2)), 3) for _ in range(7)]
        exact = make_graph(z, priors, [True] + [False] * 7)
        truncated = make_graph(z, priors, [True] + [False] * 7)
        truncated.top_m = 3
        weights, neighbors = attention_weights(truncated, z[0], exclude_id="n0")
        assert neighbors.size == 3
        assert abs(weights.sum() - 1.0) <= 1e-12
        # the kept neighbors are the most similar ones
        sims = z[1:] @ z[0]
        best = set(np.argsort(sims)[-3:] + 1)
        assert set(neighbors) == best

    def test_large_enough_m_matches_exact(self):
        rng = np.random.default_rng(32)
        graph = random_graph(rng, 10, k=2)
        truncated = make_graph(
            graph.embeddings, graph.priors, graph.pseudo_mask,
            temperature=graph.temperature, prior_weight=graph.prior_weight,
        )
        truncated.top_m = 50  # more than the neighbor count: exact semantics
        for node_id in smooth_all(graph):
            np.testing.assert_array_equal(
                graph_smoothed_label(node_id, graph),
                graph_smoothed_label(node_id, truncated),
            )

    def test_smoothed_labels_stay_probability_vectors(self):
        rng = np.random.default_rng(33)
        graph = random_graph(rng, 15, k=3)
        graph.top_m = 4
        for smoothed in smooth_all(graph).values():
            assert abs(smoothed.sum() - 1.0) <= 1e-9
            assert np.all(smoothed >= -1e-12)


class TestSmoothAll:
    def test_no_pseudo_nodes_empty_map(self):
        graph = make_graph(
            [[1.0, 0.0], [0.0, 1.0]], [[1, 0, 0], [0, 1, 0]], [False, False]
        )
        assert smooth_all(graph) == {}

    def test_singleton_pseudo_full_prior(self):
        graph = make_graph(
            [[1.0, 0.0], [0.0, 1.0]], [[0, 1], [1, 0]], [True, False], prior_weight=1.0
        )
        result = smooth_all(graph)
        assert set(result) == {"n0"}
        np.testing.assert_allclose(result["n0"], [0.0, 1.0], atol=1e-12)

    def test_batch_matches_single_bit_exact(self):
        rng = np.random.default_rng(17)
        graph = random_graph(rng, 200, k=4)
        batch = smooth_all(graph)
        for node_id, smoothed in batch.items():
            np.testing.assert_array_equal(smoothed, graph_smoothed_label(node_id, graph))


class TestBuildGraph:
    def test_build_from_examples(self):
        from softood.embedding import EncoderConfig, init_encoder_params
        from softood.numerics import MlpSpec, ParamStore

        space = IntentSpace(("a", "b"))
        config = EncoderConfig(
            encoder=MlpSpec(widths=(3, 4)), projection=MlpSpec(widths=(4, 2))
        )
        store = ParamStore()
        init_encoder_params(config, store, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        examples = [
            Example(id=f"i{j}", features=rng.normal(size=3), label=j % 2, provenance="ind")
            for j in range(4)
        ] + [
            Example(id=f"p{j}", features=rng.normal(size=3), label=None, provenance="pseudo-fm")
            for j in range(3)
        ]
        graph = build_graph(config, store, examples, space)
        assert len(graph) == 7
        assert graph.pseudo_mask.sum() == 3
        assert graph.n_classes == 3
        labels = smooth_all(graph)
        assert set(labels) == {"p0", "p1", "p2"}
