import math

import numpy as np
import pytest

from softood.embedding import (
    EncoderConfig,
    contrastive_loss,
    default_encoder_config,
    embed,
    encode,
    init_encoder_params,
)
from softood.numerics import MlpSpec, ParamStore, finite_diff_check


def tiny_config(input_dim=3, feature_dim=4, proj_dim=2, temp=1.0):
    return EncoderConfig(
        encoder=MlpSpec(widths=(input_dim, feature_dim)),
        projection=MlpSpec(widths=(feature_dim, proj_dim)),
        contrast_temp=temp,
    )


def random_model(config, seed=0):
    store = ParamStore()
    init_encoder_params(config, store, np.random.default_rng(seed))
    return store


def identity_model(dim, temp=1.0):
    config = EncoderConfig(
        encoder=MlpSpec(widths=(dim, dim)),
        projection=MlpSpec(widths=(dim, dim)),
        contrast_temp=temp,
    )
    store = ParamStore()
    store.add("encoder.W0", np.eye(dim))
    store.add("encoder.b0", np.zeros(dim))
    store.add("proj.W0", np.eye(dim))
    store.add("proj.b0", np.zeros(dim))
    return config, store


class TestEncode:
    def test_identity_encoder_rectifies(self):
        config, store = identity_model(2)
        out, _ = encode(config, store, np.array([3.0, -4.0]))
        np.testing.assert_allclose(out, [3.0, -0.04])

    def test_deterministic_with_dropout_off(self):
        config = tiny_config()
        store = random_model(config)
        x = np.array([0.3, -0.7, 1.1])
        a, _ = encode(config, store, x)
        b, _ = encode(config, store, x)
        np.testing.assert_array_equal(a, b)

    def test_lipschitz_bound(self):
        config = EncoderConfig(
            encoder=MlpSpec(widths=(4, 6, 5)),
            projection=MlpSpec(widths=(5, 2)),
        )
        store = random_model(config, seed=3)
        L = 1.0
        for i in range(config.encoder.n_layers):
            L *= np.linalg.svd(store[f"encoder.W{i}"], compute_uv=False)[0]
        rng = np.random.default_rng(1)
        for _ in range(10):
            x = rng.normal(size=4)
            delta = rng.normal(size=4)
            delta *= 1e-6 / np.linalg.norm(delta)
            a, _ = encode(config, store, x)
            b, _ = encode(config, store, x + delta)
            assert np.linalg.norm(b - a) <= L * 1e-6 * (1 + 1e-9)

    def test_dimension_mismatch(self):
        config = tiny_config()
        store = random_model(config)
        with pytest.raises(ValueError):
            encode(config, store, np.ones(5))


class TestEmbed:
    def test_unit_norm(self):
        config = tiny_config()
        store = random_model(config, seed=5)
        rng = np.random.default_rng(2)
        for _ in range(20):
            z, _ = embed(config, store, rng.normal(size=3))
            assert abs(np.linalg.norm(z) - 1.0) <= 1e-9

    def test_identity_projection_three_four(self):
        config, store = identity_model(2)
        z, _ = embed(config, store, np.array([3.0, 4.0]))
        np.testing.assert_allclose(z, [0.6, 0.8])

    def test_output_scaling_absorbed_by_normalization(self):
        # Leaky rectifier is positive-homogeneous, so scaling the last
        # projection layer rescales the pre-norm vector only.
        config = tiny_config()
        store = random_model(config, seed=8)
        x = np.array([0.4, 1.2, -0.3])
        z1, _ = embed(config, store, x)
        store["proj.W0"] = store["proj.W0"] * 5.0
        store["proj.b0"] = store["proj.b0"] * 5.0
        z2, _ = embed(config, store, x)
        np.testing.assert_allclose(z1, z2, atol=1e-12)


class TestContrastiveLoss:
    def test_two_same_class_examples_give_zero(self):
        config, store = identity_model(2)
        x = np.array([[1.0, 0.0], [1.0, 0.0]])
        value, info = contrastive_loss(config, store, x, np.array([0, 0]), accumulate=False)
        assert value == pytest.approx(0.0, abs=1e-12)
        assert info.skipped_anchors == 0

    def test_hand_worked_three_sample_batch(self):
        config, store = identity_model(2, temp=1.0)
        x = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        labels = np.array([0, 0, 1])
        value, info = contrastive_loss(config, store, x, labels, accumulate=False)
        per_anchor = math.log(math.e + 1) - 1.0
        assert value == pytest.approx(2 * per_anchor, abs=1e-12)
        assert value == pytest.approx(0.6265233750364456, abs=1e-12)
        assert info.skipped_anchors == 1
        assert info.n_anchors == 2

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        for trial in range(5):
            config = EncoderConfig(
                encoder=MlpSpec(widths=(3, 4)),
                projection=MlpSpec(widths=(4, 3)),
                contrast_temp=float(rng.uniform(0.5, 2.0)),
            )
            store = random_model(config, seed=100 + trial)
            x = rng.normal(size=(4, 3))
            labels = rng.integers(0, 2, size=4)
            if len(set(labels[labels == labels[0]])) == 4:
                labels[0] = 1 - labels[0]

            def value(s):
                v, _ = contrastive_loss(config, s, x, labels, accumulate=False)
                return v

            def grads(s):
                s.zero_grads()
                contrastive_loss(config, s, x, labels, accumulate=True)
                g = s.grads()
                s.zero_grads()
                return g

            # h=1e-5 keeps truncation error well under the 1e-4 budget.
            assert finite_diff_check(value, grads, store, h=1e-5) <= 1e-4

    def test_nonnegative_and_permutation_invariant(self):
        config = default_encoder_config(5, feature_dim=6, proj_dim=4)
        store = random_model(config, seed=4)
        rng = np.random.default_rng(9)
        for _ in range(20):
            n = int(rng.integers(2, 8))
            x = rng.normal(size=(n, 5))
            labels = rng.integers(0, 3, size=n)
            value, _ = contrastive_loss(config, store, x, labels, accumulate=False)
            assert value >= -1e-12
            perm = rng.permutation(n)
            shuffled, _ = contrastive_loss(config, store, x[perm], labels[perm], accumulate=False)
            assert shuffled == pytest.approx(value, abs=1e-10)

    def test_small_temperature_sharpens_gradients(self):
        rng = np.random.default_rng(11)
        for trial in range(10):
            store_seed = 200 + trial
            x = rng.normal(size=(5, 3))
            labels = rng.integers(0, 2, size=5)
            norms = {}
            for temp in (1.0, 0.1):
                config = tiny_config(temp=temp)
                store = random_model(config, seed=store_seed)
                store.zero_grads()
                contrastive_loss(config, store, x, labels, accumulate=True)
                norms[temp] = math.sqrt(
                    sum(float((g**2).sum()) for g in store.grads().values())
                )
            if abs(norms[1.0] - norms[0.1]) < 1e-9:
                continue  # tie case excluded
            assert norms[0.1] >= norms[1.0]

    def test_batch_of_one_rejected(self):
        config, store = identity_model(2)
        with pytest.raises(ValueError):
            contrastive_loss(config, store, np.array([[1.0, 0.0]]), np.array([0]))

    def test_unlabeled_example_rejected(self):
        config, store = identity_model(2)
        with pytest.raises(ValueError, match="in-domain"):
            contrastive_loss(
                config, store, np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0, -1])
            )
