import numpy as np

from softood.checkpoint import load_model, save_model
from softood.cotrain import TrainConfig, train
from softood.data import SplitSpec, make_ind_split, synth_clusters
from softood.detector import Boundaries, detect_batch, fit_boundaries
from softood.embedding import default_encoder_config
from softood.oodgen import PseudoOodConfig, feature_mixup


def trained_model(seed=0):
    bundle = synth_clusters(4, 6, 20, center_scale=5.0, noise_sigma=0.5, seed=seed)
    split = make_ind_split(bundle, SplitSpec(ind_ratio=0.5, seed=seed))
    pseudo = feature_mixup(split.train, PseudoOodConfig(method="fm", count=20, seed=seed))
    config = TrainConfig(
        lr_encoder=1e-3, lr_heads=1e-2, batch_ind=8, batch_ood=8,
        max_epochs=2, patience=2, seed=seed, head_dropout=0.3,
    )
    enc = default_encoder_config(split.feature_dim, feature_dim=12, proj_dim=6)
    model, _ = train(split.train, pseudo, split.valid, config, enc)
    boundaries, _ = fit_boundaries(model, split.train, pseudo)
    model.boundaries = boundaries
    return model, split


class TestCheckpointRoundTrip:
    def test_params_bit_exact(self, tmp_path):
        model, _ = trained_model()
        path = tmp_path / "ckpt.json"
        save_model(model, path, config={"note": 1}, seed=0)
        loaded, config, seed = load_model(path)
        assert seed == 0
        assert config == {"note": 1}
        assert loaded.store.params_equal(model.store)
        assert loaded.space.ind_names == model.space.ind_names
        np.testing.assert_array_equal(loaded.boundaries.radii, model.boundaries.radii)
        np.testing.assert_array_equal(loaded.boundaries.centroids, model.boundaries.centroids)

    def test_predictions_survive_round_trip(self, tmp_path):
        model, split = trained_model(seed=1)
        path = tmp_path / "ckpt.json"
        save_model(model, path)
        loaded, _, _ = load_model(path)
        x = split.test.features()[:10]
        before = [p.label for p in detect_batch(model, model.boundaries, x)]
        after = [p.label for p in detect_batch(loaded, loaded.boundaries, x)]
        assert before == after

    def test_identical_models_identical_bytes(self, tmp_path):
        a, _ = trained_model(seed=2)
        b, _ = trained_model(seed=2)
        pa, pb = tmp_path / "a.json", tmp_path / "b.json"
        save_model(a, pa, seed=2)
        save_model(b, pb, seed=2)
        assert pa.read_bytes() == pb.read_bytes()
