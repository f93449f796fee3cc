import numpy as np
import pytest

from agenet import features
from agenet.data import FaceRecord, parse_label
from agenet.features import (
    FeatureSet, FeatureStoreError, align, load_features, save_features,
    synthetic_feature_sets,
)


def small_set(n=5, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    keys = [f"img/{i + 20}_0_0_{i:05d}.jpg" for i in range(n)]
    return FeatureSet("senet50_f", "train", rng.standard_normal((n, dim)).astype(
        np.float32), keys)


class TestFeatureSet:
    def test_key_count_mismatch(self):
        with pytest.raises(FeatureStoreError, match="keys"):
            FeatureSet("vgg_f", "train", np.zeros((3, 2), dtype=np.float32),
                       ["a", "b"])

    def test_duplicate_keys(self):
        with pytest.raises(FeatureStoreError, match="duplicate"):
            FeatureSet("vgg_f", "train", np.zeros((2, 2), dtype=np.float32),
                       ["a", "a"])

    def test_feature_shape(self):
        fset = FeatureSet("vgg_f", "test", np.zeros((2, 6, 6, 4), dtype=np.float32),
                          ["a", "b"])
        assert fset.feature_shape == (6, 6, 4)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        fset = small_set()
        path = tmp_path / "train.ftns"
        save_features(fset, path)
        back = load_features(path)
        assert back.extractor_name == "senet50_f"
        assert back.split == "train"
        assert back.keys == fset.keys
        np.testing.assert_array_equal(back.features, fset.features)

    def test_sidecar_file_exists(self, tmp_path):
        path = tmp_path / "f.ftns"
        save_features(small_set(), path)
        assert (tmp_path / "f.ftns.keys").exists()

    def test_missing_sidecar(self, tmp_path):
        path = tmp_path / "f.ftns"
        save_features(small_set(), path)
        (tmp_path / "f.ftns.keys").unlink()
        with pytest.raises(FeatureStoreError, match="key index"):
            load_features(path)

    def test_corrupt_tensor(self, tmp_path):
        path = tmp_path / "f.ftns"
        save_features(small_set(), path)
        path.write_bytes(b"garbage")
        with pytest.raises(FeatureStoreError):
            load_features(path)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "f.ftns"
        save_features(small_set(), path)
        (tmp_path / "f.ftns.keys").write_text("onlyoneword\nimg.jpg\n")
        with pytest.raises(FeatureStoreError, match="header"):
            load_features(path)


class TestAlign:
    def test_reorders_rows(self):
        fset = small_set(4)
        records = [FaceRecord(k, 20, 0, 0) for k in reversed(fset.keys)]
        feats, recs = align(fset, records)
        np.testing.assert_array_equal(feats, fset.features[::-1])
        assert recs == records

    def test_missing_record(self):
        fset = small_set(3)
        records = [FaceRecord("nope.jpg", 20, 0, 0)]
        with pytest.raises(FeatureStoreError, match="absent"):
            align(fset, records)


class TestSynthetic:
    def test_shapes_and_sizes(self):
        sets, records = synthetic_feature_sets(dim=16, sizes=(50, 10, 10), seed=0)
        assert set(sets) == {"train", "validation", "test"}
        assert sets["train"].features.shape == (50, 16)
        assert len(records["validation"]) == 10

    def test_spatial_variant(self):
        sets, _ = synthetic_feature_sets(dim=8, sizes=(6, 2, 2), seed=1, spatial=True)
        assert sets["train"].features.shape == (6, 6, 6, 8)

    def test_keys_parse_back_to_labels(self):
        sets, records = synthetic_feature_sets(dim=4, sizes=(20, 5, 5), seed=2)
        for split in features.SPLITS:
            for key, rec in zip(sets[split].keys, records[split]):
                parsed = parse_label(key)
                assert (parsed.age, parsed.gender) == (rec.age, rec.gender)

    def test_deterministic(self):
        a, _ = synthetic_feature_sets(dim=8, sizes=(10, 2, 2), seed=3)
        b, _ = synthetic_feature_sets(dim=8, sizes=(10, 2, 2), seed=3)
        np.testing.assert_array_equal(a["train"].features, b["train"].features)

    def test_age_signal_is_linear(self):
        # the planted construction guarantees a linear readout of age
        sets, records = synthetic_feature_sets(dim=32, sizes=(200, 20, 20), seed=4)
        X = sets["train"].features.astype(np.float64)
        ages = np.array([r.age for r in records["train"]], dtype=np.float64)
        Xc = X - X.mean(axis=0)
        w = np.linalg.lstsq(Xc, ages - ages.mean(), rcond=None)[0]
        pred = Xc @ w + ages.mean()
        assert np.mean(np.abs(pred - ages)) < 2.0

    def test_gender_signal_is_separable(self):
        sets, records = synthetic_feature_sets(dim=32, sizes=(200, 20, 20), seed=5)
        X = sets["train"].features.astype(np.float64)
        genders = np.array([r.gender for r in records["train"]])
        # project onto the between-class mean difference
        mu1 = X[genders == 1].mean(axis=0)
        mu0 = X[genders == 0].mean(axis=0)
        scores = X @ (mu1 - mu0)
        threshold = (scores[genders == 1].min() + scores[genders == 0].max()) / 2
        assert np.all((scores > threshold) == (genders == 1))
