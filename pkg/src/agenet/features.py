"""Persistence of precomputed backbone embeddings, plus a synthetic
generator so the transfer-learning path is testable offline.

On disk a feature set is an FTNS tensor next to a ``.keys`` sidecar whose
first line names the extractor and split and whose remaining lines are the
record paths in row order.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import ftns
from .data import FaceRecord

EXTRACTORS = ("vgg_f", "resnet50_f", "senet50_f")
SPLITS = ("train", "validation", "test")


class FeatureStoreError(Exception):
    """Malformed or inconsistent feature files."""


@dataclass
class FeatureSet:
    extractor_name: str
    split: str
    features: np.ndarray  # (n, ...) one row per sample
    keys: list

    def __post_init__(self):
        if len(self.keys) != self.features.shape[0]:
            raise FeatureStoreError(
                f"{len(self.keys)} keys but {self.features.shape[0]} feature rows")
        if len(set(self.keys)) != len(self.keys):
            raise FeatureStoreError("duplicate keys in feature set")

    @property
    def feature_shape(self):
        return self.features.shape[1:]


def _keys_path(path):
    return f"{os.fspath(path)}.keys"


def save_features(fset, path):
    ftns.save(path, fset.features)
    with open(_keys_path(path), "w") as fh:
        fh.write(f"{fset.extractor_name} {fset.split}\n")
        for key in fset.keys:
            fh.write(f"{key}\n")


def load_features(path):
    try:
        features = ftns.load(path)
    except ftns.FtnsError as exc:
        raise FeatureStoreError(f"{path}: {exc}") from exc
    keys_path = _keys_path(path)
    if not os.path.exists(keys_path):
        raise FeatureStoreError(f"missing key index {keys_path}")
    with open(keys_path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FeatureStoreError(f"{keys_path}: malformed header")
        extractor, split = header
        keys = [line.rstrip("\n") for line in fh if line.strip()]
    return FeatureSet(extractor, split, features, keys)


def align(fset, records):
    """Reorder feature rows to match a record list; returns (features, records)."""
    index = {key: i for i, key in enumerate(fset.keys)}
    missing = [r.image_path for r in records if r.image_path not in index]
    if missing:
        raise FeatureStoreError(f"records absent from feature set: {missing[:5]}"
                                + (" ..." if len(missing) > 5 else ""))
    rows = np.array([index[r.image_path] for r in records])
    return fset.features[rows], list(records)


# -- synthetic features with a planted signal ------------------------------------


def _planted_directions(dim, seed):
    rng = np.random.default_rng(seed)
    age_dir = rng.standard_normal(dim)
    age_dir /= np.linalg.norm(age_dir)
    gender_dir = rng.standard_normal(dim)
    gender_dir -= age_dir * (gender_dir @ age_dir)
    gender_dir /= np.linalg.norm(gender_dir)
    basis = rng.standard_normal((8, dim)) * 0.5  # low-rank nuisance structure
    return age_dir, gender_dir, basis, rng


def planted_age_readout(dim=64, seed=0):
    """The exact linear functional w with w . x = age for features from
    ``synthetic_feature_sets(dim=dim, seed=seed)``.

    Features live in the span of the planted directions, so the functional
    is the minimum-norm solution of M w = (80, 0, ..., 0) where M stacks
    those directions; a well-posed least-squares fit must recover it.
    """
    age_dir, gender_dir, basis, _ = _planted_directions(dim, seed)
    M = np.vstack([age_dir, gender_dir, basis])
    target = np.zeros(M.shape[0])
    target[0] = 80.0  # x carries age/80 along age_dir
    return np.linalg.pinv(M) @ target


def synthetic_feature_sets(extractor="senet50_f", dim=64, sizes=(1600, 200, 200),
                           seed=0, spatial=False):
    """Random low-rank features carrying a linear age signal and a linearly
    separable gender signal. Returns ({split: FeatureSet}, {split: records}).

    With ``spatial`` the per-sample feature is a 6x6 map with ``dim``
    channels (for the vgg-style heads); otherwise a flat vector.
    """
    age_dir, gender_dir, basis, rng = _planted_directions(dim, seed)

    sets, records = {}, {}
    for split, n in zip(SPLITS, sizes):
        ages = rng.integers(1, 81, size=n)
        genders = rng.integers(0, 2, size=n)
        noise = rng.standard_normal((n, 8)) @ basis
        flat = (
            (ages[:, None] / 80.0) * age_dir
            + (genders[:, None] * 2.0 - 1.0) * gender_dir
            + 0.05 * noise
        ).astype(np.float32)
        if spatial:
            maps = np.repeat(flat[:, None, :], 36, axis=1).reshape(n, 6, 6, dim)
            feats = (maps + 0.01 * rng.standard_normal(maps.shape)).astype(np.float32)
        else:
            feats = flat
        # keys follow the dataset filename convention so labels are recoverable
        keys = [f"synthetic/{split}/{ages[i]}_{genders[i]}_0_{i:05d}.jpg"
                for i in range(n)]
        recs = [FaceRecord(keys[i], int(ages[i]), int(genders[i]), 0) for i in range(n)]
        sets[split] = FeatureSet(extractor, split, feats, keys)
        records[split] = recs
    return sets, records
