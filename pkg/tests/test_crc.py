import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pretext_transfer.data import LabeledSet
from pretext_transfer.dictionary import (
    CRCConfig,
    FeatureDictionary,
    build_dictionary,
    class_probabilities,
    crc_code,
    crc_probability,
    load_dictionary,
    save_dictionary,
)
from pretext_transfer.errors import ConfigError, ShapeError, ValidationError
from pretext_transfer.network import (
    CLASSIFICATION,
    REPRESENTATION,
    Layer,
    NetworkState,
)

CFG = CRCConfig()


def identity_projection_state(dim):
    return NetworkState(
        layers=[
            Layer(np.eye(dim), np.zeros(dim), "identity", REPRESENTATION),
            Layer(np.zeros((2, dim)), np.zeros(2), "identity", CLASSIFICATION),
        ],
        label_count=2,
    )


def random_dictionary(rng, p, counts):
    columns = rng.normal(size=(p, sum(counts)))
    columns /= np.linalg.norm(columns, axis=0)
    offsets = []
    start = 0
    for c, count in enumerate(counts):
        offsets.append((c, start, count))
        start += count
    return FeatureDictionary(columns, offsets)


def oracle_code(fdict, y, cfg):
    """Normal equations solved by explicit matrix inversion."""
    y_unit = y / np.linalg.norm(y)
    d = fdict.columns
    n = d.shape[1]
    return np.linalg.inv(d.T @ d + cfg.ridge * np.eye(n)) @ (d.T @ y_unit)


def oracle_probability(fdict, alpha, y, cfg):
    """Residuals recomputed via explicit per-class masking of the code vector."""
    y_unit = y / np.linalg.norm(y)
    weights = []
    for c, start, count in fdict.class_offsets:
        masked = np.zeros_like(alpha)
        masked[start:start + count] = alpha[start:start + count]
        residual = np.linalg.norm(y_unit - fdict.columns @ masked)
        weights.append(1.0 / (residual + cfg.epsilon) ** 2)
    weights = np.array(weights)
    return weights / weights.sum()


class TestBuildDictionary:
    def test_unequal_class_counts_349_35(self):
        rng = np.random.default_rng(0)
        labels = np.concatenate([np.zeros(349, dtype=int), np.ones(35, dtype=int)])
        train = LabeledSet(rng.normal(size=(384, 6)), labels, 2)
        fdict = build_dictionary(identity_projection_state(6), train)
        assert fdict.class_offsets == [(0, 0, 349), (1, 349, 35)]
        assert fdict.columns.shape == (6, 384)

    def test_single_sample_per_class_is_normalized_input(self):
        features = np.array([[3.0, 4.0], [0.0, 2.0]])
        train = LabeledSet(features, np.array([0, 1]), 2)
        fdict = build_dictionary(identity_projection_state(2), train)
        expected = features / np.linalg.norm(features, axis=1)[:, None]
        assert np.allclose(fdict.columns, expected.T)

    def test_columns_unit_norm(self):
        rng = np.random.default_rng(1)
        train = LabeledSet(rng.normal(size=(50, 7)), rng.integers(0, 3, 50), 3)
        fdict = build_dictionary(identity_projection_state(7), train)
        assert np.allclose(np.linalg.norm(fdict.columns, axis=0), 1.0, atol=1e-9)

    def test_empty_class_named_in_error(self):
        train = LabeledSet(np.random.default_rng(0).normal(size=(5, 3)), np.zeros(5, dtype=int), 2)
        with pytest.raises(ValidationError, match="class 1"):
            build_dictionary(identity_projection_state(3), train)

    def test_zero_norm_feature_rejected(self):
        features = np.array([[1.0, 0.0], [0.0, 0.0]])
        train = LabeledSet(features, np.array([0, 1]), 2)
        with pytest.raises(ValidationError, match="zero-norm"):
            build_dictionary(identity_projection_state(2), train)


class TestCrcCode:
    def test_self_representation(self):
        u = np.array([0.6, 0.8, 0.0])
        fdict = FeatureDictionary(u[:, None], [(0, 0, 1)])
        alpha = crc_code(fdict, u, CRCConfig(ridge=1e-10))
        assert alpha.shape == (1,)
        assert alpha[0] == pytest.approx(1.0, abs=1e-6)

    def test_matches_inversion_oracle(self):
        rng = np.random.default_rng(2)
        fdict = random_dictionary(rng, p=8, counts=[3, 2])
        y = rng.normal(size=8)
        cfg = CRCConfig(ridge=0.001)
        assert np.allclose(crc_code(fdict, y, cfg), oracle_code(fdict, y, cfg), atol=1e-8)

    def test_large_ridge_shrinks_codes(self):
        rng = np.random.default_rng(3)
        fdict = random_dictionary(rng, p=10, counts=[4, 4])
        alpha = crc_code(fdict, rng.normal(size=10), CRCConfig(ridge=1e6))
        assert np.linalg.norm(alpha) < 1e-3

    def test_dimension_mismatch(self):
        fdict = random_dictionary(np.random.default_rng(0), p=5, counts=[2, 2])
        with pytest.raises(ShapeError):
            crc_code(fdict, np.zeros(4), CFG)

    def test_zero_vector_rejected(self):
        fdict = random_dictionary(np.random.default_rng(0), p=5, counts=[2, 2])
        with pytest.raises(ValidationError):
            crc_code(fdict, np.zeros(5), CFG)


class TestCrcProbability:
    def test_zero_residual_dominates(self):
        # class 0 spans the plane containing y; class 1 points elsewhere
        columns = np.array(
            [
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        fdict = FeatureDictionary(columns, [(0, 0, 2), (1, 2, 1)])
        y = np.array([0.6, 0.8, 0.0])
        cfg = CRCConfig(ridge=1e-9, epsilon=1e-12)
        alpha = crc_code(fdict, y, cfg)
        q = crc_probability(fdict, alpha, y, cfg)
        assert q[0] > 0.999999
        assert q.sum() == pytest.approx(1.0, abs=1e-9)

    def test_equal_residuals_split_evenly(self):
        columns = np.array(
            [
                [1.0, 0.0],
                [0.0, 1.0],
                [0.0, 0.0],
            ]
        )
        fdict = FeatureDictionary(columns, [(0, 0, 1), (1, 1, 1)])
        y = np.array([1.0, 1.0, 0.0])
        alpha = crc_code(fdict, y, CFG)
        q = crc_probability(fdict, alpha, y, CFG)
        assert np.allclose(q, [0.5, 0.5], atol=1e-12)

    def test_matches_residual_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            counts = rng.integers(1, 6, size=int(rng.integers(2, 5))).tolist()
            fdict = random_dictionary(rng, p=int(rng.integers(4, 12)), counts=counts)
            y = rng.normal(size=fdict.feature_dim)
            alpha = crc_code(fdict, y, CFG)
            q = crc_probability(fdict, alpha, y, CFG)
            assert np.allclose(q, oracle_probability(fdict, alpha, y, CFG), atol=1e-12)
            assert q.sum() == pytest.approx(1.0, abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_probability_vector_invariants(self, seed):
        rng = np.random.default_rng(seed)
        counts = rng.integers(1, 5, size=3).tolist()
        fdict = random_dictionary(rng, p=6, counts=counts)
        y = rng.normal(size=6)
        q = crc_probability(fdict, crc_code(fdict, y, CFG), y, CFG)
        assert q.sum() == pytest.approx(1.0, abs=1e-9)
        assert (q > 0).all() and (q < 1).all()

    def test_permuting_columns_within_class_preserves_q(self):
        rng = np.random.default_rng(5)
        fdict = random_dictionary(rng, p=7, counts=[4, 3])
        y = rng.normal(size=7)
        q = crc_probability(fdict, crc_code(fdict, y, CFG), y, CFG)
        permuted_columns = fdict.columns.copy()
        permuted_columns[:, 0:4] = permuted_columns[:, [2, 0, 3, 1]]
        permuted = FeatureDictionary(permuted_columns, fdict.class_offsets)
        q_permuted = crc_probability(permuted, crc_code(permuted, y, CFG), y, CFG)
        assert np.allclose(q, q_permuted, atol=1e-9)

    def test_duplicating_one_class_keeps_q_valid_and_other_blocks_unchanged(self):
        rng = np.random.default_rng(6)
        fdict = random_dictionary(rng, p=6, counts=[3, 2])
        duplicated_columns = np.concatenate(
            [fdict.columns[:, :3], fdict.columns[:, 3:], fdict.columns[:, 3:]], axis=1
        )
        duplicated = FeatureDictionary(
            duplicated_columns, [(0, 0, 3), (1, 3, 4)]
        )
        assert np.array_equal(duplicated.columns[:, :3], fdict.columns[:, :3])
        y = rng.normal(size=6)
        q = crc_probability(duplicated, crc_code(duplicated, y, CFG), y, CFG)
        assert q.sum() == pytest.approx(1.0, abs=1e-9)
        assert (q > 0).all() and (q < 1).all()


class TestBatchProbabilities:
    def test_matches_single_vector_path(self):
        rng = np.random.default_rng(7)
        fdict = random_dictionary(rng, p=9, counts=[5, 4, 2])
        batch = rng.normal(size=(12, 9))
        q_batch = class_probabilities(fdict, batch, CFG)
        for i in range(12):
            alpha = crc_code(fdict, batch[i], CFG)
            assert np.allclose(q_batch[i], crc_probability(fdict, alpha, batch[i], CFG), atol=1e-10)


class TestDictionarySerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        fdict = random_dictionary(rng, p=5, counts=[3, 1, 4])
        path = tmp_path / "dict.ckpt"
        save_dictionary(fdict, path)
        loaded = load_dictionary(path)
        assert np.array_equal(loaded.columns, fdict.columns)
        assert loaded.class_offsets == fdict.class_offsets


class TestConfig:
    def test_invalid_hyperparameters(self):
        with pytest.raises(ConfigError):
            CRCConfig(ridge=0.0)
        with pytest.raises(ConfigError):
            CRCConfig(epsilon=0.0)
