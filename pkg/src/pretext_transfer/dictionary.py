"""Class-structured feature dictionary and collaborative-representation scoring.

Test features are coded over the whole dictionary with ridge-regularized least
squares; per-class reconstruction residuals are mapped to a probability vector
with inverse-squared-residual normalization, so an exact class reconstruction
dominates. Classes may contribute unequal column counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import extract_projection
from .data import LabeledSet
from .errors import ConfigError, ShapeError, ValidationError
from .manifest import manifest_value, read_artifact, write_artifact
from .network import NetworkState

_ZERO_NORM = 1e-12
_SOLVE_TOL = 1e-8


@dataclass(frozen=True)
class CRCConfig:
    ridge: float = 1e-3
    epsilon: float = 1e-12

    def __post_init__(self):
        if self.ridge <= 0:
            raise ConfigError("ridge must be > 0")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")


@dataclass
class FeatureDictionary:
    columns: np.ndarray  # [p, N], unit-norm columns
    class_offsets: list[tuple[int, int, int]]  # (class index, start column, count)

    @property
    def class_count(self) -> int:
        return len(self.class_offsets)

    @property
    def feature_dim(self) -> int:
        return self.columns.shape[0]


def build_dictionary(m1: NetworkState, train: LabeledSet) -> FeatureDictionary:
    """Stack normalized projection features per class, classes in ascending order."""
    features = extract_projection(m1, train.features)
    norms = np.linalg.norm(features, axis=1)
    bad = np.flatnonzero(norms <= _ZERO_NORM)
    if bad.size:
        raise ValidationError(f"zero-norm projection feature for training sample {bad[0]}")
    columns_blocks = []
    class_offsets = []
    start = 0
    for c in range(train.class_count):
        idx = np.flatnonzero(train.labels == c)
        if idx.size == 0:
            raise ValidationError(f"class {c} has no training samples")
        columns_blocks.append((features[idx] / norms[idx, None]).T)
        class_offsets.append((c, start, int(idx.size)))
        start += int(idx.size)
    return FeatureDictionary(np.concatenate(columns_blocks, axis=1), class_offsets)


def _check_vector(fdict: FeatureDictionary, y) -> np.ndarray:
    v = np.asarray(y, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != fdict.feature_dim:
        raise ShapeError(f"test vector must have dimension {fdict.feature_dim}")
    if not np.isfinite(v).all():
        raise ValidationError("test vector contains non-finite values")
    return v


def _normalize(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm <= _ZERO_NORM:
        raise ValidationError("cannot normalize a zero test vector")
    return v / norm


def _solve_codes(fdict: FeatureDictionary, rhs: np.ndarray, cfg: CRCConfig) -> np.ndarray:
    d = fdict.columns
    gram = d.T @ d + cfg.ridge * np.eye(d.shape[1])
    codes = np.linalg.solve(gram, rhs)
    residual = np.linalg.norm(gram @ codes - rhs)
    if residual > _SOLVE_TOL * max(1.0, np.linalg.norm(rhs)):
        raise ArithmeticError("normal-equation solve exceeded the residual tolerance")
    return codes


def crc_code(fdict: FeatureDictionary, y, cfg: CRCConfig) -> np.ndarray:
    """Ridge coding of a (normalized) test vector over the full dictionary."""
    y_unit = _normalize(_check_vector(fdict, y))
    return _solve_codes(fdict, fdict.columns.T @ y_unit, cfg)


def crc_probability(fdict: FeatureDictionary, alpha, y, cfg: CRCConfig) -> np.ndarray:
    """Per-class residuals of the coded vector, normalized to sum to 1."""
    y_unit = _normalize(_check_vector(fdict, y))
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (fdict.columns.shape[1],):
        raise ShapeError(f"alpha must have length {fdict.columns.shape[1]}")
    weights = np.empty(fdict.class_count)
    for c, start, count in fdict.class_offsets:
        recon = fdict.columns[:, start:start + count] @ alpha[start:start + count]
        residual = np.linalg.norm(y_unit - recon)
        weights[c] = (residual + cfg.epsilon) ** -2
    return weights / weights.sum()


def class_probabilities(fdict: FeatureDictionary, features, cfg: CRCConfig) -> np.ndarray:
    """crc_code + crc_probability for a feature batch, one Gram solve for all rows."""
    y = np.asarray(features, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != fdict.feature_dim:
        raise ShapeError(f"features must be a matrix with {fdict.feature_dim} columns")
    if not np.isfinite(y).all():
        raise ValidationError("features contain non-finite values")
    norms = np.linalg.norm(y, axis=1)
    if (norms <= _ZERO_NORM).any():
        raise ValidationError("cannot normalize a zero test vector")
    y_unit = (y / norms[:, None]).T  # [p, n]
    codes = _solve_codes(fdict, fdict.columns.T @ y_unit, cfg)  # [N, n]
    weights = np.empty((y.shape[0], fdict.class_count))
    for c, start, count in fdict.class_offsets:
        recon = fdict.columns[:, start:start + count] @ codes[start:start + count]
        weights[:, c] = (np.linalg.norm(y_unit - recon, axis=0) + cfg.epsilon) ** -2
    return weights / weights.sum(axis=1, keepdims=True)


def save_dictionary(fdict: FeatureDictionary, path) -> None:
    offsets = ",".join(f"{c}:{start}:{count}" for c, start, count in fdict.class_offsets)
    fields: list[tuple[str, object]] = [
        ("p", fdict.feature_dim),
        ("columns", fdict.columns.shape[1]),
        ("class_offsets", offsets),
    ]
    write_artifact(path, "dictionary", fields, [fdict.columns])


def load_dictionary(path) -> FeatureDictionary:
    pairs, blob = read_artifact(path, "dictionary")
    p = int(manifest_value(pairs, "p", path))
    n = int(manifest_value(pairs, "columns", path))
    offsets = []
    for part in manifest_value(pairs, "class_offsets", path).split(","):
        c, start, count = part.split(":")
        offsets.append((int(c), int(start), int(count)))
    if len(blob) != p * n * 8:
        raise ValidationError(f"{path}: blob size does not match the manifest")
    columns = np.frombuffer(blob, dtype="<f8").reshape(p, n).copy()
    return FeatureDictionary(columns, offsets)
