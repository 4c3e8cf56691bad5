"""Feature maps and kernels for acquisition.

All similarity here is the inner product of cosine-normalised feature
vectors, except the Tanimoto kernel which operates on caller-supplied
bit vectors. The model-derived maps are:

* energy-gradient features: the flattened parameter gradient of the
  predicted energy over a parameter subset;
* force-gradient features: the mixed parameter-coordinate Jacobian,
  aggregated over atoms by root mean square so the result is a
  rotation-invariant per-parameter magnitude;
* joint features: the weighted concatenation
  [sqrt(w_E) phi_E, sqrt(w_F) phi_F] of the separately normalised
  energy and force features, whose inner product is exactly
  w_E k_E + w_F k_F;
* activation features: hidden activations pooled over atoms.

Feature matrices serialise to the ``PFFM`` binary format: magic, u32
version, u64 row count, u64 dimension, u32 precision flag (4 or 8
bytes per value), then row-major values, little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .potential import (
    PARAM_SUBSETS,
    energy_param_gradient,
    force_param_jacobian,
    pooled_activations,
)
from .validation import ValidationError, check_option

__all__ = [
    "cosine_normalize",
    "force_rms_feature",
    "joint_feature",
    "BitVector",
    "tanimoto",
    "FeatureMap",
    "EnergyGradientFeatures",
    "ForceGradientFeatures",
    "JointGradientFeatures",
    "ActivationFeatures",
    "FEATURE_MAP_NAMES",
    "make_feature_map",
    "save_features",
    "load_features",
    "read_feature_header",
]

FEATURES_MAGIC = b"PFFM"
FEATURES_VERSION = 1
_HEADER_FMT = "<4sIQQI"
HEADER_SIZE = struct.calcsize(_HEADER_FMT)


def cosine_normalize(v) -> np.ndarray:
    """Scale a vector (or each row of a matrix) to unit Euclidean norm.

    A vanishing norm is an error rather than a silent zero: a zero
    embedding means something upstream produced a degenerate feature.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValidationError("cannot normalize non-finite features")
    norm = np.sqrt((v * v).sum(axis=-1, keepdims=v.ndim > 1))
    if np.any(np.asarray(norm) < 1e-300):
        raise ValidationError("cannot normalize a zero feature vector")
    return v / norm


def force_rms_feature(jacobian) -> np.ndarray:
    """Per-parameter RMS over atoms and axes of a (P, N, 3) force Jacobian.

    phi[p] = sqrt( (1/N) * sum_{i,a} J[p,i,a]^2 ), which is non-negative
    and invariant under global rotations of the underlying structure.
    """
    jacobian = np.asarray(jacobian, dtype=np.float64)
    if jacobian.ndim != 3 or jacobian.shape[2] != 3:
        raise ValidationError(
            f"jacobian must have shape (P, N, 3), got {jacobian.shape}"
        )
    if not np.all(np.isfinite(jacobian)):
        raise ValidationError("jacobian contains non-finite values")
    n_atoms = jacobian.shape[1]
    return np.sqrt((jacobian**2).sum(axis=(1, 2)) / n_atoms)


def joint_feature(phi_energy, phi_force, w_energy, w_force, norm_tol=1e-6) -> np.ndarray:
    """Concatenate separately normalised energy/force features with weights.

    The result is [sqrt(w_E) phi_E, sqrt(w_F) phi_F]; inner products of
    two joint features therefore decompose as w_E k_E + w_F k_F. Inputs
    must already be cosine-normalised (checked to ``norm_tol``). Weights
    must be non-negative and not both zero.
    """
    w_energy, w_force = float(w_energy), float(w_force)
    if w_energy < 0 or w_force < 0 or (w_energy == 0 and w_force == 0):
        raise ValidationError("joint weights must be non-negative and not both zero")
    phi_energy = np.asarray(phi_energy, dtype=np.float64)
    phi_force = np.asarray(phi_force, dtype=np.float64)
    for name, phi in (("energy", phi_energy), ("force", phi_force)):
        norm = np.sqrt((phi * phi).sum(axis=-1))
        if np.any(np.abs(norm - 1.0) > norm_tol):
            raise ValidationError(f"{name} features are not cosine-normalized")
    return np.concatenate(
        [np.sqrt(w_energy) * phi_energy, np.sqrt(w_force) * phi_force], axis=-1
    )


@dataclass(frozen=True)
class BitVector:
    """Sparse binary fingerprint: sorted unique set-bit indices over a fixed width."""

    width: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.unique(np.asarray(self.bits, dtype=np.int64))
        if self.width <= 0:
            raise ValidationError("bit vector width must be positive")
        if bits.size and (bits[0] < 0 or bits[-1] >= self.width):
            raise ValidationError("bit indices out of range")
        object.__setattr__(self, "bits", bits)

    @property
    def count(self) -> int:
        return self.bits.size


def tanimoto(a: BitVector, b: BitVector) -> float:
    """Tanimoto similarity |a & b| / |a | b| in [0, 1]; 0 when both are empty."""
    if a.width != b.width:
        raise ValidationError(
            f"bit vector widths differ: {a.width} vs {b.width}"
        )
    inter = np.intersect1d(a.bits, b.bits, assume_unique=True).size
    union = a.count + b.count - inter
    return inter / union if union else 0.0


# ---------------------------------------------------------------------------
# Feature-map transformers


class FeatureMap(TransformerMixin, BaseEstimator):
    """Stateless structure-to-vector transformer; fit is a no-op."""

    def fit(self, X=None, y=None):
        return self

    def transform(self, structures) -> np.ndarray:
        rows = [self._feature(s) for s in structures]
        if not rows:
            raise ValidationError("cannot build features for an empty structure list")
        return np.vstack(rows)

    def _feature(self, structure) -> np.ndarray:
        raise NotImplementedError


class EnergyGradientFeatures(FeatureMap):
    """Energy sensitivity to a parameter subset, optionally cosine-normalised."""

    def __init__(self, model, subset="all", normalize=True):
        self.model = model
        self.subset = subset
        self.normalize = normalize

    def _feature(self, structure):
        check_option(self.subset, "parameter subset", PARAM_SUBSETS)
        params = self.model._ensure_params()
        g = energy_param_gradient(params, self.subset, self.model.cfg, structure)
        return cosine_normalize(g) if self.normalize else g


class ForceGradientFeatures(FeatureMap):
    """RMS-aggregated force sensitivity to a parameter subset."""

    def __init__(self, model, subset="all", normalize=True, fd_step=1e-4):
        self.model = model
        self.subset = subset
        self.normalize = normalize
        self.fd_step = fd_step

    def _feature(self, structure):
        check_option(self.subset, "parameter subset", PARAM_SUBSETS)
        params = self.model._ensure_params()
        jac = force_param_jacobian(
            params, self.subset, self.model.cfg, structure, step=self.fd_step
        )
        phi = force_rms_feature(jac)
        return cosine_normalize(phi) if self.normalize else phi


class JointGradientFeatures(FeatureMap):
    """Weighted concatenation of normalised energy and force gradient features."""

    def __init__(self, model, subset="all", w_energy=1.0, w_force=1.0, fd_step=1e-4):
        self.model = model
        self.subset = subset
        self.w_energy = w_energy
        self.w_force = w_force
        self.fd_step = fd_step

    def _feature(self, structure):
        phi_e = EnergyGradientFeatures(self.model, self.subset)._feature(structure)
        phi_f = ForceGradientFeatures(
            self.model, self.subset, fd_step=self.fd_step
        )._feature(structure)
        return joint_feature(phi_e, phi_f, self.w_energy, self.w_force)


class ActivationFeatures(FeatureMap):
    """Pooled hidden activations, optionally cosine-normalised."""

    def __init__(self, model, normalize=True):
        self.model = model
        self.normalize = normalize

    def _feature(self, structure):
        params = self.model._ensure_params()
        phi = pooled_activations(params, self.model.cfg, structure)
        return cosine_normalize(phi) if self.normalize else phi


FEATURE_MAP_NAMES = ("ntk-e", "ntk-f", "ntk-ef", "activation")


def make_feature_map(name, model, subset="all", w_energy=1.0, w_force=1.0):
    """Build a feature map by CLI name: ntk-e, ntk-f, ntk-ef or activation."""
    check_option(name, "feature map", FEATURE_MAP_NAMES)
    if name == "ntk-e":
        return EnergyGradientFeatures(model, subset)
    if name == "ntk-f":
        return ForceGradientFeatures(model, subset)
    if name == "ntk-ef":
        return JointGradientFeatures(model, subset, w_energy, w_force)
    return ActivationFeatures(model)


# ---------------------------------------------------------------------------
# Feature matrix files


def save_features(path, X, precision=8):
    """Write a feature matrix to a PFFM file with 4- or 8-byte floats."""
    if precision not in (4, 8):
        raise ValidationError("precision flag must be 4 or 8 bytes")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"feature matrix must be 2-d, got shape {X.shape}")
    dtype = "<f4" if precision == 4 else "<f8"
    with open(path, "wb") as fh:
        fh.write(
            struct.pack(
                _HEADER_FMT, FEATURES_MAGIC, FEATURES_VERSION,
                X.shape[0], X.shape[1], precision,
            )
        )
        fh.write(np.ascontiguousarray(X, dtype=dtype).tobytes())


def read_feature_header(path):
    """Return (rows, dim, precision) from a PFFM header."""
    with open(path, "rb") as fh:
        header = fh.read(HEADER_SIZE)
    if len(header) < HEADER_SIZE:
        raise ValidationError(f"{path}: truncated feature file header")
    magic, version, rows, dim, precision = struct.unpack(_HEADER_FMT, header)
    if magic != FEATURES_MAGIC:
        raise ValidationError(f"{path}: not a feature file (bad magic {magic!r})")
    if version != FEATURES_VERSION:
        raise ValidationError(f"{path}: unsupported feature file version {version}")
    if precision not in (4, 8):
        raise ValidationError(f"{path}: invalid precision flag {precision}")
    return rows, dim, precision


def load_features(path) -> np.ndarray:
    """Read a full PFFM feature matrix as float64."""
    rows, dim, precision = read_feature_header(path)
    dtype = "<f4" if precision == 4 else "<f8"
    with open(path, "rb") as fh:
        fh.seek(HEADER_SIZE)
        data = np.frombuffer(fh.read(rows * dim * precision), dtype=dtype)
    if data.size != rows * dim:
        raise ValidationError(f"{path}: truncated feature payload")
    return data.astype(np.float64).reshape(rows, dim)
