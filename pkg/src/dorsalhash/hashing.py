"""Keyed cancelable templates from feature vectors.

A user key seeds a pinned Gaussian stream that fills an (M, m) matrix of
random vectors (M = feature dimension, m = template bit length, columns are
the vectors).  Gram-Schmidt turns the columns into an orthonormal basis, the
feature vector is projected onto every basis column, and each projection is
quantized by its sign: strictly positive -> 1, otherwise 0.  Losing the key
and reissuing a new seed yields a statistically independent basis, hence an
independent template: revocation without touching the biometric.

Templates are compared with a normalized Euclidean distance
``|Q - T| / (|Q| + |T|)`` in [0, 1]; 0 means identical bit vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rand
from .errors import BadKeyError, DegenerateKeyError, DimensionError, UndefinedScoreError

BIT_LENGTHS = (32, 64, 128)

# Gram-Schmidt guards: a pivot below DEGENERATE_NORM means dependent key
# vectors; any off-diagonal above REORTH_TRIGGER after the first pass makes
# a second pass run.  Bases must end up orthonormal within ORTHO_TOL.
DEGENERATE_NORM = 1e-12
REORTH_TRIGGER = 1e-10
ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class UserKey:
    """Seed material issued to one user; seed uniquely identifies a basis."""

    user_id: str
    seed: int
    bit_length: int
    key_version: int = 1

    def __post_init__(self):
        if self.bit_length not in BIT_LENGTHS:
            raise BadKeyError(f"bit length must be one of {BIT_LENGTHS}, got {self.bit_length}")
        if not self.user_id:
            raise BadKeyError("user_id must be non-empty")
        if self.key_version < 1:
            raise BadKeyError(f"key_version starts at 1, got {self.key_version}")


@dataclass(frozen=True, eq=False)
class ProjectionBasis:
    """Orthonormal basis columns; validated on construction."""

    matrix: np.ndarray  # (M, m), columns orthonormal
    origin_key: UserKey | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] < m.shape[1]:
            raise DimensionError(f"basis must be (M, m) with M >= m, got {m.shape}")
        if not np.isfinite(m).all():
            raise DimensionError("basis contains non-finite values")
        gram = m.T @ m
        err = np.abs(gram - np.eye(m.shape[1])).max()
        if err > ORTHO_TOL:
            raise DegenerateKeyError(
                f"basis deviates from orthonormal by {err:.3e} (> {ORTHO_TOL:.0e}); reissue the key"
            )

    @property
    def feature_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def bit_length(self) -> int:
        return self.matrix.shape[1]

    def orthonormality_error(self) -> float:
        g = self.matrix.T @ self.matrix
        return float(np.abs(g - np.eye(self.matrix.shape[1])).max())


@dataclass(frozen=True, eq=False)
class CancelableTemplate:
    """The protected record: bits plus the key lineage that produced them."""

    bits: np.ndarray  # (bit_length,) of {0, 1}
    user_id: str
    key_version: int
    bit_length: int = field(default=0)

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8)
        object.__setattr__(self, "bits", b)
        if self.bit_length == 0:
            object.__setattr__(self, "bit_length", int(b.shape[0]))
        if b.ndim != 1 or b.shape[0] != self.bit_length:
            raise DimensionError(f"bits shape {b.shape} does not match bit_length {self.bit_length}")
        if not np.isin(b, (0, 1)).all():
            raise DimensionError("template bits must be 0 or 1")

    def to_hex(self) -> str:
        return np.packbits(self.bits).tobytes().hex()

    @classmethod
    def from_hex(cls, text: str, user_id: str, key_version: int, bit_length: int) -> "CancelableTemplate":
        raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
        bits = np.unpackbits(raw)[:bit_length]
        return cls(bits=bits, user_id=user_id, key_version=key_version, bit_length=bit_length)


def generate_random_vectors(key: UserKey, feature_dim: int) -> np.ndarray:
    """(feature_dim, bit_length) matrix from the key's pinned normal stream.

    Column j holds stream values ``j*M .. (j+1)*M - 1``, so the matrix is a
    pure function of (seed, feature_dim, bit_length).
    """
    if key.bit_length > feature_dim:
        raise BadKeyError(
            f"bit length {key.bit_length} exceeds feature dimension {feature_dim}"
        )
    z = rand.normals(key.seed, rand.PURPOSE_BIOHASH, feature_dim * key.bit_length)
    return z.reshape(key.bit_length, feature_dim).T


def orthonormalize(vectors: np.ndarray, origin_key: UserKey | None = None) -> ProjectionBasis:
    """Classical Gram-Schmidt over the columns, with one conditional
    re-orthogonalization pass if any off-diagonal inner product exceeds
    REORTH_TRIGGER after the first sweep.
    """
    a = np.asarray(vectors, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise DimensionError(f"need an (M, m) matrix with M >= m, got {a.shape}")

    def sweep(cols: np.ndarray) -> np.ndarray:
        q = np.empty_like(cols)
        for j in range(cols.shape[1]):
            v = cols[:, j].copy()
            if j:
                v -= q[:, :j] @ (q[:, :j].T @ v)
            norm = np.linalg.norm(v)
            if norm < DEGENERATE_NORM:
                raise DegenerateKeyError(
                    f"key vectors are rank-deficient at column {j} (pivot {norm:.3e}); reissue the key"
                )
            q[:, j] = v / norm
        return q

    q = sweep(a)
    gram = q.T @ q
    if np.abs(gram - np.eye(q.shape[1])).max() > REORTH_TRIGGER:
        q = sweep(q)
    return ProjectionBasis(matrix=q, origin_key=origin_key)


def project(features: np.ndarray, basis: ProjectionBasis) -> np.ndarray:
    """Inner products of the feature vector with every basis column."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 1 or f.shape[0] != basis.feature_dim:
        raise DimensionError(
            f"feature shape {f.shape} does not match basis feature dim {basis.feature_dim}"
        )
    return basis.matrix.T @ f


def binarize(projections: np.ndarray) -> np.ndarray:
    """Sign quantization: strictly positive -> 1, zero or negative -> 0."""
    p = np.asarray(projections, dtype=np.float64)
    if p.ndim != 1:
        raise DimensionError(f"projections must be 1-D, got shape {p.shape}")
    return (p > 0.0).astype(np.uint8)


def template_distance(q_bits: np.ndarray, t_bits: np.ndarray) -> float:
    """Normalized Euclidean distance between two bit vectors, in [0, 1].

    Undefined (raises) when both vectors are all-zero, since the
    normalizer vanishes.
    """
    q = np.asarray(q_bits, dtype=np.float64).ravel()
    t = np.asarray(t_bits, dtype=np.float64).ravel()
    if q.shape != t.shape:
        raise DimensionError(f"bit vectors differ in length: {q.shape} vs {t.shape}")
    nq, nt = np.linalg.norm(q), np.linalg.norm(t)
    if nq == 0.0 and nt == 0.0:
        raise UndefinedScoreError("both templates are all-zero; distance undefined")
    return float(np.linalg.norm(q - t) / (nq + nt))


def hash_features(features: np.ndarray, key: UserKey) -> CancelableTemplate:
    """Full pipeline: random vectors -> orthonormal basis -> project -> sign."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 1:
        raise DimensionError(f"features must be 1-D, got shape {f.shape}")
    basis = basis_for_key(key, f.shape[0])
    return template_from_basis(f, basis)


def basis_for_key(key: UserKey, feature_dim: int) -> ProjectionBasis:
    return orthonormalize(generate_random_vectors(key, feature_dim), origin_key=key)


def template_from_basis(features: np.ndarray, basis: ProjectionBasis) -> CancelableTemplate:
    if basis.origin_key is None:
        raise BadKeyError("basis has no origin key; build it via basis_for_key")
    bits = binarize(project(features, basis))
    return CancelableTemplate(
        bits=bits,
        user_id=basis.origin_key.user_id,
        key_version=basis.origin_key.key_version,
        bit_length=basis.bit_length,
    )
