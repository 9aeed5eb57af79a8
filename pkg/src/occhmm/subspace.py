"""Per-camera appearance model: an affine subspace fit to recent patches.

Each camera keeps a mean vector plus a small orthonormal basis summarising
how the tracked patch has looked recently.  The prediction error for a new
patch is its Euclidean distance to that affine set, which is what the joint
filter consumes.  Updates are incremental: decay the retained singular
weights, fold in the new sample's residual direction, re-diagonalise the
small augmented system, truncate, and re-orthonormalise.

A patch is a flat float vector (stacked pixels or features); no wrapper type
is used.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "AffineSubspace",
    "InsufficientData",
    "gated_update",
    "init_from_batch",
    "residual_distance",
    "update",
]

# Residual norms at or below this (relative to the centred sample) are
# treated as "already in the span" and leave the basis untouched.
SPAN_TOL = 1e-12

DEFAULT_GATE_THRESHOLD = 0.5


class InsufficientData(ValueError):
    """Raised when a batch is too small to fit a subspace."""


@dataclass(frozen=True, eq=False)
class AffineSubspace:
    """Mean + orthonormal basis + per-direction weights (singular values).

    ``effective_count`` is the forgetting-decayed number of samples the model
    currently represents; it drives the running-mean update.
    """

    mean: np.ndarray
    basis: np.ndarray
    weights: np.ndarray
    effective_count: float

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float)
        basis = np.asarray(self.basis, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if mean.ndim != 1:
            raise ValueError("mean must be a flat vector")
        if basis.ndim != 2 or basis.shape[0] != mean.size:
            raise ValueError(f"basis must be {mean.size} x r, got shape {basis.shape}")
        if weights.shape != (basis.shape[1],):
            raise ValueError("need one weight per basis column")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if self.effective_count <= 0:
            raise ValueError("effective_count must be positive")
        for name, arr in (("mean", mean), ("basis", basis), ("weights", weights)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    @property
    def rank(self) -> int:
        return int(self.basis.shape[1])

    def orthonormality_defect(self) -> float:
        """Max abs deviation of basis' * basis from the identity (test hook)."""
        if self.rank == 0:
            return 0.0
        gram = self.basis.T @ self.basis
        return float(np.abs(gram - np.eye(self.rank)).max())


def init_from_batch(patches: np.ndarray, rank: int) -> AffineSubspace:
    """Fit mean and top-``rank`` directions to a batch of patches.

    ``patches`` is a (count, d) array (or sequence of flat vectors).  The
    basis comes from the SVD of the centred batch; directions with
    numerically zero spread are dropped, so identical patches yield rank 0.
    Requires at least two patches; a too-large ``rank`` is clipped with a
    warning.
    """
    data = np.asarray(patches, dtype=float)
    if data.ndim != 2:
        raise ValueError("patches must form a (count, d) array")
    count, dim = data.shape
    if count < 2:
        raise InsufficientData(f"need at least 2 patches to fit a subspace, got {count}")
    max_rank = min(dim, count - 1)
    if rank > max_rank:
        warnings.warn(
            f"requested rank {rank} exceeds min(d, count-1) = {max_rank}; clipping",
            stacklevel=2,
        )
        rank = max_rank
    if rank < 0:
        raise ValueError("rank must be nonnegative")
    mean = data.mean(axis=0)
    centred = (data - mean).T
    u, s, _ = np.linalg.svd(centred, full_matrices=False)
    tol = max(data.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    keep = min(rank, int((s > tol).sum()))
    return AffineSubspace(
        mean=mean,
        basis=u[:, :keep],
        weights=s[:keep],
        effective_count=float(count),
    )


def residual_distance(space: AffineSubspace, y: np.ndarray) -> float:
    """Distance from ``y`` to the affine set: ||(y - mean) - B B'(y - mean)||."""
    y = np.asarray(y, dtype=float)
    if y.shape != (space.dim,):
        raise ValueError(f"patch has shape {y.shape}, model expects ({space.dim},)")
    c = y - space.mean
    return float(np.linalg.norm(c - space.basis @ (space.basis.T @ c)))


def update(
    space: AffineSubspace,
    y: np.ndarray,
    forgetting: float,
    rank_cap: int | None = None,
) -> AffineSubspace:
    """Fold one patch into the model, returning a new value.

    The retained weights are decayed by ``forgetting``, the new sample's
    out-of-span direction is appended, the augmented (r+1) x (r+1) system is
    re-diagonalised, and the result is truncated to ``rank_cap`` directions by
    largest weight and re-orthonormalised.  The mean is a decayed running
    mean.  A sample already in the span only updates mean and count.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (space.dim,):
        raise ValueError(f"patch has shape {y.shape}, model expects ({space.dim},)")
    if not 0.0 < forgetting <= 1.0:
        raise ValueError(f"forgetting must lie in (0, 1], got {forgetting}")
    cap = space.dim if rank_cap is None else int(rank_cap)
    if cap < 0:
        raise ValueError("rank_cap must be nonnegative")

    decayed = forgetting * space.effective_count
    count = decayed + 1.0
    # incremental form: exact when y equals the current mean
    mean = space.mean + (y - space.mean) / count

    c = y - mean
    proj = space.basis.T @ c
    resid = c - space.basis @ proj
    rho = float(np.linalg.norm(resid))
    if rho <= SPAN_TOL * max(1.0, float(np.linalg.norm(c))) or cap == 0:
        return replace(space, mean=mean, effective_count=count)

    r = space.rank
    small = np.zeros((r + 1, r + 1))
    small[:r, :r] = np.diag(forgetting * space.weights)
    small[:r, r] = proj
    small[r, r] = rho
    u, s, _ = np.linalg.svd(small)
    augmented = np.hstack([space.basis, resid[:, None] / rho])
    keep = min(cap, r + 1)
    basis = augmented @ u[:, :keep]
    weights = s[:keep]

    # one stable orthogonalisation pass per update keeps the 1e-9 invariant
    # over arbitrarily long streams
    q, rmat = np.linalg.qr(basis)
    signs = np.sign(np.diag(rmat))
    signs[signs == 0] = 1.0
    basis = q * signs

    return AffineSubspace(mean=mean, basis=basis, weights=weights, effective_count=count)


def gated_update(
    space: AffineSubspace,
    y: np.ndarray,
    base_forgetting: float,
    p_occlusion: float,
    gate_threshold: float = DEFAULT_GATE_THRESHOLD,
    rank_cap: int | None = None,
) -> AffineSubspace:
    """``update`` unless the occlusion probability exceeds the gate.

    Above the gate the model is returned unchanged (same object), so a
    detected occlusion cannot contaminate the appearance model.
    """
    if not 0.0 <= p_occlusion <= 1.0:
        raise ValueError(f"p_occlusion must lie in [0, 1], got {p_occlusion}")
    if p_occlusion > gate_threshold:
        return space
    return update(space, y, base_forgetting, rank_cap)
