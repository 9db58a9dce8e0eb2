"""Collapse the time mode of a tensor into a single pairwise matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .tensor import SparseTensor3

__all__ = ["CollapseSpec", "collapse_ct", "collapse_cwt", "collapse"]

# below this density the collapsed matrix is kept in CSR form
_SPARSE_DENSITY_CUTOFF = 0.10


@dataclass(frozen=True)
class CollapseSpec:
    """Which collapse to apply: plain time-sum ("ct") or damped ("cwt")."""

    kind: str = "cwt"
    theta: float = 0.2

    def __post_init__(self):
        if self.kind not in ("ct", "cwt"):
            raise ValueError(f"kind must be 'ct' or 'cwt', got {self.kind!r}")
        if self.kind == "cwt" and not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")


def _weighted_sum(z: SparseTensor3, weights):
    M, N, T = z.dims
    mat = sp.csr_matrix(
        (z.values * weights[z.t], (z.i, z.j)), shape=(M, N)
    )
    mat.sum_duplicates()
    if mat.nnz > _SPARSE_DENSITY_CUTOFF * M * N:
        return mat.toarray()
    return mat


def collapse_ct(z: SparseTensor3):
    """Sum the frontal slices: X[i, j] = sum_t Z[i, j, t].

    Returns a CSR matrix when the result is sparse (< 10% dense), otherwise
    an ndarray; downstream factorizations accept either.
    """
    return _weighted_sum(z, np.ones(z.dims[2]))


def collapse_cwt(z: SparseTensor3, theta: float = 0.2):
    """Damped time sum: X[i, j] = sum_t (1 - theta)^(T - t) Z[i, j, t].

    Weights increase toward the most recent slice, which gets weight exactly 1
    (t here is 1-based in the weight exponent, matching slice recency).
    """
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    T = z.dims[2]
    # internal t is 0-based: slice t has weight (1-theta)^(T-1-t)
    weights = (1.0 - theta) ** np.arange(T - 1, -1, -1, dtype=np.float64)
    return _weighted_sum(z, weights)


def collapse(z: SparseTensor3, spec: CollapseSpec):
    if spec.kind == "ct":
        return collapse_ct(z)
    return collapse_cwt(z, spec.theta)
