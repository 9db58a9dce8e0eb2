"""Sparse third-order tensors in coordinate form, plus shared numeric kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SparseTensor3",
    "CooParseError",
    "load_coo",
    "save_coo",
    "log_preprocess",
    "frobenius_norm",
    "mttkrp",
]


class CooParseError(ValueError):
    """Raised for malformed COO text input; carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SparseTensor3:
    """An M x N x T tensor stored as coordinates, canonically sorted by (t, i, j).

    Construction coalesces duplicate coordinates by summation and validates
    index ranges, so downstream code can rely on a unique, ordered entry set.
    All arrays are read-only; instances are safe to share across threads.
    """

    dims: tuple[int, int, int]
    i: np.ndarray = field(repr=False)
    j: np.ndarray = field(repr=False)
    t: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    @classmethod
    def from_coords(cls, dims, i, j, t, values):
        """Build a tensor from 0-based coordinate arrays.

        Duplicates are summed; entries are reordered to the canonical
        (t, i, j) order. `dims` must dominate every index.
        """
        M, N, T = (int(d) for d in dims)
        if min(M, N, T) <= 0:
            raise ValueError(f"dims must be positive, got {dims}")
        i = np.asarray(i, dtype=np.int64).ravel()
        j = np.asarray(j, dtype=np.int64).ravel()
        t = np.asarray(t, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float64).ravel()
        if not (len(i) == len(j) == len(t) == len(values)):
            raise ValueError("coordinate arrays must have equal length")
        if len(values) and not np.all(np.isfinite(values)):
            raise ValueError("tensor values must be finite")
        for name, idx, dim in (("i", i, M), ("j", j, N), ("t", t, T)):
            if len(idx) and (idx.min() < 0 or idx.max() >= dim):
                raise ValueError(f"index {name} out of range for dim {dim}")
        if len(values):
            # coalesce duplicates by summation on the flat (t, i, j) key
            key = (t * M + i) * N + j
            order = np.argsort(key, kind="stable")
            key = key[order]
            vals = values[order]
            uniq, start = np.unique(key, return_index=True)
            summed = np.add.reduceat(vals, start)
            t_new, rem = np.divmod(uniq, M * N)
            i_new, j_new = np.divmod(rem, N)
            i, j, t, values = i_new, j_new, t_new, summed
        return cls(
            dims=(M, N, T),
            i=_readonly(i.astype(np.int64)),
            j=_readonly(j.astype(np.int64)),
            t=_readonly(t.astype(np.int64)),
            values=_readonly(values),
        )

    @classmethod
    def from_dense(cls, dense, tol=0.0):
        """Extract entries with |value| > tol from a dense (M, N, T) array."""
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 3:
            raise ValueError("dense input must be 3-dimensional")
        i, j, t = np.nonzero(np.abs(dense) > tol)
        return cls.from_coords(dense.shape, i, j, t, dense[i, j, t])

    @property
    def nnz(self):
        return len(self.values)

    def to_dense(self):
        M, N, T = self.dims
        out = np.zeros((M, N, T))
        out[self.i, self.j, self.t] = self.values
        return out

    def slice_csr(self, t):
        """Frontal slice Z[:, :, t] as a CSR matrix."""
        M, N, T = self.dims
        if not 0 <= t < T:
            raise IndexError(f"slice {t} out of range for T={T}")
        mask = self.t == t
        return sp.csr_matrix(
            (self.values[mask], (self.i[mask], self.j[mask])), shape=(M, N)
        )

    def time_window(self, start, stop):
        """Subtensor over time steps [start, stop), re-indexed to begin at 0."""
        M, N, T = self.dims
        if not (0 <= start < stop <= T):
            raise ValueError(f"invalid window [{start}, {stop}) for T={T}")
        mask = (self.t >= start) & (self.t < stop)
        return SparseTensor3.from_coords(
            (M, N, stop - start),
            self.i[mask],
            self.j[mask],
            self.t[mask] - start,
            self.values[mask],
        )

    def pair_totals(self):
        """CSR matrix of per-pair totals summed over time (the link pattern)."""
        M, N, _ = self.dims
        mat = sp.csr_matrix((self.values, (self.i, self.j)), shape=(M, N))
        mat.sum_duplicates()
        return mat


def load_coo(path, dims=None):
    """Read a whitespace-separated ``i j t value`` file with 1-based indices.

    Duplicate coordinates are coalesced by summation. When `dims` is omitted
    it is inferred from the per-mode index maxima. Malformed lines raise
    :class:`CooParseError` naming the line number.
    """
    ii, jj, tt, vv = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise CooParseError(
                    f"expected 4 fields 'i j t value', got {len(parts)}", lineno
                )
            try:
                i, j, t = int(parts[0]), int(parts[1]), int(parts[2])
                v = float(parts[3])
            except ValueError as exc:
                raise CooParseError(str(exc), lineno) from None
            if min(i, j, t) < 1:
                raise CooParseError("indices are 1-based and must be >= 1", lineno)
            if dims is not None:
                for name, idx, dim in (("i", i, dims[0]), ("j", j, dims[1]), ("t", t, dims[2])):
                    if idx > dim:
                        raise CooParseError(
                            f"index {name}={idx} exceeds declared dim {dim}", lineno
                        )
            if not math.isfinite(v):
                raise CooParseError(f"non-finite value {parts[3]}", lineno)
            ii.append(i - 1)
            jj.append(j - 1)
            tt.append(t - 1)
            vv.append(v)
    if dims is None:
        if not ii:
            raise CooParseError("empty file and no dims given; cannot infer shape")
        dims = (max(ii) + 1, max(jj) + 1, max(tt) + 1)
    return SparseTensor3.from_coords(dims, ii, jj, tt, vv)


def save_coo(z, path):
    """Write entries as 1-based ``i j t value`` lines sorted by (t, i, j)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, j, t, v in zip(z.i, z.j, z.t, z.values):
            fh.write(f"{i + 1} {j + 1} {t + 1} {v:.17g}\n")


def log_preprocess(counts):
    """Replace every nonzero count c with 1 + ln(c); zeros stay zero.

    The sparsity pattern is unchanged. Applying this twice is not idempotent,
    so callers must track whether a tensor is already preprocessed.
    """
    if counts.nnz and counts.values.min() <= 0:
        bad = int(np.argmax(counts.values <= 0))
        raise ValueError(
            "log preprocessing requires strictly positive nonzero values; "
            f"found {counts.values[bad]} at entry {bad}"
        )
    return SparseTensor3(
        dims=counts.dims,
        i=counts.i,
        j=counts.j,
        t=counts.t,
        values=_readonly(1.0 + np.log(counts.values)),
    )


def frobenius_norm(x):
    """Frobenius norm of a SparseTensor3, ndarray, or scipy sparse matrix."""
    if isinstance(x, SparseTensor3):
        data = x.values
    elif sp.issparse(x):
        data = x.data
    else:
        data = np.asarray(x)
    return float(np.sqrt(np.sum(np.square(data, dtype=np.float64))))


def _factor_triple(model):
    # accepts a KruskalModel-like (lambda folded by caller) or an (A, B, C) triple
    if hasattr(model, "A"):
        return model.A, model.B, model.C
    A, B, C = model
    return np.asarray(A), np.asarray(B), np.asarray(C)


def mttkrp(z, factors, mode):
    """Matricized-tensor times Khatri-Rao product for one mode.

    Parameters
    ----------
    z : SparseTensor3
    factors : (A, B, C) triple or an object with .A/.B/.C attributes
        Factor matrices of matching dims, K columns each.
    mode : {1, 2, 3}
        Mode whose factor is being solved for; the other two enter the
        Khatri-Rao product.

    Returns
    -------
    ndarray of shape (dims[mode-1], K). Cost is O(nnz * K).
    """
    A, B, C = _factor_triple(factors)
    M, N, T = z.dims
    if A.shape[0] != M or B.shape[0] != N or C.shape[0] != T:
        raise ValueError(
            f"factor dims {(A.shape[0], B.shape[0], C.shape[0])} do not match "
            f"tensor dims {z.dims}"
        )
    if not (A.shape[1] == B.shape[1] == C.shape[1]):
        raise ValueError("factor matrices must share the component count")
    if mode == 1:
        rows, cols, dim = z.i, z.j * T + z.t, M
        kr = (B[:, None, :] * C[None, :, :]).reshape(N * T, -1)
    elif mode == 2:
        rows, cols, dim = z.j, z.i * T + z.t, N
        kr = (A[:, None, :] * C[None, :, :]).reshape(M * T, -1)
    elif mode == 3:
        rows, cols, dim = z.t, z.i * N + z.j, T
        kr = (A[:, None, :] * B[None, :, :]).reshape(M * N, -1)
    else:
        raise ValueError(f"mode must be 1, 2, or 3, got {mode}")
    if z.nnz == 0:
        return np.zeros((dim, A.shape[1]))
    unfolded = sp.csr_matrix((z.values, (rows, cols)), shape=(dim, kr.shape[0]))
    return unfolded @ kr
