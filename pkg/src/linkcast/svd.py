"""Truncated and dense singular value decompositions of collapsed matrices."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SvdFactors",
    "SvdConvergenceError",
    "dense_svd",
    "truncated_svd",
    "save_factor_matrix",
    "load_factor_matrix",
    "save_svd",
    "load_svd",
]

_DENSE_GUARD = 2000          # dense_svd refuses anything with min(M, N) above this
_RANK_CUTOFF = 1e-12         # sigma_p <= cutoff * sigma_1 counts as numerically zero


class SvdConvergenceError(RuntimeError):
    """Iteration budget exhausted; `.best` holds the best factors found so far."""

    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class SvdFactors:
    """Compact SVD triplets: U has orthonormal columns, sigma is positive
    nonincreasing, V has orthonormal columns."""

    U: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)

    @property
    def rank(self):
        return len(self.sigma)

    def truncate(self, k):
        if k > self.rank:
            raise ValueError(f"requested {k} triplets, only {self.rank} available")
        return SvdFactors(self.U[:, :k], self.sigma[:k], self.V[:, :k])


def _canonicalize(U, sigma, V):
    # descending sigma; largest-magnitude entry of each u made nonnegative
    order = np.argsort(-sigma, kind="stable")
    U, sigma, V = U[:, order], sigma[order], V[:, order]
    flip = U[np.abs(U).argmax(axis=0), np.arange(U.shape[1])] < 0
    U = U * np.where(flip, -1.0, 1.0)
    V = V * np.where(flip, -1.0, 1.0)
    return np.ascontiguousarray(U), sigma, np.ascontiguousarray(V)


def dense_svd(x):
    """Full compact SVD of a small dense (or sparse) matrix via LAPACK.

    Serves as the exact reference for tests and for exact Katz scores.
    Guarded to min(M, N) <= 2000 since it is cubic.
    """
    if sp.issparse(x):
        x = x.toarray()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("input must be a matrix")
    if min(x.shape) > _DENSE_GUARD:
        raise ValueError(
            f"dense_svd guard: min(M, N) = {min(x.shape)} exceeds {_DENSE_GUARD}"
        )
    U, s, Vt = np.linalg.svd(x, full_matrices=False)
    keep = s > _RANK_CUTOFF * (s[0] if len(s) else 0.0)
    U, s, V = _canonicalize(U[:, keep], s[keep], Vt[keep].T)
    return SvdFactors(U, s, V)


def _matvec_pair(x):
    if sp.issparse(x):
        xc = sp.csr_matrix(x)
        xt = sp.csr_matrix(x.T)
        return (lambda v: xc @ v), (lambda u: xt @ u)
    xd = np.asarray(x, dtype=np.float64)
    return (lambda v: xd @ v), (lambda u: xd.T @ u)


def _reorth(vec, basis, ncols):
    # two classical Gram-Schmidt passes ("twice is enough")
    if ncols:
        Q = basis[:, :ncols]
        vec = vec - Q @ (Q.T @ vec)
        vec = vec - Q @ (Q.T @ vec)
    return vec


def truncated_svd(x, k, tol=1e-10, max_iter=None, seed=0):
    """Leading-k singular triplets by Lanczos bidiagonalization.

    Golub-Kahan recursion with full reorthogonalization and a seeded random
    unit start vector; restarts with a fresh orthogonal block on breakdown,
    which handles repeated singular values. Work per step is one matvec with
    x and one with x.T, i.e. O(nnz(x)).

    Each returned triplet satisfies ||x v_p - sigma_p u_p|| <= tol * sigma_1.
    If the numerical rank r of x is below k, the r available triplets are
    returned and the deflation is reported as a warning. Exceeding `max_iter`
    raises :class:`SvdConvergenceError` carrying the best iterate.
    """
    M, N = x.shape
    if not 1 <= k <= min(M, N):
        raise ValueError(f"k must be in [1, {min(M, N)}], got {k}")
    if max_iter is None:
        max_iter = 10 * k + 100
    matvec, rmatvec = _matvec_pair(x)
    rng = np.random.default_rng(seed)
    kmax = min(M, N)
    mcap = min(kmax, max_iter)

    V = np.zeros((N, mcap))
    U = np.zeros((M, mcap))
    W = np.zeros((M, mcap))    # W[:, j]  = x   @ V[:, j], raw
    Wt = np.zeros((N, mcap))   # Wt[:, j] = x.T @ U[:, j], raw
    scale = 0.0                # running estimate of sigma_1
    breakdown = None           # set when the Krylov space is exhausted early

    def new_start_vector(m):
        for _ in range(3):
            v = _reorth(rng.standard_normal(N), V, m)
            nv = np.linalg.norm(v)
            if nv > 1e-8 * np.sqrt(N):
                return v / nv
        return None

    def extract(m):
        # Rayleigh-Ritz on the accumulated pair of orthonormal bases. The
        # meaningful residual is the adjoint one: x V stays inside span(U) by
        # construction, while x.T u_m sticks out until convergence. Both are
        # reported; the max is tested.
        G = U[:, :m].T @ W[:, :m]
        P, s, Qt = np.linalg.svd(G)
        Ur = U[:, :m] @ P
        Vr = V[:, :m] @ Qt.T
        resid_right = np.linalg.norm(W[:, :m] @ Qt.T - Ur * s, axis=0)
        resid_left = np.linalg.norm(Wt[:, :m] @ P - Vr * s, axis=0)
        return Ur, s, Vr, np.maximum(resid_right, resid_left)

    def best_factors(m):
        Ur, s, Vr, _ = extract(m)
        keep = s > _RANK_CUTOFF * (s[0] if len(s) else 0.0)
        Uc, sc, Vc = _canonicalize(Ur[:, keep], s[keep], Vr[:, keep])
        kc = min(k, len(sc))
        return SvdFactors(Uc[:, :kc], sc[:kc], Vc[:, :kc])

    m = 0
    v = new_start_vector(0)
    steps = 0
    while m < kmax and v is not None:
        if steps >= max_iter:
            raise SvdConvergenceError(
                f"no convergence to tol={tol} within {max_iter} iterations",
                best_factors(m),
            )
        steps += 1
        V[:, m] = v
        u = matvec(v)
        W[:, m] = u
        u = _reorth(u, U, m)
        alpha = np.linalg.norm(u)
        scale = max(scale, alpha)
        if alpha > _RANK_CUTOFF * max(scale, 1.0):
            U[:, m] = u / alpha
        else:
            # x v lies in span(U); pad with a fresh orthonormal direction
            pad = _reorth(rng.standard_normal(M), U, m)
            npad = np.linalg.norm(pad)
            if npad <= 1e-8 * np.sqrt(M):
                m += 1
                breakdown = "left space exhausted"
                break
            U[:, m] = pad / npad
        w = rmatvec(U[:, m])
        Wt[:, m] = w
        m += 1

        # Ritz extraction is O(M m^2); once past k, check on a short stride
        if m >= k and (m == kmax or (m - k) % 5 == 0):
            Ur, s, Vr, resid = extract(m)
            sig1 = s[0] if len(s) else 0.0
            r_nz = int((s > _RANK_CUTOFF * sig1).sum())
            if r_nz >= k and np.all(resid[:k] <= tol * max(sig1, 1e-300)):
                Uc, sc, Vc = _canonicalize(Ur[:, :k], s[:k], Vr[:, :k])
                return SvdFactors(Uc, sc, Vc)

        w = _reorth(w, V, m)
        beta = np.linalg.norm(w)
        if beta > _RANK_CUTOFF * max(scale, 1.0):
            v = w / beta
        else:
            v = new_start_vector(m)    # invariant subspace: restart a new block
    if v is None:
        breakdown = breakdown or "right space exhausted"

    # the subspace covers the whole numerical range of x: result is exact
    Ur, s, Vr, resid = extract(m)
    sig1 = s[0] if len(s) else 0.0
    keep = s > _RANK_CUTOFF * sig1
    Uc, sc, Vc = _canonicalize(Ur[:, keep], s[keep], Vr[:, keep])
    if len(sc) < k:
        warnings.warn(
            f"rank deflation: only {len(sc)} nonzero triplets available "
            f"(requested {k}); {breakdown or 'space exhausted'}",
            stacklevel=2,
        )
        return SvdFactors(Uc, sc, Vc)
    return SvdFactors(Uc[:, :k], sc[:k], Vc[:, :k])


def save_factor_matrix(mat, path):
    """Write a dense matrix as ``rows cols`` header plus row-major values."""
    mat = np.asarray(mat)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{mat.shape[0]} {mat.shape[1]}\n")
        for row in mat:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_factor_matrix(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        rows, cols = int(header[0]), int(header[1])
        data = np.loadtxt(fh, ndmin=2)
    if data.shape != (rows, cols):
        raise ValueError(
            f"factor file {path}: header says {(rows, cols)}, data is {data.shape}"
        )
    return data


def save_svd(factors, directory):
    """Write U/sigma/V under `directory` (sigma as one value per line)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_factor_matrix(factors.U, directory / "U.txt")
    save_factor_matrix(factors.V, directory / "V.txt")
    with open(directory / "sigma.txt", "w", encoding="utf-8", newline="\n") as fh:
        for s in factors.sigma:
            fh.write(f"{s:.17g}\n")


def load_svd(directory):
    directory = Path(directory)
    U = load_factor_matrix(directory / "U.txt")
    V = load_factor_matrix(directory / "V.txt")
    sigma = np.loadtxt(directory / "sigma.txt", ndmin=1)
    return SvdFactors(U, sigma, V)
