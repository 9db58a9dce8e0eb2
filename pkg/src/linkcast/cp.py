"""CP (Kruskal) tensor factorization by alternating least squares, plus the
last-window heuristic scores and the factor match score used to compare a
computed model against a planted one."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .scores import ScoreModel
from .tensor import SparseTensor3

__all__ = [
    "KruskalModel",
    "FitTrace",
    "cp_als",
    "normalize_model",
    "cp_heuristic_scores",
    "fms",
    "save_kruskal",
    "load_kruskal",
]

# above this fill fraction the ALS kernels run on dense unfoldings
_DENSE_PATH_CUTOFF = 0.25


@dataclass(frozen=True)
class KruskalModel:
    """Weights lam (positive, nonincreasing) and unit-column factors A, B, C."""

    lam: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    C: np.ndarray = field(repr=False)

    @property
    def rank(self):
        return len(self.lam)

    @property
    def dims(self):
        return (self.A.shape[0], self.B.shape[0], self.C.shape[0])

    def to_dense(self):
        return np.einsum("k,ik,jk,tk->ijt", self.lam, self.A, self.B, self.C)


@dataclass(frozen=True)
class FitTrace:
    iterations: int
    fit_history: np.ndarray = field(repr=False)
    converged: bool = False

    @property
    def fit(self):
        return float(self.fit_history[-1])


def _unit_columns(mat):
    norms = np.linalg.norm(mat, axis=0)
    safe = np.where(norms == 0.0, 1.0, norms)
    return mat / safe, norms


def _solve_gram(gram, rhs):
    # rhs is (K, dim); returns (dim, K). Retries once with a small ridge.
    try:
        sol = np.linalg.solve(gram, rhs)
        if np.all(np.isfinite(sol)):
            return sol.T
    except np.linalg.LinAlgError:
        pass
    ridge = gram + 1e-12 * np.eye(gram.shape[0])
    sol = np.linalg.solve(ridge, rhs)
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("gram system singular even with ridge")
    return sol.T


class _Unfoldings:
    """The three matricizations of a tensor, built once per ALS run.

    Dense tensors use contiguous reshapes (BLAS matmuls); sparse ones use CSR.
    Column orderings match the Khatri-Rao layouts produced in `mttkrp_mode`.
    """

    def __init__(self, z: SparseTensor3):
        M, N, T = z.dims
        self.dims = z.dims
        if z.nnz > _DENSE_PATH_CUTOFF * M * N * T:
            cube = z.to_dense()
            self.mats = (
                cube.reshape(M, N * T),
                np.ascontiguousarray(cube.transpose(1, 0, 2)).reshape(N, M * T),
                np.ascontiguousarray(cube.transpose(2, 0, 1)).reshape(T, M * N),
            )
        else:
            self.mats = (
                sp.csr_matrix((z.values, (z.i, z.j * T + z.t)), shape=(M, N * T)),
                sp.csr_matrix((z.values, (z.j, z.i * T + z.t)), shape=(N, M * T)),
                sp.csr_matrix((z.values, (z.t, z.i * N + z.j)), shape=(T, M * N)),
            )

    def mttkrp_mode(self, mode, A, B, C):
        if mode == 1:
            kr = (B[:, None, :] * C[None, :, :]).reshape(-1, A.shape[1])
        elif mode == 2:
            kr = (A[:, None, :] * C[None, :, :]).reshape(-1, A.shape[1])
        else:
            kr = (A[:, None, :] * B[None, :, :]).reshape(-1, A.shape[1])
        return self.mats[mode - 1] @ kr


def cp_als(z: SparseTensor3, k: int, seed: int = 0, tol: float = 1e-6,
           max_iter: int = 500):
    """Fit a rank-k CP model by alternating least squares.

    Factors start from seeded uniform(0,1) matrices with unit columns, so a
    given seed reproduces the exact iterate path. Each sweep updates A, B, C
    in turn through MTTKRP kernels (cost O(nnz * k)) and K x K gram solves.
    Iteration stops when the fit 1 - ||Z - model|| / ||Z|| changes by less
    than `tol`, or after `max_iter` sweeps.

    Returns (model, trace) with the model normalized per
    :func:`normalize_model` and `trace.fit_history` nondecreasing.
    """
    if k < 1:
        raise ValueError(f"rank must be >= 1, got {k}")
    if z.nnz == 0:
        raise ValueError("cannot factorize an all-zero tensor")
    M, N, T = z.dims
    rng = np.random.default_rng(seed)
    A, _ = _unit_columns(rng.random((M, k)))
    B, _ = _unit_columns(rng.random((N, k)))
    C, _ = _unit_columns(rng.random((T, k)))

    unf = _Unfoldings(z)
    norm_z_sq = float(np.sum(z.values**2))
    norm_z = np.sqrt(norm_z_sq)

    history = []
    prev_fit = None
    converged = False
    for _ in range(max_iter):
        m1 = unf.mttkrp_mode(1, A, B, C)
        A = _solve_gram((B.T @ B) * (C.T @ C), m1.T)
        A, _ = _unit_columns(A)

        m2 = unf.mttkrp_mode(2, A, B, C)
        B = _solve_gram((A.T @ A) * (C.T @ C), m2.T)
        B, _ = _unit_columns(B)

        m3 = unf.mttkrp_mode(3, A, B, C)
        C = _solve_gram((A.T @ A) * (B.T @ B), m3.T)

        # C carries the component scale, so <Z, model> = sum(C * m3)
        inner = float(np.sum(C * m3))
        norm_m_sq = float(np.sum((A.T @ A) * (B.T @ B) * (C.T @ C)))
        resid = np.sqrt(max(norm_z_sq - 2.0 * inner + norm_m_sq, 0.0))
        fit = 1.0 - resid / norm_z
        history.append(fit)
        if prev_fit is not None and abs(fit - prev_fit) < tol:
            converged = True
            break
        prev_fit = fit

    C, lam = _unit_columns(C)
    model = normalize_model(KruskalModel(lam=lam, A=A, B=B, C=C))
    trace = FitTrace(
        iterations=len(history),
        fit_history=np.asarray(history),
        converged=converged,
    )
    return model, trace


def normalize_model(m: KruskalModel) -> KruskalModel:
    """Canonical form: unit factor columns, positive lam sorted nonincreasing.

    Column norms fold into lam; a negative lam flips the sign of its C column;
    each A column's largest-magnitude entry is made nonnegative by flipping
    A and B together. None of this changes the represented tensor.
    """
    A, na = _unit_columns(np.array(m.A, dtype=np.float64))
    B, nb = _unit_columns(np.array(m.B, dtype=np.float64))
    C, nc = _unit_columns(np.array(m.C, dtype=np.float64))
    for name, norms in (("A", na), ("B", nb), ("C", nc)):
        if np.any(norms == 0.0):
            bad = int(np.argmax(norms == 0.0))
            raise ValueError(f"degenerate component {bad}: zero column in {name}")
    lam = np.asarray(m.lam, dtype=np.float64) * na * nb * nc
    neg = lam < 0
    lam = np.abs(lam)
    C = C * np.where(neg, -1.0, 1.0)
    flip = A[np.abs(A).argmax(axis=0), np.arange(A.shape[1])] < 0
    signs = np.where(flip, -1.0, 1.0)
    A = A * signs
    B = B * signs
    order = np.argsort(-lam, kind="stable")
    return KruskalModel(
        lam=lam[order],
        A=np.ascontiguousarray(A[:, order]),
        B=np.ascontiguousarray(B[:, order]),
        C=np.ascontiguousarray(C[:, order]),
    )


def cp_heuristic_scores(m: KruskalModel, t0: int = 3) -> ScoreModel:
    """Scores weighting each component by its mean activity over the last
    t0 time steps: S = sum_k gamma_k lam_k A_k B_k^T.

    A component whose recent activity is negative contributes negative
    scores; no clamping is applied, so declining components actively push
    their pairs down the ranking.
    """
    T = m.C.shape[0]
    if not 1 <= t0 <= T:
        raise ValueError(f"t0 must be in [1, {T}], got {t0}")
    gamma = m.C[T - t0:].mean(axis=0)
    return ScoreModel.single(m.A, gamma * m.lam, m.B)


def fms(m1: KruskalModel, m2: KruskalModel) -> float:
    """Factor match score in [0, 1]; 1 means perfect recovery up to permutation.

    Components are matched greedily: each round pairs the remaining components
    with the largest product of absolute factor inner products, then applies
    the weight penalty 1 - |lam - lam'| / max(lam, lam'). Picking the global
    best pair each round makes the score symmetric in its arguments.
    """
    if m1.dims != m2.dims or m1.rank != m2.rank:
        raise ValueError(
            f"models must share dims and rank: {m1.dims}/{m1.rank} vs "
            f"{m2.dims}/{m2.rank}"
        )
    k = m1.rank
    sim = (
        np.abs(m1.A.T @ m2.A) * np.abs(m1.B.T @ m2.B) * np.abs(m1.C.T @ m2.C)
    )
    penalty = 1.0 - np.abs(m1.lam[:, None] - m2.lam[None, :]) / np.maximum(
        m1.lam[:, None], m2.lam[None, :]
    )
    total = 0.0
    open_rows = np.ones(k, dtype=bool)
    open_cols = np.ones(k, dtype=bool)
    work = sim.copy()
    for _ in range(k):
        masked = np.where(np.outer(open_rows, open_cols), work, -np.inf)
        r, c = np.unravel_index(np.argmax(masked), masked.shape)
        total += sim[r, c] * penalty[r, c]
        open_rows[r] = False
        open_cols[c] = False
    return float(total / k)


def save_kruskal(model: KruskalModel, path):
    """Model file: lam on the first line, then A, B, C factor blocks."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(" ".join(f"{v:.17g}" for v in model.lam) + "\n")
        for factor in (model.A, model.B, model.C):
            fh.write(f"{factor.shape[0]} {factor.shape[1]}\n")
            for row in factor:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_kruskal(path) -> KruskalModel:
    with open(path, "r", encoding="utf-8") as fh:
        lam = np.array([float(v) for v in fh.readline().split()])
        factors = []
        for _ in range(3):
            rows, cols = (int(v) for v in fh.readline().split())
            block = [
                [float(v) for v in fh.readline().split()] for _ in range(rows)
            ]
            mat = np.asarray(block)
            if mat.shape != (rows, cols):
                raise ValueError(f"model file {path}: bad factor block shape")
            factors.append(mat)
    return KruskalModel(lam=lam, A=factors[0], B=factors[1], C=factors[2])
