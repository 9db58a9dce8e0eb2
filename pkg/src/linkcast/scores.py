"""Factored link-score models: TSVD, bipartite Katz, truncated Katz, ensembles.

A :class:`ScoreModel` represents S = sum_r w_r * U_r diag(d_r) V_r^T without
ever materializing the M x N score matrix, so pair queries cost O(total K)
and top-k extraction streams row blocks in bounded memory.
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass, field

import numpy as np

from .svd import SvdFactors

__all__ = [
    "ScoreTerm",
    "ScoreModel",
    "DenseScores",
    "tsvd_scores",
    "psi_minus",
    "psi_plus",
    "katz_scores_exact",
    "tkatz_scores",
    "ensemble_scores",
    "score_pair",
    "top_k_scores",
    "max_admissible_beta",
    "save_score_report",
]

_ROW_BLOCK = 64          # rows materialized at a time by streaming queries
_KATZ_GUARD = 2000       # exact Katz builds an (M+N) square system


@dataclass(frozen=True)
class ScoreTerm:
    weight: float
    U: np.ndarray = field(repr=False)
    d: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.U.shape[1] != len(self.d) or self.V.shape[1] != len(self.d):
            raise ValueError("factor widths must match the diagonal length")


@dataclass(frozen=True)
class ScoreModel:
    """Weighted sum of factored rank-K terms sharing an (M, N) shape."""

    terms: tuple[ScoreTerm, ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("a ScoreModel needs at least one term")
        shapes = {(t.U.shape[0], t.V.shape[0]) for t in self.terms}
        if len(shapes) > 1:
            raise ValueError(f"terms disagree on matrix shape: {shapes}")

    @classmethod
    def single(cls, U, d, V, weight=1.0):
        return cls(terms=(ScoreTerm(weight, np.asarray(U, dtype=np.float64),
                                    np.asarray(d, dtype=np.float64),
                                    np.asarray(V, dtype=np.float64)),))

    @property
    def shape(self):
        t = self.terms[0]
        return (t.U.shape[0], t.V.shape[0])

    def score_rows(self, rows):
        """Dense block of scores for the given row indices, shape (len(rows), N).

        Per-term contributions are sorted entrywise before summation, so the
        result is bit-identical under any reordering of the term list.
        """
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        blocks = [
            term.weight * ((term.U[rows] * term.d) @ term.V.T)
            for term in self.terms
            if term.weight != 0.0
        ]
        if not blocks:
            return np.zeros((len(rows), self.shape[1]))
        if len(blocks) == 1:
            return blocks[0]
        stacked = np.sort(np.stack(blocks), axis=0)
        return np.add.reduce(stacked, axis=0)

    def to_dense(self):
        return self.score_rows(np.arange(self.shape[0]))

    def frobenius_norm(self):
        """Exact ||S||_F from the factors via the gram-trace identity.

        ||U diag(d) V^T||_F^2 = sum_{k,l} d_k d_l (U^T U)_{kl} (V^T V)_{kl},
        which reduces to ||d||_2 for orthonormal U, V. Cross terms between
        different ensemble members are included the same way.
        """
        total = 0.0
        for a in self.terms:
            for b in self.terms:
                gu = a.U.T @ b.U
                gv = a.V.T @ b.V
                total += a.weight * b.weight * float(
                    np.sum((np.outer(a.d, b.d)) * gu * gv)
                )
        return float(np.sqrt(max(total, 0.0)))


class DenseScores:
    """Adapter giving a dense score matrix the streaming ScoreModel interface."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError("DenseScores expects a matrix")

    @property
    def shape(self):
        return self.matrix.shape

    def score_rows(self, rows):
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        return self.matrix[rows]

    def to_dense(self):
        return self.matrix


def tsvd_scores(f: SvdFactors, k: int) -> ScoreModel:
    """Rank-k reconstruction scores S = U_k diag(sigma_k) V_k^T."""
    fk = f.truncate(k)
    return ScoreModel.single(fk.U, fk.sigma, fk.V)


def psi_minus(sigma, beta):
    """Katz diagonal weights beta*sigma / (1 - beta^2 sigma^2).

    Warns (rather than failing) when any weight is nonpositive, which happens
    once beta*sigma > 1 and degrades Katz score quality.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    denom = 1.0 - beta * beta * sigma * sigma
    if np.any(denom == 0.0):
        raise ZeroDivisionError("beta * sigma == 1: Katz series is singular")
    out = beta * sigma / denom
    if beta > 0 and np.any(out <= 0.0) and sigma.size:
        warnings.warn(
            f"{int(np.sum(out <= 0.0))} nonpositive Katz weights "
            f"(beta*sigma_1 = {beta * sigma.max():.4g} >= 1); "
            "scores will be degraded",
            stacklevel=2,
        )
    return out


def psi_plus(sigma, beta):
    """Companion diagonal 1 / (1 - beta^2 sigma^2) - 1 for the same-side blocks."""
    sigma = np.asarray(sigma, dtype=np.float64)
    denom = 1.0 - beta * beta * sigma * sigma
    if np.any(denom == 0.0):
        raise ZeroDivisionError("beta * sigma == 1: Katz series is singular")
    return 1.0 / denom - 1.0


def max_admissible_beta(sigma_1):
    """Largest beta keeping the Katz series convergent for spectral norm sigma_1."""
    return np.inf if sigma_1 == 0 else 1.0 / sigma_1


def katz_scores_exact(x, beta):
    """All-pairs bipartite Katz scores by dense solve.

    Forms the symmetric (M+N) adjacency [[0, X], [X^T, 0]], computes
    (I - beta*Xhat)^{-1} - I and returns the upper-right M x N block. This is
    cubic in M+N and guarded accordingly; it exists as the exact small-scale
    method and as the oracle for the truncated variant.
    """
    if hasattr(x, "toarray"):
        x = x.toarray()
    x = np.asarray(x, dtype=np.float64)
    M, N = x.shape
    if M + N > _KATZ_GUARD:
        raise ValueError(f"exact Katz guard: M + N = {M + N} exceeds {_KATZ_GUARD}")
    sigma1 = float(np.linalg.norm(x, 2))
    if beta * sigma1 >= 1.0:
        raise ValueError(
            f"Katz series diverges: beta*sigma_1 = {beta * sigma1:.6g} >= 1 "
            f"(largest admissible beta is {max_admissible_beta(sigma1):.6g})"
        )
    P = M + N
    xhat = np.zeros((P, P))
    xhat[:M, M:] = x
    xhat[M:, :M] = x.T
    scores = np.linalg.solve(np.eye(P) - beta * xhat, np.eye(P)) - np.eye(P)
    return scores[:M, M:]


def tkatz_scores(f: SvdFactors, k: int, beta: float) -> ScoreModel:
    """Truncated Katz scores S = U_k diag(psi^-(sigma_k)) V_k^T.

    Identical factors to :func:`tsvd_scores`; only the diagonal changes.
    """
    fk = f.truncate(k)
    return ScoreModel.single(fk.U, psi_minus(fk.sigma, beta), fk.V)


def ensemble_scores(models) -> ScoreModel:
    """Combine one-term models as sum_K S_K / ||S_K||_F."""
    models = list(models)
    if not models:
        raise ValueError("empty ensemble")
    shapes = {m.shape for m in models}
    if len(shapes) > 1:
        raise ValueError(f"ensemble members disagree on shape: {shapes}")
    terms = []
    for m in models:
        if len(m.terms) != 1:
            raise ValueError("ensemble members must be single-term models")
        norm = m.frobenius_norm()
        if norm == 0.0:
            raise ValueError("cannot normalize a zero score model")
        t = m.terms[0]
        terms.append(ScoreTerm(t.weight / norm, t.U, t.d, t.V))
    return ScoreModel(terms=tuple(terms))


def score_pair(s, i, j):
    """Score of a single (i, j) pair in O(total K) time and O(M+N) memory."""
    M, N = s.shape
    if not (0 <= i < M and 0 <= j < N):
        raise IndexError(f"pair ({i}, {j}) out of range for shape {s.shape}")
    if isinstance(s, ScoreModel):
        # sorted summation keeps the value independent of term order
        vals = sorted(
            term.weight * float((term.U[i] * term.d) @ term.V[j])
            for term in s.terms
            if term.weight != 0.0
        )
        return float(sum(vals))
    return float(s.score_rows(np.array([i]))[0, j])


def top_k_scores(s, k, mask=None):
    """Exact top-k pairs as a list of (i, j, score), best first.

    Streams row blocks through a bounded min-heap, so peak memory is
    O(N + k) regardless of M*N. Ties are broken by ascending (i, then j).
    `mask`, if given, is called as mask(ii, jj) with flat index arrays and
    returns a boolean array marking pairs that stay in the candidate universe.
    """
    M, N = s.shape
    if not 1 <= k <= M * N:
        raise ValueError(f"k must be in [1, {M * N}], got {k}")
    heap = []  # entries (score, -i, -j, i, j); heap[0] is the worst kept
    for start in range(0, M, _ROW_BLOCK):
        rows = np.arange(start, min(start + _ROW_BLOCK, M))
        block = s.score_rows(rows)
        ii = np.repeat(rows, N)
        jj = np.tile(np.arange(N), len(rows))
        vals = block.ravel()
        if mask is not None:
            keep = mask(ii, jj)
            ii, jj, vals = ii[keep], jj[keep], vals[keep]
        if len(heap) == k:
            # cheap pre-filter: only candidates at least as good as the worst
            thresh = heap[0][0]
            cand = vals >= thresh
            ii, jj, vals = ii[cand], jj[cand], vals[cand]
        for v, i, j in zip(vals.tolist(), ii.tolist(), jj.tolist()):
            entry = (v, -i, -j, i, j)
            if len(heap) < k:
                heapq.heappush(heap, entry)
            elif entry > heap[0]:
                heapq.heapreplace(heap, entry)
    result = sorted(heap, key=lambda e: (-e[0], e[3], e[4]))
    return [(i, j, v) for v, _, _, i, j in result]


def save_score_report(path, shape, ranked):
    """Write the `M N k` header then 1-based ``i j score`` lines, best first."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{shape[0]} {shape[1]} {len(ranked)}\n")
        for i, j, v in ranked:
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")
