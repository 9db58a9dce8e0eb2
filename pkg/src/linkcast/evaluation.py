"""Ranking evaluation: AUC, ROC curves, and top-k correct counts under the
all-links and new-links protocols.

Multi-step predictions (one scorer per future step) are pooled into a single
ranking across steps, producing one ROC per experiment. Scores are always
pulled through scorers in row blocks; only the flat per-universe score vector
is ever held, never an M x N matrix per se.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .tensor import SparseTensor3

__all__ = [
    "LabeledPairs",
    "EvalReport",
    "binarize_test",
    "new_link_filter",
    "auc",
    "top_k_correct",
    "evaluate",
    "write_roc_csv",
]

_ROW_BLOCK = 64


@dataclass(frozen=True)
class LabeledPairs:
    """Binary link labels over an M x N pair grid.

    `positives` and `excluded` are sorted flat indices (i * N + j); excluded
    pairs are removed from the ranking universe entirely (new-links protocol).
    """

    shape: tuple[int, int]
    positives: np.ndarray = field(repr=False)
    excluded: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64),
                                 repr=False)

    @property
    def n_universe(self):
        return self.shape[0] * self.shape[1] - len(self.excluded)

    @property
    def n_positive(self):
        return len(self.positives)


def _sorted_unique(flat):
    return np.unique(np.asarray(flat, dtype=np.int64))


def _member(sorted_arr, keys):
    if len(sorted_arr) == 0:
        return np.zeros(len(keys), dtype=bool)
    pos = np.searchsorted(sorted_arr, keys)
    pos = np.minimum(pos, len(sorted_arr) - 1)
    return sorted_arr[pos] == keys


def binarize_test(z_test):
    """Turn test data into binary labels: any nonzero value is a positive.

    A matrix (dense or scipy sparse) yields one LabeledPairs; a
    SparseTensor3 yields a list with one LabeledPairs per frontal slice,
    labeled independently per slice.
    """
    if isinstance(z_test, SparseTensor3):
        M, N, T = z_test.dims
        out = []
        for step in range(T):
            mask = (z_test.t == step) & (z_test.values != 0)
            flat = z_test.i[mask] * N + z_test.j[mask]
            out.append(LabeledPairs(shape=(M, N), positives=_sorted_unique(flat)))
        return out
    if sp.issparse(z_test):
        coo = z_test.tocoo()
        keep = coo.data != 0
        flat = coo.row[keep].astype(np.int64) * z_test.shape[1] + coo.col[keep]
        return LabeledPairs(shape=z_test.shape, positives=_sorted_unique(flat))
    arr = np.asarray(z_test)
    ii, jj = np.nonzero(arr)
    return LabeledPairs(
        shape=arr.shape, positives=_sorted_unique(ii * arr.shape[1] + jj)
    )


def new_link_filter(labels, z_train: SparseTensor3):
    """Restrict labels to pairs never linked anywhere in the training window.

    Every (i, j) with a stored training entry is dropped from positives and
    from the negative universe alike. Accepts one LabeledPairs or a per-step
    list and preserves the input's structure.
    """
    single = isinstance(labels, LabeledPairs)
    items = [labels] if single else list(labels)
    M, N, _ = z_train.dims
    for lp in items:
        if lp.shape != (M, N):
            raise ValueError(f"label shape {lp.shape} != training shape {(M, N)}")
    # presence of any stored entry marks a pair as seen, regardless of value
    seen = _sorted_unique(z_train.i * N + z_train.j)
    out = []
    for lp in items:
        keep = ~_member(seen, lp.positives)
        out.append(
            LabeledPairs(
                shape=lp.shape,
                positives=lp.positives[keep],
                excluded=np.union1d(lp.excluded, seen),
            )
        )
    return out[0] if single else out


def _as_lists(scores, labels):
    if isinstance(labels, LabeledPairs):
        return [scores], [labels]
    scorers = list(scores)
    labels = list(labels)
    if len(scorers) != len(labels):
        raise ValueError(
            f"{len(scorers)} scorers vs {len(labels)} label sets"
        )
    return scorers, labels


def _gather(scorer, lp: LabeledPairs):
    """Flat (scores, labels) arrays over the universe, streamed in row blocks."""
    M, N = lp.shape
    if scorer.shape != (M, N):
        raise ValueError(f"scorer shape {scorer.shape} != labels shape {lp.shape}")
    svals = np.empty(lp.n_universe)
    yvals = np.empty(lp.n_universe, dtype=bool)
    at = 0
    for start in range(0, M, _ROW_BLOCK):
        rows = np.arange(start, min(start + _ROW_BLOCK, M))
        block = scorer.score_rows(rows).ravel()
        flat = (rows[:, None] * N + np.arange(N)[None, :]).ravel()
        if len(lp.excluded):
            keep = ~_member(lp.excluded, flat)
            block, flat = block[keep], flat[keep]
        n = len(flat)
        svals[at:at + n] = block
        yvals[at:at + n] = _member(lp.positives, flat)
        at += n
    return svals[:at], yvals[:at]


@dataclass(frozen=True)
class EvalReport:
    auc: float
    roc: np.ndarray = field(repr=False)      # (n, 2) columns fpr, tpr
    topk_correct: int | None = None
    protocol: str = "all"

    def as_dict(self):
        d = {"auc": self.auc, "protocol": self.protocol}
        if self.topk_correct is not None:
            d["topk_correct"] = self.topk_correct
        return d


def _roc_from_arrays(svals, yvals):
    n_pos = int(yvals.sum())
    n_neg = len(yvals) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"degenerate label set: {n_pos} positives, {n_neg} negatives"
        )
    order = np.argsort(-svals, kind="stable")
    y = yvals[order]
    s = svals[order]
    tp = np.cumsum(y)
    fp = np.arange(1, len(y) + 1) - tp
    # keep one point per distinct threshold so tie groups become single segments
    boundary = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    roc = np.concatenate(
        [[[0.0, 0.0]],
         np.column_stack([fp[boundary] / n_neg, tp[boundary] / n_pos])]
    )
    area = float(np.trapezoid(roc[:, 1], roc[:, 0]))
    return area, roc


def auc(scores, labels, protocol="all") -> EvalReport:
    """Rank-based AUC with midrank tie handling, plus the ROC curve.

    `scores` is a scorer (or list of per-step scorers) exposing
    ``shape``/``score_rows``; `labels` the matching LabeledPairs (or list).
    Multi-step inputs are pooled into one ranking. The reported AUC is the
    trapezoidal area of the threshold-swept ROC, which coincides with the
    Mann-Whitney midrank statistic.
    """
    scorers, label_sets = _as_lists(scores, labels)
    parts = [_gather(sc, lp) for sc, lp in zip(scorers, label_sets)]
    svals = np.concatenate([p[0] for p in parts])
    yvals = np.concatenate([p[1] for p in parts])
    area, roc = _roc_from_arrays(svals, yvals)
    return EvalReport(auc=area, roc=roc, protocol=protocol)


def top_k_correct(scores, labels, k: int) -> int:
    """Number of true positives among the top-k ranked pairs of the universe.

    Ties are broken deterministically by ascending (step, i, j). Streams row
    blocks through a bounded heap, as in top-k score extraction.
    """
    scorers, label_sets = _as_lists(scores, labels)
    universe = sum(lp.n_universe for lp in label_sets)
    if not 1 <= k <= universe:
        raise ValueError(f"k must be in [1, {universe}], got {k}")
    heap = []  # (score, -step, -i, -j, is_positive)
    for step, (scorer, lp) in enumerate(zip(scorers, label_sets)):
        M, N = lp.shape
        for start in range(0, M, _ROW_BLOCK):
            rows = np.arange(start, min(start + _ROW_BLOCK, M))
            block = scorer.score_rows(rows).ravel()
            flat = (rows[:, None] * N + np.arange(N)[None, :]).ravel()
            if len(lp.excluded):
                keep = ~_member(lp.excluded, flat)
                block, flat = block[keep], flat[keep]
            if len(heap) == k:
                cand = block >= heap[0][0]
                block, flat = block[cand], flat[cand]
            if not len(flat):
                continue
            ypos = _member(lp.positives, flat)
            ii, jj = np.divmod(flat, N)
            for v, i, j, y in zip(
                block.tolist(), ii.tolist(), jj.tolist(), ypos.tolist()
            ):
                entry = (v, -step, -i, -j, y)
                if len(heap) < k:
                    heapq.heappush(heap, entry)
                elif entry[:4] > heap[0][:4]:
                    heapq.heapreplace(heap, entry)
    return int(sum(e[4] for e in heap))


def evaluate(scores, labels, k=None, protocol="all") -> EvalReport:
    """AUC plus (optionally) the top-k correct count in one report."""
    report = auc(scores, labels, protocol=protocol)
    if k is None:
        return report
    correct = top_k_correct(scores, labels, k)
    return EvalReport(
        auc=report.auc, roc=report.roc, topk_correct=correct, protocol=protocol
    )


def write_roc_csv(path, roc):
    """One ``fpr,tpr`` line per ROC point."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for fpr, tpr in np.asarray(roc):
            fh.write(f"{fpr:.17g},{tpr:.17g}\n")
