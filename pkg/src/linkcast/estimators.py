"""Scikit-learn style estimators wrapping the link-prediction methods.

Every predictor follows the fit/predict convention: ``fit`` takes a training
:class:`~linkcast.tensor.SparseTensor3` and stores fitted state in
trailing-underscore attributes; ``predict`` scores (i, j) pairs. Parameters
live verbatim on the instance so ``get_params``/``set_params``/``clone``
from scikit-learn work as usual.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator

from .collapse import collapse_ct, collapse_cwt
from .cp import cp_als, cp_heuristic_scores
from .holtwinters import HoltWintersParams, cp_forecast_scores
from .scores import (
    DenseScores,
    ensemble_scores,
    katz_scores_exact,
    max_admissible_beta,
    top_k_scores,
    tsvd_scores,
    tkatz_scores,
)
from .svd import truncated_svd
from .simulate import last_period_scores
from .tensor import SparseTensor3

__all__ = [
    "TruncatedSvdLinkPredictor",
    "TruncatedKatzLinkPredictor",
    "ExactKatzLinkPredictor",
    "CpHeuristicLinkPredictor",
    "CpForecastLinkPredictor",
    "LastPeriodLinkPredictor",
]

DEFAULT_RANK_GRID = tuple(range(10, 101, 10))


def _check_tensor(z):
    if not isinstance(z, SparseTensor3):
        raise TypeError(
            f"expected a SparseTensor3 training tensor, got {type(z).__name__}"
        )
    if z.nnz == 0:
        raise ValueError("training tensor has no entries")
    return z


def _check_pairs(pairs, shape):
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.ndim == 1:
        pairs = pairs[None, :]
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("pairs must be an (n, 2) array of (i, j) indices")
    M, N = shape
    if len(pairs) and (
        pairs[:, 0].min() < 0 or pairs[:, 0].max() >= M
        or pairs[:, 1].min() < 0 or pairs[:, 1].max() >= N
    ):
        raise IndexError(f"pair indices out of range for shape {shape}")
    return pairs


def _score_pairs(scorer, pairs):
    out = np.empty(len(pairs))
    order = np.argsort(pairs[:, 0], kind="stable")
    sorted_pairs = pairs[order]
    start = 0
    while start < len(sorted_pairs):
        row = sorted_pairs[start, 0]
        stop = start
        while stop < len(sorted_pairs) and sorted_pairs[stop, 0] == row:
            stop += 1
        block = scorer.score_rows(np.array([row]))[0]
        out[order[start:stop]] = block[sorted_pairs[start:stop, 1]]
        start = stop
    return out


class _SingleModelMixin:
    """predict/top_k against a single fitted `score_model_`."""

    def _check_fitted(self):
        if not hasattr(self, "score_model_"):
            raise RuntimeError("predictor is not fitted yet; call fit first")

    def predict(self, pairs):
        """Scores for an (n, 2) array of (i, j) pairs."""
        self._check_fitted()
        pairs = _check_pairs(pairs, self.score_model_.shape)
        return _score_pairs(self.score_model_, pairs)

    def top_k(self, k, mask=None):
        self._check_fitted()
        return top_k_scores(self.score_model_, k, mask=mask)


class _CollapsingPredictor(_SingleModelMixin, BaseEstimator):
    """Shared plumbing for predictors that first collapse the time mode."""

    def _collapsed(self, z):
        if self.collapse == "ct":
            return collapse_ct(z)
        if self.collapse == "cwt":
            return collapse_cwt(z, self.theta)
        raise ValueError(f"collapse must be 'ct' or 'cwt', got {self.collapse!r}")


class TruncatedSvdLinkPredictor(_CollapsingPredictor):
    """Ensemble of truncated-SVD reconstruction scores over a rank grid."""

    def __init__(self, ranks=DEFAULT_RANK_GRID, collapse="cwt", theta=0.2,
                 svd_tol=1e-10, svd_max_iter=None, random_state=0):
        self.ranks = ranks
        self.collapse = collapse
        self.theta = theta
        self.svd_tol = svd_tol
        self.svd_max_iter = svd_max_iter
        self.random_state = random_state

    def _fit_factors(self, z):
        ranks = sorted(set(int(r) for r in np.atleast_1d(self.ranks)))
        if not ranks or ranks[0] < 1:
            raise ValueError(f"invalid rank grid {self.ranks}")
        x = self._collapsed(_check_tensor(z))
        kmax = min(ranks[-1], min(x.shape))
        factors = truncated_svd(
            x, kmax, tol=self.svd_tol, max_iter=self.svd_max_iter,
            seed=self.random_state,
        )
        usable = [r for r in ranks if r <= factors.rank]
        if not usable:
            raise ValueError(
                f"collapsed matrix rank {factors.rank} is below every "
                f"requested rank in {ranks}"
            )
        return factors, usable

    def fit(self, z, y=None):
        factors, ranks = self._fit_factors(z)
        self.factors_ = factors
        self.ranks_ = ranks
        self.score_model_ = ensemble_scores(
            [tsvd_scores(factors, r) for r in ranks]
        )
        return self


class TruncatedKatzLinkPredictor(TruncatedSvdLinkPredictor):
    """Ensemble of truncated bipartite Katz scores over a rank grid."""

    def __init__(self, ranks=DEFAULT_RANK_GRID, beta=0.001, collapse="cwt",
                 theta=0.2, svd_tol=1e-10, svd_max_iter=None, random_state=0):
        super().__init__(ranks=ranks, collapse=collapse, theta=theta,
                         svd_tol=svd_tol, svd_max_iter=svd_max_iter,
                         random_state=random_state)
        self.beta = beta

    def fit(self, z, y=None):
        factors, ranks = self._fit_factors(z)
        sigma1 = factors.sigma[0]
        if self.beta * sigma1 >= 1.0:
            warnings.warn(
                f"beta * sigma_1 = {self.beta * sigma1:.4g} >= 1; Katz "
                f"weights degrade (largest admissible beta is "
                f"{max_admissible_beta(sigma1):.6g})",
                stacklevel=2,
            )
        self.factors_ = factors
        self.ranks_ = ranks
        self.score_model_ = ensemble_scores(
            [tkatz_scores(factors, r, self.beta) for r in ranks]
        )
        return self


class ExactKatzLinkPredictor(_CollapsingPredictor):
    """Dense all-pairs bipartite Katz scores (small problems only)."""

    def __init__(self, beta=0.001, collapse="cwt", theta=0.2):
        self.beta = beta
        self.collapse = collapse
        self.theta = theta

    def fit(self, z, y=None):
        x = self._collapsed(_check_tensor(z))
        self.score_model_ = DenseScores(katz_scores_exact(x, self.beta))
        return self


class CpHeuristicLinkPredictor(_SingleModelMixin, BaseEstimator):
    """CP factorization scored by mean recent activity, ensembled over ranks."""

    def __init__(self, ranks=DEFAULT_RANK_GRID, t0=3, tol=1e-6, max_iter=500,
                 random_state=0):
        self.ranks = ranks
        self.t0 = t0
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, z, y=None):
        z = _check_tensor(z)
        ranks = sorted(set(int(r) for r in np.atleast_1d(self.ranks)))
        if not ranks or ranks[0] < 1:
            raise ValueError(f"invalid rank grid {self.ranks}")
        self.models_ = []
        self.traces_ = []
        members = []
        for r in ranks:
            model, trace = cp_als(
                z, r, seed=self.random_state, tol=self.tol,
                max_iter=self.max_iter,
            )
            self.models_.append(model)
            self.traces_.append(trace)
            members.append(cp_heuristic_scores(model, self.t0))
        self.ranks_ = ranks
        self.score_model_ = ensemble_scores(members)
        return self


class CpForecastLinkPredictor(BaseEstimator):
    """CP factorization whose temporal factors are forecast one period ahead,
    giving one score model per future step."""

    def __init__(self, rank=10, period=7, alpha=0.2, trend=0.2, season=0.2,
                 tol=1e-6, max_iter=500, random_state=0):
        self.rank = rank
        self.period = period
        self.alpha = alpha
        self.trend = trend
        self.season = season
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, z, y=None):
        z = _check_tensor(z)
        self.model_, self.trace_ = cp_als(
            z, self.rank, seed=self.random_state, tol=self.tol,
            max_iter=self.max_iter,
        )
        params = HoltWintersParams(
            alpha=self.alpha, gamma_trend=self.trend,
            delta_season=self.season, period=self.period,
        )
        self.score_models_ = cp_forecast_scores(self.model_, params)
        return self

    def _check_fitted(self):
        if not hasattr(self, "score_models_"):
            raise RuntimeError("predictor is not fitted yet; call fit first")

    def predict(self, pairs, step=0):
        """Scores for (i, j) pairs at future step `step` (0-based)."""
        self._check_fitted()
        if not 0 <= step < len(self.score_models_):
            raise IndexError(
                f"step {step} out of range for period {len(self.score_models_)}"
            )
        scorer = self.score_models_[step]
        return _score_pairs(scorer, _check_pairs(pairs, scorer.shape))

    def top_k(self, k, step=0, mask=None):
        self._check_fitted()
        return top_k_scores(self.score_models_[step], k, mask=mask)


class LastPeriodLinkPredictor(BaseEstimator):
    """Baseline predicting the next period with the most recent period's values."""

    def __init__(self, period=7):
        self.period = period

    def fit(self, z, y=None):
        z = _check_tensor(z)
        self.score_models_ = last_period_scores(z, self.period)
        return self

    def _check_fitted(self):
        if not hasattr(self, "score_models_"):
            raise RuntimeError("predictor is not fitted yet; call fit first")

    def predict(self, pairs, step=0):
        self._check_fitted()
        if not 0 <= step < len(self.score_models_):
            raise IndexError(
                f"step {step} out of range for period {len(self.score_models_)}"
            )
        scorer = self.score_models_[step]
        return _score_pairs(scorer, _check_pairs(pairs, scorer.shape))

    def top_k(self, k, step=0, mask=None):
        self._check_fitted()
        return top_k_scores(self.score_models_[step], k, mask=mask)
