"""Additive Holt-Winters smoothing of temporal factors and one-period-ahead
score assembly for CP models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cp import KruskalModel
from .scores import ScoreModel

__all__ = [
    "HoltWintersParams",
    "ForecastResult",
    "holt_winters_forecast",
    "cp_forecast_scores",
]


@dataclass(frozen=True)
class HoltWintersParams:
    """Smoothing constants for level/trend/season and the seasonal period."""

    alpha: float = 0.2
    gamma_trend: float = 0.2
    delta_season: float = 0.2
    period: int = 7

    def __post_init__(self):
        for name in ("alpha", "gamma_trend", "delta_season"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")


@dataclass(frozen=True)
class ForecastResult:
    level: float
    trend: float
    season: np.ndarray = field(repr=False)   # final L seasonal states
    forecast: np.ndarray = field(repr=False)  # next L values


def holt_winters_forecast(y, params: HoltWintersParams) -> ForecastResult:
    """Smooth a series and predict the next full period.

    Standard additive recursions with smoothing constants alpha (level),
    gamma (trend), delta (season):

        level_t = alpha * (y_t - s_{t-L}) + (1 - alpha) * (level + trend)
        trend_t = gamma * (level_t - level) + (1 - gamma) * trend
        s_t     = delta * (y_t - level_t) + (1 - delta) * s_{t-L}

    The state is initialized from the first two periods: the trend is the
    difference of period means over L, the level anchors the trend line at
    the end of period one, and the seasonal indices are the first period
    detrended. On an exactly level+trend+seasonal series every innovation is
    then zero and the h-step forecast level + h*trend + s_{T+h-L} continues
    the series exactly.

    Requires len(y) >= 2 * L to initialize.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    L = params.period
    if len(y) < 2 * L:
        raise ValueError(
            f"need at least two periods ({2 * L} points) to initialize, "
            f"got {len(y)}"
        )
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    T = len(y)
    mean1 = y[:L].mean()
    mean2 = y[L:2 * L].mean()
    trend = (mean2 - mean1) / L
    mid = (L - 1) / 2.0
    level = mean1 + trend * mid  # trend line evaluated at t = L-1
    season = list(y[:L] - (mean1 + (np.arange(L) - mid) * trend))

    a, g, d = params.alpha, params.gamma_trend, params.delta_season
    for t in range(L, T):
        prev_level, prev_trend = level, trend
        level = a * (y[t] - season[t - L]) + (1.0 - a) * (prev_level + prev_trend)
        trend = g * (level - prev_level) + (1.0 - g) * prev_trend
        season.append(d * (y[t] - level) + (1.0 - d) * season[t - L])

    horizon = np.arange(1, L + 1)
    forecast = level + horizon * trend + np.array(
        [season[T - 1 + h - L] for h in horizon]
    )
    return ForecastResult(
        level=float(level),
        trend=float(trend),
        season=np.array(season[-L:]),
        forecast=forecast,
    )


def cp_forecast_scores(m: KruskalModel, params: HoltWintersParams):
    """Forecast every temporal factor one period ahead and assemble the
    per-step score models.

    Step l of the returned list is the one-term model
    S_l = sum_k lam_k * gamma_k[l] * A_k B_k^T, where gamma_k is the
    Holt-Winters prediction for column k of the temporal factor.
    """
    L = params.period
    if m.C.shape[0] < 2 * L:
        raise ValueError(
            f"temporal factor has {m.C.shape[0]} steps; forecasting a period "
            f"of {L} needs at least {2 * L}"
        )
    gammas = np.column_stack(
        [holt_winters_forecast(m.C[:, k], params).forecast for k in range(m.rank)]
    )  # (L, K)
    return [
        ScoreModel.single(m.A, m.lam * gammas[step], m.B) for step in range(L)
    ]
