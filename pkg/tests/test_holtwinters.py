import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linkcast.cp import KruskalModel, normalize_model
from linkcast.holtwinters import (
    HoltWintersParams,
    cp_forecast_scores,
    holt_winters_forecast,
)
from linkcast.scores import score_pair

P022 = HoltWintersParams(alpha=0.2, gamma_trend=0.2, delta_season=0.2, period=7)


def scripted_oracle(y, L, a, g, d):
    """Independent scalar re-implementation of the recursions, written before
    the library path and kept deliberately separate from it."""
    y = list(map(float, y))
    m1 = sum(y[:L]) / L
    m2 = sum(y[L:2 * L]) / L
    trend = (m2 - m1) / L
    mid = (L - 1) / 2.0
    level = m1 + trend * mid
    season = {i: y[i] - (m1 + (i - mid) * trend) for i in range(L)}
    for t in range(L, len(y)):
        lp, tp = level, trend
        level = a * (y[t] - season[t - L]) + (1 - a) * (lp + tp)
        trend = g * (level - lp) + (1 - g) * tp
        season[t] = d * (y[t] - level) + (1 - d) * season[t - L]
    T = len(y)
    return [level + h * trend + season[T - 1 + h - L] for h in range(1, L + 1)]


class TestHoltWinters:
    def test_constant_plus_season_exact(self):
        L, periods = 7, 10
        pat = np.array([0.3, -0.1, 0.5, -0.4, 0.2, -0.3, -0.2])
        t = np.arange(L * periods)
        y = 4.0 + pat[t % L]
        fc = holt_winters_forecast(y, P022).forecast
        truth = 4.0 + pat[(len(y) + np.arange(L)) % L]
        assert np.abs(fc - truth).max() <= 1e-12

    def test_pure_trend_degenerate_period(self):
        params = HoltWintersParams(period=1)
        y = 3.0 + 0.25 * np.arange(20)
        fc = holt_winters_forecast(y, params).forecast
        assert fc[0] == pytest.approx(3.0 + 0.25 * 20, abs=1e-10)

    def test_level_trend_season_closed_form(self):
        # y = 10 + 0.5 t + seasonal, ten periods, all constants 0.2
        L, periods = 7, 10
        pat = np.array([0.3, -0.1, 0.5, -0.4, 0.2, -0.3, -0.2])
        t = np.arange(L * periods)
        y = 10.0 + 0.5 * t + pat[t % L]
        fc = holt_winters_forecast(y, P022).forecast
        truth = 10.0 + 0.5 * (len(y) - 1 + np.arange(1, L + 1)) + pat[
            (len(y) + np.arange(L)) % L
        ]
        assert np.abs(fc - truth).max() <= 1e-6

    def test_matches_scripted_oracle_on_noisy_series(self):
        rng = np.random.default_rng(0)
        for trial in range(5):
            L = rng.integers(2, 6)
            n = L * rng.integers(3, 7)
            y = rng.standard_normal(n).cumsum()
            params = HoltWintersParams(
                alpha=0.3, gamma_trend=0.15, delta_season=0.25, period=int(L)
            )
            fc = holt_winters_forecast(y, params).forecast
            oracle = scripted_oracle(y, int(L), 0.3, 0.15, 0.25)
            np.testing.assert_allclose(fc, oracle, rtol=1e-12, atol=1e-12)

    def test_shift_equivariance(self):
        rng = np.random.default_rng(1)
        y = rng.random(28)
        base = holt_winters_forecast(y, P022).forecast
        shifted = holt_winters_forecast(y + 5.5, P022).forecast
        assert np.abs((shifted - base) - 5.5).max() <= 1e-10

    def test_scale_equivariance(self):
        rng = np.random.default_rng(2)
        y = rng.random(28) + 1.0
        base = holt_winters_forecast(y, P022).forecast
        scaled = holt_winters_forecast(3.0 * y, P022).forecast
        assert np.abs((scaled - 3.0 * base) / base).max() <= 1e-10

    @given(
        shift=st.floats(-100, 100),
        scale=st.floats(0.01, 100),
    )
    @settings(max_examples=30, deadline=None)
    def test_affine_equivariance_property(self, shift, scale):
        y = np.sin(np.arange(21) * 2 * np.pi / 7) + np.arange(21) * 0.1
        params = HoltWintersParams(period=7)
        base = holt_winters_forecast(y, params).forecast
        mapped = holt_winters_forecast(scale * y + shift, params).forecast
        np.testing.assert_allclose(
            mapped, scale * base + shift, rtol=1e-9, atol=1e-9
        )

    def test_periodic_self_consistency(self):
        L = 5
        pat = np.array([1.0, 0.0, 2.0, 0.5, -0.5])
        y = np.tile(pat, 8)
        res = holt_winters_forecast(y, HoltWintersParams(period=L))
        np.testing.assert_allclose(
            res.season, pat - pat.mean(), atol=1e-8
        )
        np.testing.assert_allclose(res.forecast, pat, atol=1e-8)

    def test_series_too_short(self):
        with pytest.raises(ValueError, match="two periods"):
            holt_winters_forecast(np.ones(13), P022)

    def test_bad_constants(self):
        for field, value in (("alpha", 0.0), ("gamma_trend", 1.0),
                             ("delta_season", -0.1)):
            with pytest.raises(ValueError, match=field):
                HoltWintersParams(**{field: value})

    def test_nonfinite_rejected(self):
        y = np.ones(14)
        y[3] = np.inf
        with pytest.raises(ValueError, match="finite"):
            holt_winters_forecast(y, P022)


def toy_model(rng, T=14, k=2):
    return normalize_model(
        KruskalModel(
            lam=rng.random(k) + 0.5,
            A=rng.standard_normal((5, k)),
            B=rng.standard_normal((4, k)),
            C=rng.standard_normal((T, k)),
        )
    )


class TestCpForecastScores:
    def test_constant_temporal_factor(self):
        T, L = 14, 7
        A = np.eye(3)[:, :1]
        B = np.eye(2)[:, :1]
        C = np.full((T, 1), 1.0 / np.sqrt(T))
        m = KruskalModel(lam=np.array([2.0]), A=A, B=B, C=C)
        slices = cp_forecast_scores(m, HoltWintersParams(period=L))
        assert len(slices) == L
        for s in slices:
            assert score_pair(s, 0, 0) == pytest.approx(
                2.0 / np.sqrt(T), rel=1e-10
            )

    def test_dense_expansion_oracle(self):
        rng = np.random.default_rng(3)
        m = toy_model(rng)
        params = HoltWintersParams(period=7)
        gammas = np.column_stack(
            [holt_winters_forecast(m.C[:, k], params).forecast for k in range(2)]
        )
        slices = cp_forecast_scores(m, params)
        for ell, s in enumerate(slices):
            oracle = sum(
                m.lam[k] * gammas[ell, k] * np.outer(m.A[:, k], m.B[:, k])
                for k in range(2)
            )
            assert np.abs(s.to_dense() - oracle).max() <= 1e-12

    def test_zero_temporal_factor_gives_zero_scores(self):
        T = 14
        A = np.eye(3)[:, :1]
        B = np.eye(2)[:, :1]
        C = np.zeros((T, 1))
        C[:, 0] = 0.0
        m = KruskalModel(lam=np.array([1.0]), A=A, B=B, C=C)
        slices = cp_forecast_scores(m, HoltWintersParams(period=7))
        for s in slices:
            assert np.abs(s.to_dense()).max() <= 1e-15

    def test_too_short_history(self):
        m = toy_model(np.random.default_rng(4), T=10)
        with pytest.raises(ValueError, match="at least"):
            cp_forecast_scores(m, HoltWintersParams(period=7))
