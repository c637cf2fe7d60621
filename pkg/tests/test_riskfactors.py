import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from evtrade.marketdata import StockInfo
from evtrade.riskfactors import (LOOKBACK, STYLE_NAMES, ExposureRow, FactorError, compute_style_exposures,
                                 exposure_matrix, factor_names, fit_daily_premia, fit_premia, raw_style_matrix,
                                 read_exposures, read_premia, standardize, write_exposures, write_premia)

from conftest import make_table

T = LOOKBACK + 10


def random_walks(n, T, seed=0, vol=0.02):
    rng = np.random.default_rng(seed)
    return 10.0 * np.cumprod(1.0 + vol * rng.standard_normal((n, T)), axis=1)


def design(n=200, n_ind=4, seed=0):
    rng = np.random.default_rng(seed)
    styles = standardize(rng.standard_normal((n, 5)))
    ind = np.arange(n) % n_ind
    dummies = np.eye(n_ind)[ind]
    return np.hstack([styles, dummies]), factor_names(tuple(f"I{k}" for k in range(n_ind)))


class TestRawStyles:
    def test_identical_histories(self):
        close = np.vstack([random_walks(1, T, 1)] * 2 + [random_walks(1, T, 2)])
        t = make_table(close)
        meta = {k: StockInfo("x", "M") for k in t.tickers}
        rows = compute_style_exposures(t, meta, t.dates[-1])
        assert rows[0].styles == rows[1].styles

    def test_identical_histories_zero_z(self):
        close = np.vstack([random_walks(1, T, 1)] * 3)
        z = standardize(raw_style_matrix(close, np.ones_like(close), np.ones_like(close), T)[0])
        assert np.all(z == 0)

    def test_constant_price(self):
        close = np.vstack([np.full(T, 7.0), random_walks(1, T, 3)[0]])
        raw, ok = raw_style_matrix(close, np.ones_like(close), np.ones_like(close), T)
        assert ok.all()
        assert raw[0, STYLE_NAMES.index("volatility")] == 0.0
        assert raw[0, STYLE_NAMES.index("momentum")] == 0.0
        assert raw[0, STYLE_NAMES.index("reversal")] == 0.0

    def test_definitions(self):
        close = random_walks(3, T, 4)
        vol = np.abs(random_walks(3, T, 5)) * 100
        sh = np.full_like(close, 1e4)
        raw, _ = raw_style_matrix(close, vol, sh, T)
        c = close[0]
        r = c[1:] / c[:-1] - 1
        expected = [np.log(c[T - 1] * 1e4), np.mean(vol[0, T - 20:T] / 1e4), np.std(r[T - 21:T - 1], ddof=1),
                    c[T - 6] / c[T - 121] - 1, c[T - 1] / c[T - 6] - 1]
        np.testing.assert_allclose(raw[0], expected, rtol=1e-12)

    def test_no_look_ahead(self):
        close = random_walks(5, T, 6)
        vol = np.ones_like(close)
        base, _ = raw_style_matrix(close, vol, vol, T - 3)
        close2 = close.copy()
        close2[:, T - 3:] *= 5.0
        bumped, _ = raw_style_matrix(close2, vol, vol, T - 3)
        np.testing.assert_array_equal(base, bumped)

    def test_momentum_ordering(self):
        # 5 stocks with known momentum-period returns
        close = np.ones((5, T))
        gains = np.array([0.3, -0.1, 0.05, 0.2, -0.25])
        for i, g in enumerate(gains):
            close[i, T - 121:T - 5] = np.linspace(1.0, 1.0 + g, 116)
            close[i, T - 5:] = 1.0 + g
        raw, _ = raw_style_matrix(close, np.ones_like(close), np.ones_like(close), T)
        z = standardize(raw)[:, STYLE_NAMES.index("momentum")]
        assert list(np.argsort(z)) == list(np.argsort(gains))

    def test_short_history_ineligible(self):
        close = random_walks(4, 50, 0)
        _, ok = raw_style_matrix(close, np.ones_like(close), np.ones_like(close), 50)
        assert not ok.any()

    def test_thin_cross_section(self):
        close = random_walks(2, T, 0)
        with pytest.raises(FactorError, match="eligible"):
            exposure_matrix(close, np.ones_like(close), np.ones_like(close), np.zeros(2, int), ("x",), T)


class TestStandardize:
    @given(arrays(float, (25, 3), elements=st.floats(-1e3, 1e3, allow_nan=False)))
    def test_moments(self, x):
        z = standardize(x)
        assert np.all(np.isfinite(z))
        for j in range(3):
            if np.ptp(x[:, j]) > 1e-6 * max(1.0, np.abs(x[:, j]).max()):
                assert abs(z[:, j].mean()) < 1e-9
                assert z[:, j].std() == pytest.approx(1.0, abs=1e-9)

    def test_exact_without_clipping(self):
        x = np.random.default_rng(0).uniform(-1, 1, size=(500, 2))
        z = standardize(x)
        np.testing.assert_allclose(z, (x - x.mean(0)) / x.std(0), atol=1e-12)

    def test_idempotent(self):
        z = standardize(np.random.default_rng(1).uniform(-1, 1, size=(300, 5)))
        assert np.max(np.abs(standardize(z) - z)) < 1e-9

    def test_winsorizes_outlier(self):
        x = np.r_[np.random.default_rng(0).standard_normal(200), 60.0]
        plain = (x - x.mean()) / x.std()
        z = standardize(x)
        assert z[-1] < plain[-1] - 1.0
        assert np.argmax(z) == len(x) - 1


class TestFitPremia:
    def test_exact_recovery(self):
        X, names = design()
        lam = np.zeros(X.shape[1])
        lam[:2] = [0.001, -0.002]
        p = fit_premia(X, X @ lam, names)
        np.testing.assert_allclose(p.values, lam, atol=1e-10)
        assert p.dropped == ()

    def test_zero_response(self):
        X, names = design()
        p = fit_premia(X, np.zeros(len(X)), names)
        np.testing.assert_array_equal(p.values, 0.0)

    def test_noisy_within_three_se(self):
        rng = np.random.default_rng(7)
        X, names = design(500, 5, seed=7)
        lam = rng.normal(0, 0.002, X.shape[1])
        y = X @ lam + 0.01 * rng.standard_normal(500)
        p = fit_premia(X, y, names)
        # independent oracle: normal equations
        xtx_inv = np.linalg.inv(X.T @ X)
        beta = xtx_inv @ X.T @ y
        resid = y - X @ beta
        se = np.sqrt(np.diag(xtx_inv) * (resid @ resid) / (500 - X.shape[1]))
        np.testing.assert_allclose(p.values, beta, atol=1e-12)
        assert np.all(np.abs(p.values - lam) < 3 * se + 1e-12)

    def test_residual_orthogonal_and_variance(self):
        rng = np.random.default_rng(2)
        X, names = design(300, 6, seed=2)
        y = rng.standard_normal(300) * 0.01
        p = fit_premia(X, y, names)
        assert np.max(np.abs(X.T @ p.residuals)) < 1e-8 * np.max(np.abs(X.T @ y))
        assert np.var(p.residuals) <= np.var(y)

    def test_nested_models(self):
        rng = np.random.default_rng(3)
        X, names = design(200, 3, seed=3)
        y = X @ rng.normal(0, 0.01, X.shape[1]) + 0.01 * rng.standard_normal(200)
        full = np.sum(fit_premia(X, y, names).residuals ** 2)
        for j in range(5):
            keep = [k for k in range(X.shape[1]) if k != j]
            reduced = np.sum(fit_premia(X[:, keep], y, [names[k] for k in keep]).residuals ** 2)
            assert reduced >= full - 1e-15

    def test_rank_deficiency_reported(self):
        X, names = design(100, 3)
        X[:, 5:] = 0.0
        X[:, 5] = 1.0                      # every stock in the first industry
        X[:, 1] = X[:, 0] * 2.0            # collinear styles
        X[:, 4] = 0.0                      # zero-variance style
        p = fit_premia(X, np.random.default_rng(0).standard_normal(100), names)
        assert "ind:I1" in p.dropped and "ind:I2" in p.dropped and "reversal" in p.dropped
        assert ("size" in p.dropped) != ("liquidity" in p.dropped)
        for name in p.dropped:
            assert p.as_dict()[name] == 0.0

    def test_too_few_observations(self):
        X, names = design(8, 4)
        with pytest.raises(FactorError, match="observations"):
            fit_premia(X, np.zeros(8), names)

    def test_length_mismatch(self):
        X, names = design(50)
        with pytest.raises(FactorError):
            fit_premia(X, np.zeros(49), names)


class TestDailyPremiaRecords:
    def test_from_rows(self, small_synth):
        bundle, _ = small_synth
        day = bundle.prices.dates[200]
        rows = compute_style_exposures(bundle.prices, bundle.metadata, day)
        lam = np.array([0.001, 0.0, -0.001, 0.0005, 0.0])
        resp = {r.ticker: float(np.dot(r.styles, lam)) for r in rows}
        p = fit_daily_premia(rows, resp)
        np.testing.assert_allclose(p.values[:5], lam, atol=1e-12)
        assert p.n_obs == len(rows) >= len(p.names) + 1

    def test_missing_response(self, small_synth):
        bundle, _ = small_synth
        rows = compute_style_exposures(bundle.prices, bundle.metadata, bundle.prices.dates[200])
        with pytest.raises(FactorError, match="no response"):
            fit_daily_premia(rows, {})

    def test_exposure_row_validation(self):
        with pytest.raises(ValueError):
            ExposureRow("A", None, (0.0, 1.0), "x")

    def test_file_round_trips(self, small_synth, tmp_path):
        bundle, _ = small_synth
        day = bundle.prices.dates[200]
        rows = compute_style_exposures(bundle.prices, bundle.metadata, day)
        write_exposures(rows, tmp_path / "x.csv")
        assert read_exposures(tmp_path / "x.csv") == rows
        p = fit_daily_premia(rows, {r.ticker: 0.001 * k for k, r in enumerate(rows)})
        write_premia([p], tmp_path / "p.csv")
        (q,) = read_premia(tmp_path / "p.csv")
        assert q.date == p.date and q.names == p.names
        np.testing.assert_array_equal(q.values, p.values)
