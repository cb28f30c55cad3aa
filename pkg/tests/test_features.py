import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from carrygap.errors import DataError, NumericalError
from carrygap.features import (BIN_LABELS, MAIN_WINDOWS, PanelBuilder, aggregate_daily, asset_column,
                               assemble_panel, fx_neutralize, gbm_asset_term, gbm_ois_term, log_ols_slope,
                               month_bin, slope_series, tau_bin, tau_bins)
from carrygap.market_data import DailySeries
from carrygap.ois_curve import CarryObservation, OisQuoteSet
from carrygap.synth_oracle import brute_median, mc_expected_support

D0 = 738000


def _prices(values, start=D0, name="A"):
    return DailySeries(name, start + np.arange(len(values)), np.asarray(values, float))


def _exact_slope(log_prices):
    # textbook sums in exact rational arithmetic
    ys = [Fraction(v) for v in log_prices]
    n = len(ys)
    sx = Fraction(n * (n - 1), 2)
    sxx = sum(Fraction(j * j) for j in range(n))
    sy = sum(ys)
    sxy = sum(j * y for j, y in enumerate(ys))
    return float((n * sxy - sx * sy) / (n * sxx - sx * sx))


def test_exponential_prices_give_exact_rate():
    px = _prices(np.exp(0.001 * np.arange(30)))
    for n in (2, 5, 29):
        assert log_ols_slope(px, D0 + 30, n) == pytest.approx(0.001, rel=1e-10)
    assert log_ols_slope(_prices(np.full(40, 123.4)), D0 + 40, 20) == 0.0


def test_slope_matches_exact_accumulator_on_random_walk():
    rng = np.random.default_rng(42)
    lp = np.log(100.0) + np.cumsum(rng.normal(0, 0.01, 400))
    px = _prices(np.exp(lp))
    lp = np.log(px.values)
    ss = slope_series(px, 70)
    for end in (70, 150, 399, 400):
        want = _exact_slope(lp[end - 70:end])
        assert ss.at(D0 + end)[0] == pytest.approx(want, rel=1e-12, abs=1e-15)
        assert log_ols_slope(px, D0 + end, 70) == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_slope_uses_strictly_earlier_prices_and_own_calendar():
    days = np.array([0, 1, 4, 5, 6, 11]) + D0
    px = DailySeries("A", days, np.exp([0.0, 0.1, 0.2, 0.3, 0.4, 9.0]))
    # the window before day 11 is the last three observations regardless of calendar gaps
    assert log_ols_slope(px, D0 + 11, 3) == pytest.approx(0.1, rel=1e-12)
    ss = slope_series(px, 3)
    assert ss.at(D0 + 11)[0] == pytest.approx(0.1, rel=1e-12)
    assert np.isnan(ss.at(D0 + 4)[0])
    with pytest.raises(DataError, match="need 3"):
        log_ols_slope(px, D0 + 4, 3)
    with pytest.raises(DataError):
        slope_series(px, 1)
    with pytest.raises(DataError):
        slope_series(_prices([1.0, 0.0, 1.0]), 2)
    assert len(slope_series(px, 10).slopes) == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 40), st.integers(0, 119))
def test_future_prices_do_not_move_past_slopes(seed, n, cut):
    rng = np.random.default_rng(seed)
    vals = 50 * np.exp(np.cumsum(rng.normal(0, 0.02, 120)))
    pert = vals.copy()
    pert[cut:] *= np.exp(rng.normal(0, 0.3, 120 - cut))
    a = slope_series(_prices(vals), n).at(D0 + np.arange(cut + 1))
    b = slope_series(_prices(pert), n).at(D0 + np.arange(cut + 1))
    assert_array_equal(a, b)


def test_fx_neutralize():
    px = DailySeries("IEFA", D0 + np.arange(5), np.array([10.0, 11, 12, 13, 14]))
    one = DailySeries("DXY", D0 + np.arange(5), np.ones(5))
    assert_array_equal(fx_neutralize(px, one).values, px.values)
    same = fx_neutralize(px, DailySeries("DXY", px.dates, px.values))
    assert_array_equal(same.values, 1.0)
    assert slope_series(same, 3).slopes.tolist() == [0.0] * 3
    gappy = DailySeries("DXY", D0 + np.array([-3, 1, 4]), np.array([2.0, 4.0, 5.0]))
    assert_array_equal(fx_neutralize(px, gappy).values, [10 / 2, 11 / 4, 12 / 4, 13 / 4, 14 / 5])
    with pytest.raises(DataError):
        fx_neutralize(px, DailySeries("DXY", px.dates, np.zeros(5)))


def test_gbm_terms_closed_form():
    assert gbm_ois_term(4.0, 0.0, 0.5) == 0.0
    assert gbm_ois_term(1.0, 100.0, math.pi / 2) == pytest.approx(200 / 3, rel=1e-15)
    assert gbm_asset_term(0.01, 100.0, math.pi / 2) == pytest.approx(200 / 3, rel=1e-15)
    assert gbm_asset_term(0.0, 30.0, 1.0) == 0.0
    assert gbm_asset_term(-0.003, 17.0, 0.7) == -gbm_asset_term(0.003, 17.0, 0.7)
    with pytest.raises(NumericalError):
        gbm_ois_term(1.0, 20.0, 0.0)
    with pytest.raises(NumericalError):
        gbm_asset_term(0.1, 20.0, -1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 10).filter(lambda x: x == 0 or abs(x) > 1e-6),
       st.floats(0, 150).filter(lambda x: x == 0 or x > 1e-6), st.floats(1e-3, 3.0))
def test_gbm_terms_scale_with_sqrt_tau(r, v, tau):
    assert gbm_ois_term(r, v, 4 * tau) == 2 * gbm_ois_term(r, v, tau)
    assert gbm_asset_term(r / 1000, v, 4 * tau) == 2 * gbm_asset_term(r / 1000, v, tau)
    assert gbm_ois_term(2 * r, v, tau) == pytest.approx(2 * gbm_ois_term(r, v, tau), rel=1e-15)


def test_gbm_ois_term_matches_brownian_support_simulation():
    est = mc_expected_support(0.2, 0.5, n_paths=20_000, n_steps=1_000, rng=3)
    mc_bp = 1e4 * 0.04 * est.estimate
    tol = 1e4 * 0.04 * (3 * est.std_error + est.discretization_allowance)
    assert abs(gbm_ois_term(4.0, 20.0, 0.5) - mc_bp) <= tol


@pytest.mark.parametrize("tau,label", [(45 / 365, "1–2m"), (8 / 12, "7–10m"), (25 / 12, "21m+"),
                                       (2 / 12, "2–3m"), (1 / 12, "1–2m"), (20.999 / 12, "14–21m")])
def test_tau_bin_labels(tau, label):
    assert tau_bin(tau) == label


def test_month_bin_edges_half_open_and_floor():
    assert month_bin(2.0) == "2–3m"
    assert month_bin(21.0) == "21m+"
    with pytest.raises(DataError):
        month_bin(0.99)
    taus = np.array([0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 14.0, 21.0, 100.0]) / 12
    assert tau_bins(taus).tolist() == [""] + list(BIN_LABELS) + ["21m+"]


def _obs(d, cg, market="SPX", expiry=None, tau=0.25, ba=0.4):
    return CarryObservation(market, d, expiry or d + int(tau * 365), tau, 0.99, 4000.0, 10, 0.0, ba, 0.991, cg)


def test_aggregate_daily_median_convention():
    s = aggregate_daily([_obs(D0, 5.0)])
    assert s.values.tolist() == [5.0]
    obs = [_obs(D0, 10.0), _obs(D0, 90.0), _obs(D0, 20.0), _obs(D0 + 1, 10.0), _obs(D0 + 1, 20.0)]
    s = aggregate_daily(obs)
    assert_array_equal(s.dates, [D0, D0 + 1])
    assert s.values.tolist() == [20.0, 15.0]
    random.Random(0).shuffle(obs)
    assert aggregate_daily(obs).values.tolist() == [20.0, 15.0]


def test_aggregate_daily_matches_exhaustive_median():
    rng = np.random.default_rng(8)
    obs = [_obs(D0 + int(d), float(v)) for d, v in zip(rng.integers(0, 20, 300), rng.normal(0, 50, 300))]
    s = aggregate_daily(obs)
    for d, v in zip(s.dates, s.values):
        assert v == brute_median([o.cg_bp for o in obs if o.date == d])


def _ois(d, r1=2.0, r10=3.0):
    return OisQuoteSet(d, np.array([1.0, 10.0]), np.array([r1, r10]))


def test_assemble_panel_single_row_values():
    vol = DailySeries("VIX", [D0], [20.0])
    nfci = DailySeries("NFCI", [D0 - 3], [-0.4])
    px = _prices(np.exp(0.001 * np.arange(10)), start=D0 - 10, name="IEFA")
    slopes = {asset_column("IEFA", 5): slope_series(px, 5, "IEFA")}
    df, dropped = assemble_panel([_obs(D0, 12.0, tau=0.5, ba=0.8)], {D0: _ois(D0)}, vol, nfci, slopes)
    assert len(df) == 1 and not dropped
    row = df.iloc[0]
    assert row["nfci"] == -0.4
    assert row["gbm_ois_1y"] == gbm_ois_term(2.0, 20.0, 0.5)
    assert row["gbm_ois_10y"] == gbm_ois_term(3.0, 20.0, 0.5)
    assert row["ba_over_tau"] == pytest.approx(1.6)
    assert row["gbm_iefa_5"] == pytest.approx(gbm_asset_term(0.001, 20.0, 0.5), rel=1e-9)
    assert row["year"] == 2021


def test_assemble_panel_drops_and_counts_missing_vol():
    vol = DailySeries("RVX", [D0], [25.0])
    nfci = DailySeries("NFCI", [D0 - 1], [0.1])
    obs = [_obs(D0, 1.0, "RUT"), _obs(D0 + 1, 2.0, "RUT"), _obs(D0 + 1, 3.0, "SPX")]
    df, dropped = assemble_panel(obs, {D0: _ois(D0), D0 + 1: _ois(D0 + 1)}, vol, nfci, market="RUT")
    assert len(df) == 1
    assert dropped == {"vol_missing": 1}
    df, dropped = assemble_panel([_obs(D0, 1.0)], {}, vol, nfci)
    assert len(df) == 0 and dropped == {"ois_missing": 1}
    df, dropped = assemble_panel([], {}, vol, nfci)
    assert df.empty and not dropped


def test_assemble_panel_regressor_lag():
    vol = DailySeries("VIX", [D0, D0 + 1], [20.0, 30.0])
    nfci = DailySeries("NFCI", [D0], [0.0])
    obs = [_obs(D0, 1.0), _obs(D0 + 1, 2.0)]
    ois = {D0: _ois(D0), D0 + 1: _ois(D0 + 1)}
    df, dropped = assemble_panel(obs, ois, vol, nfci, regressor_lag=1)
    assert len(df) == 1 and df["vol"].tolist() == [20.0]
    assert dropped == {"vol_missing": 1}


def test_panel_builder_matches_direct_assembly():
    rng = np.random.default_rng(1)
    days = D0 + np.arange(300)
    vol = DailySeries("VIX", days, rng.uniform(12, 30, 300))
    nfci = DailySeries("NFCI", days[::5], rng.normal(size=60))
    prices = {a: DailySeries(a, days - 200, 100 * np.exp(np.cumsum(rng.normal(0, 0.01, 300))))
              for a in MAIN_WINDOWS}
    obs = [_obs(int(d), float(rng.normal()), tau=t) for d in days[::3] for t in (0.1, 0.6)]
    ois = {int(d): _ois(int(d)) for d in days}
    base, _ = assemble_panel(obs, ois, vol, nfci)
    builder = PanelBuilder(base, prices)
    windows = {"IEFA": 20, "IGOV": 60, "IAU": 45}
    slopes = {asset_column(a, n): slope_series(prices[a], n, a) for a, n in windows.items()}
    direct, _ = assemble_panel(obs, ois, vol, nfci, slopes)
    built = builder.panel(windows)
    assert list(built.columns) == list(direct.columns)
    assert_allclose(built[list(slopes)].to_numpy(), direct[list(slopes)].to_numpy(), rtol=1e-15)
    assert builder.history("IEFA") == 200
    assert_allclose(builder.path_risk_scale() * slopes["gbm_iefa_20"].at(base["date"].to_numpy()),
                    builder.asset_term("IEFA", 20), rtol=1e-14)
    with pytest.raises(DataError):
        builder.slope("IEFA", 20, fx_neutral=True)
    with pytest.raises(DataError):
        builder.slope("XYZ", 20)
