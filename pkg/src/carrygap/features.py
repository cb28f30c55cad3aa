"""
Regressor construction: rolling log-price slopes, GBM path-risk terms,
maturity bins, daily aggregation and panel assembly.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from datetime import date
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, NumericalError
from .market_data import DailySeries, TradingCalendar, Unit, align_forward_fill, to_iso, to_ordinal
from .ois_curve import CarryObservation, OisQuoteSet

logger = logging.getLogger(__name__)

TWO_THIRDS = 2.0 / 3.0

MAIN_WINDOWS = {"IEFA": 70, "IGOV": 441, "IAU": 315}
US_WINDOWS = {"VTI": 42, "BND": 252, "IAU": 300}
EM_WINDOWS = {"IEMG": 63, "EBND": 126, "IAU": 300}

BIN_EDGES = (1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 14.0, 21.0, math.inf)
BIN_LABELS = ("1–2m", "2–3m", "3–5m", "5–7m", "7–10m", "10–14m", "14–21m", "21m+")


@dataclass(frozen=True)
class MaturityBin:
    label: str
    lower: float
    upper: float


MATURITY_BINS = tuple(MaturityBin(lab, lo, hi) for lab, lo, hi in zip(BIN_LABELS, BIN_EDGES[:-1], BIN_EDGES[1:]))


# --------------------------------------------------------------------------
# slopes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SlopeSeries:
    """Rolling forward-time OLS slope of log prices over ``window_n`` observations.

    ``dates[i]`` is the last observation inside window ``i``.  The value
    that applies on a day ``t`` is the one whose window ends strictly before
    ``t`` (see :meth:`at`), so the contemporaneous price never enters.
    """

    asset: str
    window_n: int
    dates: np.ndarray
    slopes: np.ndarray

    def at(self, days) -> np.ndarray:
        """Slope usable on each day in ``days``; NaN where history is short."""
        d = np.atleast_1d(np.asarray(days, dtype=np.int64))
        idx = np.searchsorted(self.dates, d, side="left") - 1
        out = np.full(d.shape, np.nan)
        ok = idx >= 0
        out[ok] = self.slopes[idx[ok]]
        return out


def _window_slopes(log_prices: np.ndarray, n: int) -> np.ndarray:
    """Forward-time OLS slope for every length-``n`` window."""
    win = sliding_window_view(log_prices, n)
    x = np.arange(n, dtype=np.float64) - 0.5 * (n - 1)
    # anchoring on the last element keeps constant windows at exactly zero
    return (win - win[:, -1:]) @ x / (x @ x)


def slope_series(prices: DailySeries, n: int, asset: str | None = None) -> SlopeSeries:
    if n < 2:
        raise DataError("slope window must be >= 2")
    if np.any(prices.values <= 0):
        raise DataError(f"{prices.name}: non-positive price")
    asset = asset or prices.name
    if len(prices) < n:
        return SlopeSeries(asset, n, np.empty(0, dtype=np.int64), np.empty(0))
    lp = np.log(prices.values)
    return SlopeSeries(asset, n, prices.dates[n - 1:], _window_slopes(lp, n))


def log_ols_slope(prices: DailySeries, t, n: int) -> float:
    """Slope of ``log P`` on time over the ``n`` observations strictly before ``t``.

    Positive means prices were trending up.  Uses the asset's own
    observations (index in window, not calendar days).
    """
    d = to_ordinal(t)
    end = int(np.searchsorted(prices.dates, d, side="left"))
    if end < n:
        raise DataError(f"{prices.name}: need {n} observations before {to_iso(d)}, have {end}")
    if n < 2:
        raise DataError("slope window must be >= 2")
    lp = np.log(prices.values[end - n:end])
    return float(_window_slopes(lp, n)[0])


def fx_neutralize(prices: DailySeries, dollar_index: DailySeries,
                  calendar: TradingCalendar | np.ndarray | None = None) -> DailySeries:
    """Divide prices by the forward-filled broad-dollar index."""
    cal = prices.dates if calendar is None else (calendar.dates if isinstance(calendar, TradingCalendar) else np.asarray(calendar))
    if np.any(dollar_index.values <= 0):
        raise DataError(f"{dollar_index.name}: non-positive index value")
    px = align_forward_fill(prices, cal)
    fx = align_forward_fill(dollar_index, cal)
    return DailySeries(f"{prices.name}_fxn", cal, px.values / fx.values, prices.unit)


# --------------------------------------------------------------------------
# GBM path-risk terms
# --------------------------------------------------------------------------

def _path_risk_sqrt(tau):
    t = np.asarray(tau, dtype=np.float64)
    if np.any(t <= 0):
        raise NumericalError("tau must be positive")
    return np.sqrt(2.0 * t / np.pi)


def gbm_ois_term(rate_pct, vol_pct, tau):
    """``1e4 * (rate/100) * (2/3) * (vol/100) * sqrt(2 tau / pi)`` in bp."""
    sq = _path_risk_sqrt(tau)
    out = (1e4 * (np.asarray(rate_pct, dtype=np.float64) / 100.0) * TWO_THIRDS
           * (np.asarray(vol_pct, dtype=np.float64) / 100.0)) * sq
    return float(out) if np.ndim(out) == 0 else out


def gbm_asset_term(slope, vol_pct, tau):
    """Asset-return GBM term; ``slope`` stays in daily log units."""
    sq = _path_risk_sqrt(tau)
    out = (1e4 * np.asarray(slope, dtype=np.float64) * TWO_THIRDS
           * (np.asarray(vol_pct, dtype=np.float64) / 100.0)) * sq
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# maturity bins and daily aggregation
# --------------------------------------------------------------------------

def month_bin(months: float) -> str:
    if not months >= 1.0:
        raise DataError(f"maturity {months:.4g} months is below the 1-month floor")
    i = int(np.searchsorted(BIN_EDGES, months, side="right")) - 1
    return BIN_LABELS[i]


def tau_bin(tau: float) -> str:
    return month_bin(tau * 12.0)


def tau_bins(tau) -> np.ndarray:
    """Vectorised :func:`tau_bin`; rows below one month map to ''."""
    m = np.asarray(tau, dtype=np.float64) * 12.0
    i = np.searchsorted(BIN_EDGES, m, side="right") - 1
    labels = np.array(("",) + BIN_LABELS, dtype=object)
    return labels[np.where(m >= 1.0, i + 1, 0)]


def aggregate_daily(observations: Iterable[CarryObservation], name: str = "cg_bp") -> DailySeries:
    """Median carry gap per date (mean of the middle two for even counts)."""
    by_date: dict[int, list[float]] = {}
    for o in observations:
        by_date.setdefault(o.date, []).append(o.cg_bp)
    days = sorted(by_date)
    vals = [float(np.median(np.sort(by_date[d]))) for d in days]
    return DailySeries(name, np.array(days, dtype=np.int64), np.array(vals), Unit.INDEX_POINTS)


# --------------------------------------------------------------------------
# panel assembly
# --------------------------------------------------------------------------

def asset_column(asset: str, window: int, fx_neutral: bool = False) -> str:
    return f"gbm_{asset.lower()}{'_fxn' if fx_neutral else ''}_{int(window)}"


BASE_COLUMNS = ["market", "date", "expiry", "year", "tau", "cg_bp", "gbm_ois_1y", "gbm_ois_10y",
                "ba_over_tau", "nfci", "vol", "ois_1y_pct", "ois_10y_pct", "ba_med_atm", "b_hat", "d_ois"]


def assemble_panel(observations: Sequence[CarryObservation], ois_quotes: Mapping[int, OisQuoteSet],
                   vol: DailySeries, nfci: DailySeries, slopes: Mapping[str, SlopeSeries] | None = None,
                   market: str | None = None, regressor_lag: int = 0) -> tuple[pd.DataFrame, Counter]:
    """Join carry observations with every regressor, one row per (date, expiry).

    ``slopes`` maps an output column name (see :func:`asset_column`) to
    the slope series behind it.  Vol and NFCI are taken ``regressor_lag``
    market trading days earlier (0 = same day).  Rows with any missing
    regressor are dropped and counted in the returned Counter.
    """
    obs = [o for o in observations if market is None or o.market == market]
    dropped: Counter = Counter()
    if not obs:
        return pd.DataFrame(columns=BASE_COLUMNS + list(slopes or {})), dropped
    obs.sort(key=lambda o: (o.market, o.date, o.expiry))
    df = pd.DataFrame({
        "market": [o.market for o in obs],
        "date": np.array([o.date for o in obs], dtype=np.int64),
        "expiry": np.array([o.expiry for o in obs], dtype=np.int64),
        "tau": [o.tau for o in obs],
        "cg_bp": [o.cg_bp for o in obs],
        "ba_med_atm": [o.ba_med_atm for o in obs],
        "b_hat": [o.b_hat for o in obs],
        "d_ois": [o.d_ois for o in obs],
    })
    dates = df["date"].to_numpy()
    cal = np.unique(dates)
    pos = np.searchsorted(cal, dates)
    src = np.where(pos - regressor_lag >= 0, cal[np.clip(pos - regressor_lag, 0, None)], -1)
    has_src = src >= 0

    vi = np.searchsorted(vol.dates, src)
    vi_c = np.clip(vi, 0, max(len(vol) - 1, 0))
    vol_ok = has_src & (vi < len(vol)) & (vol.dates[vi_c] == src) if len(vol) else np.zeros(len(df), bool)
    df["vol"] = np.where(vol_ok, vol.values[vi_c] if len(vol) else np.nan, np.nan)

    ni = np.searchsorted(nfci.dates, src, side="right") - 1
    nfci_ok = has_src & (ni >= 0)
    df["nfci"] = np.where(nfci_ok, nfci.values[np.clip(ni, 0, None)], np.nan)

    r1_cal = np.full(cal.size, np.nan)
    r10_cal = np.full(cal.size, np.nan)
    for i, d in enumerate(cal):
        qs = ois_quotes.get(int(d))
        if qs is not None:
            a, b = qs.rate_at(1.0), qs.rate_at(10.0)
            r1_cal[i] = np.nan if a is None else a
            r10_cal[i] = np.nan if b is None else b
    r1, r10 = r1_cal[pos], r10_cal[pos]
    df["ois_1y_pct"] = r1
    df["ois_10y_pct"] = r10
    tau = df["tau"].to_numpy()
    df["gbm_ois_1y"] = gbm_ois_term(r1, df["vol"].to_numpy(), tau)
    df["gbm_ois_10y"] = gbm_ois_term(r10, df["vol"].to_numpy(), tau)
    df["ba_over_tau"] = df["ba_med_atm"].to_numpy() / tau
    for col, ss in (slopes or {}).items():
        df[col] = gbm_asset_term(ss.at(dates), df["vol"].to_numpy(), tau)
    years = {int(d): date.fromordinal(int(d)).year for d in cal}
    df.insert(3, "year", np.array([years[int(d)] for d in dates], dtype=np.int64))

    checks = {"vol_missing": "vol", "nfci_missing": "nfci", "ois_missing": "gbm_ois_1y", "ois10_missing": "gbm_ois_10y"}
    bad = np.zeros(len(df), dtype=bool)
    for reason, col in checks.items():
        miss = ~np.isfinite(df[col].to_numpy()) & ~bad
        dropped[reason] += int(miss.sum())
        bad |= miss
    for col in (slopes or {}):
        miss = ~np.isfinite(df[col].to_numpy()) & ~bad
        dropped["slope_missing"] += int(miss.sum())
        bad |= miss
    miss = ~np.isfinite(df[["cg_bp", "ba_over_tau"]].to_numpy()).all(axis=1) & ~bad
    dropped["non_finite"] += int(miss.sum())
    bad |= miss
    df = df.loc[~bad].reset_index(drop=True)
    return df[BASE_COLUMNS + list(slopes or {})], +dropped


class PanelBuilder:
    """Adds asset GBM columns for arbitrary windows to a base panel.

    Slope series are cached per (asset, window, fx_neutral), so horizon
    searches only pay for each window once.
    """

    def __init__(self, base: pd.DataFrame, prices: Mapping[str, DailySeries],
                 dollar_index: DailySeries | None = None):
        self.base = base.reset_index(drop=True)
        self.prices = dict(prices)
        self.dollar_index = dollar_index
        self._fxn: dict[str, DailySeries] = {}
        self._slopes: dict[tuple[str, int, bool], SlopeSeries] = {}
        self._terms: dict[tuple[str, int, bool], np.ndarray] = {}
        self._dates = self.base["date"].to_numpy(dtype=np.int64)
        self._scale = None

    def _series(self, asset: str, fx_neutral: bool) -> DailySeries:
        if asset not in self.prices:
            raise DataError(f"no price series for asset {asset}")
        if not fx_neutral:
            return self.prices[asset]
        if self.dollar_index is None:
            raise DataError("FX neutralisation requested but no dollar index supplied")
        if asset not in self._fxn:
            self._fxn[asset] = fx_neutralize(self.prices[asset], self.dollar_index)
        return self._fxn[asset]

    def slope(self, asset: str, window: int, fx_neutral: bool = False) -> SlopeSeries:
        key = (asset, int(window), bool(fx_neutral))
        if key not in self._slopes:
            self._slopes[key] = slope_series(self._series(asset, fx_neutral), int(window), asset)
        return self._slopes[key]

    def path_risk_scale(self) -> np.ndarray:
        """Per-row multiplier turning a daily slope into its GBM term."""
        if self._scale is None:
            self._scale = gbm_asset_term(np.ones(len(self.base)), self.base["vol"].to_numpy(),
                                         self.base["tau"].to_numpy())
        return self._scale

    def asset_term(self, asset: str, window: int, fx_neutral: bool = False) -> np.ndarray:
        key = (asset, int(window), bool(fx_neutral))
        if key not in self._terms:
            s = self.slope(asset, window, fx_neutral).at(self._dates)
            self._terms[key] = gbm_asset_term(s, self.base["vol"].to_numpy(), self.base["tau"].to_numpy())
        return self._terms[key]

    def history(self, asset: str, fx_neutral: bool = False) -> int:
        """Observations available strictly before the first panel date."""
        if not len(self.base):
            return 0
        s = self._series(asset, fx_neutral)
        return int(np.searchsorted(s.dates, self._dates.min(), side="left"))

    def panel(self, windows: Mapping[str, int] | None = None, fx_neutral: bool = False,
              dropna: bool = True) -> pd.DataFrame:
        df = self.base.copy()
        for asset, n in (windows or {}).items():
            df[asset_column(asset, n, fx_neutral)] = self.asset_term(asset, n, fx_neutral)
        if dropna and windows:
            cols = [asset_column(a, n, fx_neutral) for a, n in windows.items()]
            df = df.loc[np.isfinite(df[cols].to_numpy()).all(axis=1)].reset_index(drop=True)
        return df
