"""
Synthetic markets with planted ground truth, plus brute-force reference
implementations used by the tests.

Every generator draws from ``numpy.random.Philox`` streams derived from a
single seed, so output files are a deterministic function of
``(seed, config)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .errors import ConfigError
from .features import TWO_THIRDS, asset_column, gbm_asset_term, gbm_ois_term, slope_series
from .market_data import (DailySeries, Market, OptionQuote, Right, Unit, fmt_float, to_iso,
                          write_option_quotes, write_series)
from .ois_curve import DAYS_PER_YEAR, OisQuoteSet, bootstrap, discount_at, write_ois_quotes

RNG_NAME = "numpy.random.Philox"
OIS_TENORS = (1.0 / 12.0, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0)
VOL_FILES = {"SPX": "vix.csv", "RUT": "rvx.csv"}

# (daily vol, drift sd per regime, start level)
ASSET_DYNAMICS = {
    "IEFA": (0.009, 0.0012, 65.0),
    "IGOV": (0.004, 0.0005, 50.0),
    "IAU": (0.008, 0.0008, 30.0),
    "VTI": (0.010, 0.0010, 150.0),
    "BND": (0.003, 0.0003, 80.0),
    "IEMG": (0.011, 0.0012, 50.0),
    "EBND": (0.005, 0.0005, 25.0),
}

DEFAULT_COEFFICIENTS = {
    "SPX": {"intercept": 20.0, "gbm_ois_1y": -0.5, "gbm_iefa_80": -8.0, "gbm_igov_320": 40.0,
            "gbm_iau_320": 15.0, "ba_over_tau": 2.0, "nfci": -30.0},
    "RUT": {"intercept": 14.0, "gbm_ois_1y": -0.4, "gbm_iefa_80": -7.0, "gbm_igov_320": 30.0,
            "gbm_iau_320": 20.0, "ba_over_tau": 1.5, "nfci": -45.0},
}


def _rng(seed_seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_seq))


# --------------------------------------------------------------------------
# option chains
# --------------------------------------------------------------------------

def gen_chain(b: float, f: float, strikes: Sequence[float], noise_scale: float, rng: np.random.Generator, *,
              market: Market | str = Market.SPX, quote_date: int | None = None, expiry: int | None = None,
              spread: float = 0.1, vol: float = 0.2) -> list[OptionQuote]:
    """Call/put quotes whose mids satisfy ``C - P = b (f - K) + eps``.

    ``eps`` is uniform on ``[-noise_scale, noise_scale]``.  Both legs share
    a smooth time-value cushion that keeps every mid above ``max(0.05,
    2 * spread)``, so default cleaning keeps every strike; the pair value is
    added to the in-the-money leg.
    """
    if not (b > 0 and f > 0):
        raise ConfigError("gen_chain needs b > 0 and f > 0")
    qd = date(2020, 1, 2).toordinal() if quote_date is None else int(quote_date)
    ex = qd + 91 if expiry is None else int(expiry)
    tau = (ex - qd) / DAYS_PER_YEAR
    k = np.asarray(strikes, dtype=np.float64)
    eps = rng.uniform(-noise_scale, noise_scale, k.size) if k.size else np.empty(0)
    sd = vol * math.sqrt(tau)
    z = np.log(k / f) / sd
    floor = max(0.05, 2.0 * spread) + 0.05 + noise_scale
    cushion = b * f * 0.4 * sd * np.exp(-0.5 * z * z) + floor
    g = b * (f - k) + eps
    call = cushion + np.maximum(g, 0.0)
    put = cushion + np.maximum(-g, 0.0)
    half = 0.5 * spread
    mkt = Market(market)
    out = []
    for kk, c, p in zip(k, call, put):
        out.append(OptionQuote(mkt, qd, ex, float(kk), Right.CALL, float(c - half), float(c + half)))
        out.append(OptionQuote(mkt, qd, ex, float(kk), Right.PUT, float(p - half), float(p + half)))
    return out


def chain_strikes(f: float, vol: float, tau: float, n: int, increment: float = 1.0) -> np.ndarray:
    """``n`` strikes spread in log-moneyness, rounded to ``increment``."""
    z = np.linspace(-1.8, 1.2, n)
    k = np.round(f * np.exp(z * vol * math.sqrt(tau)) / increment) * increment
    return np.unique(k[k > 0])


# --------------------------------------------------------------------------
# synthetic world
# --------------------------------------------------------------------------

@dataclass
class SynthWorldConfig:
    """Knobs of the synthetic world.

    ``planted_coefficients`` maps market -> regressor -> value (a flat
    regressor map applies to every market).  The implied discount factor
    is ``b = d_ois * exp(-cg * tau / 1e4)`` with ``cg`` the planted linear
    model plus Gaussian noise; the noise sd is ``noise_sd_bp`` or, when
    ``target_r2`` is set, chosen per market so the signal share of
    variance equals ``target_r2``.
    """

    seed: int = 20240611
    years: int = 10
    start_year: int = 2015
    markets: tuple[str, ...] = ("SPX", "RUT")
    strikes_per_chain: int = 10
    quote_noise: float = 0.0
    planted_coefficients: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_COEFFICIENTS)))
    planted_windows: dict = field(default_factory=lambda: {"IEFA": 80, "IGOV": 320, "IAU": 320})
    noise_sd_bp: float = 0.0
    target_r2: float | None = 0.40
    history_days: int = 600
    extra_assets: tuple[str, ...] = ("VTI", "BND", "IEMG", "EBND")
    holiday_rate: float = 0.01
    dollar_gap_rate: float = 0.03
    monthly_max_days: int = 100
    quarterly_max_days: int = 400
    december_max_days: int = 800
    min_days: int = 32

    def __post_init__(self):
        if self.years < 1:
            raise ConfigError("years must be >= 1")
        if self.strikes_per_chain < 5:
            raise ConfigError("strikes_per_chain must be >= 5 so chains survive cleaning")
        if self.target_r2 is not None and not 0.0 < self.target_r2 < 1.0:
            raise ConfigError("target_r2 must lie in (0, 1)")
        if self.noise_sd_bp < 0 or self.quote_noise < 0:
            raise ConfigError("noise scales must be non-negative")
        if not set(self.markets) <= {"SPX", "RUT"}:
            raise ConfigError(f"unknown market in {self.markets}")
        pc = self.planted_coefficients
        if pc and not all(isinstance(v, Mapping) for v in pc.values()):
            pc = {m: dict(pc) for m in self.markets}
        self.planted_coefficients = {m: dict(pc.get(m, {})) for m in self.markets}
        for a, n in self.planted_windows.items():
            if a not in ASSET_DYNAMICS:
                raise ConfigError(f"no dynamics for planted asset {a}")
            if n > self.history_days:
                raise ConfigError(f"planted window {a}={n} exceeds history_days={self.history_days}")
        known = {"intercept", "gbm_ois_1y", "gbm_ois_10y", "ba_over_tau", "nfci"}
        known |= {asset_column(a, n) for a, n in self.planted_windows.items()}
        for m, coefs in self.planted_coefficients.items():
            bad = sorted(set(coefs) - known)
            if bad:
                raise ConfigError(f"{m}: planted regressor(s) {bad} not generated; "
                                  f"asset terms must use planted windows")
        self.markets = tuple(self.markets)
        self.extra_assets = tuple(self.extra_assets)

    @property
    def assets(self) -> list[str]:
        return sorted(set(self.planted_windows) | {"IEFA", "IGOV", "IAU"} | set(self.extra_assets))


def _business_days(start: date, end: date) -> np.ndarray:
    d0, d1 = start.toordinal(), end.toordinal()
    days = np.arange(d0, d1 + 1, dtype=np.int64)
    # ordinal 1 (0001-01-01) is a Monday
    return days[(days - 1) % 7 < 5]


def _drop(days: np.ndarray, rate: float, rng: np.random.Generator, keep_first: bool = True) -> np.ndarray:
    keep = rng.random(days.size) >= rate
    if keep_first and days.size:
        keep[0] = True
    return days[keep]


def _third_fridays(y0: int, y1: int) -> list[date]:
    out = []
    for y in range(y0, y1 + 1):
        for m in range(1, 13):
            d = date(y, m, 15)
            out.append(d + timedelta(days=(4 - d.weekday()) % 7))
    return out


def _expiries(day: int, fridays: list[date], cfg: SynthWorldConfig) -> list[int]:
    out = []
    for f in fridays:
        dd = f.toordinal() - day
        if dd < cfg.min_days:
            continue
        if (dd <= cfg.monthly_max_days or (f.month % 3 == 0 and dd <= cfg.quarterly_max_days)
                or (f.month == 12 and dd <= cfg.december_max_days)):
            out.append(f.toordinal())
    return out


def _ou(n: int, x0: float, mean: float, kappa: float, sd: float, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = x0
    for i in range(1, n):
        x[i] = x[i - 1] + kappa * (mean - x[i - 1]) + sd * z[i]
    return x


def _asset_path(days: np.ndarray, daily_vol: float, drift_sd: float, p0: float,
                rng: np.random.Generator) -> np.ndarray:
    n = days.size
    mu = np.empty(n)
    i = 0
    while i < n:
        length = int(rng.integers(40, 260))
        mu[i:i + length] = rng.normal(0.0, drift_sd)
        i += length
    r = mu + daily_vol * rng.standard_normal(n)
    r[0] = 0.0
    return p0 * np.exp(np.cumsum(r))


@dataclass
class SynthWorld:
    """In-memory result of :func:`gen_world`."""

    out_dir: Path
    manifest: dict
    expected: dict            # market -> dict of column arrays


def gen_world(cfg: SynthWorldConfig, out_dir) -> SynthWorld:
    """Write a complete input file set plus a ground-truth manifest.

    Files (relative to ``out_dir``): ``quotes_<MKT>.csv``, ``ois.csv``,
    ``vix.csv``/``rvx.csv``, ``nfci.csv``, ``dollar.csv``,
    ``prices/<ASSET>.csv``, ``expected_cg.csv``, ``manifest.json`` and a
    ready-to-run ``config.yaml``.
    """
    out = Path(out_dir)
    (out / "prices").mkdir(parents=True, exist_ok=True)
    streams = dict(zip(
        ["calendar", "ois", "vol", "nfci", "dollar", "index", "spread", "noise", "chains"] + cfg.assets,
        np.random.SeedSequence(cfg.seed).spawn(9 + len(cfg.assets))))

    first = date(cfg.start_year, 1, 1)
    last = date(cfg.start_year + cfg.years - 1, 12, 31)
    rc = _rng(streams["calendar"])
    opt_days = _drop(_business_days(first, last), cfg.holiday_rate, rc)
    pre = _business_days(first - timedelta(days=int(cfg.history_days * 1.6) + 30), first - timedelta(days=1))
    asset_days = _drop(np.concatenate([pre, _business_days(first, last)]), cfg.holiday_rate, rc)
    n_pre = int(np.searchsorted(asset_days, opt_days[0]))
    if n_pre < cfg.history_days:
        asset_days = np.concatenate([pre[:cfg.history_days - n_pre], asset_days])
        asset_days = np.unique(asset_days)

    # OIS par curves on every option date
    ro = _rng(streams["ois"])
    T = opt_days.size
    level = _ou(T, 1.5, 2.0, 0.004, 0.035, ro)
    slope = _ou(T, 1.0, 0.8, 0.004, 0.025, ro)
    curv = _ou(T, 0.0, 0.0, 0.01, 0.01, ro)
    ten = np.array(OIS_TENORS)
    shape = 1.0 - np.exp(-ten / 2.5)
    hump = (ten / 2.0) * np.exp(1.0 - ten / 2.0)
    par = level[:, None] + slope[:, None] * shape + curv[:, None] * hump
    ois = {int(d): OisQuoteSet(int(d), ten, par[i]) for i, d in enumerate(opt_days)}
    curves = {d: bootstrap(q) for d, q in ois.items()}
    write_ois_quotes(out / "ois.csv", [ois[d] for d in sorted(ois)])

    # volatility indices, NFCI, dollar index
    rv = _rng(streams["vol"])
    lv = _ou(T, math.log(17.0), math.log(18.0), 0.03, 0.06, rv)
    vix = np.exp(lv)
    rvx = vix * (1.18 + 0.04 * rv.standard_normal(T))
    vol = {"SPX": DailySeries("VIX", opt_days, vix, Unit.INDEX_LEVEL),
           "RUT": DailySeries("RVX", opt_days, rvx, Unit.INDEX_LEVEL)}
    for m, fname in VOL_FILES.items():
        write_series(out / fname, vol[m])

    rn = _rng(streams["nfci"])
    fr0 = first - timedelta(days=30)
    fridays = np.array([d for d in range(fr0.toordinal(), last.toordinal() + 1) if (d - 1) % 7 == 4], dtype=np.int64)
    nf = _ou(fridays.size, -0.4, -0.4, 0.03, 0.06, rn)
    nfci = DailySeries("NFCI", fridays, nf, Unit.INDEX_LEVEL)
    write_series(out / "nfci.csv", nfci)

    rd = _rng(streams["dollar"])
    dd = _drop(asset_days, cfg.dollar_gap_rate, rd)
    dollar = DailySeries("DTWEX", dd, 100.0 * np.exp(np.cumsum(0.003 * rd.standard_normal(dd.size))), Unit.INDEX_LEVEL)
    write_series(out / "dollar.csv", dollar)

    prices = {}
    for a in cfg.assets:
        vol_d, drift_sd, p0 = ASSET_DYNAMICS[a]
        px = _asset_path(asset_days, vol_d, drift_sd, p0, _rng(streams[a]))
        prices[a] = DailySeries(a, asset_days, px, Unit.PRICE_LEVEL)
        write_series(out / "prices" / f"{a}.csv", prices[a])

    slopes = {asset_column(a, n): slope_series(prices[a], n, a) for a, n in cfg.planted_windows.items()}
    nf_idx = np.searchsorted(nfci.dates, opt_days, side="right") - 1
    if nf_idx[0] < 0:
        raise ConfigError("NFCI must start before the first option date")
    nfci_on = dict(zip(opt_days.tolist(), nfci.values[nf_idx]))

    # per-row regressors and planted signal
    ri = _rng(streams["index"])
    rs = _rng(streams["spread"])
    third = _third_fridays(cfg.start_year, cfg.start_year + cfg.years + 3)
    rows: dict[str, dict[str, list]] = {}
    spot = {}
    for m in cfg.markets:
        s0, inc, ba0 = (2000.0, 5.0, 0.6) if m == "SPX" else (1200.0, 1.0, 0.35)
        v = vol[m].values / 100.0
        spot[m] = s0 * np.exp(np.cumsum(v / math.sqrt(252.0) * ri.standard_normal(T)))
        cols: dict[str, list] = {k: [] for k in ("date", "expiry", "tau", "d_ois", "forward", "spread", "vol",
                                                 "ois_1y_pct", "ois_10y_pct")}
        for i, d in enumerate(opt_days.tolist()):
            ex = np.array(_expiries(d, third, cfg), dtype=np.int64)
            tau = (ex - d) / DAYS_PER_YEAR
            r1, r10 = ois[d].rate_at(1.0), ois[d].rate_at(10.0)
            k = ex.size
            cols["date"].append(np.full(k, d))
            cols["expiry"].append(ex)
            cols["tau"].append(tau)
            cols["d_ois"].append(np.atleast_1d(discount_at(curves[d], tau)))
            cols["forward"].append(spot[m][i] * np.exp((r1 / 100.0 - 0.015) * tau))
            cols["spread"].append(ba0 * (vol[m].values[i] / 18.0) * np.exp(0.25 * rs.standard_normal(k)))
            cols["vol"].append(np.full(k, vol[m].values[i]))
            cols["ois_1y_pct"].append(np.full(k, r1))
            cols["ois_10y_pct"].append(np.full(k, r10))
        c = {k: np.concatenate(vv) for k, vv in cols.items()}
        c["gbm_ois_1y"] = gbm_ois_term(c["ois_1y_pct"], c["vol"], c["tau"])
        c["gbm_ois_10y"] = gbm_ois_term(c["ois_10y_pct"], c["vol"], c["tau"])
        c["ba_over_tau"] = c["spread"] / c["tau"]
        c["nfci"] = np.array([nfci_on[d] for d in c["date"].tolist()])
        for col, ss in slopes.items():
            c[col] = gbm_asset_term(ss.at(c["date"]), c["vol"], c["tau"])
        coefs = cfg.planted_coefficients[m]
        sig = np.full(c["tau"].size, float(coefs.get("intercept", 0.0)))
        for reg, beta in coefs.items():
            if reg != "intercept":
                sig = sig + beta * c[reg]
        c["expected_cg_bp"] = sig
        rows[m] = c

    rz = _rng(streams["noise"])
    noise_sd = {}
    for m in cfg.markets:
        c = rows[m]
        if cfg.target_r2 is not None:
            var_sig = float(np.var(c["expected_cg_bp"]))
            noise_sd[m] = math.sqrt(var_sig * (1.0 - cfg.target_r2) / cfg.target_r2) if var_sig > 0 else cfg.noise_sd_bp
        else:
            noise_sd[m] = cfg.noise_sd_bp
        c["noise_bp"] = rz.normal(0.0, 1.0, c["tau"].size) * noise_sd[m]
        c["cg_bp"] = c["expected_cg_bp"] + c["noise_bp"]
        c["b"] = c["d_ois"] * np.exp(-c["cg_bp"] * c["tau"] / 1e4)

    # quotes
    rq = _rng(streams["chains"])
    n_chains = {}
    for m in cfg.markets:
        c = rows[m]
        inc = 5.0 if m == "SPX" else 1.0
        quotes = []
        for j in range(c["tau"].size):
            ks = chain_strikes(c["forward"][j], c["vol"][j] / 100.0, c["tau"][j], cfg.strikes_per_chain, inc)
            quotes.extend(gen_chain(c["b"][j], c["forward"][j], ks, cfg.quote_noise, rq, market=m,
                                    quote_date=int(c["date"][j]), expiry=int(c["expiry"][j]),
                                    spread=float(c["spread"][j]), vol=c["vol"][j] / 100.0))
        write_option_quotes(out / f"quotes_{m}.csv", quotes)
        n_chains[m] = int(c["tau"].size)

    regs = sorted({r for m in cfg.markets for r in cfg.planted_coefficients[m] if r != "intercept"}
                  | {"gbm_ois_1y", "ba_over_tau", "nfci"} | set(slopes))
    exp_cols = ["market", "date", "expiry", "tau", "d_ois", "b", "spread"] + regs + ["expected_cg_bp", "noise_bp", "cg_bp"]
    with (out / "expected_cg.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(exp_cols)
        for m in cfg.markets:
            c = rows[m]
            for j in range(c["tau"].size):
                w.writerow([m, to_iso(c["date"][j]), to_iso(c["expiry"][j])]
                           + [fmt_float(c[k][j]) for k in exp_cols[3:]])

    files = {
        "quotes": {m: f"quotes_{m}.csv" for m in cfg.markets},
        "ois": "ois.csv",
        "vol": {m: VOL_FILES[m] for m in cfg.markets},
        "nfci": "nfci.csv",
        "dollar_index": "dollar.csv",
        "prices": {a: f"prices/{a}.csv" for a in cfg.assets},
        "expected_cg": "expected_cg.csv",
    }
    cfg_dict = asdict(cfg)
    manifest = {
        "seed": cfg.seed,
        "rng": RNG_NAME,
        "config": cfg_dict,
        "planted_coefficients": cfg.planted_coefficients,
        "planted_windows": cfg.planted_windows,
        "noise_sd_bp": noise_sd,
        "n_chains": n_chains,
        "n_option_dates": int(T),
        "files": files,
    }
    with (out / "manifest.json").open("w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    run_cfg = {
        "inputs": {k: v for k, v in files.items() if k != "expected_cg"},
        "windows": {"main": dict(cfg.planted_windows)},
        "seed": cfg.seed,
    }
    with (out / "config.yaml").open("w") as fh:
        yaml.safe_dump(run_cfg, fh, sort_keys=True)
    return SynthWorld(out, manifest, rows)


# --------------------------------------------------------------------------
# Brownian capital support
# --------------------------------------------------------------------------

# -zeta(1/2) / sqrt(2 pi): leading constant of the grid-maximum bias
GRID_MAX_BIAS = 0.5825971579390106


@dataclass(frozen=True)
class BrownianSupportEstimate:
    sigma: float
    horizon: float
    n_paths: int
    n_steps: int
    estimate: float
    std_error: float
    closed_form: float
    discretization_allowance: float


def closed_form_support(sigma: float, horizon: float) -> float:
    """Time-averaged expected support ``(2/3) sigma sqrt(2 T / pi)``."""
    return TWO_THIRDS * sigma * math.sqrt(2.0 * horizon / math.pi)


def _seed_sequence(rng) -> np.random.SeedSequence:
    if isinstance(rng, np.random.Generator):
        return np.random.SeedSequence(int(rng.integers(0, 2 ** 63)))
    if isinstance(rng, np.random.SeedSequence):
        return rng
    return np.random.SeedSequence(int(rng))


def _unit_support_paths(n_paths: int, n_steps: int, ss: np.random.SeedSequence, chunk_paths: int) -> np.ndarray:
    """Per-path trapezoid average of the running support of a unit-step random walk."""
    n_chunks = -(-n_paths // chunk_paths)
    vals = np.empty(n_paths)
    for c, child in enumerate(ss.spawn(n_chunks)):
        lo = c * chunk_paths
        m = min(chunk_paths, n_paths - lo)
        g = _rng(child)
        # running max of -B, which is the running support of B in sd units
        w = np.cumsum(g.standard_normal((m, n_steps)), axis=1)
        np.negative(w, out=w)
        np.maximum.accumulate(w, axis=1, out=w)
        np.maximum(w, 0.0, out=w)
        vals[lo:lo + m] = (w[:, :-1].sum(axis=1) + 0.5 * w[:, -1]) / n_steps
    return vals


def _estimate(unit: np.ndarray, sigma: float, horizon: float, n_steps: int) -> BrownianSupportEstimate:
    dt = horizon / n_steps
    vals = unit * (sigma * math.sqrt(dt))
    return BrownianSupportEstimate(
        sigma, horizon, unit.size, n_steps,
        estimate=float(vals.mean()),
        std_error=float(vals.std(ddof=1) / math.sqrt(unit.size)),
        closed_form=closed_form_support(sigma, horizon),
        discretization_allowance=GRID_MAX_BIAS * sigma * math.sqrt(dt),
    )


def mc_expected_support(sigma: float, horizon: float, n_paths: int = 100_000, n_steps: int = 2_000,
                        rng=0, chunk_paths: int = 2_000) -> BrownianSupportEstimate:
    """Monte-Carlo estimate of the time-averaged running support of ``X = sigma B``.

    Each path gives ``(1/T) int_0^T sup_{s<=t} (-X_s)^+ dt`` by the
    trapezoid rule on a uniform grid.  Paths are simulated in chunks, each
    chunk with its own Philox substream spawned from ``rng`` (an integer
    seed, a ``SeedSequence`` or a ``Generator`` that supplies one).

    The grid maximum of a Brownian path sits below the continuous one by
    about ``0.5826 sigma sqrt(dt)``; that bound is returned as
    ``discretization_allowance``.
    """
    if sigma < 0 or horizon <= 0 or n_paths < 2 or n_steps < 1:
        raise ConfigError("need sigma >= 0, horizon > 0, n_paths >= 2, n_steps >= 1")
    unit = _unit_support_paths(n_paths, n_steps, _seed_sequence(rng), chunk_paths)
    return _estimate(unit, sigma, horizon, n_steps)


def mc_support_table(sigmas: Sequence[float], horizons: Sequence[float], n_paths: int = 100_000,
                     n_steps: int = 2_000, rng=0, chunk_paths: int = 2_000) -> list[BrownianSupportEstimate]:
    """``mc_expected_support`` over a sigma x horizon grid.

    One independent simulation per horizon; the sigmas at that horizon
    share its paths (``X = sigma B`` is exactly linear in sigma).
    """
    if any(s < 0 for s in sigmas) or any(h <= 0 for h in horizons) or n_paths < 2 or n_steps < 1:
        raise ConfigError("need sigma >= 0, horizon > 0, n_paths >= 2, n_steps >= 1")
    out = []
    for h, child in zip(horizons, _seed_sequence(rng).spawn(len(horizons))):
        unit = _unit_support_paths(n_paths, n_steps, child, chunk_paths)
        out.extend(_estimate(unit, s, h, n_steps) for s in sigmas)
    return out


# --------------------------------------------------------------------------
# brute-force references
# --------------------------------------------------------------------------

def brute_hac(design, residuals, dates, lag: int = 21) -> np.ndarray:
    """Date-clustered Newey-West covariance by the direct double sum.

    ``Omega = sum_s sum_t w(|s - t|) S_s S_t'`` over the ordered distinct
    dates with Bartlett weights, sandwiched by ``inv(X'X)``.  Quadratic in
    the number of dates; meant for tests only.
    """
    X = np.asarray(design, dtype=np.float64)
    e = np.asarray(residuals, dtype=np.float64)
    dates = np.asarray(dates)
    uniq = sorted(set(dates.tolist()))
    if len(uniq) < lag + 2:
        raise ConfigError(f"need at least lag+2={lag + 2} distinct dates")
    where = {d: i for i, d in enumerate(uniq)}
    S = np.zeros((len(uniq), X.shape[1]))
    for i in range(X.shape[0]):
        S[where[dates[i].item() if hasattr(dates[i], "item") else dates[i]]] += X[i] * e[i]
    idx = np.arange(len(uniq))
    gap = np.abs(idx[:, None] - idx[None, :])
    W = np.where(gap <= lag, 1.0 - gap / (lag + 1.0), 0.0)
    omega = S.T @ W @ S
    bread = np.linalg.inv(X.T @ X)
    return bread @ omega @ bread


def brute_median(values: Sequence[float]) -> float:
    """Median by exhaustive rank counting (mean of the middle two for even n)."""
    v = list(values)
    n = len(v)
    if n == 0:
        raise ConfigError("median of empty sequence")
    order = sorted(range(n), key=lambda i: (v[i], i))
    ranked = [v[i] for i in order]
    return ranked[n // 2] if n % 2 else 0.5 * (ranked[n // 2 - 1] + ranked[n // 2])
