"""
OIS discount curve bootstrap, log-linear interpolation and the carry gap.

Conventions (fixed, not inferred from data):

* tenors are ACT/365 year fractions;
* quotes with tenor <= 1y are single-payment: ``D = 1 / (1 + r * tau)``;
* longer swaps pay an annual fixed leg scheduled backward from maturity,
  first period a stub;
* between pillars, ``ln D`` is linear in ``tau`` and ``(0, 1)`` anchors
  the short end.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import BootstrapError, DataError, NumericalError
from .market_data import fmt_float, to_iso, to_ordinal

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.0
OIS_COLUMNS = ("date", "tenor", "par_rate_pct")


def year_fraction(start: int, end: int) -> float:
    return (end - start) / DAYS_PER_YEAR


@dataclass(frozen=True)
class OisQuoteSet:
    date: int
    tenors: np.ndarray
    par_rates: np.ndarray  # percent per annum

    def __post_init__(self):
        t = np.asarray(self.tenors, dtype=np.float64)
        r = np.asarray(self.par_rates, dtype=np.float64)
        if t.shape != r.shape or t.ndim != 1 or t.size == 0:
            raise DataError("tenors and par_rates must be non-empty 1-D arrays of equal length")
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise DataError(f"OIS tenors must be positive and strictly increasing: {t.tolist()}")
        if not np.all(np.isfinite(r)):
            raise DataError("non-finite OIS par rate")
        object.__setattr__(self, "tenors", t)
        object.__setattr__(self, "par_rates", r)

    def rate_at(self, tenor: float) -> float | None:
        hit = np.flatnonzero(np.isclose(self.tenors, tenor, rtol=0, atol=1e-9))
        return float(self.par_rates[hit[0]]) if hit.size else None


@dataclass(frozen=True)
class DiscountCurve:
    date: int
    pillar_taus: np.ndarray
    pillar_dfs: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.pillar_taus, dtype=np.float64)
        d = np.asarray(self.pillar_dfs, dtype=np.float64)
        if t.shape != d.shape or t.size == 0:
            raise DataError("pillar arrays must be non-empty and equally long")
        if np.any(d <= 0) or d[0] > 1.1:
            raise BootstrapError(f"anomalous discount factors on {to_iso(self.date)}: {d.tolist()}")
        object.__setattr__(self, "pillar_taus", t)
        object.__setattr__(self, "pillar_dfs", d)

    def discount(self, tau):
        return discount_at(self, tau)

    def zero_rates_pct(self) -> np.ndarray:
        """Continuously compounded zero rates at the pillars, in percent."""
        return -100.0 * np.log(self.pillar_dfs) / self.pillar_taus


def _loglinear(taus, log_dfs, t):
    # (0, ln 1) anchors the short end
    return np.interp(t, np.concatenate(([0.0], taus)), np.concatenate(([0.0], log_dfs)))


def bootstrap(quotes: OisQuoteSet, fixed_freq: float = 1.0) -> DiscountCurve:
    """Strip par OIS rates into pillar discount factors.

    Swap pillars solve ``r * sum(alpha_k * D(t_k)) = 1 - D(T)``.  Fixed-leg
    dates beyond the last solved pillar are log-linear between that pillar
    and the unknown ``D(T)``, so the pillar is found by a 1-D root search;
    when every earlier fixed date is already a pillar this reduces to the
    closed form ``D(T) = (1 - r * sum_{k<n} alpha_k D_k) / (1 + r * alpha_n)``.
    """
    taus = quotes.tenors
    rates = quotes.par_rates / 100.0
    if taus[0] > 1.0 + 1e-12:
        raise BootstrapError(f"{to_iso(quotes.date)}: need at least one pillar <= 1y")
    period = 1.0 / fixed_freq
    known_t: list[float] = []
    known_ld: list[float] = []
    for tau, r in zip(taus, rates):
        if tau <= 1.0 + 1e-12:
            den = 1.0 + r * tau
            if den <= 0.0:
                raise BootstrapError(f"{to_iso(quotes.date)}: rate {r:.4%} gives non-positive denominator at {tau}y")
            known_t.append(tau)
            known_ld.append(np.log(1.0 / den))
            continue
        # backward schedule; the first period may be a stub
        n_per = int(np.ceil(tau / period - 1e-9))
        pay = np.array([tau - period * k for k in range(n_per - 1, -1, -1)])
        pay[np.abs(pay) < 1e-12] = 0.0
        pay = pay[pay > 0.0]
        alpha = np.diff(np.concatenate(([0.0], pay)))
        last_t = known_t[-1]
        last_ld = known_ld[-1]
        early = pay[:-1] <= last_t + 1e-12
        ld_early = _loglinear(np.array(known_t), np.array(known_ld), pay[:-1][early])
        fixed_known = float(alpha[:-1][early] @ np.exp(ld_early))
        t_gap = pay[:-1][~early]
        a_gap = alpha[:-1][~early]
        a_n = alpha[-1]
        if t_gap.size == 0:
            den = 1.0 + r * a_n
            if den <= 0.0:
                raise BootstrapError(f"{to_iso(quotes.date)}: non-positive denominator at {tau}y")
            d_n = (1.0 - r * fixed_known) / den
            if d_n <= 0.0:
                raise BootstrapError(f"{to_iso(quotes.date)}: non-positive discount factor at {tau}y")
            ld_n = np.log(d_n)
        else:
            w = (t_gap - last_t) / (tau - last_t)

            def par_gap(ld):
                d_gap = np.exp(last_ld + w * (ld - last_ld))
                return r * (fixed_known + a_gap @ d_gap + a_n * np.exp(ld)) - 1.0 + np.exp(ld)

            lo, hi = -10.0, 2.0
            try:
                ld_n = brentq(par_gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
            except ValueError:
                raise BootstrapError(f"{to_iso(quotes.date)}: no root for {tau}y pillar") from None
        known_t.append(float(tau))
        known_ld.append(float(ld_n))
    dfs = np.exp(np.array(known_ld))
    return DiscountCurve(quotes.date, np.array(known_t), dfs)


def discount_at(curve: DiscountCurve, tau):
    """Log-linear discount factor; exact pillar values at pillar tenors."""
    t = np.asarray(tau, dtype=np.float64)
    if np.any(t <= 0.0):
        raise NumericalError("tau must be positive")
    last = curve.pillar_taus[-1]
    if np.any(t > last * (1 + 1e-12)):
        raise NumericalError(f"tau beyond last pillar {last}y: extrapolation not supported")
    out = np.exp(_loglinear(curve.pillar_taus, np.log(curve.pillar_dfs), t))
    pos = np.clip(np.searchsorted(curve.pillar_taus, t), 0, curve.pillar_taus.size - 1)
    hit = curve.pillar_taus[pos] == t
    out = np.where(hit, curve.pillar_dfs[pos], out)
    return float(out) if out.ndim == 0 else out


def carry_gap_bp(d_ois, b_hat, tau):
    """Annualised log wedge ``1e4 / tau * ln(d_ois / b_hat)`` in basis points."""
    d = np.asarray(d_ois, dtype=np.float64)
    b = np.asarray(b_hat, dtype=np.float64)
    t = np.asarray(tau, dtype=np.float64)
    if np.any(d <= 0) or np.any(b <= 0) or np.any(t <= 0):
        raise NumericalError("carry gap needs positive discount factors and tau")
    # symmetric form keeps carry_gap_bp(a, b) == -carry_gap_bp(b, a) bit for bit
    out = 1e4 * (0.5 * (np.log(d / b) - np.log(b / d))) / t
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CarryObservation:
    market: str
    date: int
    expiry: int
    tau: float
    b_hat: float
    f_hat: float
    n_strikes: int
    flatness_rmse: float
    ba_med_atm: float
    d_ois: float
    cg_bp: float


def load_ois_quotes(path) -> dict[int, OisQuoteSet]:
    """Read the long-format OIS file ``date,tenor,par_rate_pct``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"OIS file not found: {path}")
    rows: dict[int, list[tuple[float, float]]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != OIS_COLUMNS:
            raise DataError(f"{path}: malformed header {header!r}, expected {list(OIS_COLUMNS)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                d, tenor, rate = to_ordinal(row[0]), float(row[1]), float(row[2])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: cannot parse {row!r}") from None
            rows.setdefault(d, []).append((tenor, rate))
    out = {}
    for d in sorted(rows):
        pts = sorted(rows[d])
        out[d] = OisQuoteSet(d, np.array([p[0] for p in pts]), np.array([p[1] for p in pts]))
    return out


def write_ois_quotes(path, quote_sets) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OIS_COLUMNS)
        for qs in quote_sets:
            for t, r in zip(qs.tenors, qs.par_rates):
                w.writerow((to_iso(qs.date), fmt_float(t), fmt_float(r)))


def bootstrap_all(quote_sets: dict[int, OisQuoteSet],
                  fixed_freq: float = 1.0) -> tuple[dict[int, DiscountCurve], list[int]]:
    """Bootstrap every date; dates that fail are returned separately."""
    curves, failed = {}, []
    for d, qs in quote_sets.items():
        try:
            curves[d] = bootstrap(qs, fixed_freq)
        except (BootstrapError, DataError) as exc:
            logger.warning("dropping OIS date %s: %s", to_iso(d), exc)
            failed.append(d)
    return curves, failed
