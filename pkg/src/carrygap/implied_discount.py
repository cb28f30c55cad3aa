"""
Option-implied discount factors from put-call parity.

For a matched call/put pair the synthetic forward ``C - P`` is linear in
strike with slope ``-B``.  Fitting that line across the strike
cross-section gives the discount factor that makes the recovered forward
``(C - P) / B + K`` flat in strike.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, IdentificationError
from .market_data import OptionQuote, Right

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class ParityPair:
    strike: float
    call_mid: float
    put_mid: float
    call_spread: float
    put_spread: float

    @property
    def synthetic_forward(self) -> float:
        return self.call_mid - self.put_mid


@dataclass(frozen=True)
class IdentificationResult:
    b_hat: float
    f_hat: float
    n_strikes: int
    flatness_rmse: float
    ba_med_atm: float = float("nan")
    b_se: float = float("nan")


@dataclass(frozen=True)
class CleaningConfig:
    min_strikes: int = 5
    min_mid_price: float = 0.05
    max_rel_spread: float = 0.5

    def __post_init__(self):
        if self.min_strikes < 3:
            raise ConfigError("min_strikes must be >= 3")
        if not 0.0 < self.max_rel_spread <= 1.0:
            raise ConfigError("max_rel_spread must lie in (0, 1]")
        if self.min_mid_price < 0:
            raise ConfigError("min_mid_price must be non-negative")


def build_pairs(quotes: Iterable[OptionQuote], counter: Counter | None = None) -> list[ParityPair]:
    """Match calls and puts on strike; one pair per strike with both legs.

    Strikes with only one leg are dropped.  If ``counter`` is given, the
    number of unmatched strikes and duplicate quotes are added to it.
    """
    calls: dict[float, OptionQuote] = {}
    puts: dict[float, OptionQuote] = {}
    dups = 0
    for q in quotes:
        book = calls if q.right is Right.CALL else puts
        if q.strike in book:
            dups += 1
            continue
        book[q.strike] = q
    common = sorted(calls.keys() & puts.keys())
    if counter is not None:
        counter["unmatched_strikes"] += len(calls.keys() ^ puts.keys())
        counter["duplicate_quotes"] += dups
    pairs = []
    for k in common:
        c, p = calls[k], puts[k]
        pairs.append(ParityPair(k, 0.5 * (c.bid + c.ask), 0.5 * (p.bid + p.ask),
                                c.ask - c.bid, p.ask - p.bid))
    return pairs


def clean_pairs(pairs: Sequence[ParityPair], cfg: CleaningConfig = CleaningConfig()) -> list[ParityPair]:
    out = []
    for p in pairs:
        if min(p.call_mid, p.put_mid) < cfg.min_mid_price:
            continue
        if p.call_spread > cfg.max_rel_spread * p.call_mid or p.put_spread > cfg.max_rel_spread * p.put_mid:
            continue
        out.append(p)
    return out if len(out) >= cfg.min_strikes else []


def identify_discount(pairs: Sequence[ParityPair]) -> IdentificationResult:
    """Least-squares line of synthetic forward on strike.

    Returns ``b_hat = -slope`` and ``f_hat = intercept / b_hat``, evaluated
    in centred form for accuracy.  ``ba_med_atm`` is left unset; see
    :func:`median_atm_spread`.

    Raises
    ------
    IdentificationError
        Fewer than three pairs, no strike dispersion, or a non-negative
        slope (an arbitrage-violating chain).
    """
    n = len(pairs)
    if n < 3:
        raise IdentificationError(f"need at least 3 pairs, got {n}")
    k = np.fromiter((p.strike for p in pairs), dtype=np.float64, count=n)
    g = np.fromiter((p.call_mid - p.put_mid for p in pairs), dtype=np.float64, count=n)
    k_bar = k.mean()
    g_bar = g.mean()
    dk = k - k_bar
    sxx = dk @ dk
    if not sxx > 0.0:
        raise IdentificationError("degenerate strike cross-section (all strikes equal)")
    slope = (dk @ (g - g_bar)) / sxx
    if slope >= 0.0:
        raise IdentificationError(f"non-negative parity slope {slope:.6g}: implied discount factor <= 0")
    b_hat = -slope
    f_hat = k_bar + g_bar / b_hat
    resid = g - (g_bar + slope * dk)
    s2 = (resid @ resid) / (n - 2)
    b_se = float(np.sqrt(s2 / sxx))
    flat = g / b_hat + k - f_hat
    rmse = float(np.sqrt(np.mean(flat * flat)))
    return IdentificationResult(float(b_hat), float(f_hat), n, rmse, b_se=b_se)


def median_atm_spread(pairs: Sequence[ParityPair], f_hat: float, atm_band: float = 0.025) -> float:
    """Median call/put bid-ask spread over pairs within ``atm_band`` moneyness.

    Falls back to the pair whose strike is nearest ``f_hat`` when no pair
    lies inside the band.
    """
    if not pairs:
        raise IdentificationError("no pairs for ATM spread")
    if not f_hat > 0:
        raise IdentificationError(f"f_hat must be positive, got {f_hat}")
    atm = [p for p in pairs if abs(p.strike / f_hat - 1.0) <= atm_band]
    if not atm:
        atm = [min(pairs, key=lambda p: (abs(p.strike - f_hat), p.strike))]
    spreads = [s for p in atm for s in (p.call_spread, p.put_spread)]
    return float(np.median(spreads))


def identify_chain(quotes: Sequence[OptionQuote], cfg: CleaningConfig = CleaningConfig(),
                   atm_band: float = 0.025, counter: Counter | None = None) -> IdentificationResult | None:
    """Pair, clean and identify one (market, date, expiry) chain.

    Returns None when cleaning leaves too few strikes.
    """
    pairs = clean_pairs(build_pairs(quotes, counter), cfg)
    if not pairs:
        if counter is not None:
            counter["too_few_strikes"] += 1
        return None
    res = identify_discount(pairs)
    ba = median_atm_spread(pairs, res.f_hat, atm_band)
    return IdentificationResult(res.b_hat, res.f_hat, res.n_strikes, res.flatness_rmse, ba, res.b_se)
