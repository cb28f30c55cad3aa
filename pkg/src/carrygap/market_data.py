"""
Loading, validation and calendar alignment of the raw input series.

Dates are ISO-8601 strings on disk and proleptic-Gregorian ordinals
(``datetime.date.toordinal``) in memory.  Missing observations are
represented by absent rows, never by NaN.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

QUOTE_COLUMNS = ("market", "quote_date", "expiry", "strike", "right", "bid", "ask")
SERIES_COLUMNS = ("date", "value")


class Market(str, Enum):
    SPX = "SPX"
    RUT = "RUT"


class Right(str, Enum):
    CALL = "C"
    PUT = "P"


class Unit(str, Enum):
    PRICE_LEVEL = "price_level"
    PERCENT_RATE = "percent_rate"
    INDEX_POINTS = "index_points"
    INDEX_LEVEL = "index_level"


def to_ordinal(value) -> int:
    """Accept an ISO string, ``date`` or ordinal and return the ordinal."""
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, date):
        return value.toordinal()
    return date.fromisoformat(str(value).strip()).toordinal()


@lru_cache(maxsize=65536)
def _iso(ordinal: int) -> str:
    return date.fromordinal(ordinal).isoformat()


def to_iso(ordinal: int) -> str:
    return _iso(int(ordinal))


def fmt_float(x: float) -> str:
    # repr round-trips exactly through float()
    return repr(float(x))


@dataclass(frozen=True, slots=True)
class OptionQuote:
    market: Market
    quote_date: int
    expiry: int
    strike: float
    right: Right
    bid: float
    ask: float

    def __post_init__(self):
        if not (self.ask >= self.bid >= 0.0):
            raise DataError(f"quote violates ask >= bid >= 0: bid={self.bid}, ask={self.ask}")
        if self.expiry <= self.quote_date:
            raise DataError("expiry must be after quote_date")
        if not self.strike > 0.0:
            raise DataError(f"strike must be positive, got {self.strike}")

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)

    @property
    def spread(self) -> float:
        return self.ask - self.bid


@dataclass
class QuoteLoad:
    """Quotes accepted from one file plus rejection bookkeeping."""

    quotes: list[OptionQuote]
    n_rows: int
    n_rejected: int
    reject_reasons: Counter = field(default_factory=Counter)

    def __len__(self) -> int:
        return len(self.quotes)

    def __iter__(self) -> Iterator[OptionQuote]:
        return iter(self.quotes)

    def __getitem__(self, i):
        return self.quotes[i]


@dataclass(frozen=True)
class DailySeries:
    name: str
    dates: np.ndarray
    values: np.ndarray
    unit: Unit = Unit.INDEX_LEVEL

    def __post_init__(self):
        d = np.asarray(self.dates, dtype=np.int64)
        v = np.asarray(self.values, dtype=np.float64)
        if d.ndim != 1 or d.shape != v.shape:
            raise DataError(f"{self.name}: dates and values must be 1-D and equally long")
        if d.size > 1 and np.any(np.diff(d) <= 0):
            raise DataError(f"{self.name}: dates must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise DataError(f"{self.name}: non-finite value")
        object.__setattr__(self, "dates", d)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "unit", Unit(self.unit))

    def __len__(self) -> int:
        return int(self.dates.size)

    def value_on(self, day) -> float | None:
        d = to_ordinal(day)
        i = np.searchsorted(self.dates, d)
        if i < self.dates.size and self.dates[i] == d:
            return float(self.values[i])
        return None


@dataclass(frozen=True)
class TradingCalendar:
    market: str
    dates: np.ndarray

    def __post_init__(self):
        d = np.unique(np.asarray(self.dates, dtype=np.int64))
        object.__setattr__(self, "dates", d)

    @classmethod
    def from_quotes(cls, quotes: Iterable[OptionQuote], market: Market | str | None = None) -> "TradingCalendar":
        quotes = list(quotes)
        if market is None:
            market = quotes[0].market if quotes else ""
        name = getattr(market, "value", market)
        days = [q.quote_date for q in quotes if q.market.value == name]
        return cls(name, np.array(days, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.dates.size)


def _read_header(reader, path, expected):
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    header = [h.strip() for h in header]
    if tuple(header) != tuple(expected):
        raise DataError(f"{path}: malformed header {header!r}, expected {list(expected)!r}")


def load_option_quotes(path, market: Market | str) -> QuoteLoad:
    """Read an option-quote CSV, keeping every row that parses and validates.

    Rows for another market, unparseable rows and invariant violations
    (for example ``ask < bid``) are rejected and counted, not raised.
    """
    path = Path(path)
    market = Market(market)
    if not path.is_file():
        raise DataError(f"option quote file not found: {path}")
    quotes: list[OptionQuote] = []
    reasons: Counter = Counter()
    n_rows = 0
    date_cache: dict[str, int] = {}

    def parse_date(s):
        d = date_cache.get(s)
        if d is None:
            d = date_cache[s] = date.fromisoformat(s).toordinal()
        return d

    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _read_header(reader, path, QUOTE_COLUMNS)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            n_rows += 1
            if len(row) != len(QUOTE_COLUMNS):
                reasons["field_count"] += 1
                continue
            mkt, qd, ex, k, right, bid, ask = row
            if mkt != market.value:
                reasons["other_market"] += 1
                continue
            try:
                bid_f, ask_f = float(bid), float(ask)
                rec = (parse_date(qd), parse_date(ex), float(k), Right(right), bid_f, ask_f)
            except ValueError:
                reasons["unparseable"] += 1
                continue
            if not all(math.isfinite(x) for x in (rec[2], bid_f, ask_f)):
                reasons["non_finite"] += 1
                continue
            if ask_f < bid_f:
                reasons["ask_below_bid"] += 1
                continue
            try:
                quotes.append(OptionQuote(market, *rec))
            except DataError:
                reasons["invariant"] += 1
    n_rej = sum(reasons.values())
    logger.info("%s: %d rows, %d accepted, %d rejected", path.name, n_rows, len(quotes), n_rej)
    return QuoteLoad(quotes, n_rows, n_rej, reasons)


def write_option_quotes(path, quotes: Iterable[OptionQuote]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(QUOTE_COLUMNS)
        for q in quotes:
            w.writerow((q.market.value, to_iso(q.quote_date), to_iso(q.expiry), fmt_float(q.strike),
                        q.right.value, fmt_float(q.bid), fmt_float(q.ask)))


def load_series(path, unit: Unit | str, name: str | None = None) -> DailySeries:
    """Read a two-column ``date,value`` CSV into a :class:`DailySeries`."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"series file not found: {path}")
    days, vals = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _read_header(reader, path, SERIES_COLUMNS)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                days.append(to_ordinal(row[0]))
                vals.append(float(row[1]))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: cannot parse {row!r}") from None
            if not math.isfinite(vals[-1]):
                raise DataError(f"{path}:{lineno}: non-finite value")
    if not days:
        raise DataError(f"{path}: no observations")
    d = np.array(days, dtype=np.int64)
    v = np.array(vals, dtype=np.float64)
    order = np.argsort(d, kind="stable")
    d, v = d[order], v[order]
    dup = np.flatnonzero(np.diff(d) == 0)
    if dup.size:
        raise DataError(f"{path}: duplicate date {to_iso(d[dup[0]])}")
    return DailySeries(name or path.stem, d, v, Unit(unit))


def write_series(path, series: DailySeries) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for d, v in zip(series.dates, series.values):
            w.writerow((to_iso(d), fmt_float(v)))


def align_forward_fill(series: DailySeries, calendar: TradingCalendar | Sequence[int] | np.ndarray) -> DailySeries:
    """Carry the latest observation at or before each calendar date."""
    cal = calendar.dates if isinstance(calendar, TradingCalendar) else np.unique(np.asarray(calendar, dtype=np.int64))
    if cal.size == 0:
        return DailySeries(series.name, cal, np.empty(0), series.unit)
    idx = np.searchsorted(series.dates, cal, side="right") - 1
    if idx[0] < 0:
        raise DataError(f"{series.name}: calendar date {to_iso(cal[0])} precedes first observation "
                        f"{to_iso(series.dates[0]) if len(series) else 'n/a'}")
    return DailySeries(series.name, cal, series.values[idx], series.unit)
