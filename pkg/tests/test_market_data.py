from collections import Counter
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from carrygap.errors import DataError
from carrygap.market_data import (DailySeries, Market, OptionQuote, Right, TradingCalendar, Unit,
                                  align_forward_fill, load_option_quotes, load_series, to_iso, to_ordinal,
                                  write_option_quotes, write_series)

D0 = date(2021, 3, 1).toordinal()


def _quote(**kw):
    base = dict(market=Market.SPX, quote_date=D0, expiry=D0 + 30, strike=4000.0, right=Right.CALL,
                bid=10.0, ask=10.5)
    base.update(kw)
    return OptionQuote(**base)


def test_quote_mid_and_spread():
    q = _quote(bid=1.0, ask=1.5)
    assert q.mid == 1.25
    assert q.spread == 0.5


@pytest.mark.parametrize("kw", [dict(bid=2.0, ask=1.0), dict(bid=-0.1, ask=1.0),
                                dict(expiry=D0), dict(strike=0.0)])
def test_quote_invariants(kw):
    with pytest.raises(DataError):
        _quote(**kw)


def test_date_helpers_round_trip():
    assert to_iso(to_ordinal("2020-02-29")) == "2020-02-29"
    assert to_ordinal(date(2020, 1, 1)) == date(2020, 1, 1).toordinal()
    assert to_ordinal(np.int64(737425)) == 737425


def test_quote_file_round_trip(tmp_path):
    quotes = [_quote(strike=k, right=r, bid=b, ask=b + 0.1)
              for k, b in [(3900.0, 101.3), (4000.0, 33.1 / 3)] for r in (Right.CALL, Right.PUT)]
    path = tmp_path / "q.csv"
    write_option_quotes(path, quotes)
    back = load_option_quotes(path, "SPX")
    assert back.quotes == quotes
    assert back.n_rows == 4 and back.n_rejected == 0


def test_quote_loader_counts_rejections(tmp_path):
    path = tmp_path / "q.csv"
    path.write_text(
        "market,quote_date,expiry,strike,right,bid,ask\n"
        "SPX,2021-03-01,2021-04-16,4000,C,10,11\n"
        "SPX,2021-03-01,2021-04-16,4000,P,12,11\n"        # ask < bid
        "RUT,2021-03-01,2021-04-16,2000,C,10,11\n"        # other market
        "SPX,2021-03-01,2021-04-16,4000,X,10,11\n"        # bad right
        "SPX,2021-03-01,2021-04-16,nan,C,10,11\n"         # non-finite
        "SPX,2021-03-01,2021-04-16,4000,C,10\n"           # short row
        "SPX,2021-03-01,2021-03-01,4000,C,10,11\n"        # expiry == date
        "\n"
    )
    load = load_option_quotes(path, Market.SPX)
    assert len(load) == 1
    assert load.n_rows == 7
    assert load.reject_reasons == Counter(ask_below_bid=1, other_market=1, unparseable=1, non_finite=1,
                                          field_count=1, invariant=1)
    assert load.n_rejected == 6


def test_quote_loader_errors(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_option_quotes(tmp_path / "missing.csv", "SPX")
    bad = tmp_path / "bad.csv"
    bad.write_text("market,date,expiry,strike,right,bid,ask\n")
    with pytest.raises(DataError, match="header"):
        load_option_quotes(bad, "SPX")


def test_series_sorted_and_validated(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("date,value\n2021-01-05,2.0\n2021-01-04,1.0\n")
    s = load_series(p, Unit.PERCENT_RATE)
    assert_array_equal(s.values, [1.0, 2.0])
    assert s.unit is Unit.PERCENT_RATE
    assert s.value_on("2021-01-05") == 2.0
    assert s.value_on("2021-01-06") is None

    p.write_text("date,value\n2021-01-05,2.0\n2021-01-05,1.0\n")
    with pytest.raises(DataError, match="duplicate"):
        load_series(p, "percent_rate")
    p.write_text("date,value\n")
    with pytest.raises(DataError, match="no observations"):
        load_series(p, "percent_rate")
    p.write_text("date,value\n2021-01-05,inf\n")
    with pytest.raises(DataError, match="non-finite"):
        load_series(p, "percent_rate")
    p.write_text("date,value\n2021-01-05,abc\n")
    with pytest.raises(DataError, match=r"s\.csv:2"):
        load_series(p, "percent_rate")


def test_series_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(3)
    s = DailySeries("X", D0 + np.arange(50) * 2, rng.standard_normal(50) / 7.0, Unit.INDEX_LEVEL)
    write_series(tmp_path / "x.csv", s)
    back = load_series(tmp_path / "x.csv", Unit.INDEX_LEVEL, "X")
    assert_array_equal(back.dates, s.dates)
    assert_array_equal(back.values, s.values)


def test_series_rejects_unsorted_dates():
    with pytest.raises(DataError):
        DailySeries("X", [3, 2], [1.0, 1.0])


def test_calendar_from_quotes():
    qs = [_quote(quote_date=D0 + 2), _quote(quote_date=D0), _quote(quote_date=D0 + 2),
          _quote(market=Market.RUT, quote_date=D0 + 5)]
    cal = TradingCalendar.from_quotes(qs, "SPX")
    assert_array_equal(cal.dates, [D0, D0 + 2])
    assert len(TradingCalendar.from_quotes(qs, Market.RUT)) == 1


def test_forward_fill_before_first_observation():
    s = DailySeries("NFCI", [10, 17], [0.1, 0.2])
    with pytest.raises(DataError, match="precedes"):
        align_forward_fill(s, [9, 10])


@settings(max_examples=60, deadline=None)
@given(st.sets(st.integers(0, 200), min_size=1, max_size=40),
       st.sets(st.integers(0, 250), min_size=1, max_size=60))
def test_forward_fill_matches_manual_scan(obs_days, cal_days):
    obs = sorted(obs_days)
    cal = sorted(d for d in cal_days if d >= obs[0])
    if not cal:
        return
    s = DailySeries("X", obs, np.arange(len(obs), dtype=float) * 1.5)
    out = align_forward_fill(s, cal)
    expected = []
    for d in cal:
        last = None
        for o, v in zip(obs, s.values):
            if o <= d:
                last = v
        expected.append(last)
    assert_array_equal(out.values, expected)
    assert_array_equal(out.dates, cal)
