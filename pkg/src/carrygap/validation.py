"""
Out-of-sample and horizon-selection machinery.

* :func:`loyo` - leave-one-year-out evaluation of a fixed specification;
* :func:`bin_fit_report` - full-sample fits compared within maturity bins;
* :func:`horizon_scan` - incremental R2 of one asset term across windows;
* :func:`nested_horizon_search` - per-fold window selection (grid search
  then hill-climb) evaluated on the held-out year.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .econometrics import COND_LIMIT, Specification, design_matrix, fit_metrics, ols_fit
from .errors import DataError, NumericalError, RankDeficiencyError
from .features import PanelBuilder, asset_column, tau_bins, BIN_LABELS

logger = logging.getLogger(__name__)

MIN_YEAR_ROWS = 50
DEFAULT_BOUNDS = {"IEFA": (20, 130), "IGOV": (120, 550), "IAU": (120, 550)}
DEFAULT_STEPS = {"IEFA": 7, "IGOV": 21, "IAU": 21}
DEFAULT_START = {"IEFA": 70, "IGOV": 441, "IAU": 315}


@dataclass
class YearScore:
    year: int
    n_obs: int
    oos_r2: float
    rmse_bp: float
    corr: float
    sse: float
    sum_y: float
    sum_y2: float


@dataclass
class CvReport:
    spec_name: str
    market: str
    per_year: dict[int, YearScore]
    mean_r2: float
    median_r2: float
    pooled_r2: float
    mean_rmse_bp: float
    mean_corr: float
    years_positive: int
    sst_pooled: float
    skipped: dict[int, str] = field(default_factory=dict)
    fold_coefficients: dict[int, dict[str, float]] = field(default_factory=dict)

    @property
    def n_years(self) -> int:
        return len(self.per_year)

    def pooled_from_years(self) -> float:
        """Pooled R2 rebuilt from per-year RMSE and sample sizes."""
        sse = sum(s.n_obs * s.rmse_bp ** 2 for s in self.per_year.values())
        return 1.0 - sse / self.sst_pooled


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - a.mean(), b - b.mean()
    den = np.sqrt((da @ da) * (db @ db))
    return float(da @ db / den) if den > 0 else float("nan")


def score_year(year: int, actual: np.ndarray, pred: np.ndarray) -> YearScore:
    e = actual - pred
    sse = float(e @ e)
    d = actual - actual.mean()
    sst = float(d @ d)
    r2 = 1.0 - sse / sst if sst > 0 else float("nan")
    return YearScore(int(year), int(actual.size), r2, float(np.sqrt(sse / actual.size)),
                     _pearson(actual, pred), sse, float(actual.sum()), float(actual @ actual))


def summarize(spec_name: str, market: str, scores: Sequence[YearScore],
              skipped: Mapping[int, str] | None = None) -> CvReport:
    per_year = {s.year: s for s in sorted(scores, key=lambda s: s.year)}
    r2s = np.array([s.oos_r2 for s in per_year.values() if np.isfinite(s.oos_r2)])
    n = sum(s.n_obs for s in per_year.values())
    sy = sum(s.sum_y for s in per_year.values())
    sy2 = sum(s.sum_y2 for s in per_year.values())
    sst = sy2 - sy * sy / n if n else float("nan")
    sse = sum(s.sse for s in per_year.values())
    corrs = np.array([s.corr for s in per_year.values() if np.isfinite(s.corr)])
    return CvReport(
        spec_name, market, per_year,
        mean_r2=float(r2s.mean()) if r2s.size else float("nan"),
        median_r2=float(np.median(r2s)) if r2s.size else float("nan"),
        pooled_r2=1.0 - sse / sst if n and sst > 0 else float("nan"),
        mean_rmse_bp=float(np.mean([s.rmse_bp for s in per_year.values()])) if per_year else float("nan"),
        mean_corr=float(corrs.mean()) if corrs.size else float("nan"),
        years_positive=int((r2s > 0).sum()),
        sst_pooled=float(sst),
        skipped=dict(skipped or {}),
    )


def eligible_years(panel: pd.DataFrame, years: Sequence[int] | None = None,
                   min_rows: int = MIN_YEAR_ROWS) -> tuple[list[int], dict[int, str]]:
    counts = panel["year"].value_counts()
    cand = sorted(int(y) for y in (years if years is not None else counts.index))
    keep, skipped = [], {}
    for y in cand:
        n = int(counts.get(y, 0))
        if n < max(min_rows, 3):
            skipped[y] = f"{n} rows"
        else:
            keep.append(y)
    return keep, skipped


def loyo(panel: pd.DataFrame, spec: Specification, years: Sequence[int] | None = None,
         market: str = "", min_rows: int = MIN_YEAR_ROWS) -> CvReport:
    """Leave-one-year-out evaluation.

    Years below ``min_rows`` rows are never held out (their rows still
    train the other folds) and are listed in ``skipped``.  Out-of-sample R2
    is centred on the holdout year's own mean; the pooled figure uses the
    mean of all stacked holdout actuals.
    """
    keep, skipped = eligible_years(panel, years, min_rows)
    if len(keep) < 2:
        raise DataError(f"LOYO needs at least 2 eligible years, got {keep}")
    yr = panel["year"].to_numpy()
    y_all = panel["cg_bp"].to_numpy(dtype=np.float64)
    scores, coefs = [], {}
    for y in keep:
        test = yr == y
        fit = ols_fit(panel.loc[~test], spec, market)
        pred = fit.predict(panel.loc[test])
        scores.append(score_year(y, y_all[test], pred))
        coefs[y] = fit.coefficients
    rep = summarize(spec.name, market, scores, skipped)
    rep.fold_coefficients = coefs
    return rep


def bin_fit_report(panel: pd.DataFrame, spec_a: Specification, spec_b: Specification,
                   market: str = "") -> tuple[pd.DataFrame, list[str]]:
    """Fit both specs once on the whole panel, then score residuals by maturity bin.

    Bins with fewer than two rows are omitted and returned in the list.
    """
    fa = ols_fit(panel, spec_a, market)
    fb = ols_fit(panel, spec_b, market)
    y = panel["cg_bp"].to_numpy(dtype=np.float64)
    bins = tau_bins(panel["tau"].to_numpy())
    rows, omitted = [], []
    for lab in BIN_LABELS:
        m = bins == lab
        if m.sum() < 2:
            omitted.append(lab)
            continue
        ma = fit_metrics(y[m], fa.fitted[m], 0)
        mb = fit_metrics(y[m], fb.fitted[m], 0)
        rows.append({
            "market": market, "bin": lab, "n_obs": int(m.sum()),
            "r2_a": ma["r2"], "r2_b": mb["r2"], "delta_r2": mb["r2"] - ma["r2"],
            "rmse_a": ma["rmse_bp"], "rmse_b": mb["rmse_bp"], "delta_rmse": mb["rmse_bp"] - ma["rmse_bp"],
            "mae_a": ma["mae_bp"], "mae_b": mb["mae_bp"], "delta_mae": mb["mae_bp"] - ma["mae_bp"],
        })
    return pd.DataFrame(rows), omitted


# --------------------------------------------------------------------------
# horizon scans
# --------------------------------------------------------------------------

@dataclass
class HorizonScan:
    asset: str
    windows: list[int]
    delta_r2: dict[tuple[str, int], float]
    baseline_r2: dict[str, float]
    dropped: list[int] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        rows = [{"asset": self.asset, "window": n, "market": m, "delta_r2": v}
                for (m, n), v in sorted(self.delta_r2.items(), key=lambda kv: (kv[0][1], kv[0][0]))]
        return pd.DataFrame(rows, columns=["asset", "window", "market", "delta_r2"])


def horizon_scan(builder: PanelBuilder, asset: str, windows: Sequence[int], baseline_spec: Specification,
                 markets: Sequence[str] | None = None, fx_neutral: bool = False) -> HorizonScan:
    """Incremental R2 of ``baseline + gbm(asset, n)`` over the baseline, per window.

    Every window is scored on the same rows (those where the longest
    retained window is computable), so the baseline R2 is shared.
    """
    hist = builder.history(asset, fx_neutral)
    keep = sorted({int(n) for n in windows if 2 <= int(n) <= hist})
    dropped = sorted({int(n) for n in windows} - set(keep))
    if dropped:
        logger.warning("%s: windows %s exceed available history (%d obs)", asset, dropped, hist)
    base = builder.base
    markets = list(markets) if markets is not None else sorted(base["market"].unique())
    out: dict[tuple[str, int], float] = {}
    base_r2: dict[str, float] = {}
    if not keep:
        return HorizonScan(asset, keep, out, base_r2, dropped)
    sample = np.isfinite(builder.asset_term(asset, keep[-1], fx_neutral))
    for m in markets:
        rows = sample & (base["market"].to_numpy() == m)
        sub = base.loc[rows].copy()
        r0 = ols_fit(sub, baseline_spec, m).r2
        base_r2[m] = r0
        for n in keep:
            col = asset_column(asset, n, fx_neutral)
            sub[col] = builder.asset_term(asset, n, fx_neutral)[rows]
            spec = Specification(f"{baseline_spec.name}+{col}", baseline_spec.regressors + (col,))
            try:
                out[(m, n)] = ols_fit(sub, spec, m).r2 - r0
            except RankDeficiencyError:
                out[(m, n)] = 0.0
            del sub[col]
    return HorizonScan(asset, keep, out, base_r2, dropped)


# --------------------------------------------------------------------------
# nested horizon selection
# --------------------------------------------------------------------------

@dataclass
class HorizonSelection:
    fold_year: int | None
    selected: dict[str, int]
    objective_value: float
    trace: list[tuple[tuple[int, ...], float]]
    converged: bool
    hit_boundary: bool
    n_evaluated: int = 0
    n_skipped: int = 0
    grid_best: tuple[int, ...] = ()


class _MarketObjective:
    """In-sample R2 of ``base + asset terms`` on fixed rows, many candidates at once.

    Works on centred cross-products so each candidate costs one small
    linear solve.
    """

    def __init__(self, builder: PanelBuilder, rows: np.ndarray, base_cols: Sequence[str],
                 assets: Sequence[str], fx_neutral: bool):
        self.builder = builder
        self.rows = rows
        self.assets = list(assets)
        self.fx = fx_neutral
        y = builder.base["cg_bp"].to_numpy(dtype=np.float64)[rows]
        self.yc = y - y.mean()
        self.yy = float(self.yc @ self.yc)
        Z = builder.base[list(base_cols)].to_numpy(dtype=np.float64)[rows]
        self.Zc = Z - Z.mean(axis=0)
        self._cols: dict[tuple[int, int], np.ndarray] = {}

    def _col(self, j: int, n: int) -> np.ndarray:
        key = (j, n)
        if key not in self._cols:
            c = self.builder.asset_term(self.assets[j], n, self.fx)[self.rows]
            self._cols[key] = c - c.mean()
        return self._cols[key]

    def __call__(self, candidates: Sequence[tuple[int, ...]]) -> np.ndarray:
        keys = sorted({(j, c[j]) for c in candidates for j in range(len(self.assets))})
        C = np.column_stack([self.Zc] + [self._col(j, n) for j, n in keys])
        M = C.T @ C
        v = C.T @ self.yc
        p0 = self.Zc.shape[1]
        pos = {k: p0 + i for i, k in enumerate(keys)}
        idx = np.array([list(range(p0)) + [pos[(j, c[j])] for j in range(len(self.assets))] for c in candidates])
        G = M[idx[:, :, None], idx[:, None, :]]
        b = v[idx]
        d = np.sqrt(np.einsum("kii->ki", G))
        out = np.full(len(candidates), np.nan)
        ok = np.all(d > 0, axis=1)
        Gn = G[ok] / (d[ok][:, :, None] * d[ok][:, None, :])
        bn = b[ok] / d[ok]
        ev = np.linalg.eigvalsh(Gn)
        well = ev[:, 0] > ev[:, -1] / COND_LIMIT ** 2
        beta = np.linalg.solve(Gn[well], bn[well][..., None])[..., 0]
        r2 = np.einsum("ki,ki->k", bn[well], beta) / self.yy
        sub = np.full(int(ok.sum()), np.nan)
        sub[well] = r2
        out[ok] = sub
        return out


def _grid(start: int, lo: int, hi: int, step: int) -> list[int]:
    """Grid points ``start + k * step`` inside ``[lo, hi]``."""
    if step <= 0:
        raise DataError("grid step must be positive")
    below = range(start, lo - 1, -step)
    above = range(start + step, hi + 1, step)
    return sorted(set(x for x in itertools.chain(below, above) if lo <= x <= hi))


def select_horizons(builder: PanelBuilder, rows: np.ndarray, *, markets: Sequence[str],
                    base_cols: Sequence[str], start: Mapping[str, int],
                    bounds: Mapping[str, tuple[int, int]], grid_steps: Mapping[str, int],
                    hill_step: int = 1, max_iter: int = 1000, tol: float = 1e-12,
                    fx_neutral: bool = False, fold_year: int | None = None) -> HorizonSelection:
    """Maximise the equal-weighted in-sample R2 across markets over asset windows.

    Stage one scores the full Cartesian grid ``start + k * step`` within
    bounds.  Stage two hill-climbs from the grid optimum over single-asset
    moves of ``hill_step``, accepting the best strictly improving move
    until none improves.  Ties favour the start, then lexicographic order.
    """
    assets = list(start)
    mkt = builder.base["market"].to_numpy()
    objs = [_MarketObjective(builder, rows & (mkt == m), base_cols, assets, fx_neutral) for m in markets]
    n_eval = n_skip = 0

    def evaluate(cands):
        nonlocal n_eval, n_skip
        vals = np.mean([o(cands) for o in objs], axis=0)
        n_eval += len(cands)
        bad = ~np.isfinite(vals)
        if bad.any():
            n_skip += int(bad.sum())
            logger.info("skipped %d rank-deficient candidates", int(bad.sum()))
        return np.where(bad, -np.inf, vals)

    s0 = tuple(int(start[a]) for a in assets)
    grids = [_grid(int(start[a]), *map(int, bounds[a]), int(grid_steps[a])) for a in assets]
    cands = sorted(itertools.product(*grids))
    vals = evaluate(cands)
    best_val = float(vals.max())
    if not np.isfinite(best_val):
        raise NumericalError("objective undefined at every grid point")
    s0_val = float(vals[cands.index(s0)]) if s0 in cands else -np.inf
    if s0_val >= best_val - tol:
        cur, cur_val = s0, s0_val
    else:
        i = next(i for i, v in enumerate(vals) if v >= best_val - tol)
        cur, cur_val = cands[i], float(vals[i])
    grid_best = cur
    trace = [(cur, cur_val)]
    converged = False
    for _ in range(max_iter):
        moves = []
        for j, a in enumerate(assets):
            lo, hi = bounds[a]
            for dlt in (-hill_step, hill_step):
                w = cur[j] + dlt
                if lo <= w <= hi:
                    moves.append(cur[:j] + (w,) + cur[j + 1:])
        if not moves:
            converged = True
            break
        moves.sort()
        mv = evaluate(moves)
        k = int(np.argmax(mv))
        if mv[k] > cur_val + tol:
            cur, cur_val = moves[k], float(mv[k])
            trace.append((cur, cur_val))
        else:
            converged = True
            break
    hit = any(cur[j] in (bounds[a][0], bounds[a][1]) for j, a in enumerate(assets))
    return HorizonSelection(fold_year, dict(zip(assets, cur)), cur_val, trace, converged, hit,
                            n_eval, n_skip, grid_best)


@dataclass
class NestedReport:
    selections: list[HorizonSelection]
    yearly: pd.DataFrame
    reports: dict[tuple[str, str], CvReport]     # (market, "base"|"3etf")
    summary: pd.DataFrame
    full_sample: HorizonSelection | None = None
    fold_coefficients: dict[tuple[int, str, str], dict[str, float]] = field(default_factory=dict)


def nested_horizon_search(builder: PanelBuilder, folds: Sequence[int] | None = None, *,
                          start: Mapping[str, int] = DEFAULT_START,
                          bounds: Mapping[str, tuple[int, int]] = DEFAULT_BOUNDS,
                          grid_steps: Mapping[str, int] = DEFAULT_STEPS,
                          baseline_spec: Specification,
                          extended_base: Sequence[str] = ("gbm_ois_1y", "ba_over_tau", "nfci"),
                          markets: Sequence[str] = ("SPX", "RUT"),
                          hill_step: int = 1, max_iter: int = 1000, tol: float = 1e-12,
                          fx_neutral: bool = False, min_rows: int = MIN_YEAR_ROWS,
                          jobs: int = 1, full_sample: bool = False) -> NestedReport:
    """Nested LOYO: windows chosen on training years only, scored on the holdout.

    All candidates share one sample: rows where every asset term is
    computable at its upper bound.
    """
    assets = list(start)
    base = builder.base
    for a in assets:
        if bounds[a][1] > builder.history(a, fx_neutral):
            raise DataError(f"{a}: upper bound {bounds[a][1]} exceeds history {builder.history(a, fx_neutral)}")
    sample = np.ones(len(base), dtype=bool)
    for a in assets:
        sample &= np.isfinite(builder.asset_term(a, bounds[a][1], fx_neutral))
    yr = base["year"].to_numpy()
    mkt = base["market"].to_numpy()
    years_ok = None
    for m in markets:
        keep, _ = eligible_years(base.loc[sample & (mkt == m)], folds, min_rows)
        years_ok = set(keep) if years_ok is None else years_ok & set(keep)
    years = sorted(years_ok or [])
    if len(years) < 2:
        raise DataError(f"nested search needs at least 2 eligible years, got {years}")
    ext_spec_cols = list(extended_base)

    def run_fold(y):
        train = sample & (yr != y)
        sel = select_horizons(builder, train, markets=markets, base_cols=ext_spec_cols, start=start,
                              bounds=bounds, grid_steps=grid_steps, hill_step=hill_step, max_iter=max_iter,
                              tol=tol, fx_neutral=fx_neutral, fold_year=y)
        cols = [asset_column(a, n, fx_neutral) for a, n in sel.selected.items()]
        ext = Specification("3etf_nested", tuple(ext_spec_cols[:1]) + tuple(cols) + tuple(ext_spec_cols[1:]))
        panel = builder.panel(sel.selected, fx_neutral, dropna=False)
        scores, coefs = {}, {}
        for m in markets:
            tr = panel.loc[train & (mkt == m)]
            te = panel.loc[sample & (yr == y) & (mkt == m)]
            actual = te["cg_bp"].to_numpy(dtype=np.float64)
            for tag, spec in (("base", baseline_spec), ("3etf", ext)):
                fit = ols_fit(tr, spec, m)
                scores[(m, tag)] = score_year(y, actual, fit.predict(te))
                coefs[(m, tag)] = fit.coefficients
        return sel, scores, coefs

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run_fold, years))
    else:
        results = [run_fold(y) for y in years]

    selections = [r[0] for r in results]
    reports = {}
    for m in markets:
        for tag in ("base", "3etf"):
            reports[(m, tag)] = summarize(f"nested_{tag}", m, [r[1][(m, tag)] for r in results])
    rows = []
    for sel, sc, _ in results:
        row = {"year": sel.fold_year}
        row.update({a.lower(): n for a, n in sel.selected.items()})
        for m in markets:
            row[f"{m.lower()}_base"] = sc[(m, "base")].oos_r2
            row[f"{m.lower()}_3etf"] = sc[(m, "3etf")].oos_r2
        row["ew_3etf"] = float(np.mean([sc[(m, "3etf")].oos_r2 for m in markets]))
        rows.append(row)
    yearly = pd.DataFrame(rows)
    summary = _nested_summary(yearly, reports, markets)
    fs = None
    if full_sample:
        fs = select_horizons(builder, sample, markets=markets, base_cols=ext_spec_cols, start=start,
                             bounds=bounds, grid_steps=grid_steps, hill_step=hill_step, max_iter=max_iter,
                             tol=tol, fx_neutral=fx_neutral, fold_year=None)
    fold_coefs = {(r[0].fold_year, m, tag): c for r in results for (m, tag), c in r[2].items()}
    return NestedReport(selections, yearly, reports, summary, fs, fold_coefs)


def _nested_summary(yearly: pd.DataFrame, reports, markets) -> pd.DataFrame:
    out = []
    for m in markets:
        b = yearly[f"{m.lower()}_base"].to_numpy()
        e = yearly[f"{m.lower()}_3etf"].to_numpy()
        out.append({"score": m, "mean_base": np.nanmean(b), "mean_3etf": np.nanmean(e),
                    "mean_delta": np.nanmean(e - b), "median_base": np.nanmedian(b),
                    "median_3etf": np.nanmedian(e), "positive_delta_years": int(np.sum(e - b > 0)),
                    "n_years": len(b), "pooled_base": reports[(m, "base")].pooled_r2,
                    "pooled_3etf": reports[(m, "3etf")].pooled_r2})
    b = np.mean([yearly[f"{m.lower()}_base"].to_numpy() for m in markets], axis=0)
    e = yearly["ew_3etf"].to_numpy()
    out.append({"score": "equal_weight", "mean_base": np.nanmean(b), "mean_3etf": np.nanmean(e),
                "mean_delta": np.nanmean(e - b), "median_base": np.nanmedian(b), "median_3etf": np.nanmedian(e),
                "positive_delta_years": int(np.sum(e - b > 0)), "n_years": len(b),
                "pooled_base": float("nan"), "pooled_3etf": float("nan")})
    return pd.DataFrame(out)
