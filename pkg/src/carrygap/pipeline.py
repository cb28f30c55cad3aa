"""
Run configuration, input loading and the report-producing steps behind the
command-line interface.

Reports are CSV files preceded by a ``# key = value`` block holding the
resolved configuration, so a result file always carries its assumptions.
"""

from __future__ import annotations

import copy
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd
import yaml

from .econometrics import (HAC_LAG, Specification, ols_fit, pca_slopes, residualize,
                           rotate_regressor_block)
from .errors import CarryGapError, ConfigError, DataError, IdentificationError
from .features import (BIN_LABELS, EM_WINDOWS, MAIN_WINDOWS, US_WINDOWS, PanelBuilder, aggregate_daily,
                       asset_column, assemble_panel, gbm_asset_term)
from .implied_discount import CleaningConfig, identify_chain
from .market_data import DailySeries, Unit, load_option_quotes, load_series, to_iso
from .ois_curve import (CarryObservation, DiscountCurve, OisQuoteSet, bootstrap_all, carry_gap_bp, discount_at,
                        load_ois_quotes, year_fraction)
from .validation import (DEFAULT_BOUNDS, DEFAULT_START, DEFAULT_STEPS, bin_fit_report, horizon_scan, loyo,
                         nested_horizon_search)

logger = logging.getLogger(__name__)

# run-environment keys that must not change report bytes
HEADER_SKIP = {"synth", "jobs", "output"}

BASELINE = ("gbm_ois_1y", "gbm_ois_10y", "ba_over_tau", "nfci")
EXTENDED_BASE = ("gbm_ois_1y", "ba_over_tau", "nfci")

DEFAULTS: dict[str, Any] = {
    "inputs": {"quotes": {}, "ois": None, "vol": {}, "nfci": None, "dollar_index": None, "prices": {}},
    "markets": ["SPX", "RUT"],
    "cleaning": {"min_strikes": 5, "min_mid_price": 0.05, "max_rel_spread": 0.5},
    "atm_band": 0.025,
    "day_count": "ACT/365",
    "ois": {"fixed_freq": 1},
    "regressor_lag": 0,
    "hac": {"lag": HAC_LAG, "mode": "date"},
    "specs": ["baseline", "main3etf"],
    "custom_specs": {},
    "windows": {"main": dict(MAIN_WINDOWS), "us_only": dict(US_WINDOWS), "emerging": dict(EM_WINDOWS)},
    "cv": {"years": None, "min_rows": 50},
    "scan": {"assets": ["IEFA", "IGOV", "IAU"], "start": 20, "stop": 550, "step": 10, "fx_neutral": False},
    "nested": {"start": dict(DEFAULT_START), "bounds": {k: list(v) for k, v in DEFAULT_BOUNDS.items()},
               "grid_steps": dict(DEFAULT_STEPS), "hill_step": 1, "max_iter": 1000, "tol": 1e-12,
               "fx_neutral": False, "full_sample": True},
    "pca": {"spec": "main3etf"},
    "bins": {"spec_a": "baseline", "spec_b": "main3etf"},
    "output": "out",
    "jobs": 1,
    "seed": 20240611,
    "synth": {},
}


# mappings whose keys are user data (assets, markets, names): replaced, not merged
REPLACE_PATHS = {"inputs.quotes", "inputs.vol", "inputs.prices", "windows.main", "windows.us_only",
                 "windows.emerging", "custom_specs", "nested.start", "nested.bounds", "nested.grid_steps", "synth"}


def _merge(base: dict, upd: Mapping, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        path = f"{prefix}{k}"
        if isinstance(v, Mapping) and isinstance(out.get(k), dict) and path not in REPLACE_PATHS:
            out[k] = _merge(out[k], v, path + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _flatten(d: Mapping, prefix: str = "") -> list[tuple[str, Any]]:
    out = []
    for k in sorted(d):
        v = d[k]
        key = f"{prefix}{k}"
        if isinstance(v, Mapping) and v:
            out.extend(_flatten(v, key + "."))
        else:
            out.append((key, v))
    return out


def apply_override(raw: dict, assignment: str) -> None:
    """Apply ``a.b.c=value``; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, val = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r}: {p} is not a mapping")
    node[parts[-1]] = yaml.safe_load(val)


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path

    @classmethod
    def load(cls, path=None, overrides: Sequence[str] = (), base_dir=None) -> "RunConfig":
        user: dict = {}
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"config file not found: {path}")
            try:
                user = yaml.safe_load(path.read_text()) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: invalid YAML: {exc}") from None
            if not isinstance(user, dict):
                raise ConfigError(f"{path}: top level must be a mapping")
        raw = _merge(DEFAULTS, user)
        for o in overrides:
            apply_override(raw, o)
        bd = Path(base_dir) if base_dir is not None else (path.parent if path is not None else Path("."))
        cfg = cls(raw, bd)
        cfg.validate_params()
        return cfg

    def __getitem__(self, key):
        return self.raw[key]

    def path(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def markets(self) -> list[str]:
        return list(self.raw["markets"])

    @property
    def cleaning(self) -> CleaningConfig:
        c = self.raw["cleaning"]
        return CleaningConfig(int(c["min_strikes"]), float(c["min_mid_price"]), float(c["max_rel_spread"]))

    def validate_params(self) -> None:
        r = self.raw
        for m in r["markets"]:
            if m not in ("SPX", "RUT"):
                raise ConfigError(f"unknown market {m!r}")
        if not 0.0 < float(r["atm_band"]) < 1.0:
            raise ConfigError("atm_band must lie in (0, 1)")
        if r["day_count"] != "ACT/365":
            raise ConfigError(f"unsupported day count {r['day_count']!r}; only ACT/365")
        if r["ois"]["fixed_freq"] not in (1, 2, 4, 12):
            raise ConfigError("ois.fixed_freq must be one of 1, 2, 4, 12 payments per year")
        if int(r["hac"]["lag"]) < 0 or r["hac"]["mode"] not in ("date", "observation"):
            raise ConfigError("hac.lag must be >= 0 and hac.mode one of date/observation")
        if int(r["regressor_lag"]) < 0:
            raise ConfigError("regressor_lag must be >= 0")
        if int(r["jobs"]) < 1:
            raise ConfigError("jobs must be >= 1")
        if not 0 <= int(r["seed"]) < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        sc = r["scan"]
        if not 2 <= int(sc["start"]) <= int(sc["stop"]) or int(sc["step"]) < 1:
            raise ConfigError("scan needs 2 <= start <= stop and step >= 1")
        ns = r["nested"]
        for a, s in ns["start"].items():
            lo, hi = ns["bounds"].get(a, (None, None))
            if lo is None or not 2 <= lo <= int(s) <= hi:
                raise ConfigError(f"nested: start {a}={s} must lie within bounds {lo, hi}")
            if int(ns["grid_steps"].get(a, 0)) < 1:
                raise ConfigError(f"nested: grid step for {a} must be >= 1")
        if int(ns["hill_step"]) < 1 or int(ns["max_iter"]) < 1:
            raise ConfigError("nested: hill_step and max_iter must be >= 1")
        self.cleaning  # validates thresholds

    def validate_inputs(self) -> None:
        inp = self.raw["inputs"]
        need = [inp["ois"], inp["nfci"]] + [inp["quotes"].get(m) for m in self.markets] \
            + [inp["vol"].get(m) for m in self.markets]
        if any(x is None for x in need):
            raise ConfigError("inputs must name quotes and vol per market, plus ois and nfci")
        for rel in need + list(inp["prices"].values()) + ([inp["dollar_index"]] if inp["dollar_index"] else []):
            if not self.path(rel).is_file():
                raise DataError(f"input file not found: {self.path(rel)}")

    def header(self, extra: Mapping[str, Any] | None = None) -> list[str]:
        items = _flatten({k: v for k, v in self.raw.items() if k not in HEADER_SKIP})
        lines = [f"# {k} = {v}" for k, v in items]
        for k, v in (extra or {}).items():
            lines.append(f"# {k} = {v}")
        return lines


def write_report(path: Path, df: pd.DataFrame, cfg: RunConfig, extra: Mapping[str, Any] | None = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("\n".join(cfg.header(extra)) + "\n")
        df.to_csv(fh, index=False, lineterminator="\n")
    return path


def read_report(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


# --------------------------------------------------------------------------
# inputs and identification
# --------------------------------------------------------------------------

@dataclass
class Inputs:
    ois: dict[int, OisQuoteSet]
    vol: dict[str, DailySeries]
    nfci: DailySeries
    prices: dict[str, DailySeries]
    dollar_index: DailySeries | None


def load_inputs(cfg: RunConfig) -> Inputs:
    cfg.validate_inputs()
    inp = cfg["inputs"]
    ois = load_ois_quotes(cfg.path(inp["ois"]))
    vol = {m: load_series(cfg.path(inp["vol"][m]), Unit.INDEX_LEVEL, "VIX" if m == "SPX" else "RVX")
           for m in cfg.markets}
    nfci = load_series(cfg.path(inp["nfci"]), Unit.INDEX_LEVEL, "NFCI")
    prices = {a: load_series(cfg.path(p), Unit.PRICE_LEVEL, a) for a, p in sorted(inp["prices"].items())}
    dollar = load_series(cfg.path(inp["dollar_index"]), Unit.INDEX_LEVEL, "DOLLAR") if inp["dollar_index"] else None
    return Inputs(ois, vol, nfci, prices, dollar)


@dataclass
class Identification:
    observations: list[CarryObservation]
    counts: dict[str, Counter]
    failed_ois_dates: list[int] = field(default_factory=list)


def identify_market(quotes, market: str, curves: Mapping[int, DiscountCurve], cfg: RunConfig,
                    counter: Counter) -> list[CarryObservation]:
    chains: dict[tuple[int, int], list] = {}
    for q in quotes:
        chains.setdefault((q.quote_date, q.expiry), []).append(q)
    out = []
    by_date: dict[int, list] = {}
    for (d, e) in sorted(chains):
        counter["chains"] += 1
        try:
            res = identify_chain(chains[(d, e)], cfg.cleaning, float(cfg["atm_band"]), counter)
        except IdentificationError as exc:
            logger.debug("%s %s %s: %s", market, to_iso(d), to_iso(e), exc)
            counter["identification_failed"] += 1
            continue
        if res is None:
            continue
        by_date.setdefault(d, []).append((e, res))
    for d, items in by_date.items():
        curve = curves.get(d)
        if curve is None:
            counter["ois_missing"] += len(items)
            continue
        taus = np.array([year_fraction(d, e) for e, _ in items])
        ok = taus <= curve.pillar_taus[-1]
        counter["beyond_curve"] += int((~ok).sum())
        if not ok.any():
            continue
        dfs = np.atleast_1d(discount_at(curve, taus[ok]))
        kept = [it for it, k in zip(items, ok) if k]
        bh = np.array([r.b_hat for _, r in kept])
        cg = np.atleast_1d(carry_gap_bp(dfs, bh, taus[ok]))
        for (e, r), tau, dd, g in zip(kept, taus[ok], dfs, cg):
            out.append(CarryObservation(market, d, e, float(tau), r.b_hat, r.f_hat, r.n_strikes,
                                        r.flatness_rmse, r.ba_med_atm, float(dd), float(g)))
    counter["identified"] += len(out)
    return out


def identify_all(cfg: RunConfig, inputs: Inputs | None = None) -> tuple[Identification, Inputs]:
    inputs = inputs or load_inputs(cfg)
    curves, failed = bootstrap_all(inputs.ois, cfg["ois"]["fixed_freq"])
    obs, counts = [], {}
    for m in cfg.markets:
        ld = load_option_quotes(cfg.path(cfg["inputs"]["quotes"][m]), m)
        c = Counter({"rows": ld.n_rows, "rejected_rows": ld.n_rejected})
        for k, v in ld.reject_reasons.items():
            c[f"rejected_{k}"] = v
        if not ld.quotes:
            logger.warning("%s: no usable option quotes", m)
        obs.extend(identify_market(ld.quotes, m, curves, cfg, c))
        counts[m] = c
    return Identification(obs, counts, failed), inputs


# --------------------------------------------------------------------------
# panels and specifications
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpecPlan:
    spec: Specification
    windows: dict
    fx_neutral: bool = False

    @property
    def name(self) -> str:
        return self.spec.name


def _ext(name, windows, fx):
    cols = tuple(asset_column(a, n, fx) for a, n in windows.items())
    return SpecPlan(Specification(name, EXTENDED_BASE[:1] + cols + EXTENDED_BASE[1:]), dict(windows), fx)


def spec_plan(name: str, cfg: RunConfig) -> SpecPlan:
    w = cfg["windows"]
    if name == "baseline":
        return SpecPlan(Specification("baseline", BASELINE), {})
    if name == "main3etf":
        return _ext(name, w["main"], False)
    if name == "main3etf_fxn":
        return _ext(name, w["main"], True)
    if name == "us_only":
        return _ext(name, w["us_only"], False)
    if name == "emerging":
        return _ext(name, w["emerging"], False)
    custom = cfg["custom_specs"].get(name)
    if custom is None:
        raise ConfigError(f"unknown spec {name!r}")
    fx = bool(custom.get("fx_neutral", False))
    wins = {a: int(n) for a, n in (custom.get("windows") or {}).items()}
    regs = tuple(custom.get("regressors", ())) + tuple(asset_column(a, n, fx) for a, n in wins.items())
    return SpecPlan(Specification(name, regs), wins, fx)


def build_panel_builder(cfg: RunConfig, ident: Identification, inputs: Inputs) -> tuple[PanelBuilder, Counter]:
    frames, dropped = [], Counter()
    for m in cfg.markets:
        df, drop = assemble_panel(ident.observations, inputs.ois, inputs.vol[m], inputs.nfci, None, m,
                                  int(cfg["regressor_lag"]))
        frames.append(df)
        dropped.update({f"{m}_{k}": v for k, v in drop.items()})
    base = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
    return PanelBuilder(base, inputs.prices, inputs.dollar_index), dropped


def plan_panel(builder: PanelBuilder, plan: SpecPlan, market: str | None = None) -> pd.DataFrame:
    p = builder.panel(plan.windows, plan.fx_neutral, dropna=False)
    ok = np.isfinite(p[list(plan.spec.regressors)].to_numpy(dtype=np.float64)).all(axis=1) \
        if set(plan.spec.regressors) <= set(p.columns) else np.ones(len(p), bool)
    if market is not None:
        ok &= p["market"].to_numpy() == market
    return p.loc[ok].reset_index(drop=True)


def common_panel(builder: PanelBuilder, plans: Sequence[SpecPlan], market: str) -> pd.DataFrame:
    """Rows where every plan's regressors exist, so specs compare on one sample."""
    p = builder.base.copy()
    for pl in plans:
        for a, n in pl.windows.items():
            p[asset_column(a, n, pl.fx_neutral)] = builder.asset_term(a, n, pl.fx_neutral)
    cols = sorted({c for pl in plans for c in pl.spec.regressors if c in p.columns})
    ok = np.isfinite(p[cols].to_numpy(dtype=np.float64)).all(axis=1) & (p["market"].to_numpy() == market)
    return p.loc[ok].reset_index(drop=True)


# --------------------------------------------------------------------------
# steps
# --------------------------------------------------------------------------

class Session:
    """Loads inputs and identifies once; each step writes its reports into ``out``."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = Path(out)
        self._ident = None
        self._inputs = None
        self._builder = None
        self._dropped = None

    @property
    def ident(self) -> Identification:
        if self._ident is None:
            self._ident, self._inputs = identify_all(self.cfg)
        return self._ident

    @property
    def builder(self) -> PanelBuilder:
        if self._builder is None:
            self._builder, self._dropped = build_panel_builder(self.cfg, self.ident, self._inputs)
        return self._builder

    def _specs(self, names: Sequence[str] | None) -> list[str]:
        names = list(names) if names else list(self.cfg["specs"])
        if not names:
            raise ConfigError("empty spec list")
        return names

    def identify(self) -> dict[str, Counter]:
        ident = self.ident
        rows = [{"market": o.market, "date": to_iso(o.date), "expiry": to_iso(o.expiry), "tau": o.tau,
                 "n_strikes": o.n_strikes, "b_hat": o.b_hat, "f_hat": o.f_hat, "flatness_rmse": o.flatness_rmse,
                 "ba_med_atm": o.ba_med_atm, "d_ois": o.d_ois, "cg_bp": o.cg_bp} for o in ident.observations]
        cols = ["market", "date", "expiry", "tau", "n_strikes", "b_hat", "f_hat", "flatness_rmse", "ba_med_atm",
                "d_ois", "cg_bp"]
        counts = {f"counts.{m}.{k}": v for m, c in ident.counts.items() for k, v in sorted(c.items())}
        counts["counts.failed_ois_dates"] = len(ident.failed_ois_dates)
        write_report(self.out / "identification.csv", pd.DataFrame(rows, columns=cols), self.cfg, counts)
        daily = []
        for m in self.cfg.markets:
            s = aggregate_daily([o for o in ident.observations if o.market == m]) \
                if any(o.market == m for o in ident.observations) else None
            if s is not None:
                daily.extend({"market": m, "date": to_iso(d), "cg_bp": v} for d, v in zip(s.dates, s.values))
        write_report(self.out / "carry_gap_daily.csv", pd.DataFrame(daily, columns=["market", "date", "cg_bp"]),
                     self.cfg, {"aggregation": "median across maturities per date"})
        return ident.counts

    def fit(self, spec_names: Sequence[str] | None = None) -> pd.DataFrame:
        names = self._specs(spec_names)
        lag = int(self.cfg["hac"]["lag"])
        mode = self.cfg["hac"]["mode"]
        coef_rows, metric_rows = [], []
        for name in names:
            for m in self.cfg.markets:
                try:
                    plan = spec_plan(name, self.cfg)
                    panel = plan_panel(self.builder, plan, m)
                    fit = ols_fit(panel, plan.spec, m, hac_lag=lag, hac_mode=mode)
                except (CarryGapError, KeyError) as exc:
                    msg = exc.args[0] if isinstance(exc, KeyError) else str(exc)
                    logger.error("spec %s / %s: %s", name, m, msg)
                    metric_rows.append({"spec": name, "market": m, "error": msg})
                    continue
                for t in fit.terms:
                    coef_rows.append({"spec": name, "market": m, "term": t, "coef": fit.coefficients[t],
                                      "hac_se": fit.hac_se[t], "t_stat": fit.t_stat(t), "stars": fit.stars(t)})
                metric_rows.append({"spec": name, "market": m, "n_obs": fit.n_obs, "n_dates": fit.n_dates,
                                    "r2": fit.r2, "adj_r2": fit.adj_r2, "rmse_bp": fit.rmse_bp, "mae_bp": fit.mae_bp,
                                    "error": ""})
        meta = {"se": f"date-based Newey-West, Bartlett, lag {lag}, mode {mode}",
                "stars": "*** 1%, ** 5%, * 10% two-sided normal"}
        coefs = pd.DataFrame(coef_rows, columns=["spec", "market", "term", "coef", "hac_se", "t_stat", "stars"])
        write_report(self.out / "coefficients.csv", coefs, self.cfg, meta)
        metrics = pd.DataFrame(metric_rows, columns=["spec", "market", "n_obs", "n_dates", "r2", "adj_r2", "rmse_bp",
                                                     "mae_bp", "error"])
        write_report(self.out / "fit_metrics.csv", metrics, self.cfg, meta)
        return metrics

    def bins(self) -> pd.DataFrame:
        a = spec_plan(self.cfg["bins"]["spec_a"], self.cfg)
        b = spec_plan(self.cfg["bins"]["spec_b"], self.cfg)
        frames, omitted = [], []
        for m in self.cfg.markets:
            panel = common_panel(self.builder, [a, b], m)
            df, om = bin_fit_report(panel, a.spec, b.spec, m)
            frames.append(df)
            omitted += [f"{m}:{x}" for x in om]
        out = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
        write_report(self.out / "bin_report.csv", out, self.cfg,
                     {"bins.omitted": ";".join(omitted) or "none", "bins.order": ";".join(BIN_LABELS)})
        return out

    def loyo(self, spec_names: Sequence[str] | None = None) -> pd.DataFrame:
        names = self._specs(spec_names)
        plans = [spec_plan(n, self.cfg) for n in names]
        rows = []
        years = self.cfg["cv"]["years"]
        for m in self.cfg.markets:
            panel = common_panel(self.builder, plans, m)
            for pl in plans:
                rep = loyo(panel, pl.spec, years, m, int(self.cfg["cv"]["min_rows"]))
                for y, s in rep.per_year.items():
                    rows.append({"spec": pl.name, "market": m, "year": str(y), "oos_r2": s.oos_r2,
                                 "rmse_bp": s.rmse_bp, "corr": s.corr, "n_obs": s.n_obs})
                for y, why in rep.skipped.items():
                    rows.append({"spec": pl.name, "market": m, "year": f"skipped:{y}", "oos_r2": np.nan,
                                 "rmse_bp": np.nan, "corr": np.nan, "n_obs": 0})
                rows.append({"spec": pl.name, "market": m, "year": "mean", "oos_r2": rep.mean_r2,
                             "rmse_bp": rep.mean_rmse_bp, "corr": rep.mean_corr, "n_obs": np.nan})
                rows.append({"spec": pl.name, "market": m, "year": "median", "oos_r2": rep.median_r2,
                             "rmse_bp": np.nan, "corr": np.nan, "n_obs": np.nan})
                rows.append({"spec": pl.name, "market": m, "year": "pooled", "oos_r2": rep.pooled_r2,
                             "rmse_bp": np.nan, "corr": np.nan, "n_obs": sum(s.n_obs for s in rep.per_year.values())})
                rows.append({"spec": pl.name, "market": m, "year": "years_positive", "oos_r2": rep.years_positive,
                             "rmse_bp": np.nan, "corr": np.nan, "n_obs": rep.n_years})
        out = pd.DataFrame(rows, columns=["spec", "market", "year", "oos_r2", "rmse_bp", "corr", "n_obs"])
        write_report(self.out / "loyo.csv", out, self.cfg,
                     {"oos_r2.centering": "holdout-year mean (per year), stacked holdout mean (pooled)"})
        return out

    def scan(self) -> pd.DataFrame:
        sc = self.cfg["scan"]
        base = spec_plan("baseline", self.cfg).spec
        windows = list(range(int(sc["start"]), int(sc["stop"]) + 1, int(sc["step"])))
        frames, dropped = [], []
        for a in sc["assets"]:
            hs = horizon_scan(self.builder, a, windows, base, self.cfg.markets, bool(sc["fx_neutral"]))
            frames.append(hs.to_frame())
            dropped += [f"{a}:{n}" for n in hs.dropped]
        out = pd.concat(frames, ignore_index=True)
        write_report(self.out / "horizon_scan.csv", out, self.cfg, {"scan.dropped": ";".join(dropped) or "none"})
        return out

    def nested(self) -> pd.DataFrame:
        ns = self.cfg["nested"]
        rep = nested_horizon_search(
            self.builder, self.cfg["cv"]["years"], start={a: int(v) for a, v in ns["start"].items()},
            bounds={a: tuple(int(x) for x in v) for a, v in ns["bounds"].items()},
            grid_steps={a: int(v) for a, v in ns["grid_steps"].items()},
            baseline_spec=spec_plan("baseline", self.cfg).spec, extended_base=EXTENDED_BASE,
            markets=self.cfg.markets, hill_step=int(ns["hill_step"]), max_iter=int(ns["max_iter"]),
            tol=float(ns["tol"]), fx_neutral=bool(ns["fx_neutral"]), min_rows=int(self.cfg["cv"]["min_rows"]),
            jobs=int(self.cfg["jobs"]), full_sample=bool(ns["full_sample"]))
        meta = {"nested.objective": "mean of per-market in-sample R2 on training years"}
        write_report(self.out / "nested.csv", rep.yearly, self.cfg, meta)
        write_report(self.out / "nested_summary.csv", rep.summary, self.cfg, meta)
        trace = []
        sels = rep.selections + ([rep.full_sample] if rep.full_sample else [])
        for s in sels:
            fold = "full" if s.fold_year is None else str(s.fold_year)
            for i, (w, v) in enumerate(s.trace):
                trace.append({"fold": fold, "step": i, "windows": "/".join(map(str, w)), "objective": v})
        write_report(self.out / "nested_trace.csv", pd.DataFrame(trace), self.cfg, meta)
        flags = pd.DataFrame([{"fold": "full" if s.fold_year is None else str(s.fold_year),
                               **{a.lower(): n for a, n in s.selected.items()},
                               "objective": s.objective_value, "converged": s.converged,
                               "hit_boundary": s.hit_boundary, "n_evaluated": s.n_evaluated,
                               "n_skipped": s.n_skipped} for s in sels])
        write_report(self.out / "nested_selection.csv", flags, self.cfg, meta)
        return rep.yearly

    def pca(self) -> pd.DataFrame:
        plan = spec_plan(self.cfg["pca"]["spec"], self.cfg)
        if len(plan.windows) < 2:
            raise ConfigError("PCA needs a spec with at least two asset terms")
        b = self.builder
        days = np.unique(b.base["date"].to_numpy())
        series = {a: b.slope(a, n, plan.fx_neutral).at(days) for a, n in plan.windows.items()}
        S = pd.DataFrame(series)
        ok = np.isfinite(S.to_numpy()).all(axis=1)
        res = pca_slopes(S.loc[ok])
        rows = []
        for j in range(len(res.names)):
            row = {"component": f"pc{j + 1}", "eigenvalue": res.eigenvalues[j], "variance_share": res.variance_shares[j]}
            row.update({f"loading_{a.lower()}": res.loadings[i, j] for i, a in enumerate(res.names)})
            rows.append(row)
        write_report(self.out / "pca.csv", pd.DataFrame(rows), self.cfg,
                     {"pca.input": "standardised slope series on common panel dates"})
        cols = [asset_column(a, n, plan.fx_neutral) for a, n in plan.windows.items()]
        fits = []
        for m in self.cfg.markets:
            panel = plan_panel(b, plan, m)
            base_fit = ols_fit(panel, plan.spec, m)
            rot = rotate_regressor_block(panel, cols, res.loadings, res.scale)
            pcs = [f"pc{j + 1}" for j in range(len(cols))]
            rfit = ols_fit(rot, plan.spec.replace(cols, pcs, plan.name + "_pca"), m)
            fits.append({"market": m, "variant": "pca_rotation", "asset": "", "first_stage_r2": np.nan,
                         "r2": rfit.r2, "r2_original": base_fit.r2, "delta_r2": rfit.r2 - base_fit.r2})
            for i, a in enumerate(plan.windows):
                others = [S.loc[ok, o].to_numpy() for o in plan.windows if o != a]
                resid, r2_first = residualize(S.loc[ok, a].to_numpy(), others)
                rs = np.full(days.size, np.nan)
                rs[ok] = resid
                pos = np.searchsorted(days, panel["date"].to_numpy())
                tmp = panel.copy()
                tmp[cols[i]] = gbm_asset_term(rs[pos], tmp["vol"].to_numpy(), tmp["tau"].to_numpy())
                keep = np.isfinite(tmp[cols[i]].to_numpy())
                f2 = ols_fit(tmp.loc[keep], plan.spec, m)
                fits.append({"market": m, "variant": "residualized", "asset": a, "first_stage_r2": r2_first,
                             "r2": f2.r2, "r2_original": base_fit.r2, "delta_r2": f2.r2 - base_fit.r2})
        out = pd.DataFrame(fits)
        write_report(self.out / "pca_fit.csv", out, self.cfg)
        return out

    def panel_csv(self) -> pd.DataFrame:
        plan = spec_plan("main3etf", self.cfg)
        p = self.builder.panel(plan.windows, plan.fx_neutral, dropna=True).copy()
        p["date"] = [to_iso(d) for d in p["date"]]
        p["expiry"] = [to_iso(d) for d in p["expiry"]]
        write_report(self.out / "panel.csv", p, self.cfg,
                     {f"panel.dropped.{k}": v for k, v in sorted((self._dropped or {}).items())})
        return p

