"""
OLS with date-based Newey-West inference, fit metrics, PCA of slope
series and residualisation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular

from .errors import ConfigError, DataError, NumericalError, RankDeficiencyError

COND_LIMIT = 1e10
HAC_LAG = 21
# two-sided normal critical values at 1%, 5%, 10%
STAR_LEVELS = ((2.5758293035489004, "***"), (1.959963984540054, "**"), (1.6448536269514722, "*"))


@dataclass(frozen=True)
class Specification:
    name: str
    regressors: tuple[str, ...]
    include_intercept: bool = True

    def __post_init__(self):
        regs = tuple(self.regressors)
        if len(set(regs)) != len(regs):
            dup = sorted({r for r in regs if regs.count(r) > 1})
            raise ConfigError(f"spec {self.name}: duplicate regressor(s) {dup}")
        if not self.include_intercept:
            raise ConfigError("specifications always carry an intercept")
        object.__setattr__(self, "regressors", regs)

    @property
    def terms(self) -> tuple[str, ...]:
        return ("intercept",) + self.regressors

    def replace(self, old: Sequence[str], new: Sequence[str], name: str | None = None) -> "Specification":
        """Swap the block ``old`` for ``new`` at the position of its first member."""
        regs = list(self.regressors)
        at = min(regs.index(c) for c in old)
        kept = [c for c in regs if c not in set(old)]
        kept[at:at] = list(new)
        return Specification(name or self.name, tuple(kept))


@dataclass
class FitResult:
    spec_name: str
    market: str
    terms: tuple[str, ...]
    coefficients: dict[str, float]
    n_obs: int
    n_dates: int
    r2: float
    adj_r2: float
    rmse_bp: float
    mae_bp: float
    residuals: np.ndarray = field(repr=False)
    fitted: np.ndarray = field(repr=False)
    hac_se: dict[str, float] | None = None
    hac_lag: int | None = None

    @property
    def params(self) -> np.ndarray:
        return np.array([self.coefficients[t] for t in self.terms])

    def predict(self, panel: pd.DataFrame) -> np.ndarray:
        X = design_matrix(panel, self.terms[1:])
        return X @ self.params

    def t_stat(self, term: str) -> float:
        if self.hac_se is None:
            return float("nan")
        return self.coefficients[term] / self.hac_se[term]

    def stars(self, term: str) -> str:
        t = abs(self.t_stat(term))
        for crit, s in STAR_LEVELS:
            if t > crit:
                return s
        return ""


def design_matrix(panel: pd.DataFrame, regressors: Sequence[str]) -> np.ndarray:
    missing = [c for c in regressors if c not in panel.columns]
    if missing:
        raise DataError(f"panel lacks column(s) {missing}")
    X = np.empty((len(panel), len(regressors) + 1))
    X[:, 0] = 1.0
    for j, c in enumerate(regressors, start=1):
        X[:, j] = panel[c].to_numpy(dtype=np.float64)
    return X


def check_rank(X: np.ndarray, names: Sequence[str], limit: float = COND_LIMIT) -> float:
    """Condition number of the column-equilibrated design; raises above ``limit``."""
    norms = np.sqrt((X * X).sum(axis=0))
    zero = [names[j] for j in np.flatnonzero(norms == 0)]
    if zero:
        raise RankDeficiencyError(f"all-zero column(s): {zero}", zero)
    _, s, vt = np.linalg.svd(X / norms, full_matrices=False)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if cond > limit:
        v = np.abs(vt[-1])
        cols = [names[j] for j in np.flatnonzero(v > 0.1 * v.max())]
        raise RankDeficiencyError(f"design is rank deficient (condition number {cond:.3g}); "
                                  f"collinear columns: {cols}", cols)
    return float(cond)


def _qr_solve(X, y):
    q, r = np.linalg.qr(X)
    return solve_triangular(r, q.T @ y), r


def ols_fit(panel: pd.DataFrame, spec: Specification, market: str = "", *, y: str = "cg_bp",
            hac_lag: int | None = None, hac_mode: str = "date") -> FitResult:
    """Least squares via QR.  HAC standard errors only when ``hac_lag`` is given."""
    X = design_matrix(panel, spec.regressors)
    yv = panel[y].to_numpy(dtype=np.float64)
    n, p = X.shape
    if n <= p:
        raise NumericalError(f"spec {spec.name}: {n} rows for {p} parameters")
    check_rank(X, spec.terms)
    beta, r = _qr_solve(X, yv)
    fitted = X @ beta
    resid = yv - fitted
    m = fit_metrics(yv, fitted, p - 1)
    dates = panel["date"].to_numpy() if "date" in panel.columns else np.arange(n)
    res = FitResult(spec.name, market, spec.terms, dict(zip(spec.terms, map(float, beta))),
                    n, int(np.unique(dates).size), m["r2"], m["adj_r2"], m["rmse_bp"], m["mae_bp"],
                    resid, fitted)
    if hac_lag is not None:
        r_inv = solve_triangular(r, np.eye(p))
        bread = r_inv @ r_inv.T
        se = np.sqrt(np.diag(hac_cov(X, resid, dates, hac_lag, mode=hac_mode, bread=bread)))
        res.hac_se = dict(zip(spec.terms, map(float, se)))
        res.hac_lag = hac_lag
    return res


def fit_metrics(y: np.ndarray, fitted: np.ndarray, k: int) -> dict[str, float]:
    """R2 about the sample mean, adjusted R2 with ``k`` slope terms, RMSE, MAE."""
    e = y - fitted
    sse = float(e @ e)
    d = y - y.mean()
    sst = float(d @ d)
    n = y.size
    r2 = 1.0 - sse / sst if sst > 0 else float("nan")
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - k - 1) if n - k - 1 > 0 else float("nan")
    return {"r2": r2, "adj_r2": adj, "rmse_bp": float(np.sqrt(sse / n)), "mae_bp": float(np.mean(np.abs(e)))}


def _date_scores(scores: np.ndarray, dates: np.ndarray) -> np.ndarray:
    order = np.argsort(dates, kind="stable")
    d = dates[order]
    starts = np.flatnonzero(np.r_[True, d[1:] != d[:-1]])
    return np.add.reduceat(scores[order], starts, axis=0)


def hac_cov(X: np.ndarray, resid: np.ndarray, dates, lag: int = HAC_LAG, *, mode: str = "date",
            bread: np.ndarray | None = None) -> np.ndarray:
    """Newey-West sandwich with Bartlett weights ``1 - l / (lag + 1)``.

    ``mode="date"`` sums the scores within each date before applying the
    kernel over the ordered distinct dates, so all maturities quoted on one
    day form a single period.  ``mode="observation"`` applies the kernel to
    individual rows in date order instead.
    """
    if lag < 0:
        raise ConfigError("HAC lag must be non-negative")
    dates = np.asarray(dates)
    scores = X * resid[:, None]
    if mode == "date":
        S = _date_scores(scores, dates)
    elif mode == "observation":
        S = scores[np.argsort(dates, kind="stable")]
    else:
        raise ConfigError(f"unknown HAC mode {mode!r}")
    T = S.shape[0]
    if np.unique(dates).size < lag + 2:
        raise NumericalError(f"HAC needs at least lag+2={lag + 2} distinct dates, got {np.unique(dates).size}")
    omega = S.T @ S
    for l in range(1, min(lag, T - 1) + 1):
        g = S[l:].T @ S[:-l]
        omega += (1.0 - l / (lag + 1.0)) * (g + g.T)
    if bread is None:
        bread = np.linalg.inv(X.T @ X)
    return bread @ omega @ bread


def hac_se(X: np.ndarray, resid: np.ndarray, dates, lag: int = HAC_LAG, *, mode: str = "date") -> np.ndarray:
    """Standard errors from :func:`hac_cov`, with a QR-based bread."""
    r = np.linalg.qr(X, mode="r")
    r_inv = solve_triangular(r, np.eye(X.shape[1]))
    return np.sqrt(np.diag(hac_cov(X, resid, dates, lag, mode=mode, bread=r_inv @ r_inv.T)))


# --------------------------------------------------------------------------
# PCA and residualisation
# --------------------------------------------------------------------------

@dataclass
class PcaResult:
    names: tuple[str, ...]
    loadings: np.ndarray          # columns are components
    variance_shares: np.ndarray
    eigenvalues: np.ndarray
    correlation: np.ndarray
    component_scores: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)   # sample sd of each input series


def pca_slopes(series, names: Sequence[str] | None = None) -> PcaResult:
    """PCA of standardised series (rows = common dates, columns = assets).

    Each loading vector is signed so its largest-magnitude entry is positive.
    """
    if isinstance(series, pd.DataFrame):
        names = tuple(names or series.columns)
        Z = series.to_numpy(dtype=np.float64)
    else:
        Z = np.column_stack([np.asarray(s, dtype=np.float64) for s in series]) if not isinstance(series, np.ndarray) else series.astype(np.float64)
        names = tuple(names or (f"s{j + 1}" for j in range(Z.shape[1])))
    T, k = Z.shape
    if T < 4:
        raise DataError(f"PCA needs at least 4 common dates, got {T}")
    if not np.all(np.isfinite(Z)):
        raise DataError("PCA input must be aligned without gaps")
    mu = Z.mean(axis=0)
    sd = Z.std(axis=0)
    if np.any(sd == 0):
        raise DataError("PCA input has a constant series")
    Zs = (Z - mu) / sd
    corr = Zs.T @ Zs / T
    evals, evecs = np.linalg.eigh(corr)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    evals = np.clip(evals, 0.0, None)
    for j in range(k):
        v = evecs[:, j]
        if v[np.argmax(np.abs(v))] < 0:
            evecs[:, j] = -v
    shares = evals / evals.sum()
    return PcaResult(names, evecs, shares, evals, corr, Zs @ evecs, sd)


def rotate_regressor_block(panel: pd.DataFrame, block: Sequence[str], loadings: np.ndarray,
                           scale: Sequence[float] | None = None, prefix: str = "pc") -> pd.DataFrame:
    """Add columns ``{prefix}1..k`` = (block / scale) @ loadings; nothing else changes."""
    L = np.asarray(loadings, dtype=np.float64)
    k = len(block)
    if L.shape != (k, k):
        raise DataError(f"loadings must be {k}x{k}")
    if np.linalg.cond(L) > COND_LIMIT:
        raise NumericalError("singular loadings matrix")
    B = panel[list(block)].to_numpy(dtype=np.float64)
    if scale is not None:
        B = B / np.asarray(scale, dtype=np.float64)
    out = panel.copy()
    P = B @ L
    for j in range(k):
        out[f"{prefix}{j + 1}"] = P[:, j]
    return out


def residualize(target, others: Sequence) -> tuple[np.ndarray, float]:
    """Residual of ``target`` on ``others`` plus intercept, and the first-stage R2."""
    y = np.asarray(target, dtype=np.float64)
    X = np.column_stack([np.ones_like(y)] + [np.asarray(o, dtype=np.float64) for o in others])
    if y.size < 4:
        raise DataError("residualisation needs at least 4 common dates")
    check_rank(X, ["intercept"] + [f"other{j + 1}" for j in range(X.shape[1] - 1)])
    beta, _ = _qr_solve(X, y)
    resid = y - X @ beta
    d = y - y.mean()
    sst = d @ d
    r2 = 1.0 - (resid @ resid) / sst if sst > 0 else float("nan")
    return resid, float(r2)
