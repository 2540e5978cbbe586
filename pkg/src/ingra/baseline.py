"""Linear Granger causality: OLS autoregressions of the target plus an F-test
per candidate cause, with the lag order chosen by AIC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import MtsSample
from .errors import DataError, NumericError

CONDITION_LIMIT = 1e12


@dataclass
class GrangerResult:
    variable: int
    f_stat: float
    p_value: float
    lag: int
    reject: bool
    rss_restricted: float
    rss_unrestricted: float

    @property
    def score(self) -> float:
        return 1.0 - self.p_value


def lag_design(values: np.ndarray, target_index: int, lag: int, start: int) -> tuple[np.ndarray, np.ndarray]:
    """Regressand ``y[start:]`` and design ``[1, lags 1..lag of every variable]``.

    Columns are grouped by variable: variable v occupies ``1 + v*lag .. (v+1)*lag``.
    """
    n_vars, length = values.shape
    rows = np.arange(start, length)
    cols = [np.ones(rows.size)]
    for v in range(n_vars):
        for j in range(1, lag + 1):
            cols.append(values[v, rows - j])
    return values[target_index, rows], np.column_stack(cols)


def ols_rss(y: np.ndarray, design: np.ndarray) -> float:
    cond = np.linalg.cond(design)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise NumericError(f"singular design matrix {design.shape}: condition number {cond:.3g}")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return float(resid @ resid)


def select_lag_aic(values: np.ndarray, target_index: int, maxlag: int) -> int:
    """Lag order in 1..maxlag minimising ``n log(RSS/n) + 2m`` on a common sample."""
    best, best_aic = 1, np.inf
    for lag in range(1, maxlag + 1):
        y, x = lag_design(values, target_index, lag, start=maxlag)
        n = y.size
        aic = n * np.log(ols_rss(y, x) / n) + 2 * x.shape[1]
        if aic < best_aic:
            best, best_aic = lag, aic
    return best


def f_test(rss_restricted: float, rss_unrestricted: float, n_restrictions: int,
           n_obs: int, n_params: int) -> tuple[float, float]:
    """F statistic and upper-tail p-value for nested least-squares fits."""
    dof = n_obs - n_params
    if dof <= 0:
        raise DataError(f"no residual degrees of freedom (n={n_obs}, m={n_params})")
    if rss_unrestricted <= 0:
        raise NumericError("unrestricted model fits exactly; F statistic undefined")
    gain = max(rss_restricted - rss_unrestricted, 0.0)
    f_stat = (gain / n_restrictions) / (rss_unrestricted / dof)
    return f_stat, float(stats.f.sf(f_stat, n_restrictions, dof))


def linear_granger(sample: MtsSample | np.ndarray, maxlag: int = 5, significance: float = 0.05,
                   target_index: int = 0) -> list[GrangerResult]:
    """Test every non-target variable as a Granger cause of the target.

    The lag order for candidate s is chosen by AIC on the null regression
    (all variables except s). Choosing it on the full regression lets s's
    own lags steer the selection and inflates the false-positive rate.
    """
    values = sample.values if isinstance(sample, MtsSample) else np.asarray(sample, dtype=np.float64)
    n_vars, length = values.shape
    if length <= n_vars * maxlag + maxlag + 10:
        raise DataError(f"series length {length} too short for {n_vars} variables at maxlag {maxlag}")
    results = []
    for v in range(n_vars):
        if v == target_index:
            continue
        others = np.delete(values, v, axis=0)
        lag = select_lag_aic(others, target_index - (v < target_index), maxlag)
        y, x = lag_design(values, target_index, lag, start=lag)
        keep = np.ones(x.shape[1], dtype=bool)
        keep[1 + v * lag: 1 + (v + 1) * lag] = False
        rss_u = ols_rss(y, x)
        rss_r = ols_rss(y, x[:, keep])
        f_stat, p = f_test(rss_r, rss_u, lag, y.size, x.shape[1])
        results.append(GrangerResult(v, f_stat, p, lag, p < significance, rss_r, rss_u))
    return results
