"""Small statistical helpers shared by the estimators.

Everything here operates on per-replicate sample arrays so that common
random numbers flow through ratio estimators with the correlations intact.
"""

from __future__ import annotations

import math

import numpy as np


def mean_and_se(samples: np.ndarray) -> tuple[float, float]:
    """Sample mean and its standard error."""
    n = len(samples)
    m = float(np.mean(samples)) if n else math.nan
    if n < 2:
        return m, 0.0
    return m, float(np.std(samples, ddof=1) / math.sqrt(n))


def ratio_and_se(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """Delta-method estimate of E[num]/E[den] from paired samples.

    Var(ratio) ~ Var(num - r*den) / (n * mean(den)**2); the covariance term
    matters because num and den share the same draws.
    """
    n = len(num)
    den_mean = float(np.mean(den))
    if den_mean == 0.0:
        return math.nan, math.inf
    r = float(np.mean(num)) / den_mean
    if n < 2:
        return r, 0.0
    resid = num - r * den
    se = float(np.std(resid, ddof=1) / (math.sqrt(n) * abs(den_mean)))
    return r, se


def ratio_combined_se(num: np.ndarray, den: np.ndarray, scale: float = 1.0) -> float:
    """Conservative SE for a ratio: combine the two SEs without covariance
    credit. ``scale`` multiplies the denominator contribution (use the target
    ratio value)."""
    n = len(num)
    if n < 2:
        return 0.0
    den_mean = float(np.mean(den))
    se_num = float(np.std(num, ddof=1) / math.sqrt(n))
    se_den = float(np.std(den, ddof=1) / math.sqrt(n))
    return math.sqrt(se_num**2 + (scale * se_den) ** 2) / abs(den_mean)


def kish_neff(weights: np.ndarray) -> float:
    """Effective sample size of a weighted sample."""
    s = float(np.sum(weights))
    s2 = float(np.sum(weights**2))
    if s2 == 0.0:
        return 0.0
    return s * s / s2


def weighted_pmf(
    values: np.ndarray, weights: np.ndarray
) -> dict[int, tuple[float, float]]:
    """Normalized weighted pmf with delta-method standard errors per atom."""
    total = float(np.sum(weights))
    out: dict[int, tuple[float, float]] = {}
    if total == 0.0:
        return out
    n = len(values)
    for v in np.unique(values):
        ind = (values == v).astype(float)
        p = float(np.sum(weights * ind)) / total
        resid = weights * (ind - p)
        se = math.sqrt(float(np.sum(resid**2))) / total if n > 1 else 0.0
        out[int(v)] = (p, se)
    return out


def pmf_tv_distance(p: dict[int, tuple[float, float]], q: dict[int, tuple[float, float]]) -> float:
    keys = set(p) | set(q)
    return 0.5 * math.fsum(abs(p.get(k, (0.0, 0.0))[0] - q.get(k, (0.0, 0.0))[0]) for k in keys)


def pmf_tv_budget(
    p: dict[int, tuple[float, float]],
    q: dict[int, tuple[float, float]],
    neff_p: float,
    neff_q: float,
) -> float:
    """Upper bound on the expected spurious TV distance of two empirical
    pmfs of the same law, from their effective sample sizes."""
    keys = set(p) | set(q)
    inv = 1.0 / max(neff_p, 1.0) + 1.0 / max(neff_q, 1.0)
    budget = 0.0
    for k in keys:
        pk = 0.5 * (p.get(k, (0.0, 0.0))[0] + q.get(k, (0.0, 0.0))[0])
        budget += math.sqrt(max(pk * (1.0 - pk), 0.0) * inv)
    return 0.5 * budget


def ols_loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    lx = lx - lx.mean()
    return float(np.dot(lx, ly - ly.mean()) / np.dot(lx, lx))


def linear_r_squared(x: np.ndarray, y: np.ndarray) -> float:
    """R**2 of the best straight-line fit y ~ a + b*x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    b, a = np.polyfit(x, y, 1)
    resid = y - (a + b * x)
    ss_res = float(np.dot(resid, resid))
    yc = y - y.mean()
    ss_tot = float(np.dot(yc, yc))
    if ss_tot == 0.0:
        return 1.0
    return 1.0 - ss_res / ss_tot


def chi_square_pvalue(observed: np.ndarray, expected: np.ndarray) -> float:
    """Pearson chi-square p-value after pooling cells with expected < 5."""
    from scipy.stats import chi2

    obs_pool: list[float] = []
    exp_pool: list[float] = []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += float(o)
        acc_e += float(e)
        if acc_e >= 5.0:
            obs_pool.append(acc_o)
            exp_pool.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0.0:
        if exp_pool:
            obs_pool[-1] += acc_o
            exp_pool[-1] += acc_e
        else:
            obs_pool, exp_pool = [acc_o], [acc_e]
    if len(exp_pool) < 2:
        return 1.0
    stat = math.fsum((o - e) ** 2 / e for o, e in zip(obs_pool, exp_pool))
    dof = len(exp_pool) - 1
    return float(chi2.sf(stat, dof))


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values)
    v = np.asarray(values, dtype=float)[order]
    w = np.asarray(weights, dtype=float)[order]
    cum = np.cumsum(w)
    if cum[-1] == 0.0:
        return math.nan
    idx = int(np.searchsorted(cum, 0.5 * cum[-1]))
    return float(v[min(idx, len(v) - 1)])
