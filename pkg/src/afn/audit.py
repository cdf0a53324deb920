"""Randomness quantification battery: runs test, ACF significance ratio and
classical trend/seasonal/residual decomposition with explained-variance
accounting.

Per-sample statistics over a cohort are aggregated by `audit_dataset`, which
repeatedly draws fixed-length slices and reports mean/std over the repeats.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import ndtr

from .data import TimeSeriesSet


class UndefinedTestError(ValueError):
    """A statistic is undefined for the given input (e.g. constant series)."""


class DomainError(ValueError):
    """Input violates a mathematical precondition of the operation."""


@dataclass
class AuditReport:
    runs_p_mean: float
    runs_p_std: float
    acf_ratio_mean: float
    acf_ratio_std: float
    explained_variance: dict  # {"trend", "seasonal", "residual"} percents
    residual_std: float
    n_samples: int
    sample_length: int
    repeats: int
    skipped_samples: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def runs_test(series: np.ndarray) -> float:
    """Two-sided runs test p-value (normal approximation) on the sequence
    binarized by above/below median; ties to the median are dropped."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if x.size < 10:
        raise UndefinedTestError("runs test needs at least 10 observations")
    if np.ptp(x) == 0:
        raise UndefinedTestError("runs test undefined for a constant series")
    med = np.median(x)
    b = x[x != med] > med
    return runs_test_binary(b)


def runs_test_binary(b: np.ndarray) -> float:
    """Runs test on an already-binarized sequence."""
    b = np.asarray(b, dtype=bool).ravel()
    n1 = int(b.sum())
    n2 = int(b.size - n1)
    n = n1 + n2
    if n1 == 0 or n2 == 0 or n < 2:
        raise UndefinedTestError("runs test needs both values present")
    runs = 1 + int(np.count_nonzero(b[1:] != b[:-1]))
    mu = 2.0 * n1 * n2 / n + 1.0
    var = 2.0 * n1 * n2 * (2.0 * n1 * n2 - n) / (n**2 * (n - 1.0))
    if var <= 0:
        raise UndefinedTestError("degenerate runs variance")
    z = (runs - mu) / np.sqrt(var)
    return float(2.0 * (1.0 - ndtr(abs(z))))


def acf(series: np.ndarray, max_lags: int) -> np.ndarray:
    """Biased (divide-by-T) autocorrelation for lags 1..max_lags."""
    x = np.asarray(series, dtype=np.float64).ravel()
    t = x.size
    xc = x - x.mean()
    denom = float(np.dot(xc, xc))
    if denom == 0:
        raise UndefinedTestError("ACF undefined for a constant series")
    return np.array(
        [np.dot(xc[k:], xc[:-k]) / denom for k in range(1, max_lags + 1)]
    )


def acf_ratio(series: np.ndarray, max_lags: int) -> float:
    """Fraction of lags 1..max_lags whose |ACF| exceeds the white-noise
    significance bound 2/sqrt(T)."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if max_lags < 1 or x.size <= max_lags:
        raise ValueError("need T > max_lags >= 1")
    bound = 2.0 / np.sqrt(x.size)
    r = acf(x, max_lags)
    return float(np.count_nonzero(np.abs(r) > bound) / max_lags)


def _centered_ma(x: np.ndarray, period: int) -> np.ndarray:
    """Centered moving average; even periods use the standard 2xMA. Edges are
    filled by linear extrapolation of the interior trend."""
    t = x.size
    if period % 2 == 1:
        kernel = np.full(period, 1.0 / period)
        half = period // 2
    else:
        kernel = np.full(period + 1, 1.0 / period)
        kernel[0] = kernel[-1] = 0.5 / period
        half = period // 2
    interior = np.convolve(x, kernel, mode="valid")
    trend = np.full(t, np.nan)
    trend[half:t - half] = interior
    # extrapolate edges from the first/last fitted points
    idx = np.arange(t, dtype=np.float64)
    valid = ~np.isnan(trend)
    vi = np.flatnonzero(valid)
    if vi.size >= 2:
        for edge in (slice(None, vi[0]), slice(vi[-1] + 1, None)):
            anchor = vi[:2] if edge.start is None else vi[-2:]
            slope = (trend[anchor[1]] - trend[anchor[0]]) / (anchor[1] - anchor[0])
            trend[edge] = trend[anchor[0]] + slope * (idx[edge] - anchor[0])
    else:
        trend[:] = x.mean()
    return trend


def decompose(series: np.ndarray, period: int, model: str = "additive") -> dict:
    """Classical decomposition into trend, seasonal and residual components.

    Additive: series = trend + seasonal + residual exactly everywhere (edges
    use extrapolated trend). Seasonal component has zero mean per period.
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    if model not in ("additive", "multiplicative"):
        raise ValueError(f"unknown model {model!r}")
    if x.size < 2 * period:
        raise DomainError("need T >= 2*period to decompose")
    if model == "multiplicative" and (x <= 0).any():
        raise DomainError("multiplicative decomposition needs positive values")

    trend = _centered_ma(x, period)
    detrended = x - trend if model == "additive" else x / trend
    phases = np.arange(x.size) % period
    seasonal_means = np.array(
        [detrended[phases == p].mean() for p in range(period)]
    )
    if model == "additive":
        seasonal_means = seasonal_means - seasonal_means.mean()
        seasonal = seasonal_means[phases]
        residual = x - trend - seasonal
    else:
        seasonal_means = seasonal_means / seasonal_means.mean()
        seasonal = seasonal_means[phases]
        residual = x / (trend * seasonal)
    return {"trend": trend, "seasonal": seasonal, "residual": residual}


def explained_variance(components: dict, original: np.ndarray) -> dict:
    """Percent of the original sum of squares carried by each component, plus
    the residual standard deviation. Components are not orthogonal, so the
    percents need not sum to 100."""
    x = np.asarray(original, dtype=np.float64).ravel()
    ss = float(np.dot(x, x))
    if ss == 0:
        raise DomainError("explained variance undefined for zero-energy input")
    out = {}
    for name in ("trend", "seasonal", "residual"):
        c = np.asarray(components[name], dtype=np.float64).ravel()
        if c.size != x.size:
            raise ValueError("component/original length mismatch")
        out[name] = 100.0 * float(np.dot(c, c)) / ss
    out["residual_std"] = float(np.std(components["residual"]))
    return out


def audit_dataset(ts: TimeSeriesSet, n: int = 30, sample_length: int = 13,
                  repeats: int = 1000, period: int = 7, max_lags: int = 10,
                  seed: int = 0) -> AuditReport:
    """Randomness audit over a cohort.

    Each repeat draws `n` random (series, start) slices of `sample_length`
    steps; the runs-test p-value and ACF ratio of a slice are averaged across
    the d features, then across the n slices. Mean/std over repeats are
    reported. Decomposition shares are computed once on the full series.
    """
    if sample_length > ts.n_steps:
        raise ValueError("sample_length exceeds series length")
    if sample_length <= max_lags:
        max_lags = sample_length - 1
    rng = np.random.default_rng(seed)
    v = ts.values
    per_repeat_p = []
    per_repeat_acf = []
    skipped = 0
    for _ in range(repeats):
        ps, ratios = [], []
        for _ in range(n):
            i = rng.integers(ts.n_series)
            s = rng.integers(ts.n_steps - sample_length + 1)
            chunk = v[i, s:s + sample_length]  # [L, d]
            try:
                p = np.mean([runs_test(chunk[:, j]) for j in range(ts.n_features)])
                r = np.mean([acf_ratio(chunk[:, j], max_lags) for j in range(ts.n_features)])
            except UndefinedTestError:
                skipped += 1
                continue
            ps.append(p)
            ratios.append(r)
        if ps:
            per_repeat_p.append(np.mean(ps))
            per_repeat_acf.append(np.mean(ratios))

    # decomposition accounting on full series (averaged across series/features)
    ev = {"trend": [], "seasonal": [], "residual": []}
    res_stds = []
    for i in range(min(ts.n_series, 64)):
        for j in range(ts.n_features):
            x = v[i, :, j]
            if np.ptp(x) == 0:
                continue
            comp = decompose(x, period)
            e = explained_variance(comp, x)
            for k in ev:
                ev[k].append(e[k])
            res_stds.append(e["residual_std"])

    return AuditReport(
        runs_p_mean=float(np.mean(per_repeat_p)),
        runs_p_std=float(np.std(per_repeat_p)),
        acf_ratio_mean=float(np.mean(per_repeat_acf)),
        acf_ratio_std=float(np.std(per_repeat_acf)),
        explained_variance={k: float(np.mean(vv)) if vv else 0.0 for k, vv in ev.items()},
        residual_std=float(np.mean(res_stds)) if res_stds else 0.0,
        n_samples=n,
        sample_length=sample_length,
        repeats=repeats,
        skipped_samples=skipped,
    )
