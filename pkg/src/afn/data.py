"""Dataset model, CSV ingestion, normalization, splitting and the synthetic
regime-switching generator.

All values live in float64 numpy arrays shaped [N, T, d]. Series are
equal-length after ingestion; missing values are imputed (forward-fill then
back-fill) or ingestion fails.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd


class SchemaError(ValueError):
    """A required column is missing or a cell cannot be parsed."""


class ConfigError(ValueError):
    """An invalid generator / split configuration."""


DEFAULT_FEATURES = [
    "total_time_spent",
    "late_night_games",
    "cash_added",
    "cash_games_played",
    "win_percentage",
    "deposit_limit_requests",
    "invalid_declarations",
    "drop_adherence",
]


@dataclass(frozen=True)
class TimeSeriesSet:
    """N multivariate series of equal length T with d named features."""

    series_ids: list
    values: np.ndarray  # [N, T, d]
    feature_names: list[str]
    regime_labels: np.ndarray | None = None  # [N, T] ints, synthetic only
    sampling_period: str = "1d"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"values must be [N, T, d], got shape {v.shape}")
        object.__setattr__(self, "values", v)
        n, t, d = v.shape
        if len(self.series_ids) != n:
            raise ValueError("series_ids length does not match N")
        if len(self.feature_names) != d:
            raise ValueError("feature_names length does not match d")
        if not np.isfinite(v).all():
            raise ValueError("values contain NaN/inf after ingestion")
        if self.regime_labels is not None:
            r = np.asarray(self.regime_labels, dtype=np.int64)
            if r.shape != (n, t):
                raise ValueError("regime_labels must be [N, T]")
            if r.min() < 0:
                raise ValueError("regime_labels must be non-negative")
            object.__setattr__(self, "regime_labels", r)

    @property
    def n_series(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def n_features(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class NormStats:
    """Per-feature z-score statistics; std is floored to 1 for constant
    features (a warning is emitted at fit time)."""

    mean: np.ndarray  # [d]
    std: np.ndarray  # [d], strictly positive

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64).ravel()
        s = np.asarray(self.std, dtype=np.float64).ravel()
        if m.shape != s.shape:
            raise ValueError("mean/std shape mismatch")
        if (s <= 0).any():
            raise ValueError("std must be strictly positive")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))


@dataclass(frozen=True)
class RegimeParams:
    """Emission parameters of one hidden regime."""

    mean: np.ndarray  # [d]
    cov_scale: float = 1.0
    trend_slope: np.ndarray | float = 0.0  # per-feature or scalar, per unit t/T
    seasonal_amplitude: np.ndarray | float = 0.0
    seasonal_period: int = 7


@dataclass(frozen=True)
class SynthConfig:
    """Configuration of the synthetic regime-switching generator."""

    N: int
    T: int
    d: int
    R: int
    regime_transition_matrix: np.ndarray  # [R, R] row-stochastic
    regimes: list[RegimeParams]
    noise_std: float = 0.1
    seed: int = 0
    feature_names: list[str] | None = None
    # echo events: a random spike on one feature repeats deterministically
    # event_lag steps later at event_echo of its amplitude, so the echo is
    # predictable from history while the spike itself is not
    event_rate: float = 0.0
    event_lag: int = 9
    event_amplitude: float = 0.0
    event_echo: float = 0.8
    event_feature: int = 0

    def __post_init__(self):
        if self.N < 1 or self.T < 1 or self.d < 1:
            raise ConfigError("N, T, d must be positive")
        if self.R < 1:
            raise ConfigError("R must be >= 1")
        p = np.asarray(self.regime_transition_matrix, dtype=np.float64)
        if p.shape != (self.R, self.R):
            raise ConfigError(f"transition matrix must be {self.R}x{self.R}")
        if (p < 0).any() or np.abs(p.sum(axis=1) - 1.0).max() > 1e-9:
            raise ConfigError("transition matrix rows must sum to 1")
        object.__setattr__(self, "regime_transition_matrix", p)
        if len(self.regimes) != self.R:
            raise ConfigError("need one RegimeParams per regime")

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        with open(path) as f:
            raw = json.load(f)
        regimes = [
            RegimeParams(
                mean=np.asarray(r["mean"], dtype=np.float64),
                cov_scale=float(r.get("cov_scale", 1.0)),
                trend_slope=np.asarray(r["trend_slope"], dtype=np.float64)
                if isinstance(r.get("trend_slope", 0.0), list)
                else float(r.get("trend_slope", 0.0)),
                seasonal_amplitude=float(r.get("seasonal_amplitude", 0.0)),
                seasonal_period=int(r.get("seasonal_period", 7)),
            )
            for r in raw["regimes"]
        ]
        return cls(
            N=int(raw["N"]),
            T=int(raw["T"]),
            d=int(raw["d"]),
            R=int(raw["R"]),
            regime_transition_matrix=np.asarray(raw["regime_transition_matrix"]),
            regimes=regimes,
            noise_std=float(raw.get("noise_std", 0.1)),
            seed=int(raw.get("seed", 0)),
            feature_names=raw.get("feature_names"),
            event_rate=float(raw.get("event_rate", 0.0)),
            event_lag=int(raw.get("event_lag", 9)),
            event_amplitude=float(raw.get("event_amplitude", 0.0)),
            event_echo=float(raw.get("event_echo", 0.8)),
            event_feature=int(raw.get("event_feature", 0)),
        )


def load_csv(path, schema: list[str], fill_missing: bool = True,
             pad_short_series: bool = False) -> TimeSeriesSet:
    """Load `series_id,timestamp,<feature...>` CSV into a TimeSeriesSet.

    Series are sorted by timestamp. Unequal lengths are truncated to the
    shortest series, or padded (edge values repeated) when
    ``pad_short_series`` is set.
    """
    df = pd.read_csv(path)
    required = ["series_id", "timestamp"] + list(schema)
    for col in required:
        if col not in df.columns:
            raise SchemaError(f"missing required column: {col!r}")
    for col in schema:
        coerced = pd.to_numeric(df[col], errors="coerce")
        bad = coerced.isna() & df[col].notna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise SchemaError(f"non-numeric value in column {col!r} at row {row}")
        df[col] = coerced

    series = []
    ids = []
    for sid, g in df.groupby("series_id", sort=True):
        g = g.sort_values("timestamp")
        block = g[list(schema)].to_numpy(dtype=np.float64)
        if fill_missing:
            block = pd.DataFrame(block).ffill().bfill().to_numpy()
        if np.isnan(block).any():
            raise SchemaError(f"series {sid!r} contains unimputable missing values")
        series.append(block)
        ids.append(sid)
    if not series:
        raise SchemaError("no series found in file")

    lengths = [s.shape[0] for s in series]
    if len(set(lengths)) > 1:
        if pad_short_series:
            t_max = max(lengths)
            series = [
                np.vstack([s, np.repeat(s[-1:], t_max - s.shape[0], axis=0)])
                for s in series
            ]
        else:
            t_min = min(lengths)
            series = [s[:t_min] for s in series]
    return TimeSeriesSet(ids, np.stack(series), list(schema))


def zscore_fit_apply(ts: TimeSeriesSet) -> tuple[TimeSeriesSet, NormStats]:
    """Fit per-feature z-score stats on the whole set and apply them."""
    if ts.n_steps < 2:
        raise ValueError("need T >= 2 to fit normalization")
    flat = ts.values.reshape(-1, ts.n_features)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    constant = std <= 0
    if constant.any():
        names = [ts.feature_names[j] for j in np.flatnonzero(constant)]
        warnings.warn(f"constant features {names} get std=1 fallback")
        std = np.where(constant, 1.0, std)
    stats = NormStats(mean, std)
    return replace(ts, values=stats.apply(ts.values)), stats


def split(ts: TimeSeriesSet, ratio: float, seed: int = 0
          ) -> tuple[TimeSeriesSet, TimeSeriesSet]:
    """Partition series (not time) into train/test; exact and seeded."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    n = ts.n_series
    if n < 2:
        raise ValueError("need at least 2 series to split")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round(ratio * n))
    n_train = min(max(n_train, 1), n - 1)
    idx_train = np.sort(perm[:n_train])
    idx_test = np.sort(perm[n_train:])

    def take(idx):
        return TimeSeriesSet(
            [ts.series_ids[i] for i in idx],
            ts.values[idx],
            ts.feature_names,
            None if ts.regime_labels is None else ts.regime_labels[idx],
            ts.sampling_period,
        )

    return take(idx_train), take(idx_test)


def generate_synthetic(cfg: SynthConfig) -> TimeSeriesSet:
    """Sample a regime-switching cohort: hidden Markov regime path per series,
    emissions = regime mean + trend + seasonality + Gaussian noise."""
    rng = np.random.default_rng(cfg.seed)
    p = cfg.regime_transition_matrix
    # stationary start: principal left eigenvector of the chain
    if cfg.R == 1:
        start = np.array([1.0])
    else:
        w, v = np.linalg.eig(p.T)
        i = int(np.argmin(np.abs(w - 1.0)))
        start = np.abs(np.real(v[:, i]))
        start = start / start.sum()

    t_axis = np.arange(cfg.T, dtype=np.float64)
    values = np.empty((cfg.N, cfg.T, cfg.d))
    labels = np.empty((cfg.N, cfg.T), dtype=np.int64)
    for i in range(cfg.N):
        r = rng.choice(cfg.R, p=start)
        for t in range(cfg.T):
            labels[i, t] = r
            reg = cfg.regimes[r]
            slope = np.broadcast_to(np.asarray(reg.trend_slope, dtype=np.float64), (cfg.d,))
            amp = np.broadcast_to(np.asarray(reg.seasonal_amplitude, dtype=np.float64), (cfg.d,))
            seasonal = amp * np.sin(2.0 * np.pi * t_axis[t] / reg.seasonal_period)
            noise = rng.standard_normal(cfg.d) * cfg.noise_std * reg.cov_scale
            values[i, t] = reg.mean + slope * (t_axis[t] / cfg.T) + seasonal + noise
            r = rng.choice(cfg.R, p=p[r])
        if cfg.event_rate > 0.0 and cfg.event_amplitude != 0.0:
            spikes = np.flatnonzero(rng.random(cfg.T) < cfg.event_rate)
            for t0 in spikes:
                values[i, t0, cfg.event_feature] += cfg.event_amplitude
                te = t0 + cfg.event_lag
                if te < cfg.T:
                    values[i, te, cfg.event_feature] += (
                        cfg.event_echo * cfg.event_amplitude)

    names = cfg.feature_names or [
        DEFAULT_FEATURES[j] if j < len(DEFAULT_FEATURES) else f"feature_{j}"
        for j in range(cfg.d)
    ]
    return TimeSeriesSet(
        [f"synth_{i:05d}" for i in range(cfg.N)], values, list(names), labels
    )
