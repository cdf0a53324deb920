"""Data layer: containers, normalization, splitting, CSV ingestion and the
synthetic generator."""

import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afn.data import NormStats, RegimeParams, SynthConfig, TimeSeriesSet, \
    generate_synthetic, load_csv, split, zscore_fit_apply

from conftest import TINY_SYNTH


def _small_set(n=6, t=20, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return TimeSeriesSet(series_ids=[f"s{i}" for i in range(n)],
                         values=rng.normal(size=(n, t, d)),
                         feature_names=[f"f{j}" for j in range(d)])


class TestTimeSeriesSet:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            TimeSeriesSet(series_ids=["a"], values=np.zeros((2, 3)),
                          feature_names=["x"])

    def test_rejects_nan(self):
        v = np.zeros((1, 5, 1))
        v[0, 2, 0] = np.nan
        with pytest.raises(ValueError):
            TimeSeriesSet(series_ids=["a"], values=v, feature_names=["x"])

    def test_id_and_name_lengths(self):
        with pytest.raises(ValueError):
            TimeSeriesSet(series_ids=["a", "b"], values=np.zeros((1, 5, 1)),
                          feature_names=["x"])
        with pytest.raises(ValueError):
            TimeSeriesSet(series_ids=["a"], values=np.zeros((1, 5, 1)),
                          feature_names=["x", "y"])

    def test_label_shape(self):
        with pytest.raises(ValueError):
            TimeSeriesSet(series_ids=["a"], values=np.zeros((1, 5, 1)),
                          feature_names=["x"],
                          regime_labels=np.zeros((1, 4), dtype=int))


class TestNormalization:
    def test_round_trip(self):
        ts = _small_set()
        normed, stats = zscore_fit_apply(ts)
        back = stats.invert(normed.values)
        assert np.allclose(back, ts.values, atol=1e-12)

    def test_standardizes(self):
        ts = _small_set(seed=3)
        normed, _ = zscore_fit_apply(ts)
        flat = normed.values.reshape(-1, ts.n_features)
        assert np.allclose(flat.mean(0), 0.0, atol=1e-10)
        assert np.allclose(flat.std(0), 1.0, atol=1e-10)

    def test_constant_feature_floored(self):
        ts = _small_set()
        v = ts.values.copy()
        v[:, :, 1] = 4.0
        ts2 = TimeSeriesSet(series_ids=ts.series_ids, values=v,
                            feature_names=ts.feature_names)
        with pytest.warns(UserWarning):
            _, stats = zscore_fit_apply(ts2)
        assert stats.std[1] == 1.0

    def test_rejects_nonpositive_std(self):
        with pytest.raises(ValueError):
            NormStats(mean=np.zeros(2), std=np.array([1.0, 0.0]))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_apply_invert_identity(self, seed):
        rng = np.random.default_rng(seed)
        stats = NormStats(mean=rng.normal(size=3),
                          std=np.abs(rng.normal(size=3)) + 0.1)
        x = rng.normal(size=(7, 3)) * 10
        assert np.allclose(stats.invert(stats.apply(x)), x, atol=1e-9)

    def test_dict_round_trip(self):
        stats = NormStats(mean=np.array([1.0, 2.0]), std=np.array([3.0, 4.0]))
        again = NormStats.from_dict(stats.to_dict())
        assert np.array_equal(again.mean, stats.mean)
        assert np.array_equal(again.std, stats.std)


class TestSplit:
    def test_partition_exact(self):
        ts = _small_set(n=10)
        a, b = split(ts, 0.7, seed=1)
        assert a.n_series == 7 and b.n_series == 3
        assert set(a.series_ids) | set(b.series_ids) == set(ts.series_ids)
        assert not set(a.series_ids) & set(b.series_ids)

    def test_seeded(self):
        ts = _small_set(n=10)
        a1, _ = split(ts, 0.5, seed=2)
        a2, _ = split(ts, 0.5, seed=2)
        assert a1.series_ids == a2.series_ids

    def test_bad_ratio(self):
        with pytest.raises(ValueError):
            split(_small_set(), 1.0)


class TestSynthetic:
    def test_shapes_and_labels(self):
        cfg = SynthConfig(**{**TINY_SYNTH,
                             "regime_transition_matrix": np.asarray(
                                 TINY_SYNTH["regime_transition_matrix"]),
                             "regimes": [RegimeParams(
                                 mean=np.asarray(r["mean"]),
                                 seasonal_amplitude=r["seasonal_amplitude"],
                                 seasonal_period=r["seasonal_period"])
                                 for r in TINY_SYNTH["regimes"]]})
        ts = generate_synthetic(cfg)
        assert ts.values.shape == (cfg.N, cfg.T, cfg.d)
        assert ts.regime_labels.shape == (cfg.N, cfg.T)
        assert ts.regime_labels.min() >= 0
        assert ts.regime_labels.max() < cfg.R

    def test_deterministic(self, tmp_path):
        p = tmp_path / "synth.json"
        p.write_text(json.dumps(TINY_SYNTH))
        a = generate_synthetic(SynthConfig.from_json(p))
        b = generate_synthetic(SynthConfig.from_json(p))
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.regime_labels, b.regime_labels)

    def test_transition_matrix_validated(self):
        bad = dict(TINY_SYNTH)
        bad["regime_transition_matrix"] = [[0.5, 0.5, 0.5]] * 3
        with pytest.raises(Exception):
            SynthConfig(
                N=4, T=20, d=3, R=3,
                regime_transition_matrix=np.asarray(
                    bad["regime_transition_matrix"]),
                regimes=[RegimeParams(mean=np.zeros(3))] * 3)


class TestLoadCsv:
    def test_round_trip(self, tmp_path):
        ts = _small_set(n=3, t=8)
        rows = []
        for i, sid in enumerate(ts.series_ids):
            for t in range(ts.n_steps):
                rows.append({"series_id": sid, "timestamp": t,
                             "f0": ts.values[i, t, 0],
                             "f1": ts.values[i, t, 1]})
        path = tmp_path / "data.csv"
        pd.DataFrame(rows).to_csv(path, index=False)
        loaded = load_csv(path, schema=["f0", "f1"])
        assert loaded.values.shape == ts.values.shape
        order = [loaded.series_ids.index(s) for s in ts.series_ids]
        assert np.allclose(loaded.values[order], ts.values)
