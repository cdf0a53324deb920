"""Actionable forecasting toolkit: interpretable SOM-grid forecasts for
non-smooth multivariate time series, with randomness audits, burst-based risk
classification, Shapley explanations and what-if interventions."""

from .bundle import load_bundle, save_bundle
from .config import ModelConfig
from .data import NormStats, SynthConfig, TimeSeriesSet, generate_synthetic, \
    load_csv, split, zscore_fit_apply
from .explain import ShapTable, attention_points, fit_som_shap, rank_features
from .ifm import AfnModel, Forecast, forecast, train_afn
from .risk import RiskMap, classify, intervene, risk_map_from_regimes, \
    set_risk_map
from .transition import TransitionModel, pretrain_tm

__all__ = [
    "AfnModel",
    "Forecast",
    "ModelConfig",
    "NormStats",
    "RiskMap",
    "ShapTable",
    "SynthConfig",
    "TimeSeriesSet",
    "TransitionModel",
    "attention_points",
    "classify",
    "fit_som_shap",
    "forecast",
    "generate_synthetic",
    "intervene",
    "load_bundle",
    "load_csv",
    "pretrain_tm",
    "rank_features",
    "risk_map_from_regimes",
    "save_bundle",
    "set_risk_map",
    "split",
    "train_afn",
    "zscore_fit_apply",
]

__version__ = "0.1.0"
