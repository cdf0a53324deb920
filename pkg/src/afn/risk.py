"""Risk evaluation layer: per-node risk maps, burst-based SR/SH
classification with time-to-survive, cohort metrics, what-if interventions
and the jump/condition interpretability diagnostic.

SR (sustained risky) means the trajectory's SOM node path contains a run of
consecutive dark nodes longer than the burst threshold; everything else is
SH (sustained healthy). Risk scores per node come from a pluggable scorer;
the default derives them from the fraction of designated-risky training
points assigned to each node.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import TimeSeriesSet
from .ifm import AfnModel, Forecast, UnsupportedOperationError, forecast, \
    _prepare_training_arrays


class ScorerError(ValueError):
    """A risk scorer returned values outside [0, 1]."""


@dataclass
class RiskMap:
    """Score in [0, 1] per grid node; a node is dark iff its score > 0."""

    scores: np.ndarray  # [height, width]

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2:
            raise ValueError("scores must be a 2-d grid")
        if (s < 0).any() or (s > 1).any():
            raise ScorerError("risk scores must lie in [0, 1]")
        self.scores = s

    def dark(self, node: tuple) -> bool:
        i, j = node
        return bool(self.scores[i, j] > 0.0)

    def to_dict(self) -> dict:
        h, w = self.scores.shape
        return {f"{i},{j}": float(self.scores[i, j])
                for i in range(h) for j in range(w)}

    @classmethod
    def from_dict(cls, d: dict, height: int = 8, width: int = 8) -> "RiskMap":
        s = np.zeros((height, width))
        for key, v in d.items():
            i, j = (int(p) for p in key.split(","))
            s[i, j] = float(v)
        return cls(scores=s)


@dataclass
class RiskAssessment:
    """SR/SH label with burst location and intervention window."""

    label: str                       # "SR" or "SH"
    burst_start: int | None = None   # index on the history+horizon axis
    tts: int | None = None           # steps until the burst, clamped at 0
    dark_sequence: list = field(default_factory=list)

    @property
    def is_sr(self) -> bool:
        return self.label == "SR"


def _first_burst(dark: list, threshold: int) -> int | None:
    """Start index of the earliest run of dark flags longer than threshold."""
    run = 0
    for t, flag in enumerate(dark):
        run = run + 1 if flag else 0
        if run > threshold:
            return t - run + 1
    return None


def classify(forecast_nodes: list, risk_map: RiskMap,
             burst_threshold: int = 2,
             present_step: int | None = None) -> RiskAssessment:
    """SR iff the node path contains > burst_threshold consecutive dark
    nodes; the earliest qualifying burst fixes burst_start. When
    present_step is given, the time to survive is filled in as well."""
    if not forecast_nodes:
        raise ValueError("empty node path")
    if burst_threshold < 1:
        raise ValueError("burst threshold must be >= 1")
    dark = [risk_map.dark(n) for n in forecast_nodes]
    start = _first_burst(dark, burst_threshold)
    if start is None:
        return RiskAssessment(label="SH", dark_sequence=dark)
    out = RiskAssessment(label="SR", burst_start=start, dark_sequence=dark)
    if present_step is not None:
        out.tts = tts(out, present_step)
    return out


def tts(assessment: RiskAssessment, present_step: int) -> int:
    """Steps between the present and the burst start; bursts already inside
    the history clamp to 0."""
    if assessment.label != "SR":
        raise UnsupportedOperationError("time to survive is defined for SR only")
    delta = assessment.burst_start - present_step
    if delta < 0:
        warnings.warn("burst starts inside the history; tts clamped to 0")
        return 0
    return int(delta)


def cohort_metrics(assessments: list, truth: list | None = None) -> dict:
    """Verbosity (fraction classified SR) plus precision/recall when ground
    truth booleans are supplied. Precision is None when nothing is
    predicted positive."""
    if not assessments:
        raise ValueError("empty cohort")
    pred = np.array([a.is_sr for a in assessments], dtype=bool)
    out = {"verbosity": float(pred.mean()), "precision": None, "recall": None}
    if truth is not None:
        t = np.asarray(truth, dtype=bool)
        if t.shape != pred.shape:
            raise ValueError("truth length mismatch")
        tp = int((pred & t).sum())
        out["precision"] = tp / int(pred.sum()) if pred.any() else None
        out["recall"] = tp / int(t.sum()) if t.any() else None
    return out


def set_risk_map(model: AfnModel, scorer) -> RiskMap:
    """Score every grid node with a pluggable scorer over the node's decoded
    representative features and persist the map on the model.

    scorer: raw feature vector [d] -> score in [0, 1].
    """
    grid = model.convae_som.grid
    cfg = model.cfg
    c0 = torch.zeros(grid.n_nodes, cfg.rho)
    c0[:, 0] = 1.0
    with torch.no_grad():
        x_norm = model.convae_som.decode(grid.centroids, c0).numpy()
    reps = model.norm_stats.invert(x_norm.astype(np.float64))
    scores = np.zeros((grid.height, grid.width))
    for k in range(grid.n_nodes):
        i, j = grid.coords(k)
        scores[i, j] = float(scorer(reps[k]))
    rm = RiskMap(scores=scores)  # validates the range
    model.risk_map = rm
    return rm


def risk_map_from_regimes(model: AfnModel, train: TimeSeriesSet,
                          risky_regime: int = 2,
                          min_fraction: float = 0.5) -> RiskMap:
    """Default scorer: per-node fraction of training points drawn from the
    designated risky regime, assigned by the trained encoder. Nodes whose
    risky fraction falls below min_fraction score exactly 0 so they stay
    light; a dark flag is score > 0, and without the floor every mixed node
    would count as dark."""
    if train.regime_labels is None:
        raise ValueError("training set carries no regime labels")
    cfg = model.cfg
    arrays = _prepare_training_arrays(train, model)
    n, t, d = arrays["x"].shape
    with torch.no_grad():
        z = model.convae_som.encode(arrays["x"].reshape(-1, d),
                                    arrays["c"].reshape(-1, cfg.rho))["z"]
        assign = model.convae_som.grid.assign(z).numpy()
    labels = train.regime_labels.reshape(-1)
    grid = model.convae_som.grid
    scores = np.zeros((grid.height, grid.width))
    for k in range(grid.n_nodes):
        members = labels[assign == k]
        if members.size:
            frac = float((members == risky_regime).mean())
            if frac >= min_fraction:
                i, j = grid.coords(k)
                scores[i, j] = frac
    rm = RiskMap(scores=scores)
    model.risk_map = rm
    return rm


@dataclass
class InterventionResult:
    """Before/after outcome of a counterfactual feature reduction."""

    feature: str
    reduction_pct: float
    steps: list
    before: RiskAssessment
    after: RiskAssessment
    forecast_before: Forecast | None = None
    forecast_after: Forecast | None = None

    @property
    def label_flip(self) -> bool:
        return self.before.label != self.after.label

    def to_dict(self) -> dict:
        def asmt(a):
            return {"label": a.label, "burst_start": a.burst_start,
                    "tts": a.tts, "dark_sequence": list(map(bool, a.dark_sequence))}
        return {
            "feature": self.feature,
            "reduction_pct": float(self.reduction_pct),
            "steps": [int(s) for s in self.steps],
            "before": asmt(self.before),
            "after": asmt(self.after),
            "label_flip": self.label_flip,
        }


def intervene(series_raw: np.ndarray, feature: str, reduction_pct: float,
              steps, model: AfnModel, h: int,
              burst_threshold: int = 2, scope: str = "window"
              ) -> InterventionResult:
    """Scale one feature down at the given history steps, re-forecast and
    re-classify. steps may be a list of indices or "auto" for the attentive
    steps of the baseline forecast.

    scope picks the stretch of the node path that is classified: "window"
    (default) starts at the earliest intervened step, covering exactly the
    part of the trajectory a counterfactual can change; "horizon" classifies
    the forecast path only; "full" classifies history plus horizon."""
    if model.risk_map is None:
        raise ValueError("model has no risk map; call set_risk_map first")
    if not 0.0 < reduction_pct < 100.0:
        raise ValueError("reduction_pct must lie strictly inside (0, 100)")
    if feature not in model.feature_names:
        raise ValueError(f"unknown feature {feature!r}")
    series_raw = np.asarray(series_raw, dtype=np.float64)
    t_hist = series_raw.shape[0]

    fc_before = forecast(series_raw, h, model)
    if isinstance(steps, str) and steps == "auto":
        from .explain import attention_points
        steps = attention_points(fc_before)
    steps = [int(s) for s in steps]
    if any(s < 0 or s >= t_hist for s in steps):
        raise ValueError("intervention steps must lie within the history")

    j = model.feature_names.index(feature)
    modified = series_raw.copy()
    modified[steps, j] *= 1.0 - reduction_pct / 100.0
    fc_after = forecast(modified, h, model)

    if scope == "window":
        start = min(steps)
    elif scope == "horizon":
        start = t_hist
    elif scope == "full":
        start = 0
    else:
        raise ValueError("scope must be 'window', 'horizon' or 'full'")
    before = classify(fc_before.node_path[start:], model.risk_map,
                      burst_threshold, present_step=t_hist - start)
    after = classify(fc_after.node_path[start:], model.risk_map,
                     burst_threshold, present_step=t_hist - start)
    return InterventionResult(feature=feature, reduction_pct=reduction_pct,
                              steps=steps, before=before, after=after,
                              forecast_before=fc_before,
                              forecast_after=fc_after)


def intervene_cohort(cohort: TimeSeriesSet, feature: str,
                     reduction_pct: float, model: AfnModel, h: int,
                     steps="auto", burst_threshold: int = 2,
                     max_series: int | None = None) -> dict:
    """Cohort-level intervention: SR-volume and mean-TTS changes between the
    baseline and the counterfactual classification."""
    n = cohort.n_series if max_series is None else min(cohort.n_series,
                                                       max_series)
    results = [intervene(cohort.values[i], feature, reduction_pct, steps,
                         model, h, burst_threshold) for i in range(n)]
    before = [r.before for r in results]
    after = [r.after for r in results]
    v0 = cohort_metrics(before)["verbosity"]
    v1 = cohort_metrics(after)["verbosity"]
    tts0 = [a.tts for a in before if a.is_sr]
    tts1 = [a.tts for a in after if a.is_sr]
    delta_tts = None
    if tts0 and tts1:
        m0, m1 = float(np.mean(tts0)), float(np.mean(tts1))
        delta_tts = 100.0 * (m1 - m0) / m0 if m0 > 0 else None
    return {
        "feature": feature,
        "reduction_pct": float(reduction_pct),
        "sr_volume_before": v0,
        "sr_volume_after": v1,
        "delta_sr_volume": 100.0 * (v1 - v0),
        "delta_tts_pct": delta_tts,
        "results": results,
    }


def grid_jump_distances(node_path: list) -> np.ndarray:
    """Manhattan distance between successive nodes on the grid."""
    nodes = np.asarray(node_path, dtype=np.int64)
    return np.abs(np.diff(nodes, axis=0)).sum(axis=1).astype(np.float64)


def jump_condition_correlation(forecasts: list) -> dict:
    """Per-trajectory |Pearson r| between grid jump distance and the
    condition-switch indicator; zero-variance trajectories are skipped."""
    if len(forecasts) < 10:
        raise ValueError("need at least 10 forecasts")
    values = []
    skipped = 0
    for fc in forecasts:
        if len(fc.node_path) < 6:
            raise ValueError("each forecast needs at least 5 steps")
        jumps = grid_jump_distances(fc.node_path)
        disc = np.array([c.discrete for c in fc.conditions])
        switches = (np.diff(disc) != 0).astype(np.float64)
        if jumps.std() == 0 or switches.std() == 0:
            skipped += 1
            continue
        r = np.corrcoef(jumps, switches)[0, 1]
        values.append(abs(float(r)))
    return {
        "values": values,
        "mean": float(np.mean(values)) if values else None,
        "median": float(np.median(values)) if values else None,
        "skipped": skipped,
    }
