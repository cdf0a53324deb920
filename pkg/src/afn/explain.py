"""Explanation layer: per-node Shapley tables over the SOM grid, attention
point extraction and the attention-blended feature ranking.

The Shapley surrogate for a grid node is the soft assignment probability of
that node under the encoder, evaluated as a function of the raw feature
vector with the node's representative condition held fixed. Attributions are
exact (full subset enumeration) up to 12 features and switch to permutation
sampling above that.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from math import factorial

import numpy as np
import torch

from .convae_som import som_assign
from .ifm import AfnModel, Forecast, UnsupportedOperationError, \
    _prepare_training_arrays
from .data import TimeSeriesSet

TOP_K = 5
EXACT_MAX_FEATURES = 12


def shapley_values(f, x: np.ndarray, background: np.ndarray,
                   n_permutations: int = 256, seed: int = 0) -> np.ndarray:
    """Shapley attribution of scalar f at point x against a background set.

    The coalition value v(S) is the mean of f over hybrid points that take
    x's values on S and background values elsewhere. Exact enumeration is
    used up to EXACT_MAX_FEATURES features; antithetic permutation sampling
    beyond that. f must accept a [n, d] array and return [n] scores.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    bg = np.atleast_2d(np.asarray(background, dtype=np.float64))
    d = x.shape[0]
    if bg.shape[1] != d:
        raise ValueError("background feature dimension mismatch")
    if d <= EXACT_MAX_FEATURES:
        return _shapley_exact(f, x, bg)
    return _shapley_sampled(f, x, bg, n_permutations, seed)


def _coalition_values(f, x: np.ndarray, bg: np.ndarray,
                      masks: np.ndarray) -> np.ndarray:
    """v(S) for each 0/1 mask row: mean f over background-completed points."""
    n_sets, d = masks.shape
    n_bg = bg.shape[0]
    pts = np.where(masks[:, None, :].astype(bool), x, bg[None, :, :])
    vals = np.asarray(f(pts.reshape(-1, d)), dtype=np.float64)
    return vals.reshape(n_sets, n_bg).mean(axis=1)


def _shapley_exact(f, x: np.ndarray, bg: np.ndarray) -> np.ndarray:
    d = x.shape[0]
    n_sets = 1 << d
    masks = ((np.arange(n_sets)[:, None] >> np.arange(d)) & 1).astype(np.int8)
    v = _coalition_values(f, x, bg, masks)
    sizes = masks.sum(axis=1)
    # weight of a coalition S (not containing j): |S|! (d-|S|-1)! / d!
    w = np.array([factorial(s) * factorial(d - s - 1) / factorial(d)
                  for s in range(d)])
    phi = np.zeros(d)
    for j in range(d):
        without = (masks[:, j] == 0)
        idx = np.flatnonzero(without)
        phi[j] = np.sum(w[sizes[idx]] * (v[idx | (1 << j)] - v[idx]))
    return phi


def _shapley_sampled(f, x: np.ndarray, bg: np.ndarray,
                     n_permutations: int, seed: int) -> np.ndarray:
    d = x.shape[0]
    rng = np.random.default_rng(seed)
    masks = []
    slots = []  # (perm index pair) bookkeeping via sequential diffs
    for _ in range(n_permutations):
        perm = rng.permutation(d)
        m = np.zeros(d, dtype=np.int8)
        masks.append(m.copy())
        for j in perm:
            m[j] = 1
            masks.append(m.copy())
        slots.append(perm)
    v = _coalition_values(f, x, bg, np.asarray(masks))
    phi = np.zeros(d)
    row = 0
    for perm in slots:
        for step, j in enumerate(perm):
            phi[j] += v[row + step + 1] - v[row + step]
        row += d + 1
    return phi / n_permutations


@dataclass
class ShapTable:
    """Per-node top feature attributions plus representative raw features."""

    entries: dict          # (i, j) -> list[(feature_name, value)], <= TOP_K
    representatives: dict  # (i, j) -> raw feature vector [d]
    feature_names: list = field(default_factory=list)

    def top_features(self, node: tuple) -> list:
        return self.entries[tuple(node)]

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "nodes": {
                f"{i},{j}": {
                    "top": [[name, float(v)] for name, v in self.entries[(i, j)]],
                    "representative": [float(v) for v in self.representatives[(i, j)]],
                }
                for (i, j) in sorted(self.entries)
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShapTable":
        entries, reps = {}, {}
        for key, node in d["nodes"].items():
            i, j = (int(p) for p in key.split(","))
            entries[(i, j)] = [(name, float(v)) for name, v in node["top"]]
            reps[(i, j)] = np.asarray(node["representative"], dtype=np.float64)
        return cls(entries=entries, representatives=reps,
                   feature_names=list(d["feature_names"]))

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load_json(cls, path) -> "ShapTable":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _node_membership_scorer(model: AfnModel, node_index: int,
                            condition: np.ndarray):
    """Raw feature vector -> soft assignment probability of one grid node,
    with the condition held fixed at the node's representative condition."""
    cs = model.convae_som
    c_row = torch.as_tensor(condition, dtype=torch.get_default_dtype())

    def f(x_raw: np.ndarray) -> np.ndarray:
        x = torch.as_tensor(model.norm_stats.apply(np.atleast_2d(x_raw)),
                            dtype=torch.get_default_dtype())
        c = c_row.expand(x.shape[0], -1)
        with torch.no_grad():
            z = cs.encode(x, c)["z"]
            q = cs.grid.soft_assign(z, cs.alpha)
        return q[:, node_index].numpy().astype(np.float64)

    return f


def fit_som_shap(model: AfnModel, train: TimeSeriesSet,
                 background_size: int = 100, seed: int = 0) -> ShapTable:
    """Per-node Shapley table: attribution of the node membership score at
    the node's representative raw feature vector.

    The representative of a node is the training point whose latent is
    nearest to the node centroid; nodes with no assigned training point fall
    back to the decoded centroid. The background set is sampled stratified
    by node assignment.
    """
    if not model.train_log:
        raise ValueError("model has no training history; train it first")
    cfg = model.cfg
    arrays = _prepare_training_arrays(train, model)
    n, t, d = arrays["x"].shape
    flat_x = arrays["x"].reshape(-1, d)
    flat_c = arrays["c"].reshape(-1, cfg.rho)
    with torch.no_grad():
        z = model.convae_som.encode(flat_x, flat_c)["z"]
        assign = model.convae_som.grid.assign(z).numpy()
    raw = train.values.reshape(-1, d)

    rng = np.random.default_rng(seed)
    grid = model.convae_som.grid
    n_nodes = grid.n_nodes

    # background: stratified by node, filled uniformly if strata are short
    per_node = max(1, background_size // n_nodes)
    bg_idx = []
    for k in range(n_nodes):
        members = np.flatnonzero(assign == k)
        if members.size:
            take = min(per_node, members.size)
            bg_idx.extend(rng.choice(members, take, replace=False).tolist())
    if len(bg_idx) < background_size:
        extra = rng.choice(raw.shape[0],
                           background_size - len(bg_idx), replace=False)
        bg_idx.extend(extra.tolist())
    background = raw[np.asarray(bg_idx[:background_size])]

    # cohort mode condition, for empty-node fallbacks
    mode_dist = flat_c.mean(0).numpy()
    mode_c = np.zeros(cfg.rho)
    mode_c[int(mode_dist.argmax())] = 1.0

    entries, reps = {}, {}
    with torch.no_grad():
        cent = grid.centroids
        for k in range(n_nodes):
            node = grid.coords(k)
            members = np.flatnonzero(assign == k)
            if members.size:
                dist = (z[members] - cent[k]).pow(2).sum(-1)
                pick = int(members[int(dist.argmin())])
                x_rep = raw[pick]
                c_rep = flat_c[pick].numpy().astype(np.float64)
            else:
                x_norm = model.convae_som.decode(
                    cent[k].unsqueeze(0),
                    torch.as_tensor(mode_c, dtype=cent.dtype).unsqueeze(0))
                x_rep = model.norm_stats.invert(
                    x_norm.numpy().astype(np.float64)).ravel()
                c_rep = mode_c
            scorer = _node_membership_scorer(model, k, c_rep)
            phi = shapley_values(scorer, x_rep, background, seed=seed + k)
            order = np.argsort(-np.abs(phi), kind="stable")[:TOP_K]
            entries[node] = [(train.feature_names[j], float(phi[j]))
                             for j in order]
            reps[node] = x_rep.astype(np.float64)
    return ShapTable(entries=entries, representatives=reps,
                     feature_names=list(train.feature_names))


def attention_points(fc: Forecast, threshold_quantile: float = 0.9) -> list:
    """History steps whose aggregated attention exceeds the quantile
    threshold; falls back to the earliest argmax so the result is never
    empty."""
    if fc.attention is None:
        raise UnsupportedOperationError("attention is ablated for this model")
    agg = fc.attention.mean(axis=0)
    if threshold_quantile <= 0.0:
        return list(range(agg.shape[0]))
    cut = np.quantile(agg, threshold_quantile)
    steps = np.flatnonzero(agg > cut)
    if steps.size == 0:
        return [int(agg.argmax())]
    return [int(s) for s in steps]


def _acceleration(series_raw: np.ndarray, feature_idx: int,
                  steps: list) -> float:
    """Mean absolute first difference of the raw feature over the attention
    window extended by one step on each side."""
    x = np.asarray(series_raw, dtype=np.float64)[:, feature_idx]
    lo = max(0, min(steps) - 1)
    hi = min(x.shape[0] - 1, max(steps) + 1)
    if hi <= lo:
        return 0.0
    return float(np.abs(np.diff(x[lo:hi + 1])).mean())


@dataclass
class FeatureRanking:
    """Features ordered by (mean |shapley| desc, acceleration desc)."""

    ranking: list  # [(feature, mean_abs_shapley, acceleration)]

    def features(self) -> list:
        return [name for name, _, _ in self.ranking]

    def to_dict(self) -> dict:
        return {"ranking": [[name, float(s), float(a)]
                            for name, s, a in self.ranking]}


def rank_features(fc: Forecast, table: ShapTable, attentive_steps: list,
                  series_raw: np.ndarray | None = None) -> FeatureRanking:
    """Union of top features across the attentive steps' nodes, ranked by
    mean |shapley| with acceleration magnitude as the tiebreak."""
    if not attentive_steps:
        raise ValueError("attention set is empty")
    shap_by_feature: dict = {}
    for t in attentive_steps:
        node = tuple(fc.node_path[t])
        for name, value in table.top_features(node):
            shap_by_feature.setdefault(name, []).append(abs(value))
    if series_raw is None:
        series_raw = fc.x_hist
    rows = []
    for name, vals in shap_by_feature.items():
        accel = 0.0
        if series_raw is not None:
            accel = _acceleration(series_raw, fc.feature_names.index(name),
                                  attentive_steps)
        rows.append((name, float(np.mean(vals)), accel))
    rows.sort(key=lambda r: (-r[1], -r[2], r[0]))
    return FeatureRanking(ranking=rows)


def dominant_feature_map(table: ShapTable) -> dict:
    """Top feature per grid node, keyed by "i,j"."""
    return {f"{i},{j}": table.entries[(i, j)][0][0]
            for (i, j) in sorted(table.entries)}
