"""Transition module: windowed behavior clustering into pi-vectors, a deep
Markov model predicting the next latent state, and a conditional network
discretizing it into one of `rho` regime conditions.

The window clusterer is a pluggable stand-in (k-means over per-window
summaries of mean/std/slope per feature). The conditional network is kept
from collapsing onto one class by a pseudo-label warmup (k-means over the
pi-vectors) followed by a batch-entropy balancing term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.cluster import KMeans

from .config import ModelConfig
from .data import TimeSeriesSet


class ClusteringError(ValueError):
    pass


class HistoryError(ValueError):
    """Not enough history before t to build a pi-vector."""


class TrainingError(RuntimeError):
    pass


def window_summaries(series: np.ndarray, C: int) -> np.ndarray:
    """Per-window summary of a [T, d] series: mean, std and OLS slope of each
    feature over every length-C window (stride 1). Returns [T-C+1, 3d]."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < C:
        raise ValueError("series must be [T, d] with T >= C")
    w = sliding_window_view(x, C, axis=0)  # [T-C+1, d, C]
    mean = w.mean(axis=2)
    std = w.std(axis=2)
    tc = np.arange(C, dtype=np.float64) - (C - 1) / 2.0
    denom = float(np.dot(tc, tc)) if C > 1 else 1.0
    slope = (w * tc).sum(axis=2) / denom
    return np.concatenate([mean, std, slope], axis=1)


@dataclass
class WindowClusterModel:
    """K window-behavior clusters over per-window summaries."""

    K: int
    C: int
    centroids: np.ndarray  # [K, 3d]

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be >= 2")
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if not np.isfinite(self.centroids).all():
            raise ValueError("centroids must be finite")

    def assign(self, summaries: np.ndarray) -> np.ndarray:
        """Nearest-centroid assignment for [n, 3d] summaries."""
        d2 = ((summaries[:, None, :] - self.centroids[None]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)


def fit_window_clusters(train: TimeSeriesSet, K: int, C: int,
                        seed: int = 0, max_windows: int = 50000
                        ) -> WindowClusterModel:
    """Cluster per-window summaries of the training cohort into K behaviors."""
    if K < 2:
        raise ValueError("K must be >= 2")
    chunks = [window_summaries(train.values[i], C) for i in range(train.n_series)]
    s = np.concatenate(chunks, axis=0)
    if s.shape[0] < 10 * K:
        raise ClusteringError(f"need at least {10 * K} windows, got {s.shape[0]}")
    if np.ptp(s, axis=0).max() == 0:
        raise ClusteringError("all windows identical; clustering is degenerate")
    rng = np.random.default_rng(seed)
    if s.shape[0] > max_windows:
        s = s[rng.choice(s.shape[0], max_windows, replace=False)]
    km = KMeans(n_clusters=K, n_init=10, random_state=seed).fit(s)
    return WindowClusterModel(K=K, C=C, centroids=km.cluster_centers_)


def summarize_history(series: np.ndarray, t: int, C: int, M: int,
                      cm: WindowClusterModel) -> np.ndarray:
    """pi-vector at position t: proportions of the K clusters over the M
    stride-1 windows of length C inside the tau = C + M steps before t."""
    tau = C + M
    if t < tau:
        raise HistoryError(f"need t >= tau = {tau}, got t = {t}")
    hist = np.asarray(series, dtype=np.float64)[t - tau:t]
    s = window_summaries(hist, C)[:M]  # M stride-1 windows
    assign = cm.assign(s)
    pi = np.bincount(assign, minlength=cm.K).astype(np.float64) / M
    return pi


def pi_matrix(series: np.ndarray, cm: WindowClusterModel, C: int, M: int
              ) -> tuple[np.ndarray, int]:
    """All pi-vectors of a [T, d] series at positions tau..T-1.

    Returns ([T-tau, K], tau); row j is the pi-vector at position tau + j.
    """
    tau = C + M
    x = np.asarray(series, dtype=np.float64)
    T = x.shape[0]
    if T < tau + 1:
        raise HistoryError(f"series too short for tau = {tau}")
    s = window_summaries(x, C)  # [T-C+1, 3d]
    assign = cm.assign(s)
    onehot = np.eye(cm.K)[assign]  # [T-C+1, K]
    csum = np.vstack([np.zeros(cm.K), np.cumsum(onehot, axis=0)])
    # pi at position t counts windows starting at t-tau .. t-tau+M-1
    starts = np.arange(0, T - tau)
    pis = (csum[starts + M] - csum[starts]) / M
    return pis, tau


class TransitionModel(nn.Module):
    """Deep Markov model + conditional network over pi-vectors."""

    def __init__(self, cluster_model: WindowClusterModel, cfg: ModelConfig):
        super().__init__()
        self.cluster_model = cluster_model
        self.cfg = cfg
        self.K = cluster_model.K
        self.rho = cfg.rho
        self.C = cfg.C
        self.M = cfg.M

        layers = []
        prev = self.K
        for h in cfg.dmm_hidden:
            layers += [nn.Linear(prev, h), nn.ReLU()]
            prev = h
        layers.append(nn.Linear(prev, self.K))
        self.dmm = nn.Sequential(*layers)

        layers = []
        prev = self.K
        for h in cfg.cond_hidden:
            layers += [nn.Linear(prev, h), nn.ReLU()]
            prev = h
        layers.append(nn.Linear(prev, self.rho))
        self.cond_net = nn.Sequential(*layers)

    @property
    def tau_h(self) -> int:
        return self.C + self.M

    def forward(self, pi: torch.Tensor) -> torch.Tensor:
        """Next-state prediction, softmax-normalized onto the simplex."""
        return torch.softmax(self.dmm(pi), dim=-1)

    def condition_dist(self, pi: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.cond_net(pi), dim=-1)


@dataclass
class Condition:
    """Distribution over the rho regime conditions plus its argmax."""

    distribution: np.ndarray
    discrete: int

    @classmethod
    def from_dist(cls, dist: np.ndarray) -> "Condition":
        d = np.asarray(dist, dtype=np.float64).ravel()
        if abs(d.sum() - 1.0) > 1e-6 or (d < 0).any():
            raise ValueError("condition distribution must be a simplex vector")
        return cls(distribution=d, discrete=int(d.argmax()))


def dmm_predict(pi_prev: np.ndarray, tm: TransitionModel) -> np.ndarray:
    """One Markov step: predicted next pi-vector (on the simplex)."""
    with torch.no_grad():
        p = torch.as_tensor(pi_prev, dtype=torch.get_default_dtype()).reshape(1, -1)
        return tm(p).numpy().ravel().astype(np.float64)


def condition_of(pi: np.ndarray, tm: TransitionModel) -> Condition:
    """Discretize a pi-vector into a condition."""
    with torch.no_grad():
        p = torch.as_tensor(pi, dtype=torch.get_default_dtype()).reshape(1, -1)
        dist = tm.condition_dist(p).numpy().ravel().astype(np.float64)
    dist = dist / dist.sum()
    return Condition.from_dist(dist)


def transition_losses(pi_true: torch.Tensor, pi_hat: torch.Tensor,
                      c_true_dist: torch.Tensor, c_pred_dist: torch.Tensor,
                      eps: float = 1e-12) -> dict:
    """State-estimation loss (mean Euclidean norm), conditional cross-entropy
    with its 1/rho prefactor, and their exact sum."""
    l_mse = torch.norm(pi_true - pi_hat, dim=-1).mean()
    rho = c_pred_dist.shape[-1]
    ce = -(c_true_dist * torch.log(c_pred_dist + eps)).sum(dim=-1) / rho
    l_cond = ce.mean()
    return {
        "L_MSE": l_mse,
        "L_Conditional": l_cond,
        "L_Transition": l_mse + l_cond,
    }


def _pi_pairs(train: TimeSeriesSet, cm: WindowClusterModel, C: int, M: int):
    """(pi_t, pi_{t+1}, regime label at t) tuples across the cohort."""
    prev, nxt, labels = [], [], []
    for i in range(train.n_series):
        pis, tau = pi_matrix(train.values[i], cm, C, M)
        prev.append(pis[:-1])
        nxt.append(pis[1:])
        if train.regime_labels is not None:
            # label of the most recent step summarized by pi_{t+1}
            labels.append(train.regime_labels[i, tau:tau + pis.shape[0] - 1])
    prev = np.concatenate(prev)
    nxt = np.concatenate(nxt)
    lab = np.concatenate(labels) if labels else None
    return prev, nxt, lab


def pretrain_tm(train: TimeSeriesSet, cfg: ModelConfig) -> TransitionModel:
    """Pretrain the transition module on a training cohort.

    Schedule: warmup epochs on the state-estimation loss only, a pseudo-label
    phase anchoring the conditional network to a k-means partition of the
    pi-vectors, then the joint loss with a batch-entropy balancing term that
    keeps the condition head from collapsing.
    """
    torch.manual_seed(cfg.seed)
    cm = fit_window_clusters(train, cfg.K, cfg.C, seed=cfg.seed)
    tm = TransitionModel(cm, cfg)

    prev, nxt, _ = _pi_pairs(train, cm, cfg.C, cfg.M)
    pseudo = KMeans(n_clusters=cfg.rho, n_init=10, random_state=cfg.seed) \
        .fit_predict(nxt)

    x_prev = torch.as_tensor(prev, dtype=torch.get_default_dtype())
    x_next = torch.as_tensor(nxt, dtype=torch.get_default_dtype())
    y_pseudo = torch.as_tensor(pseudo, dtype=torch.long)

    opt = torch.optim.Adam(tm.parameters(), lr=cfg.tm_lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    n = x_prev.shape[0]
    history = []
    for epoch in range(cfg.tm_epochs):
        perm = torch.randperm(n, generator=gen)
        epoch_loss = 0.0
        for start in range(0, n, cfg.tm_batch_size):
            idx = perm[start:start + cfg.tm_batch_size]
            bp, bn, by = x_prev[idx], x_next[idx], y_pseudo[idx]
            opt.zero_grad()
            pi_hat = tm(bp)
            loss = torch.norm(bn - pi_hat, dim=-1).mean()
            if epoch >= cfg.tm_warmup_epochs:
                c_pred = tm.condition_dist(pi_hat)
                if epoch < cfg.tm_warmup_epochs + cfg.cond_pseudo_epochs:
                    logits = tm.cond_net(bn)
                    loss = loss + nn.functional.cross_entropy(logits, by)
                else:
                    c_true = tm.condition_dist(bn).detach()
                    ce = -(c_true * torch.log(c_pred + 1e-12)).sum(-1) / cfg.rho
                    loss = loss + ce.mean()
                # batch-entropy balancing: keep class usage spread out
                marginal = tm.condition_dist(bn).mean(dim=0)
                loss = loss - cfg.cond_entropy_weight * (
                    -(marginal * torch.log(marginal + 1e-12)).sum())
            loss.backward()
            opt.step()
            if not torch.isfinite(loss):
                raise TrainingError(f"transition loss diverged at epoch {epoch}")
            epoch_loss += float(loss.detach()) * len(idx)
        history.append(epoch_loss / n)

    tm.eval()
    tm.loss_history = history
    return tm
