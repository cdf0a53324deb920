"""Intelligent forecasting module: attention-LSTM over latent codes, damping
factor network, the damped prediction loss, forecasting fine-tuning and the
staged joint trainer with ablation switches.

Staged schedule: stage A trains the ConVAE-SOM together with the transition
terms, stage B adds the damped latent prediction loss, stage C fine-tunes
forecasts in raw feature space at a reduced learning rate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .config import ModelConfig
from .convae_som import ConvaeSomModel, som_assign, tdpsom_loss
from .data import NormStats, TimeSeriesSet
from .transition import (Condition, TransitionModel, pi_matrix,
                         transition_losses)


class TrainingError(RuntimeError):
    pass


class UnsupportedOperationError(RuntimeError):
    pass


class AdditiveAttention(nn.Module):
    """score(s, t) = v . tanh(W_h h_s + W_q h_t), softmax over s <= t."""

    def __init__(self, hidden: int, attn_dim: int | None = None):
        super().__init__()
        a = attn_dim or hidden
        self.w_h = nn.Linear(hidden, a, bias=False)
        self.w_q = nn.Linear(hidden, a, bias=True)
        self.v = nn.Linear(a, 1, bias=False)

    def forward(self, states: torch.Tensor, query: torch.Tensor,
                mask: torch.Tensor | None = None,
                values: torch.Tensor | None = None
                ) -> tuple[torch.Tensor, torch.Tensor]:
        """states [B, S, H], query [B, H] -> (context, weights [B, S]).

        Scores are additive over the hidden states; the context aggregates
        ``values`` when given (e.g. the latent codes at those steps),
        otherwise the hidden states themselves.
        """
        scores = self.v(torch.tanh(self.w_h(states) + self.w_q(query).unsqueeze(1))).squeeze(-1)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        w = torch.softmax(scores, dim=-1)
        v = states if values is None else values
        return torch.einsum("bs,bsv->bv", w, v), w


class LatentForecaster(nn.Module):
    """LSTM over latent codes with a diagonal-Gaussian next-step head."""

    def __init__(self, m: int, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.lstm = nn.LSTM(m, cfg.lstm_hidden, batch_first=True)
        self.attention = None if cfg.ablate_al else AdditiveAttention(cfg.lstm_hidden)
        head_in = cfg.lstm_hidden if cfg.ablate_al else cfg.lstm_hidden + m
        self.head_mean = nn.Linear(head_in, m)
        # fixed-bandwidth likelihood: the per-dimension variance is a buffer
        # calibrated (not learned) so the likelihood sign splits predictable
        # from volatile steps; a learned variance would absorb exactly the
        # unpredictability the damping factor is meant to discount
        self.register_buffer("log_var", torch.full((m,), math.log(1e-2)))
        # zero-init the mean head: the residual connection then starts the
        # forecaster exactly at latent persistence
        nn.init.zeros_(self.head_mean.weight)
        nn.init.zeros_(self.head_mean.bias)

    def _drop_ctx(self, ctx: torch.Tensor) -> torch.Tensor:
        """Zero the whole context vector per sample during training so the
        head cannot become dependent on teacher-forced attention retrievals
        that look different under autoregressive rollout."""
        if self.training and self.cfg.ctx_dropout > 0.0:
            keep = (torch.rand(ctx.shape[:-1], dtype=ctx.dtype)
                    >= self.cfg.ctx_dropout).unsqueeze(-1).to(ctx.dtype)
            return ctx * keep
        return ctx

    def step_heads(self, states: torch.Tensor, t: int, z_t: torch.Tensor,
                   attn_limit: int | None = None,
                   values: torch.Tensor | None = None
                   ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor | None]:
        """Prediction heads at position t given all hidden states [B, L, H]
        and the latent codes [B, L, m] at the same positions.

        The mean head is residual on the current latent z_t so the untrained
        forecaster starts at latent persistence. Attention scores cover a
        trailing window (segment_len states) of positions < min(t + 1,
        attn_limit), matching the segment length seen in training, and the
        context aggregates the latent codes at those steps; returned weights
        are zero-padded back to the full visible span.
        Returns (mean, log_var, attention or None).
        """
        h_t = states[:, t]
        if self.attention is None:
            feats, w = h_t, None
        else:
            if values is None:
                raise ValueError("latent values required when attention is on")
            s_max = t + 1 if attn_limit is None else min(t + 1, attn_limit)
            s_lo = max(0, s_max - self.cfg.segment_len)
            ctx, w_win = self.attention(states[:, s_lo:s_max], h_t,
                                        values=values[:, s_lo:s_max])
            if s_lo > 0:
                w = torch.zeros(states.shape[0], s_max, dtype=w_win.dtype)
                w[:, s_lo:] = w_win
            else:
                w = w_win
            feats = torch.cat([h_t, self._drop_ctx(ctx)], dim=-1)
        mean = z_t + self.head_mean(feats)
        return mean, self.log_var.expand_as(mean), w

    def heads_all(self, states: torch.Tensor, z: torch.Tensor
                  ) -> tuple[torch.Tensor, torch.Tensor]:
        """Vectorized prediction heads at every position, causal attention.

        states [B, L, H], z [B, L, m] -> (mean [B, L, m], log_var [B, L, m]);
        the mean at position t is residual on z[:, t].
        """
        if self.attention is None:
            feats = states
        else:
            b, l, h = states.shape
            att = self.attention
            scores = att.v(torch.tanh(
                att.w_h(states).unsqueeze(1) + att.w_q(states).unsqueeze(2)
            )).squeeze(-1)  # [B, t(query), s(key)]
            causal = torch.tril(torch.ones(l, l, dtype=torch.bool))
            band = torch.triu(torch.ones(l, l, dtype=torch.bool),
                              diagonal=-(self.cfg.segment_len - 1))
            scores = scores.masked_fill(~(causal & band), float("-inf"))
            w = torch.softmax(scores, dim=-1)
            ctx = torch.einsum("bts,bsm->btm", w, z)
            feats = torch.cat([states, self._drop_ctx(ctx)], dim=-1)
        mean = z + self.head_mean(feats)
        return mean, self.log_var.expand_as(mean)


class DampingNetwork(nn.Module):
    """Sigmoid-scaled leeway factor from (pi_t, predicted pi_{t+1})."""

    def __init__(self, K: int, cfg: ModelConfig):
        super().__init__()
        sizes = [2 * K] + list(cfg.damp_hidden) + [1]
        layers = []
        for i in range(len(sizes) - 1):
            layers.append(nn.Linear(sizes[i], sizes[i + 1]))
            if i < len(sizes) - 2:
                layers.append(nn.ReLU())
        self.net = nn.Sequential(*layers)

    def forward(self, pi_t: torch.Tensor, pi_hat_next: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(torch.cat([pi_t, pi_hat_next], dim=-1))).squeeze(-1)


class AfnModel(nn.Module):
    """Full model: ConVAE-SOM + transition module + forecaster + damping."""

    def __init__(self, d: int, feature_names: list[str], cfg: ModelConfig,
                 tm: TransitionModel | None, norm_stats: NormStats):
        super().__init__()
        if tm is None and not cfg.ablate_tm:
            raise ValueError("a pretrained transition module is required unless TM is ablated")
        self.cfg = cfg
        self.d = d
        self.feature_names = list(feature_names)
        self.tm = tm
        self.norm_stats = norm_stats
        # each submodule gets its own seeded init stream so ablated variants
        # share bit-identical weights in the modules they have in common
        torch.manual_seed(cfg.seed * 1000 + 1)
        self.convae_som = ConvaeSomModel(d, cfg)
        torch.manual_seed(cfg.seed * 1000 + 2)
        self.forecaster = LatentForecaster(cfg.latent_dim, cfg)
        k = tm.K if tm is not None else cfg.K
        torch.manual_seed(cfg.seed * 1000 + 3)
        self.damping_net = None if (cfg.ablate_df or cfg.ablate_tm) else DampingNetwork(k, cfg)
        torch.manual_seed(cfg.seed)
        self.risk_map = None  # set via risk.set_risk_map
        self.train_log: list[dict] = []

    @property
    def tau_h(self) -> int:
        return self.cfg.tau_h


def damping(pi_t: np.ndarray, pi_hat_next: np.ndarray, model: AfnModel) -> float:
    """Leeway factor in (0, 1); constant 1.0 when DF (or TM) is ablated."""
    if model.damping_net is None:
        return 1.0
    with torch.no_grad():
        a = torch.as_tensor(pi_t, dtype=torch.get_default_dtype()).reshape(1, -1)
        b = torch.as_tensor(pi_hat_next, dtype=torch.get_default_dtype()).reshape(1, -1)
        return float(model.damping_net(a, b))


def gaussian_nll(target: torch.Tensor, mean: torch.Tensor,
                 log_var: torch.Tensor, var_floor: float) -> torch.Tensor:
    """Diagonal-Gaussian negative log-likelihood per step, variance floored."""
    floor = math.log(var_floor)
    if bool((log_var < floor).any()):
        warnings.warn("predicted variance clamped to the configured floor")
    lv = torch.clamp(log_var, min=floor)
    return 0.5 * (math.log(2.0 * math.pi) + lv
                  + (target - mean).pow(2) / lv.exp()).sum(-1)


def pred_loss(z_path: torch.Tensor, model: AfnModel,
              pis: torch.Tensor | None = None,
              pi_hats: torch.Tensor | None = None,
              states: torch.Tensor | None = None) -> torch.Tensor:
    """Damped latent prediction loss over segments.

    z_path [B, L, m]; pis/pi_hats [B, L, K] aligned so that the damping at
    step t uses (pis[t], pi_hats[t+1]). The likelihood target blends the next
    latent with its assigned centroid so the damping pressure realigns the
    SOM space. Latents are treated as constants here (representation learning
    belongs to the ELBO/SOM terms); gradients reach the forecaster, the
    damping network and the centroids.
    """
    if z_path.shape[1] < 2:
        raise ValueError("prediction loss needs at least 2 steps")
    cfg = model.cfg
    z_path = z_path.detach()
    if states is None:
        states, _ = model.forecaster.lstm(z_path)
    b, l, _ = z_path.shape
    grid = model.convae_som.grid
    lam = cfg.som_target_blend

    means, log_vars = model.forecaster.heads_all(states, z_path)
    z_next = z_path[:, 1:]  # [B, L-1, m]
    k_next = grid.assign(z_next)
    target = (1.0 - lam) * z_next + lam * grid.centroids[k_next]
    nll = gaussian_nll(target, means[:, :-1], log_vars[:, :-1], cfg.var_floor)
    if model.damping_net is not None and pis is not None:
        d = model.damping_net(pis[:, :-1], pi_hats[:, 1:])
    else:
        d = torch.ones(b, l - 1, dtype=z_path.dtype)
    return (nll * d).mean()


def forecast_fine_tune_loss(x_next: torch.Tensor, x_hat_next: torch.Tensor
                            ) -> torch.Tensor:
    """Euclidean norm between actual and forecast feature vectors (batch mean)."""
    if x_next.shape != x_hat_next.shape:
        raise ValueError("shape mismatch")
    return torch.norm(x_next - x_hat_next, dim=-1).mean()


def afn_loss(batch: dict, model: AfnModel,
             include_pred: bool = True, include_fft: bool = True,
             som_radius: float = 1.0) -> dict:
    """Joint loss with exact component breakdown.

    batch: {"x": [B, L, d] normalized, "c": [B, L, rho] detached condition
    distributions, "pi": [B, L, K], "pi_prev": [B, L, K]} (pi entries may be
    absent when TM is ablated).
    """
    cfg = model.cfg
    c_in = batch["c"]
    if model.training and cfg.cond_dropout > 0.0 and not cfg.ablate_tm:
        # randomly flatten the condition input to uniform so the VAE stays
        # robust to the jitter of inferred conditions instead of relying on
        # them verbatim
        drop = (torch.rand(c_in.shape[:-1]) < cfg.cond_dropout).unsqueeze(-1)
        c_in = torch.where(drop, torch.full_like(c_in, 1.0 / cfg.rho), c_in)
    comps = tdpsom_loss(batch["x"], c_in, model.convae_som,
                        som_radius=som_radius)
    zero = torch.zeros((), dtype=batch["x"].dtype)

    if cfg.ablate_tm:
        l_trans = {"L_MSE": zero, "L_Conditional": zero, "L_Transition": zero}
        pi_hats = None
    else:
        pi_hat = model.tm(batch["pi_prev"].reshape(-1, model.tm.K)).reshape(batch["pi"].shape)
        c_true = model.tm.condition_dist(batch["pi"]).detach()
        c_pred = model.tm.condition_dist(pi_hat)
        l_trans = transition_losses(batch["pi"], pi_hat, c_true, c_pred)
        pi_hats = pi_hat

    l_pred = zero
    if include_pred:
        l_pred = pred_loss(comps["latent"], model,
                           pis=batch.get("pi"), pi_hats=pi_hats)

    l_fft = zero
    if include_fft:
        # autoregressive rollout in feature space, mirroring inference: the
        # tail of each segment is predicted from its own forecasts, and the
        # conditions are rolled through the (frozen) Markov model exactly as
        # at inference time instead of being teacher-forced
        z = comps["latent"]
        b, l, m = z.shape
        h = max(1, min(cfg.fft_horizon, l - 2))
        ctx = l - h
        fc = model.forecaster
        all_states, (hn, cn) = fc.lstm(z[:, :ctx])
        z_cur = z[:, ctx - 1]
        z_seq = z[:, :ctx]
        pi_cur = None if cfg.ablate_tm else batch["pi"][:, ctx - 1]
        c_prev = batch["c"][:, ctx - 1]
        errs = []
        for step in range(h):
            mean, _, _ = fc.step_heads(all_states, all_states.shape[1] - 1,
                                       z_cur, attn_limit=ctx, values=z_seq)
            if pi_cur is None:
                c_step = batch["c"][:, ctx + step]
            else:
                with torch.no_grad():
                    pi_cur = model.tm(pi_cur)
                    c_step = (cfg.cond_smooth * c_prev
                              + (1.0 - cfg.cond_smooth)
                              * model.tm.condition_dist(pi_cur))
                    c_prev = c_step
            x_hat = model.convae_som.decode(mean, c_step)
            errs.append(torch.norm(batch["x"][:, ctx + step] - x_hat, dim=-1))
            z_cur = mean
            z_seq = torch.cat([z_seq, mean.unsqueeze(1)], dim=1)
            out, (hn, cn) = fc.lstm(mean.unsqueeze(1), (hn, cn))
            all_states = torch.cat([all_states, out], dim=1)
        l_fft = torch.stack(errs).mean()

    tau_w = 0.0 if cfg.ablate_tm else cfg.tau_w
    total = (comps["L_T-DPSOM"] + tau_w * l_trans["L_Transition"]
             + cfg.eta * l_pred + l_fft)
    return {
        "L_T-DPSOM": comps["L_T-DPSOM"],
        "L_SOM": comps["L_SOM"],
        "L_Commit": comps["L_Commit"],
        "L_Reconstruction": comps["L_Reconstruction"],
        "L_Smoothness": comps["L_Smoothness"],
        "L_Transition": l_trans["L_Transition"],
        "L_MSE": l_trans["L_MSE"],
        "L_Conditional": l_trans["L_Conditional"],
        "L_Pred": l_pred,
        "L_Forecasting": l_fft,
        "L_AFN": total,
    }


def _smooth_conditions(c: torch.Tensor, s: float) -> torch.Tensor:
    """Exponential smoothing along the time axis ([.., T, rho]).

    The per-step condition distributions jitter with the window clustering;
    the VAE is conditioned on their smoothed trajectory, which stays on the
    simplex and still tracks regime switches with a short lag.
    """
    if s <= 0.0:
        return c
    out = c.clone()
    for t in range(1, c.shape[-2]):
        out[..., t, :] = s * out[..., t - 1, :] + (1.0 - s) * c[..., t, :]
    return out


def _prepare_training_arrays(train: TimeSeriesSet, model: AfnModel
                             ) -> dict:
    """Normalized values plus per-step pi-vectors / condition distributions."""
    cfg = model.cfg
    x = model.norm_stats.apply(train.values)
    n, t, d = x.shape
    out = {"x": torch.as_tensor(x, dtype=torch.get_default_dtype())}
    if cfg.ablate_tm:
        c = torch.zeros(n, t, cfg.rho)
        c[..., 0] = 1.0
        out["c"] = c
        # same segment range as the TM-equipped model, for comparable runs
        out["t_min"] = cfg.tau_h + 1
        return out
    tau = model.tm.tau_h
    K = model.tm.K
    pis = torch.zeros(n, t, K)
    for i in range(n):
        p, _ = pi_matrix(train.values[i], model.tm.cluster_model, cfg.C, cfg.M)
        pis[i, tau:] = torch.as_tensor(p, dtype=pis.dtype)
        pis[i, :tau] = pis[i, tau]  # backfill before the first valid position
    with torch.no_grad():
        c = model.tm.condition_dist(pis.reshape(-1, K)).reshape(n, t, cfg.rho)
    out["pi"] = pis
    out["c"] = _smooth_conditions(c, cfg.cond_smooth)
    out["t_min"] = tau + 1  # segments need pi at t0 - 1
    return out


def _iter_batches(arrays: dict, model: AfnModel, epoch_seed: int):
    """Yield shuffled batches of contiguous segments."""
    cfg = model.cfg
    x = arrays["x"]
    n, t, _ = x.shape
    seg = min(cfg.segment_len, t - arrays["t_min"])
    if seg < 2:
        raise TrainingError("series too short for the configured segment length")
    starts = np.arange(arrays["t_min"], t - seg + 1, cfg.segment_stride)
    rng = np.random.default_rng(epoch_seed)
    pairs = [(i, s) for i in range(n) for s in starts]
    rng.shuffle(pairs)
    bs = cfg.batch_size
    for b0 in range(0, len(pairs), bs):
        chunk = pairs[b0:b0 + bs]
        batch = {}
        xs, cs, ps, pps = [], [], [], []
        for i, s in chunk:
            xs.append(x[i, s:s + seg])
            cs.append(arrays["c"][i, s:s + seg])
            if "pi" in arrays:
                ps.append(arrays["pi"][i, s:s + seg])
                pps.append(arrays["pi"][i, s - 1:s + seg - 1])
        batch["x"] = torch.stack(xs)
        batch["c"] = torch.stack(cs).detach()
        if ps:
            batch["pi"] = torch.stack(ps)
            batch["pi_prev"] = torch.stack(pps)
        yield batch


def _solve_bandwidth(q: torch.Tensor) -> torch.Tensor:
    """Per-dim variance s with NLL sign crossover at residual energy q.

    Solves s * ln(1 / (2 pi s)) = q on (0, 1/(2 pi e)), where the left side
    is increasing; steps with squared error below q then score a negative
    likelihood and steps above it a positive one.
    """
    hi_cap = 1.0 / (2.0 * math.pi * math.e)
    q = torch.clamp(q, min=1e-12, max=hi_cap * (1.0 - 1e-9))
    lo = torch.full_like(q, 1e-12)
    hi = torch.full_like(q, hi_cap)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        f = mid * torch.log(1.0 / (2.0 * math.pi * mid))
        lo = torch.where(f < q, mid, lo)
        hi = torch.where(f < q, hi, mid)
    return 0.5 * (lo + hi)


def _calibrate_bandwidth(model: AfnModel, arrays: dict,
                         crossover_scale: float = 1.8) -> None:
    """Set the forecaster's fixed likelihood bandwidth from the latent
    one-step residual distribution: the likelihood sign crossover is placed
    a few times above the mean per-dim residual energy, so calm stretches
    score negative and volatile stretches positive, and the damping factor
    sees a meaningful split from the first batch."""
    cfg = model.cfg
    with torch.no_grad():
        n, t, d = arrays["x"].shape
        flat_x = arrays["x"].reshape(-1, d)
        flat_c = arrays["c"].reshape(-1, arrays["c"].shape[-1])
        z = model.convae_som.encode(flat_x, flat_c)["z"].reshape(n, t, -1)
        z_next = z[:, 1:].reshape(-1, cfg.latent_dim)
        k_next = model.convae_som.grid.assign(z_next)
        lam = cfg.som_target_blend
        target = (1.0 - lam) * z_next + lam * model.convae_som.grid.centroids[k_next]
        err2 = (target - z[:, :-1].reshape(-1, cfg.latent_dim)).pow(2)
        q = crossover_scale * err2.mean(0)
        var = torch.clamp(_solve_bandwidth(q), min=cfg.var_floor)
        model.forecaster.log_var.copy_(torch.log(var))


def train_afn(train: TimeSeriesSet, cfg: ModelConfig,
              tm: TransitionModel | None = None,
              norm_stats: NormStats | None = None) -> AfnModel:
    """Staged AFN training; deterministic given cfg.seed."""
    from .data import zscore_fit_apply
    from .transition import pretrain_tm

    torch.manual_seed(cfg.seed)
    if norm_stats is None:
        _, norm_stats = zscore_fit_apply(train)
    if tm is None and not cfg.ablate_tm:
        tm = pretrain_tm(train, cfg)
    model = AfnModel(train.n_features, train.feature_names, cfg, tm, norm_stats)
    arrays = _prepare_training_arrays(train, model)

    # VAE-only warmup so the centroid grid is laid over a settled latent cloud
    if cfg.stage_pre_epochs > 0:
        opt = torch.optim.Adam(model.convae_som.parameters(), lr=cfg.lr)
        for epoch in range(cfg.stage_pre_epochs):
            for batch in _iter_batches(arrays, model, cfg.seed * 100003 + 31 + epoch):
                opt.zero_grad()
                comps = tdpsom_loss(batch["x"], batch["c"], model.convae_som)
                comps["L_Reconstruction"].backward()
                opt.step()

    # PCA-spanned centroid init over the warmed-up latent cloud
    with torch.no_grad():
        flat_x = arrays["x"].reshape(-1, train.n_features)
        flat_c = arrays["c"].reshape(-1, cfg.rho)
        sub = torch.arange(0, flat_x.shape[0], max(1, flat_x.shape[0] // 4096))
        z0 = model.convae_som.encode(flat_x[sub], flat_c[sub])["z"]
    model.convae_som.init_centroids_pca(z0)

    import copy

    stages = [("A", cfg.stage_a_epochs, False, False, cfg.lr),
              ("B", cfg.stage_b_epochs, True, False, cfg.lr)]
    if not cfg.ablate_fft:
        stages.append(("C", cfg.stage_c_epochs, False, True, cfg.lr * cfg.fft_lr_scale))

    # the transition module stays frozen after pretraining: the joint loss
    # has no class-balance pressure, so letting the condition head drift here
    # collapses the calibrated conditions
    joint_params = list(model.convae_som.parameters()) \
        + list(model.forecaster.parameters())
    if model.damping_net is not None:
        joint_params += list(model.damping_net.parameters())

    def _ema_init():
        return {k: v.detach().clone()
                for k, v in model.state_dict().items()
                if v.dtype.is_floating_point}

    def _ema_step(shadow, decay):
        with torch.no_grad():
            for k, v in model.state_dict().items():
                if k in shadow:
                    shadow[k].mul_(decay).add_(v, alpha=1.0 - decay)

    for stage, epochs, with_pred, with_fft, lr in stages:
        if stage == "B":
            _calibrate_bandwidth(model, arrays)
        if stage == "C":
            # snapshot the pre-fine-tuning weights for with/without-FFT
            # comparisons; fine-tune the forecaster only so the learned
            # representation cannot drift during the rollout stage
            model.state_pre_fft = copy.deepcopy(model.state_dict())
            opt = torch.optim.Adam(model.forecaster.parameters(), lr=lr)
        else:
            opt = torch.optim.Adam(joint_params, lr=lr)
        # average the weight trajectory over stages B/C: the staged losses
        # are noisy at desk scale and the averaged point is far more stable
        shadow = _ema_init() if stage in ("B", "C") else None
        r0 = max(cfg.grid_height, cfg.grid_width) / 2.0
        for epoch in range(epochs):
            epoch_seed = cfg.seed * 100003 + {"A": 0, "B": 1, "C": 2}[stage] * 7919 + epoch
            if stage == "A" and epochs > 1:
                # anneal the SOM neighborhood from half the grid span to 1
                radius = r0 * (1.0 / r0) ** (epoch / (epochs - 1))
            else:
                radius = 1.0
            tot, nb = 0.0, 0
            for batch in _iter_batches(arrays, model, epoch_seed):
                opt.zero_grad()
                losses = afn_loss(batch, model, som_radius=radius,
                                  include_pred=with_pred, include_fft=with_fft)
                # stage C fine-tunes on the rollout forecasting term alone;
                # the representation/transition terms stay reported but frozen
                loss = losses["L_Forecasting"] if stage == "C" else losses["L_AFN"]
                if not torch.isfinite(loss):
                    raise TrainingError(
                        f"loss diverged at stage {stage} epoch {epoch}")
                loss.backward()
                # clip per submodule so no single term eats the clip budget
                for mod in (model.convae_som, model.forecaster,
                            model.damping_net):
                    if mod is not None:
                        torch.nn.utils.clip_grad_norm_(mod.parameters(), 5.0)
                opt.step()
                if shadow is not None:
                    _ema_step(shadow, cfg.ema_decay)
                tot += float(loss.detach())
                nb += 1
            model.train_log.append(
                {"stage": stage, "epoch": epoch, "loss": tot / max(nb, 1)})
        if shadow is not None:
            model.load_state_dict(shadow, strict=False)

    model.eval()
    return model


@dataclass
class Forecast:
    """Forecast artifact over history (length T) plus horizon (length h)."""

    x_hat: np.ndarray                 # [h, d] denormalized
    latent_path: np.ndarray           # [T+h, m]
    node_path: list                   # [(i, j)] length T+h
    attention: np.ndarray | None      # [h, T], rows on the simplex
    conditions: list                  # Condition, length T+h
    horizon: int
    history_len: int
    feature_names: list = field(default_factory=list)
    x_hist: np.ndarray | None = None  # [T, d] raw history


def _history_conditions(series_raw: np.ndarray, model: AfnModel
                        ) -> tuple[np.ndarray, np.ndarray | None]:
    """Condition distributions for every history step, plus the last pi."""
    cfg = model.cfg
    t = series_raw.shape[0]
    if cfg.ablate_tm:
        c = np.zeros((t, cfg.rho))
        c[:, 0] = 1.0
        return c, None
    tau = model.tm.tau_h
    if t < tau + 1:
        raise ValueError(f"insufficient history: need at least tau + 1 = {tau + 1} steps")
    pis, _ = pi_matrix(series_raw, model.tm.cluster_model, cfg.C, cfg.M)
    full = np.vstack([np.repeat(pis[:1], tau, axis=0), pis])  # backfill
    with torch.no_grad():
        c = model.tm.condition_dist(
            torch.as_tensor(full, dtype=torch.get_default_dtype()))
        c = _smooth_conditions(c, cfg.cond_smooth).numpy()
    return c.astype(np.float64), full[-1]


def forecast(series_raw: np.ndarray, h: int, model: AfnModel) -> Forecast:
    """Autoregressive latent rollout; eval-mode deterministic."""
    if h < 1:
        raise ValueError("horizon must be >= 1")
    series_raw = np.asarray(series_raw, dtype=np.float64)
    t_hist, d = series_raw.shape
    cfg = model.cfg
    model.eval()

    c_hist, pi_last = _history_conditions(series_raw, model)
    x_norm = torch.as_tensor(model.norm_stats.apply(series_raw),
                             dtype=torch.get_default_dtype())
    c_t = torch.as_tensor(c_hist, dtype=x_norm.dtype)

    with torch.no_grad():
        z_hist = model.convae_som.encode(x_norm, c_t)["z"]  # [T, m]
        states, (hn, cn) = model.forecaster.lstm(z_hist.unsqueeze(0))
        all_states = states  # [1, T', H], grows during rollout
        z_path = [z_hist]
        x_hats = []
        attn_rows = []
        cond_dists = [c_hist[i] for i in range(t_hist)]
        pi_cur = pi_last
        z_cur = z_hist[-1:]
        z_seq = z_hist.unsqueeze(0)  # [1, T', m], grows with the states

        for _ in range(h):
            t_cur = all_states.shape[1] - 1
            mean, _, w = model.forecaster.step_heads(all_states, t_cur, z_cur,
                                                     attn_limit=t_hist,
                                                     values=z_seq)
            z_next = mean  # eval mode: mean of p(z_{t+1} | z_t)
            # roll the condition forward through the Markov chain
            if cfg.ablate_tm:
                c_next = np.zeros(cfg.rho)
                c_next[0] = 1.0
            else:
                pi_cur = model.tm(
                    torch.as_tensor(pi_cur, dtype=x_norm.dtype).reshape(1, -1)
                ).numpy().ravel().astype(np.float64)
                c_raw = model.tm.condition_dist(
                    torch.as_tensor(pi_cur, dtype=x_norm.dtype).reshape(1, -1)
                ).numpy().ravel().astype(np.float64)
                c_next = (cfg.cond_smooth * cond_dists[-1]
                          + (1.0 - cfg.cond_smooth) * c_raw)
            cond_dists.append(c_next)
            c_next_t = torch.as_tensor(c_next, dtype=x_norm.dtype).reshape(1, -1)
            x_hat = model.convae_som.decode(z_next, c_next_t)
            x_hats.append(x_hat.numpy().ravel())
            z_path.append(z_next)
            z_cur = z_next
            z_seq = torch.cat([z_seq, z_next.unsqueeze(0)], dim=1)
            if w is not None:
                attn_rows.append(w.numpy().ravel()[:t_hist])
            out, (hn, cn) = model.forecaster.lstm(z_next.unsqueeze(0), (hn, cn))
            all_states = torch.cat([all_states, out], dim=1)

        latent = torch.cat([z_path[0]] + [z.reshape(1, -1) for z in z_path[1:]],
                           dim=0).numpy().astype(np.float64)

    nodes = [som_assign(latent[i], model.convae_som.grid)[0]
             for i in range(latent.shape[0])]
    x_hat_raw = model.norm_stats.invert(np.asarray(x_hats))
    conditions = [Condition.from_dist(cd / cd.sum()) for cd in cond_dists]
    attention = np.asarray(attn_rows) if attn_rows else None
    return Forecast(
        x_hat=x_hat_raw,
        latent_path=latent,
        node_path=nodes,
        attention=attention,
        conditions=conditions,
        horizon=h,
        history_len=t_hist,
        feature_names=model.feature_names,
        x_hist=series_raw,
    )


def attention_weights(fc: Forecast) -> np.ndarray:
    """Per-emitted-step attention rows over the history."""
    if fc.attention is None:
        raise UnsupportedOperationError("attention is ablated for this model")
    return fc.attention


def persistence_forecast(series_raw: np.ndarray, h: int) -> np.ndarray:
    """Last-value baseline: repeat the final observation h times."""
    last = np.asarray(series_raw)[-1]
    return np.repeat(last[None, :], h, axis=0)


def _eval_origins(t: int, h: int, n_origins: int, stride: int) -> list[int]:
    """History lengths for staggered evaluation windows, newest first."""
    outs = []
    for k in range(n_origins):
        cut = t - h - k * stride
        if cut < 2 * h:
            break
        outs.append(cut)
    return outs


def evaluate_forecast_mse(model: AfnModel, test: TimeSeriesSet, h: int,
                          max_series: int | None = None,
                          n_origins: int = 4, origin_stride: int = 6) -> float:
    """Mean squared h-step forecast error on normalized scale, averaged over
    several staggered forecast origins per series."""
    errs = []
    n = test.n_series if max_series is None else min(test.n_series, max_series)
    for i in range(n):
        for cut in _eval_origins(test.n_steps, h, n_origins, origin_stride):
            hist = test.values[i, :cut]
            actual = test.values[i, cut:cut + h]
            fc = forecast(hist, h, model)
            e = model.norm_stats.apply(actual) - model.norm_stats.apply(fc.x_hat)
            errs.append(float((e ** 2).mean()))
    return float(np.mean(errs))


def persistence_mse(test: TimeSeriesSet, h: int, norm_stats: NormStats,
                    max_series: int | None = None,
                    n_origins: int = 4, origin_stride: int = 6) -> float:
    errs = []
    n = test.n_series if max_series is None else min(test.n_series, max_series)
    for i in range(n):
        for cut in _eval_origins(test.n_steps, h, n_origins, origin_stride):
            hist = test.values[i, :cut]
            actual = test.values[i, cut:cut + h]
            pred = persistence_forecast(hist, h)
            e = norm_stats.apply(actual) - norm_stats.apply(pred)
            errs.append(float((e ** 2).mean()))
    return float(np.mean(errs))
