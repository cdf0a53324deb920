"""Model and training configuration with production defaults.

`ModelConfig.desk_scale()` shrinks network widths and epochs so the full
pipeline trains in seconds on a laptop; the defaults mirror the production
architecture (wide MLP/LSTM stacks, batch size 128).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field


@dataclass
class ModelConfig:
    # transition module
    K: int = 5
    rho: int = 3
    C: int = 4
    M: int = 9
    markov_order: int = 1
    dmm_hidden: tuple = (500, 128)
    cond_hidden: tuple = (16,)
    tm_epochs: int = 30
    tm_batch_size: int = 128
    tm_lr: float = 1e-3
    tm_warmup_epochs: int = 5
    cond_pseudo_epochs: int = 10
    cond_entropy_weight: float = 1.0

    # ConVAE-SOM
    latent_dim: int = 16
    grid_height: int = 8
    grid_width: int = 8
    enc_hidden: tuple = (500, 500, 2000)
    alpha: float = 10.0
    beta: float = 0.1
    gamma: float = 0.3
    theta: float = 0.1
    kappa: float = 1.0

    # forecasting module
    lstm_hidden: int = 100
    ctx_dropout: float = 0.0  # attention-context dropout during training
    cond_dropout: float = 0.3  # condition-input dropout during training
    cond_smooth: float = 0.7  # exponential smoothing of condition inputs
    damp_hidden: tuple = (100, 10)
    eta: float = 10.0
    tau_w: float = 75.0
    var_floor: float = 1e-6
    som_target_blend: float = 0.2

    # joint training
    batch_size: int = 128
    segment_len: int = 20
    segment_stride: int = 1
    lr: float = 1e-3
    stage_pre_epochs: int = 5  # VAE-only warmup before centroid init
    stage_a_epochs: int = 20
    stage_b_epochs: int = 20
    stage_c_epochs: int = 10
    fft_lr_scale: float = 0.1
    fft_horizon: int = 6  # autoregressive rollout length fine-tuned in stage C
    ema_decay: float = 0.99  # weight-trajectory averaging in stages B/C
    seed: int = 0

    # ablation switches
    ablate_tm: bool = False
    ablate_al: bool = False
    ablate_df: bool = False
    ablate_fft: bool = False

    @property
    def tau_h(self) -> int:
        """History span consumed by one pi-vector (window length + count)."""
        return self.C + self.M

    @property
    def n_nodes(self) -> int:
        return self.grid_height * self.grid_width

    @classmethod
    def desk_scale(cls, **overrides) -> "ModelConfig":
        """Small widths/epochs for tests and laptop-scale benchmarks."""
        base = dict(
            dmm_hidden=(32, 16),
            cond_hidden=(16,),
            tm_epochs=15,
            tm_warmup_epochs=3,
            cond_pseudo_epochs=6,
            latent_dim=8,
            enc_hidden=(64, 64),
            lstm_hidden=48,
            damp_hidden=(32, 8),
            segment_len=16,
            segment_stride=3,
            stage_a_epochs=12,
            stage_b_epochs=10,
            stage_c_epochs=8,
            fft_lr_scale=0.5,
            # gentler clustering pressure: keeps the latent cloud from
            # shrinking onto a handful of grid nodes at this scale
            kappa=0.2,
            theta=1.0,
        )
        base.update(overrides)
        return cls(**base)

    def replace(self, **overrides) -> "ModelConfig":
        return dataclasses.replace(self, **overrides)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = dict(d)
        for k in ("dmm_hidden", "cond_hidden", "enc_hidden", "damp_hidden"):
            if k in kwargs and isinstance(kwargs[k], list):
                kwargs[k] = tuple(kwargs[k])
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in kwargs.items() if k in known})
