"""Condition-aware VAE whose latent space carries an 8x8 SOM topology.

The encoder/decoder are applied per time step on the concatenation of the
(normalized) feature vector and the condition distribution coming from the
transition module. Conditions enter as detached tensors: none of the losses
here propagate gradients back into the transition module.

Loss components (weighted sum with beta/gamma/theta/kappa):
  - SOM loss: batch-SOM quantization energy with a Gaussian neighborhood
    over grid distance to the winning node, gradients to centroids only.
  - Commitment: squared distance between a latent and its assigned centroid.
  - Reconstruction: Gaussian ELBO (MSE + analytic KL against N(0, I)).
  - Smoothness: negative log soft assignment of the next latent to the
    current node, discouraging unexplained long jumps.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .config import ModelConfig


class ContractError(ValueError):
    pass


def _mlp(sizes: list[int]) -> nn.Sequential:
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class SomGrid(nn.Module):
    """Grid of centroid embeddings with 4-adjacency."""

    def __init__(self, height: int, width: int, latent_dim: int):
        super().__init__()
        self.height = height
        self.width = width
        self.latent_dim = latent_dim
        self.centroids = nn.Parameter(torch.randn(height * width, latent_dim) * 0.05)
        self.register_buffer("neighbor_mask", self._build_neighbor_mask())
        self.register_buffer("grid_sq_dist", self._build_grid_sq_dist())

    def _build_neighbor_mask(self) -> torch.Tensor:
        """[n, n] boolean: node + its 4-neighbors."""
        n = self.height * self.width
        mask = torch.zeros(n, n, dtype=torch.bool)
        for k in range(n):
            i, j = divmod(k, self.width)
            mask[k, k] = True
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ii, jj = i + di, j + dj
                if 0 <= ii < self.height and 0 <= jj < self.width:
                    mask[k, ii * self.width + jj] = True
        return mask

    def _build_grid_sq_dist(self) -> torch.Tensor:
        """[n, n] squared Euclidean distance between grid coordinates."""
        ii, jj = torch.meshgrid(torch.arange(self.height),
                                torch.arange(self.width), indexing="ij")
        coords = torch.stack([ii.reshape(-1), jj.reshape(-1)], dim=1).float()
        return torch.cdist(coords, coords).pow(2)

    @property
    def n_nodes(self) -> int:
        return self.height * self.width

    def coords(self, k: int) -> tuple[int, int]:
        return divmod(int(k), self.width)

    def sq_distances(self, z: torch.Tensor) -> torch.Tensor:
        """[.., n_nodes] squared Euclidean distances to every centroid."""
        diff = z.unsqueeze(-2) - self.centroids
        return (diff * diff).sum(-1)

    def assign(self, z: torch.Tensor) -> torch.Tensor:
        """Nearest node index; argmin breaks ties toward the lowest index."""
        return self.sq_distances(z).argmin(-1)

    def soft_assign(self, z: torch.Tensor, alpha: float) -> torch.Tensor:
        """Student-t soft assignment q over nodes."""
        d2 = self.sq_distances(z)
        logits = -(alpha + 1.0) / 2.0 * torch.log1p(d2 / alpha)
        return torch.softmax(logits, dim=-1)


class ConvaeSomModel(nn.Module):
    """Per-timestep conditional VAE with a SOM-structured latent space."""

    def __init__(self, d: int, cfg: ModelConfig):
        super().__init__()
        self.d = d
        self.cfg = cfg
        self.m = cfg.latent_dim
        hidden = list(cfg.enc_hidden)
        self.encoder = _mlp([d + cfg.rho] + hidden)
        self.enc_mean = nn.Linear(hidden[-1], self.m)
        self.enc_log_var = nn.Linear(hidden[-1], self.m)
        self.decoder = _mlp([self.m + cfg.rho] + hidden[::-1] + [d])
        self.grid = SomGrid(cfg.grid_height, cfg.grid_width, self.m)
        self.alpha = cfg.alpha

    def encode_params(self, x: torch.Tensor, c: torch.Tensor
                      ) -> tuple[torch.Tensor, torch.Tensor]:
        if not torch.isfinite(x).all():
            raise ValueError("encoder input contains NaN/inf")
        h = self.encoder(torch.cat([x, c.detach()], dim=-1))
        return self.enc_mean(h), self.enc_log_var(h)

    def encode(self, x: torch.Tensor, c: torch.Tensor,
               sample: bool = False,
               generator: torch.Generator | None = None) -> dict:
        """Latent code; eval mode (sample=False) returns z = mean exactly."""
        mean, log_var = self.encode_params(x, c)
        if sample:
            eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
            z = mean + torch.exp(0.5 * log_var) * eps
        else:
            z = mean
        return {"mean": mean, "log_var": log_var, "z": z}

    def decode(self, z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        return self.decoder(torch.cat([z, c.detach()], dim=-1))

    def init_centroids_pca(self, latent_cloud: torch.Tensor) -> None:
        """Spread centroids over a regular grid in the top-2 PCA plane of an
        initial latent cloud; avoids dead units at the start of training."""
        with torch.no_grad():
            z = latent_cloud.reshape(-1, self.m)
            mean = z.mean(0)
            zc = z - mean
            cov = zc.T @ zc / max(zc.shape[0] - 1, 1)
            evals, evecs = torch.linalg.eigh(cov)
            scale1 = torch.sqrt(torch.clamp(evals[-1], min=1e-6))
            scale2 = torch.sqrt(torch.clamp(evals[-2] if self.m > 1 else evals[-1], min=1e-6))
            pc1 = evecs[:, -1]
            pc2 = evecs[:, -2] if self.m > 1 else evecs[:, -1]
            gh, gw = self.grid.height, self.grid.width
            gi = torch.linspace(-2.0, 2.0, gh)
            gj = torch.linspace(-2.0, 2.0, gw)
            cents = torch.empty(gh * gw, self.m)
            for k in range(gh * gw):
                i, j = divmod(k, gw)
                cents[k] = mean + gi[i] * scale1 * pc1 + gj[j] * scale2 * pc2
            self.grid.centroids.copy_(cents)


def som_assign(z, grid: SomGrid) -> tuple[tuple[int, int], np.ndarray]:
    """Map a single latent to its grid node; returns ((i, j), centroid)."""
    zt = torch.as_tensor(z, dtype=grid.centroids.dtype).reshape(-1)
    with torch.no_grad():
        k = int(grid.assign(zt))
        return grid.coords(k), grid.centroids[k].numpy().astype(np.float64)


def gaussian_kl(mean: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """Analytic KL(q || N(0, I)) per sample, always >= 0."""
    return 0.5 * (mean.pow(2) + log_var.exp() - 1.0 - log_var).sum(-1)


def tdpsom_loss(batch_x: torch.Tensor, batch_c: torch.Tensor,
                model: ConvaeSomModel, sample: bool = False,
                generator: torch.Generator | None = None,
                som_radius: float = 1.0) -> dict:
    """Four-component loss over a batch of contiguous segments [B, L, d].

    som_radius controls the Gaussian neighborhood of the SOM term; the
    trainer anneals it from half the grid span down to 1 so every centroid
    gets pulled early on and fine structure settles late.
    """
    if batch_x.ndim != 3:
        raise ContractError("expected a batch of contiguous segments [B, L, d]")
    if batch_x.shape[1] < 2:
        raise ContractError("smoothness needs segments of length >= 2")
    cfg = model.cfg
    b, l, d = batch_x.shape
    code = model.encode(batch_x, batch_c, sample=sample, generator=generator)
    z = code["z"]
    x_hat = model.decode(z, batch_c)

    q = model.grid.soft_assign(z, model.alpha)  # [B, L, n]
    k_star = model.grid.assign(z)  # hard nearest node
    # SOM loss: batch-SOM energy, every centroid pulled toward the latent
    # with a Gaussian weight over grid distance to the winner; gradients go
    # to the centroids only
    h = torch.exp(-model.grid.grid_sq_dist[k_star]
                  / (2.0 * som_radius * som_radius))  # [B, L, n]
    h = h / h.sum(-1, keepdim=True)
    d2_det = model.grid.sq_distances(z.detach())
    l_som = (h * d2_det).sum(-1).mean()

    centroids_at = model.grid.centroids[k_star]
    l_commit = (z - centroids_at).pow(2).sum(-1).mean()

    recon = (x_hat - batch_x).pow(2).sum(-1).mean()
    kl = gaussian_kl(code["mean"], code["log_var"]).mean()
    l_recon = recon + kl

    # likelihood that the next latent stays near the current node
    q_next = q[:, 1:, :]
    k_cur = k_star[:, :-1]
    l_smooth = -torch.log(
        torch.gather(q_next, -1, k_cur.unsqueeze(-1)).squeeze(-1) + 1e-12
    ).mean()

    total = (cfg.beta * l_som + cfg.gamma * l_commit
             + cfg.theta * l_recon + cfg.kappa * l_smooth)
    return {
        "L_SOM": l_som,
        "L_Commit": l_commit,
        "L_Reconstruction": l_recon,
        "L_Smoothness": l_smooth,
        "L_T-DPSOM": total,
        "latent": z,
        "assignments": k_star,
        "recon": x_hat,
    }
