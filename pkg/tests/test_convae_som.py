"""Latent grid model: SOM assignment against brute force, grid topology
buffers, KL oracle and the exact loss breakdown."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from afn.config import ModelConfig
from afn.convae_som import ContractError, ConvaeSomModel, SomGrid, \
    gaussian_kl, som_assign, tdpsom_loss


def _tiny_cfg(**overrides):
    base = dict(K=3, rho=2, C=2, M=2, dmm_hidden=(8,), cond_hidden=(8,),
                latent_dim=3, grid_height=3, grid_width=4, enc_hidden=(8,),
                lstm_hidden=6, damp_hidden=(6,), segment_len=4)
    base.update(overrides)
    return ModelConfig(**base)


class TestSomGrid:
    def test_assign_vs_brute_force(self):
        torch.manual_seed(0)
        grid = SomGrid(8, 8, 5)
        z = torch.randn(1000, 5, dtype=grid.centroids.dtype)
        got = grid.assign(z).numpy()
        cents = grid.centroids.detach().numpy()
        zn = z.numpy()
        for i in range(1000):
            d2 = ((cents - zn[i]) ** 2).sum(axis=1)
            assert got[i] == int(d2.argmin()), i

    def test_assign_tie_breaks_low(self):
        grid = SomGrid(2, 2, 2)
        with torch.no_grad():
            grid.centroids.copy_(torch.zeros(4, 2))
        assert int(grid.assign(torch.zeros(1, 2))) == 0

    def test_neighbor_mask(self):
        grid = SomGrid(3, 4, 2)
        mask = grid.neighbor_mask.numpy()
        for k in range(12):
            i, j = divmod(k, 4)
            for k2 in range(12):
                i2, j2 = divmod(k2, 4)
                adjacent = abs(i - i2) + abs(j - j2) <= 1
                assert mask[k, k2] == adjacent, (k, k2)

    def test_grid_sq_dist(self):
        grid = SomGrid(3, 3, 2)
        d = grid.grid_sq_dist.numpy()
        assert np.isclose(d[0, 8], 8.0)  # (0,0) -> (2,2)
        assert np.isclose(d[0, 1], 1.0)
        assert np.isclose(d[4, 4], 0.0)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_soft_assign_simplex(self, seed):
        torch.manual_seed(seed)
        grid = SomGrid(4, 4, 3)
        q = grid.soft_assign(torch.randn(5, 3), alpha=10.0)
        assert q.shape == (5, 16)
        assert torch.all(q > 0)
        assert torch.allclose(q.sum(-1), torch.ones(5), atol=1e-6)

    def test_soft_assign_peaks_at_argmin(self):
        torch.manual_seed(1)
        grid = SomGrid(4, 4, 3)
        z = torch.randn(20, 3)
        q = grid.soft_assign(z, alpha=10.0)
        assert torch.equal(q.argmax(-1), grid.assign(z))

    def test_som_assign_helper(self):
        torch.manual_seed(2)
        grid = SomGrid(3, 3, 2)
        z = np.array([0.1, -0.2])
        (i, j), cent = som_assign(z, grid)
        k = i * 3 + j
        assert np.allclose(cent, grid.centroids[k].detach().numpy())


class TestGaussianKl:
    def test_standard_normal_is_zero(self):
        kl = gaussian_kl(torch.zeros(4, 3), torch.zeros(4, 3))
        assert torch.allclose(kl, torch.zeros(4), atol=1e-9)

    def test_against_closed_form(self):
        # KL(N(mu, s^2) || N(0,1)) summed over independent dimensions
        torch.manual_seed(3)
        mean = torch.randn(6, 2)
        log_var = torch.randn(6, 2)
        want = 0.5 * (mean ** 2 + torch.exp(log_var) - 1.0 - log_var).sum(-1)
        assert torch.allclose(gaussian_kl(mean, log_var), want, atol=1e-9)
        assert torch.all(gaussian_kl(mean, log_var) >= 0)


class TestConvaeSom:
    def test_encode_eval_deterministic(self):
        torch.manual_seed(4)
        model = ConvaeSomModel(3, _tiny_cfg())
        x = torch.randn(5, 3)
        c = torch.softmax(torch.randn(5, 2), dim=-1)
        z1 = model.encode(x, c)["z"]
        z2 = model.encode(x, c)["z"]
        assert torch.equal(z1, z2)

    def test_encode_rejects_nan(self):
        torch.manual_seed(5)
        model = ConvaeSomModel(3, _tiny_cfg())
        x = torch.randn(2, 3)
        x[0, 0] = float("nan")
        with pytest.raises(ValueError):
            model.encode_params(x, torch.full((2, 2), 0.5))

    def test_sampling_uses_generator(self):
        torch.manual_seed(6)
        model = ConvaeSomModel(3, _tiny_cfg())
        x = torch.randn(4, 3)
        c = torch.full((4, 2), 0.5)
        g1 = torch.Generator().manual_seed(0)
        g2 = torch.Generator().manual_seed(0)
        z1 = model.encode(x, c, sample=True, generator=g1)["z"]
        z2 = model.encode(x, c, sample=True, generator=g2)["z"]
        assert torch.equal(z1, z2)

    def test_centroid_init_spreads(self):
        torch.manual_seed(7)
        model = ConvaeSomModel(3, _tiny_cfg())
        cloud = torch.randn(200, model.m) * torch.tensor([3.0, 1.0, 0.1])
        model.init_centroids_pca(cloud)
        cents = model.grid.centroids.detach()
        assert torch.isfinite(cents).all()
        assert cents.std(0).max() > 0.5


class TestTdpsomLoss:
    def _batch(self, seed=8, b=3, l=6, d=3):
        torch.manual_seed(seed)
        model = ConvaeSomModel(d, _tiny_cfg())
        x = torch.randn(b, l, d)
        c = torch.softmax(torch.randn(b, l, 2), dim=-1)
        return model, x, c

    def test_additivity_bit_exact(self):
        model, x, c = self._batch()
        cfg = model.cfg
        out = tdpsom_loss(x, c, model)
        want = (cfg.beta * out["L_SOM"] + cfg.gamma * out["L_Commit"]
                + cfg.theta * out["L_Reconstruction"]
                + cfg.kappa * out["L_Smoothness"])
        assert out["L_T-DPSOM"].item() == want.item()

    def test_components_nonnegative_where_defined(self):
        model, x, c = self._batch(seed=9)
        out = tdpsom_loss(x, c, model)
        assert out["L_SOM"].item() >= 0
        assert out["L_Commit"].item() >= 0
        assert out["L_Smoothness"].item() >= 0

    def test_contract_errors(self):
        model, x, c = self._batch()
        with pytest.raises(ContractError):
            tdpsom_loss(x[:, 0], c[:, 0], model)
        with pytest.raises(ContractError):
            tdpsom_loss(x[:, :1], c[:, :1], model)

    def test_latent_shape(self):
        model, x, c = self._batch()
        out = tdpsom_loss(x, c, model)
        assert out["latent"].shape == (3, 6, model.m)
        assert out["assignments"].shape == (3, 6)
        assert out["recon"].shape == x.shape
