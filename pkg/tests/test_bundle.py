"""Model bundles: lossless round trips, byte determinism and format
validation."""

import hashlib

import numpy as np
import pytest
import torch

from afn.bundle import BundleError, load_bundle, load_tm_bundle, \
    save_bundle, save_tm_bundle
from afn.explain import ShapTable
from afn.ifm import forecast


def _sha(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


class TestFullBundle:
    def test_round_trip_inference_exact(self, tiny_setup, tmp_path):
        model = tiny_setup["model"]
        p = tmp_path / "m.afnb"
        save_bundle(model, p, shap_table=tiny_setup["table"])
        again, extras = load_bundle(p)
        hist = tiny_setup["test"].values[0, :40]
        f1 = forecast(hist, 5, model)
        f2 = forecast(hist, 5, again)
        assert np.array_equal(f1.x_hat, f2.x_hat)
        assert f1.node_path == f2.node_path
        assert np.array_equal(f1.attention, f2.attention)
        assert np.array_equal(again.risk_map.scores, model.risk_map.scores)
        table = ShapTable.from_dict(extras["shap_table"])
        assert table.entries == tiny_setup["table"].entries
        assert again.feature_names == model.feature_names
        assert again.train_log == model.train_log

    def test_byte_deterministic(self, tiny_setup, tmp_path):
        model = tiny_setup["model"]
        p1 = tmp_path / "a.afnb"
        p2 = tmp_path / "b.afnb"
        save_bundle(model, p1, shap_table=tiny_setup["table"])
        save_bundle(model, p2, shap_table=tiny_setup["table"])
        assert _sha(p1) == _sha(p2)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.afnb"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(BundleError):
            load_bundle(p)

    def test_kind_enforced(self, tiny_setup, tmp_path):
        p = tmp_path / "tm.afnb"
        save_tm_bundle(tiny_setup["tm"], p)
        with pytest.raises(BundleError):
            load_bundle(p)
        with pytest.raises(BundleError):
            load_tm_bundle(tiny_setup["bundle_path"])

    def test_ablated_variant_round_trip(self, tiny_setup, tmp_path):
        model_al, extras = load_bundle(tiny_setup["al_bundle_path"])
        assert model_al.cfg.ablate_al
        assert model_al.risk_map is None
        assert extras["shap_table"] is None
        fc = forecast(tiny_setup["test"].values[0, :40], 3, model_al)
        assert fc.attention is None


class TestTmBundle:
    def test_round_trip(self, tiny_setup, tmp_path):
        tm = tiny_setup["tm"]
        p = tmp_path / "tm.afnb"
        save_tm_bundle(tm, p)
        again = load_tm_bundle(p)
        pi = torch.softmax(torch.randn(4, tm.K, generator=torch.Generator()
                                       .manual_seed(0)), dim=-1)
        with torch.no_grad():
            assert torch.equal(tm(pi), again(pi))
            assert torch.equal(tm.condition_dist(pi),
                               again.condition_dist(pi))
        assert np.array_equal(again.cluster_model.centroids,
                              tm.cluster_model.centroids)
