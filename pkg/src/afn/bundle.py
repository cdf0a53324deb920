"""Self-contained binary model bundles.

A bundle is a single file holding everything needed to reload a trained
model for inference: configuration, normalization statistics, feature names,
the window-cluster centroids, all network weights, and the optional risk map
and Shapley table. The layout is magic bytes, a little-endian uint32 length,
a JSON manifest with sorted keys, then the raw tensor bytes in manifest
order, so identical models produce byte-identical bundles.
"""

from __future__ import annotations

import json
import struct

import numpy as np
import torch

from .config import ModelConfig
from .data import NormStats
from .ifm import AfnModel
from .transition import TransitionModel, WindowClusterModel

MAGIC = b"AFNB"
FORMAT_VERSION = 1


class BundleError(ValueError):
    """Raised for malformed or incompatible bundle files."""


def _collect_tensors(model: AfnModel) -> dict:
    """Flat name -> numpy array map covering every learned parameter."""
    out = {"cluster.centroids": None}
    if model.tm is not None:
        out["cluster.centroids"] = model.tm.cluster_model.centroids
        for k, v in model.tm.state_dict().items():
            out[f"tm.{k}"] = v.numpy()
    else:
        del out["cluster.centroids"]
    for k, v in model.convae_som.state_dict().items():
        out[f"convae.{k}"] = v.numpy()
    for k, v in model.forecaster.state_dict().items():
        out[f"forecaster.{k}"] = v.numpy()
    if model.damping_net is not None:
        for k, v in model.damping_net.state_dict().items():
            out[f"damping.{k}"] = v.numpy()
    return out


def save_bundle(model: AfnModel, path, shap_table=None) -> None:
    """Write the model (plus its risk map and an optional Shapley table) to
    a single deterministic binary file."""
    tensors = _collect_tensors(model)
    specs = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        a = np.ascontiguousarray(tensors[name])
        blob = a.tobytes()
        specs.append({"name": name, "dtype": str(a.dtype),
                      "shape": list(a.shape), "offset": offset,
                      "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)

    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "afn",
        "cfg": model.cfg.to_dict(),
        "d": model.d,
        "feature_names": list(model.feature_names),
        "norm_stats": model.norm_stats.to_dict(),
        "has_tm": model.tm is not None,
        "cluster": (None if model.tm is None
                    else {"K": model.tm.cluster_model.K,
                          "C": model.tm.cluster_model.C}),
        "risk_map": None if model.risk_map is None else model.risk_map.to_dict(),
        "shap_table": None if shap_table is None else shap_table.to_dict(),
        "train_log": model.train_log,
        "tensors": specs,
    }
    head = json.dumps(manifest, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def _read_manifest(fh) -> tuple[dict, int]:
    magic = fh.read(4)
    if magic != MAGIC:
        raise BundleError("not a model bundle (bad magic bytes)")
    (head_len,) = struct.unpack("<I", fh.read(4))
    manifest = json.loads(fh.read(head_len).decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise BundleError(f"unsupported bundle version "
                          f"{manifest.get('format_version')!r}")
    return manifest, 8 + head_len


def load_bundle(path) -> tuple[AfnModel, dict]:
    """Reload a model from a bundle.

    Returns (model, extras) where extras carries the raw manifest entries
    that are not part of the model itself (currently the Shapley table dict
    under "shap_table", or None)."""
    with open(path, "rb") as fh:
        manifest, data_start = _read_manifest(fh)
        if manifest.get("kind") != "afn":
            raise BundleError("not a full model bundle")
        tensors = {}
        for spec in manifest["tensors"]:
            fh.seek(data_start + spec["offset"])
            buf = fh.read(spec["nbytes"])
            if len(buf) != spec["nbytes"]:
                raise BundleError(f"truncated tensor {spec['name']!r}")
            tensors[spec["name"]] = np.frombuffer(
                buf, dtype=np.dtype(spec["dtype"])).reshape(spec["shape"])

    cfg = ModelConfig.from_dict(manifest["cfg"])
    stats = NormStats.from_dict(manifest["norm_stats"])

    tm = None
    if manifest["has_tm"]:
        cm = WindowClusterModel(K=manifest["cluster"]["K"],
                                C=manifest["cluster"]["C"],
                                centroids=tensors["cluster.centroids"])
        tm = TransitionModel(cm, cfg)
        _load_module(tm, tensors, "tm.")

    model = AfnModel(manifest["d"], manifest["feature_names"], cfg,
                     tm=tm, norm_stats=stats)
    _load_module(model.convae_som, tensors, "convae.")
    _load_module(model.forecaster, tensors, "forecaster.")
    if model.damping_net is not None:
        _load_module(model.damping_net, tensors, "damping.")
    model.train_log = list(manifest["train_log"])
    if manifest["risk_map"] is not None:
        from .risk import RiskMap
        model.risk_map = RiskMap.from_dict(manifest["risk_map"],
                                           height=cfg.grid_height,
                                           width=cfg.grid_width)
    model.eval()
    return model, {"shap_table": manifest["shap_table"]}


def save_tm_bundle(tm: TransitionModel, path) -> None:
    """Standalone transition-module bundle (same container format)."""
    tensors = {"cluster.centroids": tm.cluster_model.centroids}
    for k, v in tm.state_dict().items():
        tensors[f"tm.{k}"] = v.numpy()
    specs, blobs, offset = [], [], 0
    for name in sorted(tensors):
        a = np.ascontiguousarray(tensors[name])
        blob = a.tobytes()
        specs.append({"name": name, "dtype": str(a.dtype),
                      "shape": list(a.shape), "offset": offset,
                      "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "tm",
        "cfg": tm.cfg.to_dict(),
        "cluster": {"K": tm.cluster_model.K, "C": tm.cluster_model.C},
        "tensors": specs,
    }
    head = json.dumps(manifest, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_tm_bundle(path) -> TransitionModel:
    with open(path, "rb") as fh:
        manifest, data_start = _read_manifest(fh)
        if manifest.get("kind") != "tm":
            raise BundleError("not a transition-module bundle")
        tensors = {}
        for spec in manifest["tensors"]:
            fh.seek(data_start + spec["offset"])
            buf = fh.read(spec["nbytes"])
            tensors[spec["name"]] = np.frombuffer(
                buf, dtype=np.dtype(spec["dtype"])).reshape(spec["shape"])
    cfg = ModelConfig.from_dict(manifest["cfg"])
    cm = WindowClusterModel(K=manifest["cluster"]["K"],
                            C=manifest["cluster"]["C"],
                            centroids=tensors["cluster.centroids"])
    tm = TransitionModel(cm, cfg)
    _load_module(tm, tensors, "tm.")
    tm.eval()
    return tm


def _load_module(module: torch.nn.Module, tensors: dict, prefix: str) -> None:
    state = {}
    for key in module.state_dict():
        name = prefix + key
        if name not in tensors:
            raise BundleError(f"bundle is missing tensor {name!r}")
        state[key] = torch.from_numpy(tensors[name].copy())
    module.load_state_dict(state)
