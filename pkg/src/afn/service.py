"""HTTP façade over trained model bundles.

Four endpoints drive the analyst console and batch pipelines: POST /forecast,
POST /explain, POST /intervene and GET /grid. The service is stateless: every
response equals the corresponding library call on identical inputs, model
bundles are loaded once at startup from a JSON config manifest, and nothing
a request does mutates the loaded snapshots.

Config JSON: {"models": [{"id": ..., "bundle_path": ...}], "host": ...,
"port": ...}; the config path comes from the AFN_SERVICE_CONFIG environment
variable or the serve CLI flag.
"""

from __future__ import annotations

import json
import os

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict

from .bundle import load_bundle
from .explain import ShapTable, attention_points, dominant_feature_map, \
    rank_features
from .ifm import AfnModel, Forecast, UnsupportedOperationError, forecast
from .risk import intervene

CONFIG_ENV_VAR = "AFN_SERVICE_CONFIG"


class ForecastRequest(BaseModel):
    model_config = ConfigDict(protected_namespaces=())
    model_id: str
    values: list[list[float]]
    horizon: int


class ExplainRequest(ForecastRequest):
    pass


class InterveneRequest(ForecastRequest):
    feature: str
    reduction_pct: float
    steps: list[int] | str = "auto"


def load_config(path) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    if "models" not in cfg or not cfg["models"]:
        raise ValueError("service config must list at least one model")
    return cfg


def load_registry(config: dict) -> dict:
    """id -> (model, shap_table or None), loaded once and never mutated."""
    registry = {}
    for entry in config["models"]:
        model, extras = load_bundle(entry["bundle_path"])
        table = None
        if extras["shap_table"] is not None:
            table = ShapTable.from_dict(extras["shap_table"])
        registry[entry["id"]] = (model, table)
    return registry


# ---------------------------------------------------------------------------
# payload builders, shared verbatim with the CLI so both interfaces emit
# byte-identical JSON for the same inputs

def forecast_payload(fc: Forecast) -> dict:
    return {
        "x_hat": [[float(v) for v in row] for row in fc.x_hat],
        "node_path": [[int(i), int(j)] for i, j in fc.node_path],
        "attention": (None if fc.attention is None
                      else [[float(v) for v in row] for row in fc.attention]),
        "conditions": [
            {"discrete": int(c.discrete),
             "distribution": [float(p) for p in c.distribution]}
            for c in fc.conditions
        ],
        "horizon": int(fc.horizon),
        "history_len": int(fc.history_len),
        "feature_names": list(fc.feature_names),
    }


def explain_payload(model: AfnModel, table: ShapTable,
                    series: np.ndarray, h: int) -> dict:
    fc = forecast(series, h, model)
    steps = attention_points(fc)
    ranking = rank_features(fc, table, steps)
    nodes = sorted({tuple(fc.node_path[t]) for t in steps})
    return {
        "attentive_steps": [int(s) for s in steps],
        "feature_ranking": ranking.to_dict()["ranking"],
        "node_shap": {
            f"{i},{j}": [[name, float(v)]
                         for name, v in table.top_features((i, j))]
            for i, j in nodes
        },
    }


def intervene_payload(model: AfnModel, series: np.ndarray, h: int,
                      feature: str, reduction_pct: float, steps) -> dict:
    res = intervene(series, feature, reduction_pct, steps, model, h)
    out = res.to_dict()
    out["forecast_before"] = forecast_payload(res.forecast_before)
    out["forecast_after"] = forecast_payload(res.forecast_after)
    tts0, tts1 = res.before.tts, res.after.tts
    out["delta_tts"] = (None if tts0 is None or tts1 is None
                        else int(tts1 - tts0))
    return out


def grid_payload(model: AfnModel, table: ShapTable | None) -> dict:
    grid = model.convae_som.grid
    cent = grid.centroids.detach().numpy()
    centroids = {}
    for k in range(grid.n_nodes):
        i, j = grid.coords(k)
        centroids[f"{i},{j}"] = [float(v) for v in cent[k]]
    return {
        "risk_map": model.risk_map.to_dict(),
        "dominant_feature_map": (None if table is None
                                 else dominant_feature_map(table)),
        "centroids": centroids,
        "grid_height": grid.height,
        "grid_width": grid.width,
        "feature_names": list(model.feature_names),
    }


# ---------------------------------------------------------------------------

def _parse_series(values: list, model: AfnModel) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != model.d:
        raise HTTPException(
            status_code=422,
            detail=f"series must have shape [T, {model.d}], "
                   f"got {list(arr.shape)}")
    if not np.isfinite(arr).all():
        raise HTTPException(status_code=422,
                            detail="series contains NaN or inf")
    return arr


def create_app(config: dict | None = None) -> FastAPI:
    if config is None:
        path = os.environ.get(CONFIG_ENV_VAR)
        if not path:
            raise RuntimeError(f"set {CONFIG_ENV_VAR} or pass a config")
        config = load_config(path)
    registry = load_registry(config)
    app = FastAPI(title="afn-service")

    def get_entry(model_id: str) -> tuple:
        if model_id not in registry:
            raise HTTPException(status_code=404,
                                detail=f"unknown model {model_id!r}")
        return registry[model_id]

    def check_horizon(h: int) -> None:
        if h < 1:
            raise HTTPException(status_code=422, detail="horizon must be >= 1")

    @app.post("/forecast")
    def post_forecast(req: ForecastRequest) -> dict:
        model, _ = get_entry(req.model_id)
        check_horizon(req.horizon)
        series = _parse_series(req.values, model)
        try:
            fc = forecast(series, req.horizon, model)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return forecast_payload(fc)

    @app.post("/explain")
    def post_explain(req: ExplainRequest) -> dict:
        model, table = get_entry(req.model_id)
        check_horizon(req.horizon)
        if model.cfg.ablate_al:
            raise HTTPException(
                status_code=409,
                detail="attention is ablated for this model; "
                       "explanations are unavailable")
        if table is None:
            raise HTTPException(
                status_code=409,
                detail="model bundle carries no Shapley table; "
                       "fit one and re-save the bundle")
        series = _parse_series(req.values, model)
        try:
            return explain_payload(model, table, series, req.horizon)
        except UnsupportedOperationError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/intervene")
    def post_intervene(req: InterveneRequest) -> dict:
        model, _ = get_entry(req.model_id)
        check_horizon(req.horizon)
        if model.risk_map is None:
            raise HTTPException(
                status_code=409,
                detail="model has no risk map; call set_risk_map and "
                       "re-save the bundle")
        series = _parse_series(req.values, model)
        try:
            return intervene_payload(model, series, req.horizon, req.feature,
                                     req.reduction_pct, req.steps)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.get("/grid")
    def get_grid(model_id: str) -> dict:
        model, table = get_entry(model_id)
        if model.risk_map is None:
            raise HTTPException(
                status_code=409,
                detail="model has no risk map; call set_risk_map and "
                       "re-save the bundle")
        return grid_payload(model, table)

    return app


def serve(config_path, host: str | None = None, port: int | None = None
          ) -> None:
    """Blocking entry point used by the serve CLI command."""
    import uvicorn
    config = load_config(config_path)
    app = create_app(config)
    uvicorn.run(app,
                host=host or config.get("host", "127.0.0.1"),
                port=port or int(config.get("port", 8000)))
