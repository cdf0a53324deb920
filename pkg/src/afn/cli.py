"""Command line interface: audit, pretrain-tm, train, forecast, explain,
classify, intervene and serve.

Datasets are passed as either a `series_id,timestamp,<features...>` CSV or a
synthetic-generator JSON config (detected by extension). JSON outputs reuse
the service payload builders, so the CLI and the HTTP endpoints emit
byte-identical documents for identical inputs.
"""

from __future__ import annotations

import json

import click
import numpy as np

from . import service as svc
from .audit import audit_dataset
from .bundle import load_bundle, load_tm_bundle, save_bundle, save_tm_bundle
from .config import ModelConfig
from .data import SynthConfig, TimeSeriesSet, generate_synthetic, load_csv, \
    zscore_fit_apply
from .explain import ShapTable, fit_som_shap
from .ifm import forecast, train_afn
from .risk import classify, risk_map_from_regimes
from .transition import pretrain_tm

_COMPACT = {"ensure_ascii": False, "separators": (",", ":")}


def _load_dataset(path, schema: str | None = None) -> TimeSeriesSet:
    path = str(path)
    if path.endswith(".json"):
        return generate_synthetic(SynthConfig.from_json(path))
    if schema is None:
        raise click.UsageError("CSV input requires --schema (comma-separated "
                               "feature names)")
    return load_csv(path, schema=[s.strip() for s in schema.split(",")])


def _pick_series(ts: TimeSeriesSet, series: str) -> np.ndarray:
    if series in ts.series_ids:
        return ts.values[ts.series_ids.index(series)]
    try:
        return ts.values[int(series)]
    except (ValueError, IndexError):
        raise click.UsageError(f"unknown series {series!r}")


@click.group()
def main() -> None:
    """Interpretable forecasting toolkit."""


@main.command()
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True))
@click.option("--schema", default=None, help="feature names for CSV input")
@click.option("--n", default=30, show_default=True)
@click.option("--len", "sample_length", default=13, show_default=True)
@click.option("--repeats", default=1000, show_default=True)
@click.option("--period", default=7, show_default=True)
@click.option("--out", required=True, type=click.Path())
def audit(input_path, schema, n, sample_length, repeats, period, out):
    """Randomness audit of a cohort; writes an AuditReport JSON."""
    ts = _load_dataset(input_path, schema)
    report = audit_dataset(ts, n=n, sample_length=sample_length,
                           repeats=repeats, period=period)
    with open(out, "w") as fh:
        fh.write(report.to_json())
    click.echo(f"wrote {out}")


@main.command("pretrain-tm")
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True))
@click.option("--schema", default=None)
@click.option("--k", "--K", "k", default=5, show_default=True)
@click.option("--rho", default=3, show_default=True)
@click.option("--c", "--C", "c", default=4, show_default=True)
@click.option("--m", "--M", "m", default=9, show_default=True)
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True), help="ModelConfig JSON overrides")
@click.option("--out", required=True, type=click.Path())
def pretrain_tm_cmd(data_path, schema, k, rho, c, m, config_path, out):
    """Pretrain the transition module and save a standalone bundle."""
    ts = _load_dataset(data_path, schema)
    cfg = _read_config(config_path).replace(K=k, rho=rho, C=c, M=m)
    tm = pretrain_tm(ts, cfg)
    save_tm_bundle(tm, out)
    click.echo(f"wrote {out}")


def _read_config(config_path) -> ModelConfig:
    if config_path is None:
        return ModelConfig()
    with open(config_path) as fh:
        return ModelConfig.from_dict(json.load(fh))


@main.command()
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True))
@click.option("--schema", default=None)
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True), help="ModelConfig JSON")
@click.option("--tm", "tm_path", default=None, type=click.Path(exists=True),
              help="pretrained transition-module bundle; trained in-line "
                   "when omitted")
@click.option("--ablate", default="none", show_default=True,
              type=click.Choice(["none", "tm", "al", "df", "fft"]))
@click.option("--risk-regime", default=None, type=int,
              help="fit the default risk map from this regime label")
@click.option("--shap/--no-shap", default=False, show_default=True,
              help="fit and embed a Shapley table")
@click.option("--out", required=True, type=click.Path())
def train(data_path, schema, config_path, tm_path, ablate, risk_regime,
          shap, out):
    """Train the full model and save a bundle."""
    ts = _load_dataset(data_path, schema)
    cfg = _read_config(config_path)
    if ablate != "none":
        cfg = cfg.replace(**{f"ablate_{ablate}": True})
    _, stats = zscore_fit_apply(ts)
    tm = None
    if not cfg.ablate_tm:
        tm = load_tm_bundle(tm_path) if tm_path else pretrain_tm(ts, cfg)
    model = train_afn(ts, cfg, tm=tm, norm_stats=stats)
    if risk_regime is not None:
        risk_map_from_regimes(model, ts, risky_regime=risk_regime)
    table = fit_som_shap(model, ts) if shap else None
    save_bundle(model, out, shap_table=table)
    click.echo(f"wrote {out}")


@main.command("forecast")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True))
@click.option("--schema", default=None)
@click.option("--series", required=True, help="series id or index")
@click.option("--horizon", default=6, show_default=True)
@click.option("--out", required=True, type=click.Path())
def forecast_cmd(model_path, data_path, schema, series, horizon, out):
    """Forecast one series; writes the forecast payload JSON."""
    model, _ = load_bundle(model_path)
    ts = _load_dataset(data_path, schema)
    fc = forecast(_pick_series(ts, series), horizon, model)
    with open(out, "w") as fh:
        json.dump(svc.forecast_payload(fc), fh, **_COMPACT)
    click.echo(f"wrote {out}")


@main.command("explain")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True))
@click.option("--schema", default=None)
@click.option("--series", required=True)
@click.option("--horizon", default=6, show_default=True)
@click.option("--out", required=True, type=click.Path())
def explain_cmd(model_path, data_path, schema, series, horizon, out):
    """Explanation payload (attentive steps, ranking, per-node shap)."""
    model, extras = load_bundle(model_path)
    if extras["shap_table"] is None:
        raise click.UsageError("model bundle carries no Shapley table; "
                               "train with --shap")
    table = ShapTable.from_dict(extras["shap_table"])
    ts = _load_dataset(data_path, schema)
    payload = svc.explain_payload(model, table, _pick_series(ts, series),
                                  horizon)
    with open(out, "w") as fh:
        json.dump(payload, fh, **_COMPACT)
    click.echo(f"wrote {out}")


@main.command("classify")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--cohort", "data_path", required=True,
              type=click.Path(exists=True))
@click.option("--schema", default=None)
@click.option("--horizon", default=6, show_default=True)
@click.option("--burst-threshold", default=2, show_default=True)
@click.option("--out", required=True, type=click.Path())
def classify_cmd(model_path, data_path, schema, horizon, burst_threshold,
                 out):
    """SR/SH assessment per series of a cohort."""
    model, _ = load_bundle(model_path)
    if model.risk_map is None:
        raise click.UsageError("model has no risk map")
    ts = _load_dataset(data_path, schema)
    rows = []
    for i in range(ts.n_series):
        fc = forecast(ts.values[i], horizon, model)
        a = classify(fc.node_path, model.risk_map, burst_threshold,
                     present_step=fc.history_len)
        rows.append({"series_id": str(ts.series_ids[i]), "label": a.label,
                     "burst_start": a.burst_start, "tts": a.tts})
    with open(out, "w") as fh:
        json.dump({"assessments": rows}, fh, **_COMPACT)
    click.echo(f"wrote {out}")


@main.command("intervene")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True))
@click.option("--schema", default=None)
@click.option("--series", required=True)
@click.option("--feature", required=True)
@click.option("--pct", required=True, type=float)
@click.option("--steps", default="auto", show_default=True,
              help='"auto" or comma-separated history indices')
@click.option("--horizon", default=6, show_default=True)
@click.option("--out", required=True, type=click.Path())
def intervene_cmd(model_path, data_path, schema, series, feature, pct, steps,
                  horizon, out):
    """Counterfactual reduction of one feature; before/after assessment."""
    model, _ = load_bundle(model_path)
    ts = _load_dataset(data_path, schema)
    step_arg = steps if steps == "auto" else [int(s) for s in steps.split(",")]
    payload = svc.intervene_payload(model, _pick_series(ts, series), horizon,
                                    feature, pct, step_arg)
    with open(out, "w") as fh:
        json.dump(payload, fh, **_COMPACT)
    click.echo(f"wrote {out}")


@main.command("serve")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
def serve_cmd(config_path, host, port):
    """Run the HTTP service."""
    svc.serve(config_path, host=host, port=port)


if __name__ == "__main__":
    main()
