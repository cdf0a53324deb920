"""Shared fixtures: a small fully trained model (with risk map, Shapley
table and saved bundle) reused across the unit suites, plus the terminal
reporting hook for the acceptance criteria."""

import json
import warnings

import numpy as np
import pytest
import torch

torch.set_num_threads(1)
warnings.filterwarnings("ignore", message="burst starts inside the history")

TINY_SYNTH = {
    "N": 40, "T": 60, "d": 3, "R": 3,
    "regime_transition_matrix": [[0.94, 0.03, 0.03],
                                 [0.03, 0.94, 0.03],
                                 [0.04, 0.04, 0.92]],
    "regimes": [
        {"mean": [0.0, 0.0, 0.0], "seasonal_amplitude": 0.3,
         "seasonal_period": 8},
        {"mean": [1.5, 0.4, 0.4], "seasonal_amplitude": 0.3,
         "seasonal_period": 8},
        {"mean": [4.5, 0.8, 0.8], "seasonal_amplitude": 0.3,
         "seasonal_period": 8},
    ],
    "noise_std": 0.15, "seed": 0,
}


def tiny_config(seed=0, **overrides):
    from afn.benchmarks import benchmark_model_config
    base = dict(stage_a_epochs=3, stage_b_epochs=3, stage_c_epochs=2,
                tm_epochs=4, tm_warmup_epochs=1, cond_pseudo_epochs=2)
    base.update(overrides)
    return benchmark_model_config(seed=seed, **base)


@pytest.fixture(scope="session")
def tiny_setup(tmp_path_factory):
    """One small end-to-end training shared by bundle/service/CLI tests."""
    from afn.bundle import save_bundle
    from afn.data import SynthConfig, generate_synthetic, split, \
        zscore_fit_apply
    from afn.explain import fit_som_shap
    from afn.ifm import AfnModel, train_afn
    from afn.risk import risk_map_from_regimes
    from afn.transition import pretrain_tm

    root = tmp_path_factory.mktemp("tiny")
    synth_path = root / "synth.json"
    synth_path.write_text(json.dumps(TINY_SYNTH))
    ts = generate_synthetic(SynthConfig.from_json(synth_path))
    train, test = split(ts, 0.75, seed=0)
    _, stats = zscore_fit_apply(train)
    cfg = tiny_config()
    tm = pretrain_tm(train, cfg)
    model = train_afn(train, cfg, tm=tm, norm_stats=stats)
    risk_map_from_regimes(model, train, risky_regime=2)
    table = fit_som_shap(model, train, background_size=64)
    bundle_path = root / "model.afnb"
    save_bundle(model, bundle_path, shap_table=table)

    # untrained attention-ablated variant without a risk map, for the
    # conflict-state error paths
    cfg_al = cfg.replace(ablate_al=True)
    model_al = AfnModel(ts.n_features, ts.feature_names, cfg_al,
                        tm=tm, norm_stats=stats)
    al_path = root / "model_al.afnb"
    save_bundle(model_al, al_path)

    return {
        "ts": ts, "train": train, "test": test, "stats": stats,
        "cfg": cfg, "tm": tm, "model": model, "table": table,
        "bundle_path": str(bundle_path), "al_bundle_path": str(al_path),
        "synth_path": str(synth_path),
    }


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    import sys
    test_acceptance = sys.modules.get("test_acceptance") \
        or sys.modules.get("tests.test_acceptance")
    if test_acceptance is None:
        return
    results = getattr(test_acceptance, "RESULTS", [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        line = f"{status}: {name}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
