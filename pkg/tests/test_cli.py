"""Command line interface: every subcommand end to end on small inputs."""

import json

import pytest
from click.testing import CliRunner

from afn.cli import main


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def artifacts(tiny_setup, tmp_path_factory, runner):
    """Run pretrain-tm and train once; later commands reuse the outputs."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(tiny_setup["cfg"].to_dict()))
    tm_path = root / "tm.afnb"
    res = runner.invoke(main, [
        "pretrain-tm", "--data", tiny_setup["synth_path"],
        "--k", "5", "--rho", "3", "--c", "3", "--m", "4",
        "--config", str(cfg_path), "--out", str(tm_path)])
    assert res.exit_code == 0, res.output
    model_path = root / "model.afnb"
    res = runner.invoke(main, [
        "train", "--data", tiny_setup["synth_path"],
        "--config", str(cfg_path), "--tm", str(tm_path),
        "--risk-regime", "2", "--out", str(model_path)])
    assert res.exit_code == 0, res.output
    return {"root": root, "cfg_path": cfg_path, "tm_path": tm_path,
            "model_path": model_path}


class TestCommands:
    def test_audit(self, runner, tiny_setup, tmp_path):
        out = tmp_path / "report.json"
        res = runner.invoke(main, [
            "audit", "--input", tiny_setup["synth_path"],
            "--n", "5", "--repeats", "20", "--out", str(out)])
        assert res.exit_code == 0, res.output
        rep = json.loads(out.read_text())
        assert {"runs_p_mean", "acf_ratio_mean",
                "explained_variance"} <= set(rep)

    def test_train_outputs_loadable_bundle(self, artifacts):
        from afn.bundle import load_bundle
        model, extras = load_bundle(artifacts["model_path"])
        assert model.risk_map is not None
        assert extras["shap_table"] is None

    def test_forecast(self, runner, tiny_setup, artifacts, tmp_path):
        out = tmp_path / "fc.json"
        res = runner.invoke(main, [
            "forecast", "--model", str(artifacts["model_path"]),
            "--data", tiny_setup["synth_path"], "--series", "0",
            "--horizon", "5", "--out", str(out)])
        assert res.exit_code == 0, res.output
        fc = json.loads(out.read_text())
        assert len(fc["x_hat"]) == 5
        assert len(fc["node_path"]) == tiny_setup["ts"].n_steps + 5

    def test_explain_requires_shap_table(self, runner, tiny_setup,
                                         artifacts, tmp_path):
        res = runner.invoke(main, [
            "explain", "--model", str(artifacts["model_path"]),
            "--data", tiny_setup["synth_path"], "--series", "0",
            "--out", str(tmp_path / "ex.json")])
        assert res.exit_code != 0

    def test_explain_with_table(self, runner, tiny_setup, tmp_path):
        out = tmp_path / "ex.json"
        res = runner.invoke(main, [
            "explain", "--model", tiny_setup["bundle_path"],
            "--data", tiny_setup["synth_path"], "--series", "0",
            "--out", str(out)])
        assert res.exit_code == 0, res.output
        body = json.loads(out.read_text())
        assert body["attentive_steps"]
        assert body["feature_ranking"]

    def test_classify(self, runner, tiny_setup, artifacts, tmp_path):
        out = tmp_path / "cls.json"
        res = runner.invoke(main, [
            "classify", "--model", str(artifacts["model_path"]),
            "--cohort", tiny_setup["synth_path"], "--out", str(out)])
        assert res.exit_code == 0, res.output
        rows = json.loads(out.read_text())["assessments"]
        assert len(rows) == tiny_setup["ts"].n_series
        assert all(r["label"] in ("SR", "SH") for r in rows)

    def test_intervene(self, runner, tiny_setup, artifacts, tmp_path):
        out = tmp_path / "iv.json"
        feat = tiny_setup["ts"].feature_names[0]
        res = runner.invoke(main, [
            "intervene", "--model", str(artifacts["model_path"]),
            "--data", tiny_setup["synth_path"], "--series", "0",
            "--feature", feat, "--pct", "20", "--steps", "auto",
            "--out", str(out)])
        assert res.exit_code == 0, res.output
        body = json.loads(out.read_text())
        assert body["before"]["label"] in ("SR", "SH")

    def test_unknown_series(self, runner, tiny_setup, artifacts, tmp_path):
        res = runner.invoke(main, [
            "forecast", "--model", str(artifacts["model_path"]),
            "--data", tiny_setup["synth_path"], "--series", "nope",
            "--out", str(tmp_path / "x.json")])
        assert res.exit_code != 0

    def test_csv_requires_schema(self, runner, artifacts, tmp_path):
        csv = tmp_path / "d.csv"
        csv.write_text("series_id,timestamp,a\n1,0,1.0\n")
        res = runner.invoke(main, [
            "forecast", "--model", str(artifacts["model_path"]),
            "--data", str(csv), "--series", "1",
            "--out", str(tmp_path / "x.json")])
        assert res.exit_code != 0
