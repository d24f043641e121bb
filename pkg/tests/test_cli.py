import csv
import json

import pytest

from xferlaw.cli import main
from xferlaw.pipeline import write_artifacts


@pytest.fixture(scope="module")
def runs_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "runs.jsonl"
    assert main(["synth", "--seed", "7", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def curve_runs(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "curves.jsonl"
    argv = ["synth", "--out", str(path), "--checkpoints", "12", "--n-grid", "100000,1000000,10000000",
            "--d-grid", "100000,1000000"]
    assert main(argv) == 0
    return path


def run_json(capsys, argv):
    assert main(argv) == 0
    return json.loads(capsys.readouterr().out)


def snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestExamples:
    def test_synth_then_pipeline(self, runs_file, tmp_path, capsys):
        out = tmp_path / "report"
        run_json(capsys, ["pipeline", "--runs", str(runs_file), "--out", str(out)])
        coeffs = json.loads((out / "coefficients.json").read_text())
        assert abs(coeffs["k"] - 1.9e4) / 1.9e4 <= 0.05
        assert set(coeffs) == {"k", "alpha", "beta", "per_df_nstar", "diagnostics"}

    def test_tradeoff(self, capsys):
        out = run_json(capsys, ["tradeoff", "--k", "1.9e4", "--alpha", "0.18", "--beta", "0.38", "--data-factor", "100"])
        assert out["equivalent_model_factor"] == pytest.approx(8.9, abs=0.1)

    def test_predict_few_shot(self, tmp_path, capsys):
        coeffs = tmp_path / "text.json"
        coeffs.write_text(json.dumps({"k": 1.9e4, "alpha": 0.18, "beta": 0.38}))
        out = run_json(capsys, ["predict", "--few-shot", "--n", "1.75e11", "--context", "1", "--coeffs", str(coeffs)])
        assert out["d_effective"] == pytest.approx(3.6e8, rel=0.02)
        assert abs(out["d_effective"] - 3.7e8) / 3.7e8 <= 0.10


class TestErrors:
    def test_unknown_subcommand(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_module_error_exit_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"run_id": "a"}\n')
        out = tmp_path / "report"
        assert main(["pipeline", "--runs", str(bad), "--out", str(out)]) == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "RunFormatError"
        assert "line 1" in err["message"]
        assert not out.exists()

    def test_analysis_failure_leaves_nothing(self, tmp_path, capsys):
        only_ft = tmp_path / "ft.jsonl"
        only_ft.write_text(json.dumps({"run_id": "f", "curriculum": "finetuned", "pretrain_label": "text",
                                       "n_params": 10, "d_finetune": 10,
                                       "checkpoints": [{"data_seen": 10, "compute": None, "eval_loss": 2.0}]}) + "\n")
        out = tmp_path / "report"
        assert main(["pipeline", "--runs", str(only_ft), "--out", str(out)]) == 1
        assert "from_scratch" in json.loads(capsys.readouterr().err)["message"]
        assert not out.exists()

    def test_staging_failure_writes_nothing(self, tmp_path):
        (tmp_path / "blocker").write_text("a file where a directory is needed")
        with pytest.raises(OSError):
            write_artifacts(tmp_path, {"first.json": "{}", "blocker/second.csv": "x"})
        assert sorted(p.name for p in tmp_path.iterdir()) == ["blocker"]

    def test_tradeoff_missing_coefficients(self, capsys):
        assert main(["tradeoff", "--k", "1", "--data-factor", "10"]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "ValueError"


class TestDeterminism:
    def test_rerun_identical_except_timestamp(self, runs_file, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["pipeline", "--runs", str(runs_file), "--out", str(out)]) == 0
        capsys.readouterr()
        sa, sb = snapshot(a), snapshot(b)
        assert sa.keys() == sb.keys()
        for name in sa:
            if name == "report.json":
                ra, rb = json.loads(sa[name]), json.loads(sb[name])
                ra.pop("ingested_at"), rb.pop("ingested_at")
                assert ra == rb
            else:
                assert sa[name] == sb[name], name

    def test_env_seed_overrides(self, tmp_path, monkeypatch):
        a, b, c = tmp_path / "a.jsonl", tmp_path / "b.jsonl", tmp_path / "c.jsonl"
        assert main(["synth", "--noise", "0.02", "--seed", "5", "--out", str(a)]) == 0
        monkeypatch.setenv("XFERLAW_SEED", "5")
        assert main(["synth", "--noise", "0.02", "--seed", "6", "--out", str(b)]) == 0
        monkeypatch.delenv("XFERLAW_SEED")
        assert main(["synth", "--noise", "0.02", "--seed", "6", "--out", str(c)]) == 0
        assert a.read_bytes() == b.read_bytes() != c.read_bytes()

    def test_config_file(self, runs_file, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"runs": str(runs_file), "out": str(tmp_path / "r"), "common-beta": 0.38,
                                   "skip_scaling": True}))
        out = run_json(capsys, ["pipeline", "--config", str(cfg)])
        assert out["beta"] == 0.38
        assert not (tmp_path / "r" / "scaling.json").exists()

    def test_config_flag_precedence(self, runs_file, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"data_factor": 100, "k": 1.0, "alpha": 0.2, "beta": 0.4}))
        out = run_json(capsys, ["tradeoff", "--config", str(cfg), "--beta", "0.2"])
        assert out["equivalent_model_factor"] == pytest.approx(100.0)

    def test_config_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"nope": 1}))
        assert main(["tradeoff", "--config", str(cfg), "--data-factor", "2"]) == 1
        assert "nope" in capsys.readouterr().err


class TestSubcommands:
    def test_ingest(self, runs_file, tmp_path, capsys):
        out = run_json(capsys, ["ingest", "--runs", str(runs_file), "--out", str(tmp_path / "i")])
        assert out == {"n_runs": 425, "n_findings": 0}
        assert (tmp_path / "i" / "runs.jsonl").read_bytes() == runs_file.read_bytes()

    def test_table_then_fit(self, runs_file, tmp_path, capsys):
        table = tmp_path / "table.csv"
        assert main(["table", "--runs", str(runs_file), "--out", str(table)]) == 0
        assert table.read_text().startswith("n_params,d_finetune,loss,d_effective,d_transferred,fraction,extrapolated,status")
        fof = run_json(capsys, ["fit-transfer", "--table", str(table), "--out", str(tmp_path / "c.json")])
        direct = run_json(capsys, ["fit-transfer", "--table", str(table), "--method", "direct",
                                   "--out", str(tmp_path / "d.json")])
        for name in ("k", "alpha", "beta"):
            assert direct[name] == pytest.approx(fof[name], rel=0.10)

    def test_fit_scaling(self, runs_file, tmp_path, capsys):
        out = run_json(capsys, ["fit-scaling", "--runs", str(runs_file), "--out", str(tmp_path / "s.json")])
        assert out["alpha_d"] == pytest.approx(0.75, rel=0.01)
        saved = json.loads((tmp_path / "s.json").read_text())
        assert len(saved["residuals"]) == 405

    def test_regime_and_dn_reuse(self, runs_file, tmp_path, capsys):
        out = run_json(capsys, ["regime", "--runs", str(runs_file), "--out", str(tmp_path / "g")])
        assert out["exponent"] > 0
        files = {p.name for p in (tmp_path / "g").iterdir()}
        assert files == {"dn.json", "regime.csv", "ossification.json", "ossification.csv"}
        table = tmp_path / "t.csv"
        assert main(["table", "--runs", str(runs_file), "--out", str(table)]) == 0
        res = run_json(capsys, ["fit-transfer", "--table", str(table), "--dn", str(tmp_path / "g" / "dn.json"),
                                "--out", str(tmp_path / "c.json")])
        assert res["beta"] == pytest.approx(0.38, rel=0.02)

    def test_predict_loss(self, capsys):
        out = run_json(capsys, ["predict", "--n", "1e7", "--d-finetune", "1e5", "--coeffs", "mixture"])
        assert out["loss_effective"] <= out["loss_low_data"] + 1e-12

    def test_frontier(self, curve_runs, tmp_path, capsys):
        out = run_json(capsys, ["frontier", "--runs", str(curve_runs), "--out", str(tmp_path / "f")])
        assert out["n_frontier"] > 0
        with open(tmp_path / "f" / "frontier.csv") as fh:
            assert next(csv.reader(fh)) == ["compute", "loss", "run_id"]

    def test_frontier_needs_compute(self, tmp_path, capsys):
        path = tmp_path / "nc.jsonl"
        path.write_text(json.dumps({"run_id": "a", "curriculum": "from_scratch", "pretrain_label": "",
                                    "n_params": 1, "d_finetune": 1,
                                    "checkpoints": [{"data_seen": 1, "compute": None, "eval_loss": 2.0}]}) + "\n")
        assert main(["frontier", "--runs", str(path), "--out", str(tmp_path / "f")]) == 1
        assert not (tmp_path / "f").exists()

    def test_epochs(self, curve_runs, tmp_path, capsys):
        out = run_json(capsys, ["epochs", "--runs", str(curve_runs), "--out", str(tmp_path / "e"), "--no-dn"])
        assert out["all"] == pytest.approx(3.0)

    def test_pipeline_plot_files(self, curve_runs, tmp_path, capsys):
        out = tmp_path / "p"
        run_json(capsys, ["pipeline", "--runs", str(curve_runs), "--out", str(out), "--skip-scaling"])
        for name in ("fraction_vs_n", "loss_vs_n", "dt_over_dn", "compute_frontier", "converged_compute", "best_epoch"):
            with open(out / "plots" / f"{name}.csv") as fh:
                rows = list(csv.reader(fh))
            assert rows[0] == ["x", "y", "series"], name
            assert len(rows) > 1, name
