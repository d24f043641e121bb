import io
import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xferlaw.runs import (
    FINETUNED,
    FROM_SCRATCH,
    Checkpoint,
    DuplicateRunError,
    RunFormatError,
    RunRecord,
    RunSet,
    build_curves,
    clean_curve,
    dumps_runs,
    export_runs,
    ingest_runs,
    loads_runs,
    validate_runs,
)
from xferlaw.synth import GroundTruth, generate, generate_fromscratch


def line(**over):
    rec = {
        "run_id": "a",
        "curriculum": "from_scratch",
        "pretrain_label": "",
        "n_params": 1000000,
        "d_finetune": 10000000,
        "checkpoints": [
            {"data_seen": 1e6, "compute": 6e12, "eval_loss": 3.0},
            {"data_seen": 2e6, "compute": 1.2e13, "eval_loss": 2.9},
        ],
    }
    rec.update(over)
    return json.dumps(rec) + "\n"


def run(run_id="r", losses=(3.0, 2.5), seen=None, curriculum=FROM_SCRATCH, n=10**6, d=10**7, label=""):
    seen = seen or [1e6 * (i + 1) for i in range(len(losses))]
    ck = tuple(Checkpoint(s, loss, 6.0 * n * s) for s, loss in zip(seen, losses))
    return RunRecord(run_id, curriculum, n, d, ck, label)


class TestIngest:
    def test_minimal_line(self):
        rs = ingest_runs(io.StringIO(line()))
        assert len(rs) == 1
        r = rs.runs[0]
        assert (r.run_id, r.curriculum, r.n_params, r.d_finetune) == ("a", FROM_SCRATCH, 10**6, 10**7)
        assert len(r.checkpoints) == 2

    def test_duplicate_names_both_lines(self):
        with pytest.raises(DuplicateRunError, match="lines 1 and 2"):
            ingest_runs(io.StringIO(line() + line()))

    def test_duplicate_after_blank_line(self):
        with pytest.raises(DuplicateRunError, match="lines 1 and 3"):
            ingest_runs(io.StringIO(line() + "\n" + line()))

    def test_malformed_json_names_line(self):
        with pytest.raises(RunFormatError) as exc:
            ingest_runs(io.StringIO(line() + "{not json\n"))
        assert exc.value.line == 2

    @pytest.mark.parametrize(
        "over, field",
        [
            ({"n_params": 0}, "n_params"),
            ({"n_params": "big"}, "n_params"),
            ({"d_finetune": 1.5}, "d_finetune"),
            ({"curriculum": "warm"}, "curriculum"),
            ({"checkpoints": []}, "checkpoints"),
            ({"checkpoints": [{"data_seen": 1}]}, "checkpoints[0].eval_loss"),
            ({"checkpoints": [{"data_seen": 1, "eval_loss": -1.0}]}, "checkpoints"),
            ({"run_id": ""}, "run_id"),
        ],
    )
    def test_bad_field_named(self, over, field):
        with pytest.raises(RunFormatError) as exc:
            ingest_runs(io.StringIO(line(run_id="ok") + line(**over)))
        assert exc.value.line == 2
        assert exc.value.field == field
        assert f"line 2, field '{field}'" in str(exc.value)

    def test_missing_field(self):
        rec = json.loads(line())
        del rec["n_params"]
        with pytest.raises(RunFormatError) as exc:
            ingest_runs(io.StringIO(json.dumps(rec)))
        assert exc.value.field == "n_params"

    def test_lenient_keeps_disordered_runs_strict_rejects(self):
        bad = line(checkpoints=[{"data_seen": 2, "eval_loss": 3.0}, {"data_seen": 1, "eval_loss": 2.0}])
        assert len(ingest_runs(io.StringIO(bad))) == 1
        with pytest.raises(RunFormatError):
            ingest_runs(io.StringIO(bad), strict=True)

    def test_provenance(self, tmp_path):
        p = tmp_path / "runs.jsonl"
        p.write_text(line())
        rs = ingest_runs(p, now="2020-01-01T00:00:00+00:00")
        assert rs.sources == (str(p),)
        assert rs.ingested_at.startswith("2020")

    def test_count_preserved(self, clean_runs):
        assert len(loads_runs(dumps_runs(clean_runs))) == len(clean_runs)

    def test_runset_rejects_duplicates(self):
        with pytest.raises(DuplicateRunError):
            RunSet((run("x"), run("x")))

    def test_require_baseline(self):
        rs = RunSet((run("f", curriculum=FINETUNED, label="text"),))
        with pytest.raises(ValueError, match="from_scratch"):
            rs.require_baseline()


class TestRoundTrip:
    def test_ten_run_synth_file_byte_identical(self, tmp_path):
        gt = GroundTruth(n_grid=(10**5, 10**6), d_grid=(10**5, 10**6, 10**7), scratch_d_grid=(10**6, 10**8),
                         n_checkpoints=5, noise_sigma=0.01, seed=3)
        rs = generate(gt)
        assert len(rs) == 10
        src = tmp_path / "a.jsonl"
        export_runs(rs, src)
        dest = tmp_path / "b.jsonl"
        export_runs(ingest_runs(src), dest)
        assert src.read_bytes() == dest.read_bytes()

    def test_key_order(self, clean_runs):
        first = json.loads(dumps_runs(clean_runs.runs[:1]))
        assert list(first) == ["run_id", "curriculum", "pretrain_label", "n_params", "d_finetune", "checkpoints"]
        assert list(first["checkpoints"][0]) == ["data_seen", "compute", "eval_loss"]

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.floats(0, 1e15, allow_nan=False),
                st.floats(1e-6, 100, allow_nan=False),
                st.one_of(st.none(), st.floats(0, 1e25, allow_nan=False)),
            ),
            min_size=1,
            max_size=6,
        ),
        st.integers(1, 10**12),
        st.sampled_from([FROM_SCRATCH, FINETUNED]),
    )
    def test_ingest_export_identity(self, ckpts, n, curriculum):
        r = RunRecord("id", curriculum, n, n, tuple(Checkpoint(s, loss, c) for s, loss, c in ckpts),
                      "text" if curriculum == FINETUNED else "")
        back = loads_runs(dumps_runs([r]))
        assert back.runs == (r,)


class TestValidate:
    def test_decreasing_data_seen(self):
        rep = validate_runs([run(seen=[2e6, 1e6])])
        f = rep.findings_for("r")
        assert any("data_seen" in v for v in f.ordering)

    def test_decreasing_compute(self):
        ck = (Checkpoint(1, 3.0, 10.0), Checkpoint(2, 2.0, 5.0))
        f = validate_runs([RunRecord("r", FROM_SCRATCH, 1, 1, ck)]).findings_for("r")
        assert f.ordering == ["compute decreases at checkpoint 1"]

    def test_non_finite_loss_reported(self):
        f = validate_runs([run(losses=(3.0, math.nan, 2.0, math.inf))]).findings_for("r")
        assert f.non_finite == [1, 3]

    def test_last_quartile_ten_percent_not_converged(self):
        losses = (3.0, 2.0, 2.0, 1.8)
        f = validate_runs([run(losses=losses)]).findings_for("r")
        assert not f.converged
        assert f.last_quartile_improvement == pytest.approx(0.1)

    def test_tolerance_configurable(self):
        losses = (3.0, 2.0, 2.0, 1.99)
        assert not validate_runs([run(losses=losses)]).findings_for("r").converged
        assert validate_runs([run(losses=losses)], tol=0.01).findings_for("r").converged

    def test_noiseless_synth_zero_findings(self):
        rs = generate(GroundTruth(n_grid=(10**6, 10**7), d_grid=(10**5,), scratch_d_grid=(10**6, 10**7), n_checkpoints=12))
        rep = validate_runs(rs)
        assert rep.n_findings == 0
        assert rep.to_dict()["runs"] == []


class TestCurves:
    def test_three_runs_one_curve(self):
        rs = [run(f"r{d}", losses=(4.0, 3.0 - i * 0.1), d=d) for i, d in enumerate((10**6, 10**7, 10**8))]
        curves = build_curves(rs, "data", "across_runs")
        assert len(curves) == 1
        assert curves[0].x == (1e6, 1e7, 1e8)

    def test_running_min_cleaning(self):
        r = run(losses=(3.0, 2.5, 2.6, 2.4))
        (c,) = build_curves([r], "data", "within_run")
        assert c.loss == (3.0, 2.5, 2.5, 2.4)
        assert c.raw_loss == (3.0, 2.5, 2.6, 2.4)

    def test_surface_grid_counts(self):
        gt = GroundTruth(n_grid=(10**5, 10**6, 10**7, 10**8), scratch_d_grid=(10**5, 10**6, 10**7, 10**8, 10**9))
        curves = build_curves(generate_fromscratch(gt), "data", "across_runs")
        assert len(curves) == 4
        assert all(len(c) == 5 for c in curves)

    def test_compute_requires_compute(self):
        ck = (Checkpoint(1, 3.0), Checkpoint(2, 2.0))
        with pytest.raises(ValueError, match="'nocomp'"):
            build_curves([RunRecord("nocomp", FROM_SCRATCH, 1, 1, ck)], "compute", "within_run")

    def test_across_runs_compute_rejected(self):
        with pytest.raises(ValueError):
            build_curves([run()], "compute", "across_runs")

    def test_empty_group_skipped_with_entry(self):
        rs = [run("bad", losses=(3.0, 2.0, 2.0, 1.0)), run("good", n=10**7, losses=(3.0, 2.0, 2.0, 2.0))]
        curves = build_curves(rs, "data", "across_runs", converged_only=True)
        assert [c.n_params for c in curves] == [10**7]
        assert len(curves.skipped) == 1 and "1000000" in curves.skipped[0]

    def test_partition(self, clean_runs):
        curves = build_curves(clean_runs, "data", "across_runs")
        ids = [i for c in curves for i in c.run_ids]
        assert sorted(ids) == sorted(r.run_id for r in clean_runs)

    @given(st.lists(st.tuples(st.floats(1, 1e12), st.floats(0.01, 10)), min_size=1, max_size=30))
    def test_cleaned_curve_shape(self, pts):
        x, loss, raw_x, raw_l = clean_curve([p[0] for p in pts], [p[1] for p in pts])
        assert all(a < b for a, b in zip(x, x[1:]))
        assert all(a >= b for a, b in zip(loss, loss[1:]))
        assert len(raw_x) == len(pts)
        assert min(loss) == min(p[1] for p in pts)
