import math

import numpy as np
import pytest
from oracles import surface_loss, transfer

from xferlaw.runs import dumps_runs
from xferlaw.synth import (
    CURVE_AMPLITUDE,
    FLOPS_PER_PARAM_CHAR,
    GroundTruth,
    analytic_dn,
    generate,
    generate_finetuned,
    generate_fromscratch,
    roundtrip_check,
)
from xferlaw.transfer import TEXT_TO_PYTHON, TransferCoefficients


class TestGenerate:
    def test_large_limit(self):
        gt = GroundTruth(n_grid=(10**30,), scratch_d_grid=(10**40,))
        (run,) = generate_fromscratch(gt)
        assert 0 < run.best_loss < 1e-4

    def test_deterministic(self):
        gt = GroundTruth(noise_sigma=0.02, seed=4, n_checkpoints=6)
        assert dumps_runs(generate(gt)) == dumps_runs(generate(gt))

    def test_seeds_differ(self):
        a = generate(GroundTruth(noise_sigma=0.02, seed=1))
        b = generate(GroundTruth(noise_sigma=0.02, seed=2))
        assert [r.best_loss for r in a] != [r.best_loss for r in b]

    def test_noise_independent_of_grid_order(self):
        a = generate_finetuned(GroundTruth(noise_sigma=0.02, seed=9))
        b = generate_finetuned(GroundTruth(noise_sigma=0.02, seed=9, n_grid=GroundTruth.n_grid[::-1]))
        assert {r.run_id: r.best_loss for r in a} == {r.run_id: r.best_loss for r in b}

    def test_matches_independent_formula(self, clean_runs, truth):
        p = truth.scaling
        rng = np.random.default_rng(8)
        scratch = clean_runs.from_scratch()
        for i in rng.choice(len(scratch), 20, replace=False):
            r = scratch[i]
            assert r.best_loss == pytest.approx(surface_loss(p.n_c, p.alpha_n, p.d_c, p.alpha_d, r.n_params, r.d_finetune), rel=1e-12)

    def test_finetuned_formula(self, clean_runs, truth):
        p, c = truth.scaling, truth.transfer
        for r in clean_runs.finetuned():
            d_e = r.d_finetune + transfer(c.k, c.alpha, c.beta, r.n_params, r.d_finetune)
            assert r.best_loss == pytest.approx(surface_loss(p.n_c, p.alpha_n, p.d_c, p.alpha_d, r.n_params, d_e), rel=1e-12)

    def test_zero_transfer_matches_scratch(self):
        gt = GroundTruth(transfer=TransferCoefficients(0.0, 0.18, 0.38), scratch_d_grid=GroundTruth.d_grid)
        ft = {(r.n_params, r.d_finetune): r.best_loss for r in generate_finetuned(gt)}
        fs = {(r.n_params, r.d_finetune): r.best_loss for r in generate_fromscratch(gt)}
        assert ft == fs

    def test_strictly_decreasing(self, clean_runs):
        loss = {(r.n_params, r.d_finetune): r.best_loss for r in clean_runs.from_scratch()}
        ns = sorted({n for n, _ in loss})
        ds = sorted({d for _, d in loss})
        for n in ns:
            assert all(loss[(n, a)] > loss[(n, b)] for a, b in zip(ds, ds[1:]))
        for d in ds:
            assert all(loss[(a, d)] > loss[(b, d)] for a, b in zip(ns, ns[1:]))

    def test_curve_shape(self):
        gt = GroundTruth(n_grid=(10**6,), d_grid=(10**5,), scratch_d_grid=(10**7,), n_checkpoints=12)
        for run in generate(gt):
            best_epochs = gt.best_epoch_scratch if run.curriculum == "from_scratch" else gt.best_epoch_finetuned
            seen = [c.data_seen for c in run.checkpoints]
            losses = [c.eval_loss for c in run.checkpoints]
            i = losses.index(min(losses))
            assert seen[i] == pytest.approx(best_epochs * run.d_finetune)
            assert losses[0] == pytest.approx(min(losses) * (1 + CURVE_AMPLITUDE * (100**0.5 - 1)))
            assert all(a < b for a, b in zip(seen, seen[1:]))
            assert all(c.compute == FLOPS_PER_PARAM_CHAR * run.n_params * c.data_seen for c in run.checkpoints)

    @pytest.mark.parametrize("bad", [dict(n_grid=()), dict(d_grid=(0,)), dict(noise_sigma=-0.1), dict(ossify_factor=1.5)])
    def test_invalid_truth(self, bad):
        with pytest.raises(ValueError):
            GroundTruth(**bad)

    def test_analytic_dn(self, truth):
        p = truth.scaling
        for n in truth.n_grid:
            d = float(analytic_dn(p, n))
            assert surface_loss(p.n_c, p.alpha_n, p.d_c, p.alpha_d, n, d) == pytest.approx((p.n_c / n) ** p.alpha_n / 0.99, rel=1e-12)


class TestRoundtripCheck:
    def test_identical(self, truth):
        rep = roundtrip_check(truth, TEXT_TO_PYTHON)
        assert all(rep[k]["rel_error"] == 0 for k in ("k", "alpha", "beta"))
        assert rep["passed"]

    def test_k_doubled(self, truth):
        rep = roundtrip_check(truth, TransferCoefficients(3.8e4, 0.18, 0.38))
        assert rep["k"]["rel_error"] == pytest.approx(1.0)
        assert not rep["passed"]

    def test_caller_tolerances(self, truth):
        rep = roundtrip_check(truth, TransferCoefficients(3.8e4, 0.18, 0.38), {"k": 1.5, "alpha": 0.1, "beta": 0.1})
        assert rep["passed"]

    def test_full_pipeline_noiseless(self, truth, clean_result):
        rep = roundtrip_check(truth, clean_result.coefficients)
        assert rep["passed"], rep

    def test_scaling_recovered_through_pipeline(self, truth, clean_result):
        params, _ = clean_result.scaling
        for name in ("n_c", "alpha_n", "d_c", "alpha_d"):
            assert math.isclose(getattr(params, name), getattr(truth.scaling, name), rel_tol=0.01)
