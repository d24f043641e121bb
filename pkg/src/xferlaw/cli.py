"""Command-line entry point: ``xferlaw <subcommand> ...``.

Every subcommand renders its outputs in memory and writes them through
temp-file-then-rename, so a failure leaves no partial artifact. Errors from
the analysis modules exit with status 1 and a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import pipeline as pl
from .effective import table_from_csv, table_to_csv, transfer_table
from .fitting import ScalingLawParams, fit_global_fromscratch, residual_table
from .frontier import converged_compute
from .predictor import data_vs_model_tradeoff, fewshot_effective_data, predict_finetuned_loss
from .regime import DNFit, estimate_dn, ossification_report
from .runs import CONVERGENCE_TOL, baseline_curves, build_curves, dumps_runs, ingest_runs, validate_runs
from .synth import PLACEHOLDER_SCALING, GroundTruth, generate
from .transfer import PRESETS, TransferCoefficients, fit_transfer_direct, fit_transfer_fit_of_fits, load_coefficients, split_rows

SEED_ENV = "XFERLAW_SEED"


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(float(v)) for v in text.split(",") if v.strip())


def _print_json(obj) -> None:
    sys.stdout.write(pl.dumps_json(obj))


def _load_dn(path) -> DNFit | None:
    return DNFit.from_dict(json.loads(Path(path).read_text())) if path else None


def _load_scaling(source: str | None) -> ScalingLawParams:
    if source is None or source == "placeholder":
        return PLACEHOLDER_SCALING
    obj = json.loads(Path(source).read_text())
    return ScalingLawParams(**obj.get("params", obj))


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args) -> None:
    gt = GroundTruth(
        scaling=_load_scaling(args.scaling),
        transfer=load_coefficients(args.coeffs),
        n_grid=args.n_grid or GroundTruth.n_grid,
        d_grid=args.d_grid or GroundTruth.d_grid,
        noise_sigma=args.noise,
        seed=args.seed,
        pretrain_label=args.label,
        n_checkpoints=args.checkpoints,
    )
    pl.write_file(args.out, dumps_runs(generate(gt)))


def cmd_ingest(args) -> None:
    rs = ingest_runs(args.runs, strict=args.strict)
    report = validate_runs(rs, args.tol).to_dict()
    files = {"validation.json": pl.dumps_json(report)}
    if args.out:
        files["runs.jsonl"] = dumps_runs(rs)
        pl.write_artifacts(args.out, files)
    _print_json({"n_runs": report["n_runs"], "n_findings": report["n_findings"]})


def cmd_table(args) -> None:
    rs = ingest_runs(args.runs)
    label = pl.choose_label(rs, args.pretrain_label)
    rows = transfer_table(rs, label, allow_extrapolation=args.allow_extrapolation, tol=args.tol)
    pl.write_file(args.out, table_to_csv(rows))


def cmd_fit_transfer(args) -> None:
    rows = table_from_csv(Path(args.table).read_text())
    kept, excluded = split_rows(rows, _load_dn(args.dn), args.max_ratio)
    if args.method == "direct":
        c = fit_transfer_direct(kept)
    else:
        kept, notes = pl.drop_small_groups(kept)
        c = fit_transfer_fit_of_fits(kept, common_beta=args.common_beta)
        c.diagnostics.setdefault("warnings", []).extend(notes)
    c.diagnostics["excluded"] = [{"n_params": r.n_params, "d_finetune": r.d_finetune, "reason": why} for r, why in excluded]
    pl.write_file(args.out, c.dumps())
    _print_json({"k": c.k, "alpha": c.alpha, "beta": c.beta})


def cmd_fit_scaling(args) -> None:
    rs = ingest_runs(args.runs)
    curves = list(baseline_curves(rs).values())
    params, fit = fit_global_fromscratch(curves)
    pl.write_file(args.out, pl.dumps_json({"params": params.to_dict(), "fit": fit.to_dict(),
                                           "residuals": residual_table(curves, params)}))
    _print_json(params.to_dict())


def cmd_regime(args) -> None:
    rs = ingest_runs(args.runs)
    dn = estimate_dn(list(baseline_curves(rs).values()), window=args.dn_window)
    files = {"dn.json": pl.dumps_json(dn.to_dict())}
    if rs.finetuned():
        label = pl.choose_label(rs, args.pretrain_label)
        rows = transfer_table(rs, label, tol=args.tol)
        report = ossification_report([r for r in rows if r.status == "ok"], dn)
        files["regime.csv"] = pl.regime_csv(rows, dn)
        files["ossification.json"] = pl.dumps_json(report.to_dict())
        files["ossification.csv"] = pl.ossification_csv(report)
    pl.write_artifacts(args.out, files)
    _print_json({"coefficient": dn.coefficient, "exponent": dn.exponent})


def cmd_predict(args) -> None:
    c = load_coefficients(args.coeffs)
    if args.few_shot:
        out = fewshot_effective_data(c, args.n, args.context).to_dict()
        print(f"warning: {out['caveat']}", file=sys.stderr)
    else:
        if args.d_finetune is None:
            raise ValueError("--d-finetune is required unless --few-shot is given")
        p = _load_scaling(args.scaling)
        pred = predict_finetuned_loss(p, c, args.n, args.d_finetune)
        out = {"n_params": args.n, "d_finetune": args.d_finetune, "loss_low_data": pred.low_data,
               "loss_effective": pred.effective, "scaling": p.to_dict()}
    out["coefficients"] = {"k": c.k, "alpha": c.alpha, "beta": c.beta}
    if args.out:
        pl.write_file(args.out, pl.dumps_json(out))
    _print_json(out)


def cmd_tradeoff(args) -> None:
    if args.coeffs:
        c = load_coefficients(args.coeffs)
    elif None not in (args.k, args.alpha, args.beta):
        c = TransferCoefficients(args.k, args.alpha, args.beta)
    else:
        raise ValueError("give --coeffs or all of --k, --alpha, --beta")
    _print_json(data_vs_model_tradeoff(c, args.data_factor).to_dict())


def cmd_frontier(args) -> None:
    rs = ingest_runs(args.runs)
    files = pl.compute_artifacts(rs, args.rel_tol)
    if not files:
        missing = [r.run_id for r in rs if not r.has_compute]
        raise ValueError(f"runs without compute: {missing[:10]}")
    pl.write_artifacts(args.out, files)
    curves = build_curves(rs, "compute", "within_run")
    n_conv = sum(converged_compute(c, args.rel_tol).converged for c in curves)
    _print_json({"n_frontier": len(json.loads(files["frontier.json"])), "n_converged": n_conv, "n_runs": len(rs)})


def cmd_epochs(args) -> None:
    rs = ingest_runs(args.runs)
    dn = _load_dn(args.dn)
    if dn is None and rs.from_scratch() and not args.no_dn:
        dn = estimate_dn(list(baseline_curves(rs).values()))
    files = pl.epoch_artifacts(rs, dn)
    pl.write_artifacts(args.out, files)
    _print_json(json.loads(files["epochs.json"])["scratch_over_finetuned"])


def cmd_pipeline(args) -> None:
    rs = ingest_runs(args.runs)
    result = pl.run_pipeline(
        rs,
        pretrain_label=args.pretrain_label,
        max_ratio=args.max_ratio,
        common_beta=args.common_beta,
        dn_window=args.dn_window,
        allow_extrapolation=args.allow_extrapolation,
        tol=args.tol,
        fit_scaling=not args.skip_scaling,
    )
    files = pl.pipeline_artifacts(rs, result, rel_tol=args.tol)
    pl.write_artifacts(args.out, files)
    c = result.coefficients
    _print_json({"k": c.k, "alpha": c.alpha, "beta": c.beta, "n_rows_fitted": len(result.kept), "notes": result.notes})


# ---------------------------------------------------------------------------
# Parser


def _add_common(p, *, runs=True, out=True, out_help="output path"):
    if runs:
        p.add_argument("--runs", required=True, help="JSON-lines run file")
    if out:
        p.add_argument("--out", required=True, help=out_help)
    p.add_argument("--config", help="JSON file whose keys supply flag values")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="xferlaw", description="Effective-data-transferred analysis toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    subs = {}

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("synth", cmd_synth, "generate a synthetic run file from known laws")
    _add_common(p, runs=False, out_help="JSON-lines file to write")
    p.add_argument("--seed", type=int, default=0, help=f"noise seed (env {SEED_ENV} overrides)")
    p.add_argument("--noise", type=float, default=0.0, help="log-normal sigma on loss (default 0)")
    p.add_argument("--coeffs", default="text", help="ground-truth transfer coefficients: preset or JSON path")
    p.add_argument("--scaling", default=None, help="from-scratch params JSON (default: placeholder)")
    p.add_argument("--checkpoints", type=int, default=0, help="checkpoints per run; 0 writes a single converged point")
    p.add_argument("--n-grid", type=_ints, default=None, help="comma-separated model sizes")
    p.add_argument("--d-grid", type=_ints, default=None, help="comma-separated fine-tuning sizes")
    p.add_argument("--label", default="text", help="pretrain_label of fine-tuned runs")

    p = add("ingest", cmd_ingest, "parse and validate a run file")
    _add_common(p, out=False)
    p.add_argument("--out", default=None, help="directory for validation.json and normalised runs.jsonl")
    p.add_argument("--strict", action="store_true", help="reject ordering and non-finite-loss problems at parse time")
    p.add_argument("--tol", type=float, default=CONVERGENCE_TOL, help="convergence tolerance (default 1e-3)")

    p = add("table", cmd_table, "effective-data table as CSV")
    _add_common(p, out_help="CSV file")
    p.add_argument("--pretrain-label", default=None)
    p.add_argument("--allow-extrapolation", action="store_true")
    p.add_argument("--tol", type=float, default=CONVERGENCE_TOL)

    p = add("fit-transfer", cmd_fit_transfer, "fit (k, alpha, beta) from a table CSV")
    _add_common(p, runs=False, out_help="coefficients JSON")
    p.add_argument("--table", required=True)
    p.add_argument("--method", choices=("fit-of-fits", "direct"), default="fit-of-fits")
    p.add_argument("--common-beta", type=float, default=None)
    p.add_argument("--dn", default=None, help="DNFit JSON for the low-data filter")
    p.add_argument("--max-ratio", type=float, default=0.10, help="largest D_F/D(N) kept (default 0.10)")

    p = add("fit-scaling", cmd_fit_scaling, "global from-scratch surface fit")
    _add_common(p, out_help="params JSON")

    p = add("regime", cmd_regime, "D(N), regime labels and ossification report")
    _add_common(p, out_help="output directory")
    p.add_argument("--pretrain-label", default=None)
    p.add_argument("--dn-window", type=float, default=None, help="fit only losses within this factor of the best")
    p.add_argument("--tol", type=float, default=CONVERGENCE_TOL)

    p = add("predict", cmd_predict, "fine-tuned loss or few-shot effective data")
    _add_common(p, runs=False, out=False)
    p.add_argument("--coeffs", default="text", help=f"preset {sorted(PRESETS)} or JSON path")
    p.add_argument("--n", type=float, required=True, help="non-embedding parameters")
    p.add_argument("--few-shot", action="store_true")
    p.add_argument("--context", type=float, default=1, help="characters in context (default 1, zero-shot)")
    p.add_argument("--d-finetune", type=float, default=None)
    p.add_argument("--scaling", default=None, help="from-scratch params JSON (default: placeholder)")
    p.add_argument("--out", default=None)

    p = add("tradeoff", cmd_tradeoff, "model-size factor equivalent to a data factor")
    _add_common(p, runs=False, out=False)
    p.add_argument("--coeffs", default=None)
    p.add_argument("--k", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--data-factor", type=float, required=True)

    p = add("frontier", cmd_frontier, "compute frontier and converged compute")
    _add_common(p, out_help="output directory")
    p.add_argument("--rel-tol", type=float, default=CONVERGENCE_TOL)

    p = add("epochs", cmd_epochs, "epochs at the best checkpoint")
    _add_common(p, out_help="output directory")
    p.add_argument("--dn", default=None, help="DNFit JSON (default: estimated from the runs)")
    p.add_argument("--no-dn", action="store_true", help="do not bucket by D_F/D(N)")

    p = add("pipeline", cmd_pipeline, "full analysis: table, regime filter, fit of fits, reports")
    _add_common(p, out_help="output directory")
    p.add_argument("--pretrain-label", default=None)
    p.add_argument("--max-ratio", type=float, default=0.10)
    p.add_argument("--common-beta", type=float, default=None)
    p.add_argument("--dn-window", type=float, default=None)
    p.add_argument("--allow-extrapolation", action="store_true")
    p.add_argument("--skip-scaling", action="store_true", help="skip the global from-scratch fit")
    p.add_argument("--tol", type=float, default=CONVERGENCE_TOL)
    return parser, subs


def _apply_config(argv: list[str], subs: dict) -> None:
    """Turn keys of the ``--config`` JSON into parser defaults; explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in subs), None)
    if not known.config or command is None:
        return
    cfg = json.loads(Path(known.config).read_text())
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    p = subs[command]
    dests = {a.dest for a in p._actions}
    values = {}
    for key, value in cfg.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in dests:
            raise ValueError(f"config key {key!r} is not a flag of {command!r}")
        for action in p._actions:
            if action.dest == dest and action.type is not None and isinstance(value, str):
                value = action.type(value)
        values[dest] = value
    for action in p._actions:
        if action.dest in values:
            action.required = False
    p.set_defaults(**values)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        _apply_config(argv, subs)
    except (OSError, ValueError) as exc:
        _report_error(exc)
        return 1
    args = parser.parse_args(argv)
    if hasattr(args, "seed") and os.environ.get(SEED_ENV):
        args.seed = int(os.environ[SEED_ENV])
    try:
        args.func(args)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        _report_error(exc)
        return 1
    return 0


def _report_error(exc: BaseException) -> None:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
