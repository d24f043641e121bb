"""End-to-end analysis of a run set and the artifact files it produces."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .effective import EffectiveDataRow, table_to_csv, transfer_table
from .fitting import ScalingLawParams, fit_global_fromscratch, residual_table
from .frontier import best_epoch_summary, converged_compute, pareto_frontier
from .regime import DNFit, OssificationReport, classify_regime, estimate_dn, ossification_report
from .runs import FINETUNED, FROM_SCRATCH, RunSet, ValidationReport, baseline_curves, build_curves, validate_runs
from .transfer import TransferCoefficients, fit_transfer_direct, fit_transfer_fit_of_fits, group_by_df, split_rows

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    validation: ValidationReport
    rows: list[EffectiveDataRow]
    dn: DNFit | None
    kept: list[EffectiveDataRow]
    excluded: list[tuple[EffectiveDataRow, str]]
    coefficients: TransferCoefficients
    direct: TransferCoefficients | None = None
    scaling: tuple[ScalingLawParams, dict] | None = None
    ossification: OssificationReport | None = None
    notes: list[str] = field(default_factory=list)
    pretrain_label: str = ""


def choose_label(rs: RunSet, pretrain_label: str | None) -> str:
    labels = rs.pretrain_labels()
    if pretrain_label is not None:
        if pretrain_label not in labels:
            raise ValueError(f"no fine-tuned runs with pretrain_label {pretrain_label!r}; have {labels}")
        return pretrain_label
    if len(labels) != 1:
        raise ValueError(f"run set has fine-tuned runs for labels {labels}; choose one with --pretrain-label")
    return labels[0]


def drop_small_groups(rows, min_sizes: int = 2) -> tuple[list[EffectiveDataRow], list[str]]:
    kept, notes = [], []
    for d_f, members in group_by_df(rows).items():
        if len({r.n_params for r in members}) < min_sizes:
            notes.append(f"D_F={d_f:g}: fewer than {min_sizes} usable model sizes, group dropped")
        else:
            kept.extend(members)
    return kept, notes


def run_pipeline(
    rs: RunSet,
    *,
    pretrain_label: str | None = None,
    max_ratio: float = 0.10,
    common_beta: float | None = None,
    dn_window: float | None = None,
    allow_extrapolation: bool = False,
    tol: float = 1e-3,
    fit_scaling: bool = True,
) -> PipelineResult:
    """ingest -> effective-data table -> regime filter -> fit of fits, plus side analyses."""
    rs.require_baseline()
    label = choose_label(rs, pretrain_label)
    validation = validate_runs(rs, tol)
    rows = transfer_table(rs, label, allow_extrapolation=allow_extrapolation, tol=tol)
    notes = []
    curves = list(baseline_curves(rs).values())
    try:
        dn = estimate_dn(curves, window=dn_window)
    except ValueError as exc:
        dn = None
        notes.append(f"D(N) estimate failed ({exc}); regime filter skipped")
    kept, excluded = split_rows(rows, dn, max_ratio)
    kept, group_notes = drop_small_groups(kept)
    notes.extend(group_notes)
    coefficients = fit_transfer_fit_of_fits(kept, common_beta=common_beta)
    try:
        direct = fit_transfer_direct(kept)
    except ValueError as exc:
        direct = None
        notes.append(f"direct fit skipped: {exc}")
    scaling = None
    if fit_scaling:
        try:
            params, fit = fit_global_fromscratch(curves)
            scaling = (params, {"fit": fit.to_dict(), "residuals": residual_table(curves, params)})
        except ValueError as exc:
            notes.append(f"global from-scratch fit skipped: {exc}")
    ossification = ossification_report([r for r in rows if r.status == "ok"], dn) if dn is not None else None
    return PipelineResult(validation, rows, dn, kept, excluded, coefficients, direct, scaling, ossification, notes, label)


# ---------------------------------------------------------------------------
# Artifact rendering


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _num(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_num(v) if isinstance(v, (int, float, np.number)) and not isinstance(v, bool) else v for v in row])
    return buf.getvalue()


def series_csv(series: list[tuple[str, list[float], list[float]]]) -> str:
    """Plot data as (x, y, series) rows."""
    rows = []
    for label, xs, ys in series:
        rows.extend((float(x), float(y), label) for x, y in zip(xs, ys))
    return rows_to_csv(("x", "y", "series"), rows)


def fraction_series(result: PipelineResult) -> list:
    out = []
    c = result.coefficients
    for d_f, members in group_by_df(result.kept).items():
        members = sorted(members, key=lambda r: r.n_params)
        out.append((f"D_F={d_f:g} data", [r.n_params for r in members], [r.fraction for r in members]))
    nstar = dict(c.per_df_nstar)
    ns = [r.n_params for r in result.kept]
    if ns:
        grid = np.geomspace(min(ns), max(ns), 50)
        for d_f, n_star in nstar.items():
            out.append((f"D_F={d_f:g} fit", grid.tolist(), (1 / (1 + (n_star / grid) ** c.beta)).tolist()))
    return out


def loss_vs_n_series(rs: RunSet, label: str) -> list:
    curves = build_curves(rs, "data", "across_runs")
    ft_sizes = sorted({r.d_finetune for r in rs.finetuned(label)})
    by_d: dict[tuple[str, float], list[tuple[int, float]]] = {}
    for curve in curves:
        if curve.curriculum == FINETUNED and curve.pretrain_label != label:
            continue
        for d, loss in zip(curve.x, curve.loss):
            if curve.curriculum == FROM_SCRATCH and ft_sizes and d not in ft_sizes:
                continue
            by_d.setdefault((curve.curriculum, d), []).append((curve.n_params, loss))
    out = []
    for (curriculum, d), pts in sorted(by_d.items()):
        pts.sort()
        out.append((f"{curriculum} D={d:g}", [p[0] for p in pts], [p[1] for p in pts]))
    return out


def dt_over_dn_series(result: PipelineResult) -> list:
    if result.dn is None:
        return []
    by_n: dict[int, list] = {}
    for r in result.rows:
        if r.status != "ok":
            continue
        d_n = float(result.dn.d_of_n(r.n_params))
        by_n.setdefault(r.n_params, []).append((r.d_finetune / d_n, r.d_transferred / d_n))
    return [(f"N={n:g}", [p[0] for p in sorted(v)], [p[1] for p in sorted(v)]) for n, v in sorted(by_n.items())]


def compute_artifacts(rs: RunSet, rel_tol: float = 1e-3) -> dict[str, str]:
    """Frontier and converged-compute files; empty if any run lacks compute."""
    if not all(r.has_compute for r in rs):
        return {}
    curves = build_curves(rs, "compute", "within_run")
    frontier = pareto_frontier(curves)
    files = {
        "frontier.csv": rows_to_csv(("compute", "loss", "run_id"), [(p.compute, p.loss, p.run_id) for p in frontier]),
        "frontier.json": dumps_json([p.__dict__ for p in frontier]),
    }
    series = [(c.run_ids[0], list(c.raw_x), list(c.raw_loss)) for c in curves]
    series.append(("frontier", [p.compute for p in frontier], [p.loss for p in frontier]))
    files["plots/compute_frontier.csv"] = series_csv(series)

    conv = {}
    points = []
    for run, curve in zip(rs, curves):
        cp = converged_compute(curve, rel_tol)
        points.append({"run_id": run.run_id, "curriculum": run.curriculum, "n_params": run.n_params,
                       "d_finetune": run.d_finetune, "compute": cp.compute, "loss": cp.loss, "converged": cp.converged})
        conv.setdefault(f"{run.curriculum} N={run.n_params:g}", []).append((run.d_finetune, cp.compute))
    files["converged_compute.json"] = dumps_json(points)
    files["plots/converged_compute.csv"] = series_csv(
        [(k, [p[0] for p in sorted(v)], [p[1] for p in sorted(v)]) for k, v in sorted(conv.items())]
    )
    return files


def epoch_artifacts(rs: RunSet, dn: DNFit | None) -> dict[str, str]:
    summary = best_epoch_summary(rs, dn)
    by_key: dict[str, list] = {}
    for b in summary["runs"]:
        x = b["df_over_dn"] if b["df_over_dn"] is not None else b["d_finetune"]
        by_key.setdefault(f"{b['curriculum']} N={b['n_params']:g}", []).append((x, b["epochs_at_best"]))
    series = [(k, [p[0] for p in sorted(v)], [p[1] for p in sorted(v)]) for k, v in sorted(by_key.items())]
    return {"epochs.json": dumps_json(summary), "plots/best_epoch.csv": series_csv(series)}


def ossification_csv(report: OssificationReport) -> str:
    cols = ("run_id", "n_params", "d_finetune", "d_transferred", "regime", "df_over_dn", "dt_over_dn")
    return rows_to_csv(cols, [tuple(e[c] for c in cols) for e in report.ossified])


def regime_csv(rows, dn: DNFit) -> str:
    out = []
    for r in rows:
        label = classify_regime(r.d_finetune, r.n_params, dn)
        out.append((r.run_id, r.n_params, r.d_finetune, label.ratio, label.value))
    return rows_to_csv(("run_id", "n_params", "d_finetune", "df_over_dn", "regime"), out)


def pipeline_artifacts(rs: RunSet, result: PipelineResult, *, rel_tol: float = 1e-3, stamp: str = "") -> dict[str, str]:
    files = {
        "validation.json": dumps_json(result.validation.to_dict()),
        "table.csv": table_to_csv(result.rows),
        "coefficients.json": result.coefficients.dumps(),
        "plots/fraction_vs_n.csv": series_csv(fraction_series(result)),
        "plots/loss_vs_n.csv": series_csv(loss_vs_n_series(rs, result.pretrain_label)),
    }
    if result.direct is not None:
        files["coefficients_direct.json"] = result.direct.dumps()
    if result.dn is not None:
        files["dn.json"] = dumps_json(result.dn.to_dict())
        files["regime.csv"] = regime_csv(result.rows, result.dn)
        files["plots/dt_over_dn.csv"] = series_csv(dt_over_dn_series(result))
    if result.ossification is not None:
        files["ossification.json"] = dumps_json(result.ossification.to_dict())
        files["ossification.csv"] = ossification_csv(result.ossification)
    if result.scaling is not None:
        params, extra = result.scaling
        files["scaling.json"] = dumps_json({"params": params.to_dict(), **extra})
    files.update(compute_artifacts(rs, rel_tol))
    files.update(epoch_artifacts(rs, result.dn))
    files["report.json"] = dumps_json(
        {
            "sources": list(rs.sources),
            "ingested_at": stamp or rs.ingested_at,
            "pretrain_label": result.pretrain_label,
            "n_runs": len(rs),
            "n_rows": len(result.rows),
            "n_rows_fitted": len(result.kept),
            "excluded": [{"run_id": r.run_id, "n_params": r.n_params, "d_finetune": r.d_finetune, "reason": why}
                         for r, why in result.excluded],
            "coefficients": {k: getattr(result.coefficients, k) for k in ("k", "alpha", "beta")},
            "warnings": list(result.coefficients.diagnostics.get("warnings", [])),
            "notes": result.notes,
            "artifacts": sorted(files),
        }
    )
    return files


def write_artifacts(out: str | os.PathLike, files: dict[str, str]) -> list[Path]:
    """Write every file to a temp name first, then rename into place.

    Nothing lands under its final name unless all files were rendered and
    written.
    """
    out = Path(out)
    staged = []
    try:
        for rel, text in files.items():
            dest = out / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=f".{dest.name}.", suffix=".tmp", dir=dest.parent)
            staged.append((tmp, dest))
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    except BaseException:
        for tmp, _ in staged:
            Path(tmp).unlink(missing_ok=True)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)
    return [dest for _, dest in staged]


def write_file(path: str | os.PathLike, text: str) -> Path:
    path = Path(path)
    return write_artifacts(path.parent if str(path.parent) else ".", {path.name: text})[0]
