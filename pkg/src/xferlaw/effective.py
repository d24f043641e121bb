"""Effective data of fine-tuned runs, read off from-scratch baselines.

For a fine-tuned model of size N reaching loss L after fine-tuning on D_F
characters, the total effective data D_E is the amount of data a
from-scratch model of the same size needs to reach L. The part
contributed by pre-training is D_T = D_E - D_F.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from .runs import LossCurve, RunSet, baseline_curves, check_run, CONVERGENCE_TOL

CSV_HEADER = ("n_params", "d_finetune", "loss", "d_effective", "d_transferred", "fraction", "extrapolated", "status")

STATUS_OK = "ok"
STATUS_NOT_ATTAINABLE = "not_attainable"
STATUS_NOT_CONVERGED = "not_converged"
STATUS_ABOVE_RANGE = "above_range"


class NotAttainable(ValueError):
    """The target loss is lower than anything the baseline reached."""


class AboveBaselineRange(ValueError):
    """The target loss is worse than the baseline's smallest-data point."""


class UndefinedFraction(ValueError):
    pass


@dataclass(frozen=True)
class EffectiveDataRow:
    n_params: int
    d_finetune: float
    loss: float
    d_effective: float
    d_transferred: float
    fraction: float
    extrapolated: bool = False
    status: str = STATUS_OK
    pretrain_label: str = ""
    run_id: str = ""

    @property
    def usable(self) -> bool:
        """Eligible for transfer-law fitting: positive transfer, fraction in (0, 1)."""
        return self.status == STATUS_OK and self.d_transferred > 0 and 0 < self.fraction < 1

    def to_csv_row(self) -> list:
        return [
            self.n_params,
            repr(float(self.d_finetune)),
            repr(float(self.loss)),
            repr(float(self.d_effective)),
            repr(float(self.d_transferred)),
            repr(float(self.fraction)),
            str(self.extrapolated).lower(),
            self.status,
        ]


def fraction_from_transfer(d_transferred: float, d_finetune: float) -> float:
    """Share of effective data contributed by transfer, D_T / (D_F + D_T)."""
    if d_finetune < 1:
        raise ValueError("d_finetune must be >= 1")
    total = d_finetune + d_transferred
    if not total > 0:
        raise UndefinedFraction(f"D_F + D_T = {total!r} <= 0; fraction undefined")
    return d_transferred / total


def effective_data_at_loss(
    baseline: LossCurve, target_loss: float, *, allow_extrapolation: bool = False
) -> tuple[float, bool]:
    """Dataset size at which the from-scratch baseline reaches ``target_loss``.

    Interpolates loss linearly in log10(D) between the bracketing points of
    the cleaned (non-increasing) curve. Exact grid hits return the grid D.
    A target above the worst baseline loss returns the smallest D flagged as
    extrapolated (only with ``allow_extrapolation``); a target below the best
    baseline loss raises NotAttainable.
    """
    xs, ls = baseline.x, baseline.loss
    if len(xs) < 2:
        raise ValueError("baseline curve needs at least 2 points")
    if not math.isfinite(target_loss):
        raise ValueError(f"target loss {target_loss!r} is not finite")
    if target_loss > ls[0]:
        if allow_extrapolation:
            return float(xs[0]), True
        raise AboveBaselineRange(
            f"target loss {target_loss:.6g} is above the baseline's worst loss {ls[0]:.6g}; "
            "enable extrapolation to clamp"
        )
    if target_loss < ls[-1]:
        raise NotAttainable(
            f"from-scratch N={baseline.n_params} never reaches loss {target_loss:.6g} (best {ls[-1]:.6g})"
        )
    # first grid point whose loss is at or below the target
    i = next(j for j, loss in enumerate(ls) if loss <= target_loss)
    if ls[i] == target_loss or i == 0:
        return float(xs[i]), False
    l_hi, l_lo = ls[i - 1], ls[i]
    t = (l_hi - target_loss) / (l_hi - l_lo)
    log_d = math.log10(xs[i - 1]) + t * (math.log10(xs[i]) - math.log10(xs[i - 1]))
    return 10.0**log_d, False


def effective_row(
    baseline: LossCurve,
    n_params: int,
    d_finetune: float,
    loss: float,
    *,
    allow_extrapolation: bool = False,
    pretrain_label: str = "",
    run_id: str = "",
    status: str = STATUS_OK,
) -> EffectiveDataRow:
    try:
        d_eff, extrapolated = effective_data_at_loss(baseline, loss, allow_extrapolation=allow_extrapolation)
    except (NotAttainable, AboveBaselineRange) as exc:
        flag = STATUS_NOT_ATTAINABLE if isinstance(exc, NotAttainable) else STATUS_ABOVE_RANGE
        return EffectiveDataRow(n_params, d_finetune, loss, math.nan, math.nan, math.nan, False, flag, pretrain_label, run_id)
    d_t = d_eff - d_finetune
    frac = fraction_from_transfer(d_t, d_finetune)
    return EffectiveDataRow(n_params, d_finetune, loss, d_eff, d_t, frac, extrapolated, status, pretrain_label, run_id)


def transfer_table(
    rs: RunSet,
    pretrain_label: str | None = None,
    *,
    allow_extrapolation: bool = False,
    tol: float = CONVERGENCE_TOL,
) -> list[EffectiveDataRow]:
    """Effective data for every fine-tuned run in ``rs``.

    Baselines are the from-scratch across-run curves with exactly matching N.
    Rows whose loss is out of reach of the baseline are kept with status
    ``not_attainable`` (or ``above_range`` when worse than the baseline's
    smallest dataset and extrapolation is off); runs failing the convergence check are kept with
    status ``not_converged``.
    """
    rs.require_baseline()
    baselines = baseline_curves(rs)
    runs = rs.finetuned(pretrain_label)
    missing = sorted({r.n_params for r in runs} - set(baselines))
    if missing:
        raise ValueError(f"no from-scratch curve for model sizes {missing}")
    rows = []
    for run in sorted(runs, key=lambda r: (r.pretrain_label, r.n_params, r.d_finetune, r.run_id)):
        status = STATUS_OK if check_run(run, tol).converged else STATUS_NOT_CONVERGED
        rows.append(
            effective_row(
                baselines[run.n_params],
                run.n_params,
                run.d_finetune,
                run.best_loss,
                allow_extrapolation=allow_extrapolation,
                pretrain_label=run.pretrain_label,
                run_id=run.run_id,
                status=status,
            )
        )
    return rows


def table_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.to_csv_row())
    return buf.getvalue()


def table_from_csv(text: str) -> list[EffectiveDataRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError(f"unexpected table header {reader.fieldnames}; expected {list(CSV_HEADER)}")
    rows = []
    for rec in reader:
        rows.append(
            EffectiveDataRow(
                n_params=int(float(rec["n_params"])),
                d_finetune=float(rec["d_finetune"]),
                loss=float(rec["loss"]),
                d_effective=float(rec["d_effective"]),
                d_transferred=float(rec["d_transferred"]),
                fraction=float(rec["fraction"]),
                extrapolated=rec["extrapolated"].strip().lower() == "true",
                status=rec["status"],
            )
        )
    return rows

