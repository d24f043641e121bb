"""Compute-efficiency views of training curves."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np

from .runs import CONVERGENCE_TOL, FINETUNED, FROM_SCRATCH, running_min


@dataclass(frozen=True)
class FrontierPoint:
    compute: float
    loss: float
    run_id: str


def pareto_frontier(curves) -> list[FrontierPoint]:
    """Checkpoints not dominated in (compute, loss) by any other checkpoint.

    A point is dominated if another has compute <= and loss <= with at least
    one strict. Raw (uncleaned) checkpoints of within-run compute curves are
    used. The result is sorted by compute with strictly decreasing loss;
    exact duplicates collapse to one point (lowest run_id).
    """
    points = []
    for curve in curves:
        if curve.axis != "compute":
            raise ValueError(f"curve {curve.label!r} is not a compute curve")
        run_id = curve.run_ids[0] if curve.run_ids else curve.label
        points.extend((float(c), float(loss), run_id) for c, loss in zip(curve.raw_x, curve.raw_loss))
    if not points:
        raise ValueError("no compute data")
    points.sort()
    out: list[FrontierPoint] = []
    best = math.inf
    for c, loss, run_id in points:
        # ties on compute: the lowest loss sorts first, later ones fail this test
        if loss < best:
            out.append(FrontierPoint(c, loss, run_id))
            best = loss
    return out


@dataclass(frozen=True)
class ConvergedPoint:
    compute: float
    loss: float
    index: int
    converged: bool
    run_id: str = ""


def converged_compute(curve, rel_tol: float = CONVERGENCE_TOL) -> ConvergedPoint:
    """First checkpoint after which the best loss improves by less than ``rel_tol``.

    Improvement is measured relative to the best loss so far, over the rest
    of the curve. If only the final checkpoint qualifies the run is flagged
    as not converged and the final point is returned.
    """
    xs, raw = list(curve.raw_x), list(curve.raw_loss)
    if not xs:
        raise ValueError("empty curve")
    best = running_min(raw)
    final = best[-1]
    idx = next(i for i, b in enumerate(best) if (b - final) < rel_tol * b)
    converged = idx < len(xs) - 1
    run_id = curve.run_ids[0] if curve.run_ids else ""
    return ConvergedPoint(float(xs[idx]), float(best[idx]), idx, converged, run_id)


# ---------------------------------------------------------------------------
# Best epoch


@dataclass(frozen=True)
class BestEpoch:
    run_id: str
    curriculum: str
    n_params: int
    d_finetune: int
    epochs_at_best: float
    possibly_truncated: bool
    df_over_dn: float | None
    bucket: str

    def to_dict(self) -> dict:
        return asdict(self)


def _bucket(ratio: float | None) -> str:
    if ratio is None:
        return "all"
    return f"1e{math.floor(math.log10(ratio))}"


def best_epoch(run, dn=None) -> BestEpoch:
    losses = [c.eval_loss for c in run.checkpoints]
    finite = [i for i, v in enumerate(losses) if math.isfinite(v)]
    i_best = min(finite, key=lambda i: (losses[i], i))
    epochs = run.checkpoints[i_best].data_seen / run.d_finetune
    ratio = float(run.d_finetune / dn.d_of_n(run.n_params)) if dn is not None else None
    return BestEpoch(
        run.run_id,
        run.curriculum,
        run.n_params,
        run.d_finetune,
        epochs,
        i_best == len(losses) - 1,
        ratio,
        _bucket(ratio),
    )


def best_epoch_summary(rs, dn=None) -> dict:
    """Epochs at the best checkpoint per run, grouped by D_F / D(N) decade and curriculum.

    ``comparison`` holds, per bucket with both curricula present, the ratio of
    median from-scratch epochs to median fine-tuned epochs.
    """
    per_run = [best_epoch(r, dn) for r in rs]
    groups: dict[tuple[str, str], list[BestEpoch]] = defaultdict(list)
    for b in per_run:
        groups[(b.bucket, b.curriculum)].append(b)
    summary = {}
    for (bucket, curriculum), members in sorted(groups.items()):
        ep = np.array([m.epochs_at_best for m in members])
        summary.setdefault(bucket, {})[curriculum] = {
            "count": len(members),
            "median_epochs": float(np.median(ep)),
            "mean_epochs": float(np.mean(ep)),
            "possibly_truncated": sum(m.possibly_truncated for m in members),
        }
    comparison = {}
    for bucket, by_cur in summary.items():
        if FROM_SCRATCH in by_cur and FINETUNED in by_cur:
            comparison[bucket] = by_cur[FROM_SCRATCH]["median_epochs"] / by_cur[FINETUNED]["median_epochs"]
    return {"runs": [b.to_dict() for b in per_run], "buckets": summary, "scratch_over_finetuned": comparison}
