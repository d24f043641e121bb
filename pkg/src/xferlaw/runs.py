"""Training-run records: JSON-lines ingestion, validation, export and grouping.

File format, one run per line::

    {"run_id": "a", "curriculum": "from_scratch", "pretrain_label": "",
     "n_params": 1000000, "d_finetune": 10000000,
     "checkpoints": [{"data_seen": 0, "compute": 0.0, "eval_loss": 4.1}, ...]}

``d_finetune`` is the training-set size in characters (for from-scratch runs
it is the whole training set). ``compute`` may be null or omitted.
"""

from __future__ import annotations

import io
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Literal, TextIO

logger = logging.getLogger(__name__)

FROM_SCRATCH = "from_scratch"
FINETUNED = "finetuned"
CURRICULA = (FROM_SCRATCH, FINETUNED)
CONVERGENCE_TOL = 1e-3

FIELDS = ("run_id", "curriculum", "pretrain_label", "n_params", "d_finetune", "checkpoints")
CHECKPOINT_FIELDS = ("data_seen", "compute", "eval_loss")


class RunFormatError(ValueError):
    """A run file line that does not describe a valid run."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class DuplicateRunError(ValueError):
    pass


@dataclass(frozen=True)
class Checkpoint:
    data_seen: float
    eval_loss: float
    compute: float | None = None


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    curriculum: str
    n_params: int
    d_finetune: int
    checkpoints: tuple[Checkpoint, ...]
    pretrain_label: str = ""

    def __post_init__(self):
        if self.curriculum not in CURRICULA:
            raise RunFormatError(f"unknown curriculum {self.curriculum!r}", field="curriculum")
        if self.n_params < 1:
            raise RunFormatError("must be >= 1", field="n_params")
        if self.d_finetune < 1:
            raise RunFormatError("must be >= 1", field="d_finetune")
        if not self.checkpoints:
            raise RunFormatError("must be non-empty", field="checkpoints")
        for c in self.checkpoints:
            # non-finite losses are left for validate_runs to report
            if c.eval_loss <= 0:
                raise RunFormatError(f"eval_loss {c.eval_loss!r} is not positive", field="checkpoints")
            if c.data_seen < 0 or (c.compute is not None and c.compute < 0):
                raise RunFormatError("data_seen and compute must be non-negative", field="checkpoints")

    @property
    def finetuned(self) -> bool:
        return self.curriculum == FINETUNED

    @property
    def best_loss(self) -> float:
        finite = [c.eval_loss for c in self.checkpoints if math.isfinite(c.eval_loss)]
        return min(finite) if finite else math.nan

    @property
    def has_compute(self) -> bool:
        return all(c.compute is not None for c in self.checkpoints)

    def group_key(self) -> tuple[str, str, int]:
        return (self.curriculum, self.pretrain_label, self.n_params)


@dataclass(frozen=True)
class RunSet:
    runs: tuple[RunRecord, ...]
    sources: tuple[str, ...] = ()
    ingested_at: str = ""

    def __post_init__(self):
        seen: dict[str, int] = {}
        for i, run in enumerate(self.runs):
            if run.run_id in seen:
                raise DuplicateRunError(f"duplicate run_id {run.run_id!r} at runs {seen[run.run_id]} and {i}")
            seen[run.run_id] = i

    def __len__(self) -> int:
        return len(self.runs)

    def __iter__(self):
        return iter(self.runs)

    def from_scratch(self) -> list[RunRecord]:
        return [r for r in self.runs if r.curriculum == FROM_SCRATCH]

    def finetuned(self, pretrain_label: str | None = None) -> list[RunRecord]:
        return [
            r for r in self.runs if r.finetuned and (pretrain_label is None or r.pretrain_label == pretrain_label)
        ]

    def pretrain_labels(self) -> list[str]:
        return sorted({r.pretrain_label for r in self.runs if r.finetuned})

    def require_baseline(self) -> None:
        if not self.from_scratch():
            raise ValueError("effective-data analysis needs at least one from_scratch run")


# ---------------------------------------------------------------------------
# Parsing and serialisation


def _as_int(value, field_name: str, line: int | None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RunFormatError(f"expected a number, got {value!r}", line, field_name)
    if isinstance(value, float) and not (math.isfinite(value) and value.is_integer()):
        raise RunFormatError(f"expected an integer, got {value!r}", line, field_name)
    return int(value)


def _as_float(value, field_name: str, line: int | None, optional: bool = False) -> float | None:
    if value is None and optional:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RunFormatError(f"expected a number, got {value!r}", line, field_name)
    return value if isinstance(value, float) else float(value)


def parse_run(obj: dict, line: int | None = None) -> RunRecord:
    if not isinstance(obj, dict):
        raise RunFormatError("expected a JSON object", line)
    for name in FIELDS:
        if name not in obj and name != "pretrain_label":
            raise RunFormatError("missing", line, name)
    run_id = obj["run_id"]
    if not isinstance(run_id, str) or not run_id:
        raise RunFormatError("expected a non-empty string", line, "run_id")
    label = obj.get("pretrain_label") or ""
    if not isinstance(label, str):
        raise RunFormatError("expected a string", line, "pretrain_label")
    raw_ckpts = obj["checkpoints"]
    if not isinstance(raw_ckpts, list):
        raise RunFormatError("expected an array", line, "checkpoints")
    ckpts = []
    for j, c in enumerate(raw_ckpts):
        fname = f"checkpoints[{j}]"
        if not isinstance(c, dict):
            raise RunFormatError("expected an object", line, fname)
        for key in ("data_seen", "eval_loss"):
            if key not in c:
                raise RunFormatError("missing", line, f"{fname}.{key}")
        ckpts.append(
            Checkpoint(
                data_seen=_as_float(c["data_seen"], f"{fname}.data_seen", line),
                eval_loss=_as_float(c["eval_loss"], f"{fname}.eval_loss", line),
                compute=_as_float(c.get("compute"), f"{fname}.compute", line, optional=True),
            )
        )
    try:
        return RunRecord(
            run_id=run_id,
            curriculum=obj["curriculum"],
            pretrain_label=label,
            n_params=_as_int(obj["n_params"], "n_params", line),
            d_finetune=_as_int(obj["d_finetune"], "d_finetune", line),
            checkpoints=tuple(ckpts),
        )
    except RunFormatError as exc:
        if exc.line is None:
            raise RunFormatError(str(exc).split(": ", 1)[-1], line, exc.field) from None
        raise


def run_to_dict(run: RunRecord) -> dict:
    return {
        "run_id": run.run_id,
        "curriculum": run.curriculum,
        "pretrain_label": run.pretrain_label,
        "n_params": run.n_params,
        "d_finetune": run.d_finetune,
        "checkpoints": [
            {"data_seen": c.data_seen, "compute": c.compute, "eval_loss": c.eval_loss} for c in run.checkpoints
        ],
    }


def _open_text(source) -> tuple[TextIO, str, bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, encoding="utf-8"), str(source), True
    return source, getattr(source, "name", "<stream>"), False


def ingest_runs(source, *, strict: bool = False, now: str | None = None) -> RunSet:
    """Read a JSON-lines run file (path or text stream) into a RunSet.

    Blank lines are ignored. Malformed lines raise RunFormatError naming the
    line number and field; a repeated run_id raises DuplicateRunError naming
    both lines. Checkpoint ordering and non-finite losses are accepted and
    left to :func:`validate_runs`, unless ``strict`` is set.
    """
    fh, name, close = _open_text(source)
    runs: list[RunRecord] = []
    first_line: dict[str, int] = {}
    try:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise RunFormatError(f"invalid JSON ({exc.msg})", lineno) from None
            run = parse_run(obj, lineno)
            if strict:
                found = check_run(run)
                if found.ordering or found.non_finite:
                    problem = found.ordering[0] if found.ordering else "non-finite eval_loss"
                    raise RunFormatError(problem, lineno, "checkpoints")
            if run.run_id in first_line:
                raise DuplicateRunError(
                    f"duplicate run_id {run.run_id!r} on lines {first_line[run.run_id]} and {lineno}"
                )
            first_line[run.run_id] = lineno
            runs.append(run)
    finally:
        if close:
            fh.close()
    stamp = now if now is not None else datetime.now(timezone.utc).isoformat(timespec="seconds")
    return RunSet(runs=tuple(runs), sources=(name,), ingested_at=stamp)


def dumps_runs(runs: Iterable[RunRecord]) -> str:
    return "".join(json.dumps(run_to_dict(r)) + "\n" for r in runs)


def export_runs(rs: RunSet | Iterable[RunRecord], dest: str | os.PathLike | TextIO) -> None:
    text = dumps_runs(rs)
    if isinstance(dest, (str, os.PathLike)):
        Path(dest).write_text(text, encoding="utf-8")
    else:
        dest.write(text)


def loads_runs(text: str) -> RunSet:
    return ingest_runs(io.StringIO(text), now="")


# ---------------------------------------------------------------------------
# Validation


@dataclass
class RunFindings:
    run_id: str
    ordering: list[str] = field(default_factory=list)
    non_finite: list[int] = field(default_factory=list)
    converged: bool = True
    last_quartile_improvement: float = 0.0

    @property
    def clean(self) -> bool:
        return not self.ordering and not self.non_finite and self.converged

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "ordering_violations": self.ordering,
            "non_finite_losses": self.non_finite,
            "converged": self.converged,
            "last_quartile_improvement": self.last_quartile_improvement,
        }


@dataclass
class ValidationReport:
    runs: list[RunFindings]
    tolerance: float

    @property
    def n_findings(self) -> int:
        return sum(len(f.ordering) + len(f.non_finite) + (not f.converged) for f in self.runs)

    def findings_for(self, run_id: str) -> RunFindings:
        return next(f for f in self.runs if f.run_id == run_id)

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "n_runs": len(self.runs),
            "n_findings": self.n_findings,
            "runs": [f.to_dict() for f in self.runs if not f.clean],
        }


def last_quartile_improvement(losses) -> float:
    """Relative drop of the best loss over the final 25% of checkpoints."""
    n = len(losses)
    if n < 2:
        return 0.0
    start = n - max(1, math.ceil(n / 4)) - 1
    best_before = min(losses[: start + 1])
    best_after = min(losses)
    return (best_before - best_after) / best_before if best_before > 0 else 0.0


def check_run(run: RunRecord, tol: float = CONVERGENCE_TOL) -> RunFindings:
    f = RunFindings(run.run_id)
    ck = run.checkpoints
    for j in range(1, len(ck)):
        if ck[j].data_seen < ck[j - 1].data_seen:
            f.ordering.append(f"data_seen decreases at checkpoint {j}")
        a, b = ck[j - 1].compute, ck[j].compute
        if a is not None and b is not None and b < a:
            f.ordering.append(f"compute decreases at checkpoint {j}")
    f.non_finite = [j for j, c in enumerate(ck) if not math.isfinite(c.eval_loss)]
    finite = [c.eval_loss for c in ck if math.isfinite(c.eval_loss)]
    f.last_quartile_improvement = last_quartile_improvement(finite)
    f.converged = f.last_quartile_improvement < tol
    return f


def validate_runs(rs: RunSet | Iterable[RunRecord], tol: float = CONVERGENCE_TOL) -> ValidationReport:
    """Report ordering violations, non-finite losses and convergence per run.

    Never raises on bad data: everything becomes a report entry.
    """
    return ValidationReport([check_run(r, tol) for r in rs], tol)


# ---------------------------------------------------------------------------
# Curves


@dataclass(frozen=True)
class LossCurve:
    """Loss versus data or compute, cleaned to a running minimum.

    ``x`` is strictly increasing and ``loss`` non-increasing; ``raw_x`` and
    ``raw_loss`` keep the uncleaned points in axis order.
    """

    axis: str
    curriculum: str
    pretrain_label: str
    n_params: int
    x: tuple[float, ...]
    loss: tuple[float, ...]
    raw_x: tuple[float, ...]
    raw_loss: tuple[float, ...]
    run_ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.x)

    @property
    def label(self) -> str:
        who = self.curriculum if not self.pretrain_label else f"{self.curriculum}:{self.pretrain_label}"
        if len(self.run_ids) == 1:
            return f"{who} N={self.n_params:.3g} {self.run_ids[0]}"
        return f"{who} N={self.n_params:.3g}"


class CurveList(list):
    """List of LossCurve with a record of groups that were skipped."""

    def __init__(self, curves=(), skipped=None):
        super().__init__(curves)
        self.skipped: list[str] = list(skipped or [])


def running_min(values) -> list[float]:
    out, best = [], math.inf
    for v in values:
        best = min(best, v)
        out.append(best)
    return out


def clean_curve(xs, losses) -> tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...], tuple[float, ...]]:
    """Sort by x, merge duplicate x by min loss, then take the running minimum.

    Non-finite losses are dropped.
    """
    pairs = sorted((x, loss) for x, loss in zip(xs, losses) if math.isfinite(loss))
    raw_x = tuple(p[0] for p in pairs)
    raw_l = tuple(p[1] for p in pairs)
    merged: dict[float, float] = {}
    for x, loss in pairs:
        merged[x] = min(loss, merged.get(x, math.inf))
    ux = sorted(merged)
    return tuple(ux), tuple(running_min(merged[x] for x in ux)), raw_x, raw_l


def build_curves(
    rs: RunSet | Iterable[RunRecord],
    axis: Literal["data", "compute"] = "data",
    level: Literal["within_run", "across_runs"] = "across_runs",
    *,
    converged_only: bool = False,
    tol: float = CONVERGENCE_TOL,
) -> CurveList:
    """Group runs into cleaned loss curves.

    ``within_run``: one curve per run over its checkpoints (x = data_seen or
    compute). ``across_runs``: one curve per (curriculum, pretrain_label,
    n_params) of best loss versus d_finetune. Across-run curves only support
    ``axis="data"``; with ``converged_only`` non-converged runs are dropped
    and groups left empty are reported in ``.skipped``.
    """
    runs = list(rs)
    if axis not in ("data", "compute") or level not in ("within_run", "across_runs"):
        raise ValueError(f"bad axis/level {axis!r}/{level!r}")
    out = CurveList()
    if level == "within_run":
        for run in runs:
            if axis == "compute":
                if not run.has_compute:
                    raise ValueError(f"run {run.run_id!r} has checkpoints without compute")
                xs = [c.compute for c in run.checkpoints]
            else:
                xs = [c.data_seen for c in run.checkpoints]
            x, loss, raw_x, raw_l = clean_curve(xs, [c.eval_loss for c in run.checkpoints])
            out.append(
                LossCurve(axis, run.curriculum, run.pretrain_label, run.n_params, x, loss, raw_x, raw_l, (run.run_id,))
            )
        return out

    if axis != "data":
        raise ValueError("across_runs curves are indexed by dataset size; use axis='data'")
    groups: dict[tuple, list[RunRecord]] = defaultdict(list)
    for run in runs:
        groups[run.group_key()].append(run)
    for key in sorted(groups):
        members = groups[key]
        if converged_only:
            members = [r for r in members if check_run(r, tol).converged]
        if not members:
            out.skipped.append(f"{key}: no converged runs")
            logger.warning("skipping empty curve group %s", key)
            continue
        members = sorted(members, key=lambda r: (r.d_finetune, r.run_id))
        x, loss, raw_x, raw_l = clean_curve([r.d_finetune for r in members], [r.best_loss for r in members])
        curriculum, label, n = key
        out.append(LossCurve("data", curriculum, label, n, x, loss, raw_x, raw_l, tuple(r.run_id for r in members)))
    return out


def baseline_curves(rs: RunSet | Iterable[RunRecord]) -> dict[int, LossCurve]:
    """From-scratch across-run curves keyed by model size."""
    scratch = [r for r in rs if r.curriculum == FROM_SCRATCH]
    return {c.n_params: c for c in build_curves(scratch, "data", "across_runs")}
