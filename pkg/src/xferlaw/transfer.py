"""The transfer law D_T = k * D_F**alpha * N**beta: evaluation and fitting."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .effective import EffectiveDataRow
from .fitting import FitResult, fit_loglog_line, fit_logit_saturation

# Spread of per-group logit exponents above which the shared-exponent
# assumption is flagged.
EXPONENT_SPREAD_WARN = 0.15


@dataclass(frozen=True)
class TransferCoefficients:
    """Coefficients of the transfer law.

    Construction does not enforce ``k > 0``, ``0 <= alpha < 1`` or
    ``0 < beta < 1`` so degenerate laws can still be evaluated; see
    :meth:`problems`.
    """

    k: float
    alpha: float
    beta: float
    per_df_nstar: tuple[tuple[float, float], ...] = ()
    diagnostics: dict = field(default_factory=dict, compare=False)

    def problems(self) -> list[str]:
        out = []
        if not self.k > 0:
            out.append(f"k={self.k} is not positive")
        if not 0 <= self.alpha < 1:
            out.append(f"alpha={self.alpha} outside [0, 1)")
        if not 0 < self.beta < 1:
            out.append(f"beta={self.beta} outside (0, 1)")
        if any(n <= 0 for _, n in self.per_df_nstar):
            out.append("non-positive N* in per_df_nstar")
        return out

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "alpha": self.alpha,
            "beta": self.beta,
            "per_df_nstar": [list(p) for p in self.per_df_nstar],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TransferCoefficients":
        return cls(
            k=float(obj["k"]),
            alpha=float(obj["alpha"]),
            beta=float(obj["beta"]),
            per_df_nstar=tuple((float(a), float(b)) for a, b in obj.get("per_df_nstar", ())),
            diagnostics=obj.get("diagnostics", {}),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


# Published coefficients for fine-tuning on python.
TEXT_TO_PYTHON = TransferCoefficients(k=1.9e4, alpha=0.18, beta=0.38)
MIXTURE_TO_PYTHON = TransferCoefficients(k=2.1e5, alpha=0.096, beta=0.38)
PRESETS = {"text": TEXT_TO_PYTHON, "mixture": MIXTURE_TO_PYTHON}


def load_coefficients(source: str | Path) -> TransferCoefficients:
    """Coefficients from a preset name ("text", "mixture") or a JSON file."""
    if str(source) in PRESETS:
        return PRESETS[str(source)]
    return TransferCoefficients.from_dict(json.loads(Path(source).read_text()))


def evaluate_transfer(c: TransferCoefficients, n_params, d_finetune):
    """Effective data transferred, in characters."""
    if np.any(np.asarray(n_params) < 1) or np.any(np.asarray(d_finetune) < 1):
        raise ValueError("n_params and d_finetune must be >= 1")
    return c.k * np.power(d_finetune, c.alpha) * np.power(n_params, c.beta)


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


@dataclass(frozen=True)
class Multiplier:
    exact: float
    approximate: float


def effective_multiplier(c: TransferCoefficients, n_params, d_finetune) -> Multiplier:
    """(D_F + D_T) / D_F, with the large-transfer approximation D_T / D_F alongside."""
    d_t = evaluate_transfer(c, n_params, d_finetune)
    exact = (d_finetune + d_t) / d_finetune
    approx = c.k * np.power(n_params, c.beta) / np.power(d_finetune, 1 - c.alpha)
    return Multiplier(exact=_scalar(exact), approximate=_scalar(approx))


def nstar_from_coefficients(c: TransferCoefficients, d_finetune):
    """Model size at which transfer supplies half the effective data."""
    return (np.power(d_finetune, 1 - c.alpha) / c.k) ** (1 / c.beta)


# ---------------------------------------------------------------------------
# Row selection


def split_rows(rows, dn=None, max_ratio: float = 0.10) -> tuple[list[EffectiveDataRow], list[tuple[EffectiveDataRow, str]]]:
    """Partition rows into those usable for fitting and excluded ones with a reason.

    Usable rows have status ok, D_T > 0 and fraction in (0, 1); with a D(N)
    fit, they must also satisfy D_F <= max_ratio * D(N).
    """
    kept, dropped = [], []
    for row in rows:
        if row.status != "ok":
            dropped.append((row, f"status {row.status}"))
        elif not row.d_transferred > 0:
            dropped.append((row, "D_T <= 0"))
        elif not 0 < row.fraction < 1:
            dropped.append((row, "fraction outside (0, 1)"))
        elif dn is not None and row.d_finetune > max_ratio * dn.d_of_n(row.n_params):
            dropped.append((row, "outside low-data regime"))
        else:
            kept.append(row)
    return kept, dropped


def group_by_df(rows) -> dict[float, list[EffectiveDataRow]]:
    groups: dict[float, list[EffectiveDataRow]] = defaultdict(list)
    for row in rows:
        groups[float(row.d_finetune)].append(row)
    return dict(sorted(groups.items()))


# ---------------------------------------------------------------------------
# Fitting


def fit_transfer_fit_of_fits(rows, common_beta: float | None = None) -> TransferCoefficients:
    """Fit the transfer law by fitting per-dataset-size logit curves, then their N*.

    1. For each D_F, fit ``fraction = 1 / (1 + (N*/N)**beta)``.
    2. beta is the mean of the per-group exponents (or ``common_beta``);
       every group is refit with beta fixed to get its N*.
    3. A log-log line through (D_F, N*) gives alpha and k, using
       ``N* = (D_F**(1 - alpha) / k)**(1 / beta)``.

    Each D_F group counts once in stage 3 regardless of its row count.
    ``rows`` must already be filtered (see :func:`split_rows`).
    """
    groups = group_by_df(rows)
    if len(groups) < 2:
        raise ValueError(f"need at least 2 distinct D_F groups, got {len(groups)}")
    for d_f, members in groups.items():
        bad = [r for r in members if not (r.d_transferred > 0 and 0 < r.fraction < 1)]
        if bad:
            raise ValueError(f"group D_F={d_f:g} contains rows with D_T <= 0 or fraction outside (0, 1)")
        if len({r.n_params for r in members}) < 2:
            raise ValueError(f"group D_F={d_f:g} has fewer than 2 usable rows with distinct N")

    stage1 = {}
    for d_f, members in groups.items():
        _, exponent, fit = fit_logit_saturation([(r.n_params, r.fraction) for r in members])
        stage1[d_f] = (exponent, fit)
    exponents = np.array([e for e, _ in stage1.values()])
    warnings = []
    spread = float(exponents.max() - exponents.min())
    if spread > EXPONENT_SPREAD_WARN:
        warnings.append(
            f"per-group logit exponents span {spread:.3f} (> {EXPONENT_SPREAD_WARN}); shared-exponent assumption strained"
        )
    beta = float(common_beta) if common_beta is not None else float(exponents.mean())

    stage2 = {}
    for d_f, members in groups.items():
        n_star, _, fit = fit_logit_saturation([(r.n_params, r.fraction) for r in members], fixed_exponent=beta)
        stage2[d_f] = (n_star, fit)

    d_fs = np.array(list(stage2))
    n_stars = np.array([n for n, _ in stage2.values()])
    if len(np.unique(d_fs)) < 2:
        raise ValueError("need at least 2 distinct D_F values")
    slope, intercept, line_fit = fit_loglog_line(np.column_stack([d_fs, n_stars]))
    alpha = 1.0 - slope * beta
    k = 10.0 ** (-intercept * beta)

    diagnostics = {
        "method": "fit_of_fits",
        "beta_source": "common" if common_beta is not None else "mean",
        "stage1": {repr(d): {"exponent": e, **f.to_dict()} for d, (e, f) in stage1.items()},
        "stage2": {repr(d): {"n_star": n, **f.to_dict()} for d, (n, f) in stage2.items()},
        "stage3": line_fit.to_dict(),
        "exponent_spread": spread,
        "warnings": warnings,
        "n_rows": sum(len(m) for m in groups.values()),
    }
    return TransferCoefficients(
        k=k,
        alpha=alpha,
        beta=beta,
        per_df_nstar=tuple((float(d), float(n)) for d, n in zip(d_fs, n_stars)),
        diagnostics=diagnostics,
    )


def fit_transfer_direct(rows) -> TransferCoefficients:
    """OLS of ln D_T on ln D_F and ln N; a cross-check for the fit of fits."""
    rows = [r for r in rows if r.d_transferred > 0]
    if len(rows) < 3:
        raise ValueError("direct fit needs at least 3 rows with D_T > 0")
    ln_df = np.log([r.d_finetune for r in rows])
    ln_n = np.log([r.n_params for r in rows])
    y = np.log([r.d_transferred for r in rows])
    design = np.column_stack([np.ones_like(y), ln_df, ln_n])
    if np.linalg.matrix_rank(design) < 3:
        raise ValueError("collinear (N, D_F) design: k, alpha, beta are not identifiable")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    fit = FitResult(
        params={"ln_k": float(coef[0]), "alpha": float(coef[1]), "beta": float(coef[2])},
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        n_points=len(y),
        converged=True,
        iterations=1,
    )
    return TransferCoefficients(
        k=math.exp(coef[0]),
        alpha=float(coef[1]),
        beta=float(coef[2]),
        diagnostics={"method": "direct", "ols": fit.to_dict(), "warnings": []},
    )
