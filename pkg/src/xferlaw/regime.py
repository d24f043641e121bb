"""Data regimes: D(N), regime labels and ossification.

D(N) is the dataset size at which a model of size N gets within 1% of its
infinite-data loss: ``L(inf) = threshold * L(D(N))`` with threshold 0.99.
A fine-tuning set is in the low-data regime when D_F <= 0.10 * D(N).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .fitting import FitResult, fit_loglog_line, fit_powerlaw_plus_const

FROM_SCRATCH_THRESHOLD = 0.99
# Intersection threshold used for fine-tuned curves, which are noisier.
FINETUNED_THRESHOLD = 0.95

# Optional: restrict per-N fits to points with loss <= window * best loss, the part
# of the curve that sets the floor and the 1% crossing (accurate on clean
# curves, unstable under loss noise). None fits the whole curve.
TAIL_WINDOW = None
MIN_FIT_POINTS = 4

LOW_MAX_RATIO = 0.10
HIGH_MIN_RATIO = 1.0
LOW, MEDIUM, HIGH = "low", "medium", "high"


@dataclass(frozen=True)
class DNFit:
    coefficient: float
    exponent: float
    per_n_points: tuple[tuple[float, float], ...] = ()
    threshold: float = FROM_SCRATCH_THRESHOLD
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.coefficient > 0:
            raise ValueError("D(N) coefficient must be positive")
        if not self.exponent > 0:
            raise ValueError(f"D(N) exponent {self.exponent} must be positive")

    def d_of_n(self, n_params):
        return self.coefficient * np.power(n_params, self.exponent)

    def to_dict(self) -> dict:
        return {
            "coefficient": self.coefficient,
            "exponent": self.exponent,
            "threshold": self.threshold,
            "per_n_points": [list(p) for p in self.per_n_points],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DNFit":
        return cls(
            coefficient=float(obj["coefficient"]),
            exponent=float(obj["exponent"]),
            per_n_points=tuple((float(a), float(b)) for a, b in obj.get("per_n_points", ())),
            threshold=float(obj.get("threshold", FROM_SCRATCH_THRESHOLD)),
            diagnostics=obj.get("diagnostics", {}),
        )


@dataclass(frozen=True)
class RegimeLabel:
    value: str
    ratio: float


def data_for_fraction_of_floor(floor: float, scale: float, exponent: float, threshold: float = FROM_SCRATCH_THRESHOLD) -> float:
    """Solve ``floor + (scale / D)**exponent = floor / threshold`` for D."""
    excess = floor * (1.0 / threshold - 1.0)
    if not floor > 0:
        raise ValueError(f"fitted floor {floor!r} is not positive")
    if not exponent > 0 or not scale > 0:
        raise ValueError("power term vanished; D(N) undefined")
    return scale * excess ** (-1.0 / exponent)


def tail_points(curve, window: float | None = None) -> list[tuple[float, float]]:
    """Points with loss within ``window`` times the best loss (at least 4, taken from the large-D end)."""
    pts = list(zip(curve.x, curve.loss))
    if window is None:
        return pts
    best = min(curve.loss)
    near = [p for p in pts if p[1] <= window * best]
    return near if len(near) >= MIN_FIT_POINTS else pts[-MIN_FIT_POINTS:]


def dn_for_curve(
    curve, threshold: float = FROM_SCRATCH_THRESHOLD, window: float | None = TAIL_WINDOW
) -> tuple[float, FitResult]:
    """D(N) for one across-run loss-vs-data curve."""
    if len(curve.x) < MIN_FIT_POINTS:
        raise ValueError(f"N={curve.n_params}: need at least {MIN_FIT_POINTS} dataset sizes, got {len(curve.x)}")
    if max(curve.loss) - min(curve.loss) <= 1e-12 * max(curve.loss):
        raise ValueError(f"N={curve.n_params}: flat loss curve, D(N) undefined")
    floor, scale, exponent, fit = fit_powerlaw_plus_const(tail_points(curve, window))
    if not floor > 0:
        raise ValueError(f"N={curve.n_params}: fitted floor {floor:.4g} <= 0")
    return data_for_fraction_of_floor(floor, scale, exponent, threshold), fit


def estimate_dn(curves, threshold: float = FROM_SCRATCH_THRESHOLD, window: float | None = TAIL_WINDOW) -> DNFit:
    """Fit D(N) = coefficient * N**exponent from from-scratch loss-vs-data curves.

    Each curve gets a power-law-plus-constant fit over its near-floor points
    (``window=None`` uses the whole curve); the fitted floor is the
    infinite-data loss. Model sizes whose fit fails are listed under
    ``diagnostics["errors"]``.
    """
    points, errors, fits = [], {}, {}
    for curve in sorted(curves, key=lambda c: c.n_params):
        try:
            d_n, fit = dn_for_curve(curve, threshold, window)
        except ValueError as exc:
            errors[str(curve.n_params)] = str(exc)
            continue
        points.append((float(curve.n_params), d_n))
        fits[str(curve.n_params)] = fit.to_dict()
    if len({n for n, _ in points}) < 2:
        raise ValueError(f"D(N) needs at least 2 usable model sizes; errors: {errors}")
    exponent, intercept, line = fit_loglog_line(points)
    return DNFit(
        coefficient=10.0**intercept,
        exponent=exponent,
        per_n_points=tuple(points),
        threshold=threshold,
        diagnostics={"errors": errors, "per_n_fits": fits, "line": line.to_dict(), "tail_window": window},
    )


def classify_regime(d_finetune, n_params, dn: DNFit) -> RegimeLabel:
    ratio = float(d_finetune / dn.d_of_n(n_params))
    if ratio <= LOW_MAX_RATIO:
        value = LOW
    elif ratio >= HIGH_MIN_RATIO:
        value = HIGH
    else:
        value = MEDIUM
    return RegimeLabel(value, ratio)


@dataclass
class OssificationReport:
    ossified: list[dict]
    other: list[dict]
    summary: dict[str, dict]

    @property
    def empty(self) -> bool:
        return not self.ossified

    def to_dict(self) -> dict:
        return {"ossified": self.ossified, "summary": self.summary, "n_other": len(self.other)}


def _row_entry(row, dn: DNFit) -> dict:
    label = classify_regime(row.d_finetune, row.n_params, dn)
    d_n = float(dn.d_of_n(row.n_params))
    return {
        "run_id": row.run_id,
        "n_params": row.n_params,
        "d_finetune": row.d_finetune,
        "d_transferred": row.d_transferred,
        "regime": label.value,
        "df_over_dn": label.ratio,
        "dt_over_dn": row.d_transferred / d_n,
    }


def ossification_report(rows, dn: DNFit) -> OssificationReport:
    """Rows where pre-training reduced effective data (D_T < 0), with regime labels.

    The summary gives, per regime, the count of ossified rows and their mean
    D_T / D(N). Every row lands in exactly one of ``ossified`` / ``other``.
    """
    ossified, other = [], []
    for row in rows:
        entry = _row_entry(row, dn)
        (ossified if row.d_transferred < 0 else other).append(entry)
    by_regime = defaultdict(list)
    for e in ossified:
        by_regime[e["regime"]].append(e["dt_over_dn"])
    summary = {
        r: {"count": len(by_regime[r]), "mean_dt_over_dn": (float(np.mean(by_regime[r])) if by_regime[r] else None)}
        for r in (LOW, MEDIUM, HIGH)
    }
    return OssificationReport(ossified, other, summary)


def regime_counts(cells, dn: DNFit) -> dict[str, int]:
    """Count (n_params, d_finetune) cells per regime label."""
    counts = {LOW: 0, MEDIUM: 0, HIGH: 0}
    for n, d in cells:
        counts[classify_regime(d, n, dn).value] += 1
    return counts

