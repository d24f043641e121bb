"""Forward predictions from fitted laws."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .fitting import ScalingLawParams
from .transfer import TransferCoefficients, evaluate_transfer

FEWSHOT_CAVEAT = (
    "speculative: extrapolates the transfer law far below the fitted D_F range and "
    "treats in-context characters as fine-tuning characters"
)


@dataclass(frozen=True)
class LossPrediction:
    low_data: float
    """Loss with D_T substituted for the dataset size (low-data approximation)."""
    effective: float
    """Loss with D_E = D_F + D_T substituted."""


def predict_finetuned_loss(p: ScalingLawParams, c: TransferCoefficients, n_params, d_finetune) -> LossPrediction:
    d_t = evaluate_transfer(c, n_params, d_finetune)
    model_term = (p.n_c / np.asarray(n_params, float)) ** (p.alpha_n / p.alpha_d)
    with np.errstate(divide="ignore"):
        low = (model_term + p.d_c / d_t) ** p.alpha_d
    eff = (model_term + p.d_c / (d_finetune + d_t)) ** p.alpha_d
    return LossPrediction(low_data=_scalar(low), effective=_scalar(eff))


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


@dataclass(frozen=True)
class FewShotEstimate:
    n_params: float
    context_chars: float
    d_effective: float
    d_effective_zero_shot: float
    multiplier_vs_zero_shot: float
    caveat: str = FEWSHOT_CAVEAT

    def to_dict(self) -> dict:
        return asdict(self)


def fewshot_effective_data(c: TransferCoefficients, n_params: float, context_chars: float = 1) -> FewShotEstimate:
    """Effective data of a model given ``context_chars`` of examples.

    Zero-shot is represented by a single character of context.
    """
    if context_chars < 1:
        raise ValueError("context_chars must be >= 1")
    d_e = context_chars + float(evaluate_transfer(c, n_params, context_chars))
    d_e0 = 1 + float(evaluate_transfer(c, n_params, 1))
    return FewShotEstimate(n_params, context_chars, d_e, d_e0, d_e / d_e0)


@dataclass(frozen=True)
class TradeoffAdvice:
    data_factor: float
    equivalent_model_factor: float
    assumptions: str

    def to_dict(self) -> dict:
        return asdict(self)


def data_vs_model_tradeoff(c: TransferCoefficients, data_factor: float) -> TradeoffAdvice:
    """Model-size factor giving the same D_T as multiplying D_F by ``data_factor``."""
    if not data_factor > 0:
        raise ValueError("data_factor must be positive")
    if c.beta == 0:
        raise ValueError("beta = 0: model size does not change transfer")
    factor = data_factor ** (c.alpha / c.beta)
    note = (
        f"k={c.k:g}, alpha={c.alpha:g}, beta={c.beta:g}; equal effective data transferred; "
        "valid in the low-data regime (D_F <= 10% of D(N))"
    )
    return TradeoffAdvice(float(data_factor), float(factor), note)


# ---------------------------------------------------------------------------
# Data collection advice

FLAT_SLOPE = 1e-6


@dataclass(frozen=True)
class CollectionAdvice:
    n_params: float
    d_finetune: float
    data_slope: float
    model_slope: float
    exchange_exponent: float | None
    data_factor_per_10x_model: float | None
    extra_chars_per_10x_model: float | None
    recommendation: str

    def to_dict(self) -> dict:
        return asdict(self)


def _log_slope(xs, losses) -> float:
    """Improvement rate -d ln L / d ln x from a least-squares line."""
    lx, ll = np.log(np.asarray(xs, float)), np.log(np.asarray(losses, float))
    if len(np.unique(lx)) < 2:
        raise ValueError("need at least 2 distinct x values for a slope")
    slope = np.polyfit(lx, ll, 1)[0]
    return float(-slope)


def data_collection_advisor(subsample_rows, model_sweep, n_params: float | None = None) -> CollectionAdvice:
    """Compare the local value of more fine-tuning data with a bigger model.

    ``subsample_rows``: runs fine-tuned on subsets (e.g. 1%, 10%, 100%) of
    the dataset, as EffectiveDataRows or ``(d_finetune, loss)`` pairs, at one
    model size. ``model_sweep``: ``(n_params, loss)`` at the full dataset.
    Slopes are taken in log-loss between the two largest subsets and between
    the two sweep points nearest the current model size. Diagnostic only; no
    costs are modelled.
    """
    sub = [(r.d_finetune, r.loss, r.n_params) if hasattr(r, "loss") else (r[0], r[1], n_params) for r in subsample_rows]
    if n_params is None:
        sizes = {s[2] for s in sub}
        if None in sizes or len(sizes) != 1:
            raise ValueError("subsample rows must share one model size (or pass n_params)")
        n_params = sizes.pop()
    sub = sorted({(float(d), float(loss)) for d, loss, _ in sub})
    if len({d for d, _ in sub}) < 2:
        raise ValueError("need at least two subsample levels")
    sweep = sorted((float(n), float(loss)) for n, loss in model_sweep)
    if len({n for n, _ in sweep}) < 2:
        raise ValueError("need at least two model sizes in the sweep")

    top = sub[-2:]
    data_slope = _log_slope([d for d, _ in top], [loss for _, loss in top])
    near = sorted(sweep, key=lambda p: (abs(math.log(p[0] / n_params)), p[0]))[:2]
    model_slope = _log_slope([n for n, _ in near], [loss for _, loss in near])
    d_full = top[-1][0]

    exchange = factor = extra = None
    if data_slope <= FLAT_SLOPE and model_slope <= FLAT_SLOPE:
        rec = "neither more data nor a larger model improves loss locally"
    elif data_slope <= FLAT_SLOPE:
        rec = "data saturation: loss no longer improves with more fine-tuning data; increase model size instead"
    elif model_slope <= FLAT_SLOPE:
        rec = "collect data: larger models do not improve loss at this dataset size, so data collection strictly dominates"
        exchange = 0.0
        factor, extra = 1.0, 0.0
    else:
        exchange = model_slope / data_slope
        factor = 10.0**exchange
        extra = d_full * (factor - 1.0)
        rec = (
            f"a 10x larger model is worth about {factor:.3g}x more fine-tuning data "
            f"({extra:.3g} extra characters); collect data if that is cheaper than the larger model"
        )
    return CollectionAdvice(float(n_params), d_full, data_slope, model_slope, exchange, factor, extra, rec)
