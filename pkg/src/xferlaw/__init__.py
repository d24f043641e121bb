"""Measure and model effective data transferred by pre-training.

The transfer law ``D_T = k * D_F**alpha * N**beta`` relates the extra
from-scratch data a fine-tuned model is worth (D_T) to the fine-tuning set
size D_F and the parameter count N.
"""

from .effective import EffectiveDataRow, effective_data_at_loss, fraction_from_transfer, transfer_table
from .fitting import FitResult, ScalingLawParams, fit_global_fromscratch, fit_logit_saturation, fit_loglog_line, fit_powerlaw_plus_const
from .frontier import best_epoch_summary, converged_compute, pareto_frontier
from .predictor import data_collection_advisor, data_vs_model_tradeoff, fewshot_effective_data, predict_finetuned_loss
from .regime import DNFit, RegimeLabel, classify_regime, estimate_dn, ossification_report
from .runs import Checkpoint, LossCurve, RunRecord, RunSet, build_curves, export_runs, ingest_runs, validate_runs
from .synth import GroundTruth, generate, generate_finetuned, generate_fromscratch, roundtrip_check
from .transfer import (
    MIXTURE_TO_PYTHON,
    TEXT_TO_PYTHON,
    TransferCoefficients,
    effective_multiplier,
    evaluate_transfer,
    fit_transfer_direct,
    fit_transfer_fit_of_fits,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
