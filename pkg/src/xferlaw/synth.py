"""Synthetic run sets generated from known laws.

Converged from-scratch loss follows the surface

    L(N, D) = [(n_c / N) ** (alpha_n / alpha_d) + d_c / D] ** alpha_d

and a fine-tuned run at (N, D_F) reaches the from-scratch loss at
D_E = D_F + k * D_F**alpha * N**beta. Noise is multiplicative log-normal on
the converged loss, drawn per cell from a generator keyed on
(seed, stream, N, D) so results do not depend on grid order.

Training curves (``n_checkpoints > 0``) have this shape, with ``s`` the
characters seen, ``s_best = best_epoch * D`` and ``L*`` the converged loss::

    s <= s_best:  L(s) = L* * (1 + CURVE_AMPLITUDE * ((s_best / s) ** CURVE_EXPONENT - 1))
    s >  s_best:  L(s) = L* * (1 + OVERFIT_SLOPE * (s / s_best - 1))

i.e. a power law in compute down to the best checkpoint followed by a linear
overfitting rise. Compute is ``6 * N * s`` FLOPs. Checkpoints are spaced
geometrically from ``s_best / 100`` to ``s_best`` (three quarters of them)
and linearly up to ``2 * s_best``.

The default from-scratch constants are placeholders picked so that most of
the default (N, D_F) grid is in the low-data regime; they are not estimates
of any measured python scaling law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fitting import ScalingLawParams
from .runs import FINETUNED, FROM_SCRATCH, Checkpoint, RunRecord, RunSet
from .transfer import TEXT_TO_PYTHON, TransferCoefficients

# D(1e5) ~ 1.2e11 and D(1e9) ~ 1.4e12 characters, so every default cell is
# deep in the low-data regime and D_E stays far from D(N), where loss is
# insensitive to data.
PLACEHOLDER_SCALING = ScalingLawParams(n_c=1e8, alpha_n=0.2, d_c=1e10, alpha_d=0.75)
DEFAULT_N_GRID = (10**5, 10**6, 10**7, 10**8, 10**9)
DEFAULT_D_GRID = (10**5, 10**6, 10**7, 10**8)
# 8 points per decade, 1e4 .. 1e14 characters
DEFAULT_SCRATCH_D_GRID = tuple(int(round(10 ** (4 + i / 8))) for i in range(8 * 10 + 1))

CURVE_AMPLITUDE = 0.05
CURVE_EXPONENT = 0.5
OVERFIT_SLOPE = 0.02
FLOPS_PER_PARAM_CHAR = 6

_SCRATCH_STREAM = 0
_FINETUNE_STREAM = 1


@dataclass(frozen=True)
class GroundTruth:
    scaling: ScalingLawParams = PLACEHOLDER_SCALING
    transfer: TransferCoefficients = TEXT_TO_PYTHON
    n_grid: tuple[int, ...] = DEFAULT_N_GRID
    d_grid: tuple[int, ...] = DEFAULT_D_GRID
    scratch_d_grid: tuple[int, ...] = DEFAULT_SCRATCH_D_GRID
    noise_sigma: float = 0.0
    seed: int = 0
    pretrain_label: str = "text"
    n_checkpoints: int = 0
    best_epoch_scratch: float = 3.0
    best_epoch_finetuned: float = 1.0
    # cells (n_params, d_finetune) whose fine-tuned loss is planted at
    # D_E = ossify_factor * D_F
    ossified_cells: tuple[tuple[int, int], ...] = ()
    ossify_factor: float = 0.5
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("n_grid", "d_grid", "scratch_d_grid"):
            grid = getattr(self, name)
            if not grid or any(v < 1 for v in grid):
                raise ValueError(f"{name} must be non-empty and positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 < self.ossify_factor < 1:
            raise ValueError("ossify_factor must be in (0, 1)")


def fromscratch_loss(gt: GroundTruth, n_params, d):
    return gt.scaling.loss(n_params, d)


def true_effective_data(gt: GroundTruth, n_params: float, d_finetune: float) -> float:
    if (int(n_params), int(d_finetune)) in set(gt.ossified_cells):
        return gt.ossify_factor * d_finetune
    t = gt.transfer
    return d_finetune + t.k * d_finetune**t.alpha * n_params**t.beta


def finetuned_loss(gt: GroundTruth, n_params: float, d_finetune: float) -> float:
    return float(fromscratch_loss(gt, n_params, true_effective_data(gt, n_params, d_finetune)))


def _noise(gt: GroundTruth, stream: int, n: int, d: int) -> float:
    if gt.noise_sigma == 0:
        return 1.0
    rng = np.random.default_rng([gt.seed, stream, n, d])
    return math.exp(gt.noise_sigma * rng.standard_normal())


def _checkpoints(n: int, d: int, converged_loss: float, best_epoch: float, count: int) -> tuple[Checkpoint, ...]:
    s_best = best_epoch * d
    if count <= 1:
        return (Checkpoint(data_seen=s_best, eval_loss=converged_loss, compute=float(FLOPS_PER_PARAM_CHAR * n * s_best)),)
    n_post = math.ceil(count / 4)
    n_pre = count - n_post
    pre = s_best * np.geomspace(0.01, 1.0, n_pre) if n_pre > 1 else np.array([s_best])
    pre[-1] = s_best
    post = s_best * (1.0 + np.linspace(0.0, 1.0, n_post + 1)[1:])
    out = []
    for s in np.concatenate([pre, post]):
        s = float(s)
        if s <= s_best:
            loss = converged_loss * (1 + CURVE_AMPLITUDE * ((s_best / s) ** CURVE_EXPONENT - 1))
        else:
            loss = converged_loss * (1 + OVERFIT_SLOPE * (s / s_best - 1))
        out.append(Checkpoint(data_seen=s, eval_loss=float(loss), compute=float(FLOPS_PER_PARAM_CHAR * n * s)))
    return tuple(out)


def generate_fromscratch(gt: GroundTruth) -> RunSet:
    """From-scratch runs on ``n_grid`` x ``scratch_d_grid``."""
    runs = []
    for n in gt.n_grid:
        for d in gt.scratch_d_grid:
            loss = float(fromscratch_loss(gt, n, d)) * _noise(gt, _SCRATCH_STREAM, n, d)
            runs.append(
                RunRecord(
                    run_id=f"scratch_n{int(n)}_d{int(d)}",
                    curriculum=FROM_SCRATCH,
                    pretrain_label="",
                    n_params=int(n),
                    d_finetune=int(d),
                    checkpoints=_checkpoints(int(n), int(d), loss, gt.best_epoch_scratch, gt.n_checkpoints),
                )
            )
    return RunSet(tuple(runs), sources=("synth",))


def generate_finetuned(gt: GroundTruth) -> RunSet:
    """Fine-tuned runs on ``n_grid`` x ``d_grid``."""
    runs = []
    for n in gt.n_grid:
        for d in gt.d_grid:
            loss = finetuned_loss(gt, n, d) * _noise(gt, _FINETUNE_STREAM, n, d)
            runs.append(
                RunRecord(
                    run_id=f"ft-{gt.pretrain_label}_n{int(n)}_d{int(d)}",
                    curriculum=FINETUNED,
                    pretrain_label=gt.pretrain_label,
                    n_params=int(n),
                    d_finetune=int(d),
                    checkpoints=_checkpoints(int(n), int(d), loss, gt.best_epoch_finetuned, gt.n_checkpoints),
                )
            )
    return RunSet(tuple(runs), sources=("synth",))


def generate(gt: GroundTruth) -> RunSet:
    """From-scratch baselines followed by fine-tuned runs."""
    return RunSet(generate_fromscratch(gt).runs + generate_finetuned(gt).runs, sources=("synth",))


def analytic_dn(scaling: ScalingLawParams, n_params, threshold: float = 0.99):
    """D(N) implied exactly by the from-scratch surface."""
    a = (scaling.n_c / np.asarray(n_params, float)) ** (scaling.alpha_n / scaling.alpha_d)
    return scaling.d_c / (a * ((1.0 / threshold) ** (1.0 / scaling.alpha_d) - 1.0))


def roundtrip_check(gt: GroundTruth, recovered: TransferCoefficients, tolerances: dict[str, float] | None = None) -> dict:
    """Relative errors of recovered (k, alpha, beta) against the ground truth."""
    tolerances = tolerances or {"k": 0.05, "alpha": 0.05, "beta": 0.05}
    truth = gt.transfer
    report = {}
    for name in ("k", "alpha", "beta"):
        true_v, got = getattr(truth, name), getattr(recovered, name)
        err = abs(got - true_v) / abs(true_v) if true_v != 0 else abs(got)
        tol = tolerances.get(name, math.inf)
        report[name] = {"true": true_v, "recovered": got, "rel_error": err, "tolerance": tol, "passed": err <= tol}
    report["passed"] = all(report[n]["passed"] for n in ("k", "alpha", "beta"))
    return report
