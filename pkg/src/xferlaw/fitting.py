"""Fitting kernels shared by the analyses.

Four model families are supported:

* straight lines in log-log space (power-law exponents),
* power law plus constant, ``y = floor + (scale / x) ** exponent``,
* logit saturation curves, ``logit(f) = exponent * (ln N - ln N*)``,
* the from-scratch loss surface
  ``L(N, D) = [(n_c / N) ** (alpha_n / alpha_d) + d_c / D] ** alpha_d``.

The nonlinear families are solved with a small Levenberg-Marquardt loop
(:func:`levenberg_marquardt`) on residuals in log-loss.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

GTOL = 1e-10
MAX_ITER = 500


@dataclass(frozen=True)
class FitResult:
    params: dict[str, float]
    residual_rms: float
    n_points: int
    converged: bool
    iterations: int
    grad_norm: float = 0.0
    residuals: tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "params": dict(self.params),
            "residual_rms": self.residual_rms,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_points": self.n_points,
        }


@dataclass(frozen=True)
class ScalingLawParams:
    """Constants of the from-scratch loss surface (characters, non-embedding params)."""

    n_c: float
    alpha_n: float
    d_c: float
    alpha_d: float

    def __post_init__(self):
        if min(self.n_c, self.d_c) <= 0:
            raise ValueError("n_c and d_c must be positive")
        for name in ("alpha_n", "alpha_d"):
            value = getattr(self, name)
            if not 0 < value < 2:
                raise ValueError(f"{name}={value} outside (0, 2)")

    def loss(self, n_params, d):
        """Converged from-scratch loss at model size ``n_params`` and data ``d``."""
        n = np.asarray(n_params, dtype=float)
        d = np.asarray(d, dtype=float)
        base = (self.n_c / n) ** (self.alpha_n / self.alpha_d) + self.d_c / d
        return base**self.alpha_d

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Linear kernels


def _positive_xy(points) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("points must be a sequence of (x, y) pairs")
    x, y = arr[:, 0], arr[:, 1]
    if np.any(~np.isfinite(arr)) or np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit requires finite, positive x and y")
    return x, y


def _ols(design: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return coef, target - design @ coef


def fit_loglog_line(points) -> tuple[float, float, FitResult]:
    """OLS line through ``(log10 x, log10 y)``.

    Returns ``(exponent, log10_intercept, fit)`` so that
    ``y ~= 10**log10_intercept * x**exponent``.
    """
    x, y = _positive_xy(points)
    if len(np.unique(x)) < 2:
        raise ValueError("log-log fit needs at least 2 distinct x values")
    lx, ly = np.log10(x), np.log10(y)
    coef, resid = _ols(np.column_stack([lx, np.ones_like(lx)]), ly)
    slope, intercept = float(coef[0]), float(coef[1])
    fit = FitResult(
        params={"exponent": slope, "log10_intercept": intercept},
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        n_points=len(x),
        converged=True,
        iterations=1,
        residuals=tuple(resid.tolist()),
    )
    return slope, intercept, fit


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def fit_logit_saturation(points, fixed_exponent: float | None = None) -> tuple[float, float, FitResult]:
    """Fit ``fraction = 1 / (1 + (N* / N) ** exponent)`` in logit space.

    ``points`` are ``(n_params, fraction)`` pairs with fractions strictly in
    (0, 1). With ``fixed_exponent`` only ``N*`` is estimated. Returns
    ``(n_star, exponent, fit)``.
    """
    arr = np.asarray(points, dtype=float).reshape(-1, 2)
    n, frac = arr[:, 0], arr[:, 1]
    bad = [(float(a), float(b)) for a, b in arr if not (0 < b < 1) or not a > 0]
    if bad:
        raise ValueError(f"fractions must lie strictly inside (0, 1) with N > 0; offending points: {bad}")
    ln_n, z = np.log(n), logit(frac)
    if fixed_exponent is not None:
        if len(arr) < 1:
            raise ValueError("need at least one point")
        if fixed_exponent <= 0:
            raise ValueError("fixed_exponent must be positive")
        exponent = float(fixed_exponent)
        ln_nstar = float(np.mean(ln_n - z / exponent))
        resid = z - exponent * (ln_n - ln_nstar)
    else:
        if len(np.unique(n)) < 2:
            raise ValueError("logit fit needs at least 2 distinct model sizes")
        coef, resid = _ols(np.column_stack([ln_n, np.ones_like(ln_n)]), z)
        exponent = float(coef[0])
        if exponent <= 0:
            raise ValueError(f"fitted logit exponent {exponent:.4g} is not positive; fraction does not grow with N")
        ln_nstar = float(-coef[1] / exponent)
    fit = FitResult(
        params={"n_star": math.exp(ln_nstar), "exponent": exponent},
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        n_points=len(n),
        converged=True,
        iterations=1,
        residuals=tuple(resid.tolist()),
    )
    return math.exp(ln_nstar), exponent, fit


# ---------------------------------------------------------------------------
# Damped least squares


def levenberg_marquardt(
    fun: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    p0: Sequence[float],
    *,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    gtol: float = GTOL,
    max_iter: int = MAX_ITER,
    damping: float = 1e-3,
) -> tuple[np.ndarray, np.ndarray, bool, int, float]:
    """Minimise ``sum(r**2)`` where ``fun(p) -> (r, J)``.

    Damping is multiplied by 10 after a rejected step and divided by 10
    after an accepted one. Stops when ``|J^T r| < gtol``, after ``max_iter``
    iterations, or when the damping has blown up (no descent possible).

    Returns ``(p, r, converged, iterations, grad_norm)``.
    """
    p = np.array(p0, dtype=float)
    if project is not None:
        p = project(p)
    r, J = fun(p)
    cost = float(r @ r)
    lam = damping
    it = 0
    gnorm = float(np.linalg.norm(J.T @ r))
    while it < max_iter:
        if gnorm < gtol:
            break
        it += 1
        A = J.T @ J
        g = J.T @ r
        scale = np.maximum(np.diag(A), 1e-12)
        try:
            step = np.linalg.solve(A + lam * np.diag(scale), -g)
        except np.linalg.LinAlgError:
            lam *= 10
            continue
        p_new = p + step
        if project is not None:
            p_new = project(p_new)
        r_new, J_new = fun(p_new)
        cost_new = float(r_new @ r_new)
        if np.isfinite(cost_new) and cost_new < cost:
            p, r, J, cost = p_new, r_new, J_new, cost_new
            gnorm = float(np.linalg.norm(J.T @ r))
            lam = max(lam / 10, 1e-15)
        else:
            lam *= 10
            if lam > 1e16:
                break
    return p, r, gnorm < gtol, it, gnorm


# ---------------------------------------------------------------------------
# Power law plus constant


def powerlaw_plus_const_residuals(theta: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Log-loss residuals and Jacobian for ``theta = (floor, ln scale, exponent)``."""
    floor, ln_scale, exponent = theta
    log_ratio = ln_scale - np.log(x)
    power = np.exp(exponent * log_ratio)
    model = floor + power
    r = np.log(model) - np.log(y)
    J = np.column_stack([np.ones_like(x), exponent * power, power * log_ratio]) / model[:, None]
    return r, J


def powerlaw_plus_const(x, floor: float, scale: float, exponent: float):
    return floor + (scale / np.asarray(x, dtype=float)) ** exponent


def fit_powerlaw_plus_const(points, **lm_kwargs) -> tuple[float, float, float, FitResult]:
    """Fit ``y = floor + (scale / x) ** exponent`` with ``floor >= 0``.

    Initial guess: ``floor = 0.9 * min(y)``; scale and exponent from a
    log-log line through ``y - floor``. Returns ``(floor, scale, exponent, fit)``.
    Non-convergence is reported through ``fit.converged``, not raised.
    """
    x, y = _positive_xy(points)
    if len(x) < 4:
        raise ValueError("power law plus constant needs at least 4 points")
    floor0 = 0.9 * float(y.min())
    exponent0, ln_scale0 = 0.5, float(np.log(x.min()))
    try:
        slope, intercept, _ = fit_loglog_line(np.column_stack([x, y - floor0]))
        if slope < -1e-3:
            exponent0 = -slope
            ln_scale0 = intercept / exponent0 * math.log(10)
    except ValueError:
        pass

    def project(theta):
        theta = theta.copy()
        theta[0] = max(theta[0], 0.0)
        theta[2] = min(max(theta[2], 1e-8), 50.0)
        return theta

    theta, r, converged, iterations, gnorm = levenberg_marquardt(
        lambda t: powerlaw_plus_const_residuals(t, x, y),
        [floor0, ln_scale0, exponent0],
        project=project,
        **lm_kwargs,
    )
    floor, scale, exponent = float(theta[0]), math.exp(theta[1]), float(theta[2])
    fit = FitResult(
        params={"floor": floor, "scale": scale, "exponent": exponent},
        residual_rms=float(np.sqrt(np.mean(r**2))),
        n_points=len(x),
        converged=converged,
        iterations=iterations,
        grad_norm=gnorm,
        residuals=tuple(r.tolist()),
    )
    return floor, scale, exponent, fit


# ---------------------------------------------------------------------------
# Global from-scratch surface


def scaling_surface_residuals(theta: np.ndarray, n: np.ndarray, d: np.ndarray, y: np.ndarray):
    """Log-loss residuals and Jacobian for ``theta = (ln n_c, alpha_n, ln d_c, alpha_d)``."""
    ln_nc, alpha_n, ln_dc, alpha_d = theta
    ln_ratio = ln_nc - np.log(n)
    u = np.exp((alpha_n / alpha_d) * ln_ratio)
    v = np.exp(ln_dc - np.log(d))
    s = u + v
    ln_s = np.log(s)
    r = alpha_d * ln_s - np.log(y)
    J = np.column_stack(
        [
            alpha_n * u / s,
            u * ln_ratio / s,
            alpha_d * v / s,
            ln_s - (alpha_n / alpha_d) * u * ln_ratio / s,
        ]
    )
    return r, J


def _surface_points(curves) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, d, y = [], [], []
    for curve in curves:
        for x, loss in zip(curve.x, curve.loss):
            n.append(curve.n_params)
            d.append(x)
            y.append(loss)
    return np.asarray(n, float), np.asarray(d, float), np.asarray(y, float)


def fit_global_fromscratch(curves, **lm_kwargs) -> tuple[ScalingLawParams, FitResult]:
    """Fit the from-scratch loss surface to across-run loss-vs-data curves.

    ``curves`` are LossCurve objects (one per model size). The returned
    FitResult carries per-point log residuals, in the order the points were
    given, so the fit quality can be inspected.
    """
    curves = list(curves)
    n, d, y = _surface_points(curves)
    if len(np.unique(n)) < 3 or len(np.unique(d)) < 3:
        raise ValueError("global fit needs at least 3 model sizes and 3 dataset sizes")
    design = np.column_stack([np.log(n), np.log(d), np.ones_like(n)])
    if np.linalg.matrix_rank(design) < 3:
        raise ValueError("rank-deficient (N, D) grid")
    if np.any(y <= 0):
        raise ValueError("losses must be positive")

    # Start from the asymptotic slices: largest N ~ pure data law,
    # largest D ~ pure model-size law.
    big_n = n == n.max()
    big_d = d == d.max()
    try:
        slope_d, icpt_d, _ = fit_loglog_line(np.column_stack([d[big_n], y[big_n]]))
        alpha_d0 = min(max(-slope_d, 0.02), 1.5)
        ln_dc0 = icpt_d / alpha_d0 * math.log(10)
    except ValueError:
        alpha_d0, ln_dc0 = 0.1, float(np.log(np.median(d)))
    try:
        slope_n, icpt_n, _ = fit_loglog_line(np.column_stack([n[big_d], y[big_d]]))
        alpha_n0 = min(max(-slope_n, 0.02), 1.5)
        ln_nc0 = icpt_n / alpha_n0 * math.log(10)
    except ValueError:
        alpha_n0, ln_nc0 = 0.1, float(np.log(np.median(n)))

    def project(theta):
        theta = theta.copy()
        theta[1] = min(max(theta[1], 1e-6), 2 - 1e-6)
        theta[3] = min(max(theta[3], 1e-6), 2 - 1e-6)
        return theta

    theta, r, converged, iterations, gnorm = levenberg_marquardt(
        lambda t: scaling_surface_residuals(t, n, d, y),
        [ln_nc0, alpha_n0, ln_dc0, alpha_d0],
        project=project,
        **lm_kwargs,
    )
    params = ScalingLawParams(
        n_c=math.exp(theta[0]), alpha_n=float(theta[1]), d_c=math.exp(theta[2]), alpha_d=float(theta[3])
    )
    fit = FitResult(
        params=params.to_dict(),
        residual_rms=float(np.sqrt(np.mean(r**2))),
        n_points=len(y),
        converged=converged,
        iterations=iterations,
        grad_norm=gnorm,
        residuals=tuple(r.tolist()),
    )
    return params, fit


def residual_table(curves, params: ScalingLawParams) -> list[dict]:
    """Per-point comparison of observed and surface-predicted loss."""
    rows = []
    for curve in curves:
        for x, loss in zip(curve.x, curve.loss):
            pred = float(params.loss(curve.n_params, x))
            rows.append(
                {
                    "n_params": curve.n_params,
                    "d": x,
                    "loss": loss,
                    "predicted": pred,
                    "log_residual": math.log(pred) - math.log(loss),
                }
            )
    return rows
