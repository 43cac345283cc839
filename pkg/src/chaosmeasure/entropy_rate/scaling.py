"""Finite-size extrapolation of entropy-rate estimates.

Fits ``h_N = h_inf + c * ln(N) / N**gamma`` by weighted Levenberg-Marquardt.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class ScalingFit:
    h_inf: float
    c: float
    gamma: float
    stderr_h_inf: float
    residual_norm: float
    iterations: int = 0
    points: list = field(default_factory=list, repr=False)


class ScalingFitError(RuntimeError):
    """Raised when the fit does not converge; carries the best iterate found."""

    def __init__(self, message: str, best: ScalingFit):
        super().__init__(message)
        self.best = best
        self.converged = False


def ansatz(N, h_inf: float, c: float, gamma: float):
    N = np.asarray(N, dtype=np.float64)
    # huge trial gammas overflow to inf; the fit rejects those steps
    with np.errstate(over="ignore"):
        return h_inf + c * np.log(N) / N ** gamma


def _jac(N, c, gamma):
    lnN = np.log(N)
    with np.errstate(over="ignore"):
        base = lnN / N ** gamma
    return np.column_stack([np.ones_like(N), base, -c * lnN * base])


def fit_scaling_ansatz(
    points: Sequence[tuple[float, float, float]],
    max_iter: int = 500,
    tol: float = 1e-14,
) -> ScalingFit:
    """Fit the ansatz to ``(N, value, stderr)`` triples.

    Standard errors weight the residuals; zero or missing ones are replaced
    by the smallest positive stderr present (or 1 if none is). The returned
    ``stderr_h_inf`` uses the covariance scaled by the reduced chi-square,
    as ``scipy.optimize.curve_fit`` does by default.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be (N, value, stderr) triples")
    N, y, sig = pts[:, 0], pts[:, 1], pts[:, 2].copy()
    if np.unique(N).shape[0] < 4:
        raise ValueError("need at least 4 distinct sequence lengths")
    pos = sig[np.isfinite(sig) & (sig > 0)]
    floor = pos.min() if pos.size else 1.0
    sig[~(np.isfinite(sig) & (sig > 0))] = floor
    w = 1.0 / sig

    gamma = 0.5
    nmin = N.min()
    c = (y.max() - y.min()) * nmin ** gamma / np.log(nmin)
    theta = np.array([y.min(), c, gamma])

    def residuals(th):
        return (y - ansatz(N, *th)) * w

    r = residuals(theta)
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = _jac(N, theta[1], theta[2]) * w[:, None]
        A = J.T @ J
        g = J.T @ r
        diag = np.maximum(np.diag(A), 1e-12 * max(np.diag(A).max(), 1e-300))
        improved = False
        while lam < 1e16:
            delta = np.linalg.lstsq(A + lam * np.diag(diag), g, rcond=None)[0]
            trial = theta + delta
            if trial[2] > 0 and np.all(np.isfinite(trial)):
                r_new = residuals(trial)
                cost_new = float(r_new @ r_new)
                if cost_new <= cost:
                    improved = True
                    break
            lam *= 2.0
        if not improved:
            # no downhill step left at any damping: stationary point
            converged = True
            break
        step_small = np.all(np.abs(delta) <= 1e-12 * (np.abs(theta) + 1e-12))
        rel_drop = (cost - cost_new) / max(cost, 1e-300)
        theta, r, cost = trial, r_new, cost_new
        lam = max(lam / 3.0, 1e-15)
        if cost <= 1e-28 or rel_drop < tol or step_small:
            converged = True
            break

    dof = max(len(y) - 3, 1)
    J = _jac(N, theta[1], theta[2]) * w[:, None]
    cov = np.linalg.pinv(J.T @ J) * (cost / dof)
    fit = ScalingFit(
        h_inf=float(theta[0]),
        c=float(theta[1]),
        gamma=float(theta[2]),
        stderr_h_inf=float(np.sqrt(max(cov[0, 0], 0.0))),
        residual_norm=float(np.sqrt(cost)),
        iterations=it,
        points=[tuple(p) for p in pts.tolist()],
    )
    if not converged:
        raise ScalingFitError(f"Levenberg-Marquardt did not converge in {max_iter} iterations", fit)
    return fit
