"""Damped (Levenberg-Marquardt) least squares with box clamping."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class FitError(RuntimeError):
    """A fit could not proceed (singular normal matrix, bad input, ...)."""


class RankDeficientError(FitError):
    def __init__(self, message, directions):
        super().__init__(message)
        self.directions = directions


@dataclass
class LeastSquaresResult:
    x: np.ndarray
    chi2: float
    residuals: np.ndarray
    jacobian: np.ndarray
    iterations: int
    converged: bool
    message: str
    last_step: float
    chi2_history: list = field(default_factory=list)


def damped_least_squares(
    residuals: Callable[[np.ndarray], np.ndarray],
    x0,
    jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray],
    *,
    lower=None,
    upper=None,
    xscale=None,
    max_iter: int = 200,
    xtol: float = 1e-9,
    ftol: float = 1e-12,
    lam0: float = 1e-3,
    lam_up: float = 10.0,
    lam_down: float = 0.1,
) -> LeastSquaresResult:
    """Minimise ``sum(residuals(x)**2)``.

    ``residuals`` must already be weighted (divided by sigma) and
    ``jacobian(x, r)`` return their derivatives. Each trial step solves
    ``(J^T J + lam diag(J^T J)) dx = -J^T r`` and is clamped into
    ``[lower, upper]``; it is kept only if chi^2 decreases. Convergence is a
    relative step below ``xtol`` (relative to ``max(|x|, xscale)``) or an
    accepted relative chi^2 decrease below ``ftol``.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    lo = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    scale = np.full(n, 1e-12) if xscale is None else np.asarray(xscale, dtype=float)
    x = np.clip(x, lo, hi)

    r = residuals(x)
    chi2 = float(r @ r)
    J = jacobian(x, r)
    history = [chi2]
    lam = lam0
    converged = False
    message = "maximum iterations reached"
    last_step = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        if chi2 == 0.0:
            converged, message, last_step = True, "exact fit", 0.0
            break
        A = J.T @ J
        grad = J.T @ r
        d = np.diag(A).copy()
        d[d <= 0] = max(d.max(initial=0.0), 1.0) * 1e-12
        try:
            step = np.linalg.solve(A + lam * np.diag(d), -grad)
        except np.linalg.LinAlgError:
            lam *= lam_up
            continue
        trial = np.clip(x + step, lo, hi)
        step = trial - x
        last_step = float(np.max(np.abs(step) / np.maximum(np.abs(x), scale)))
        if last_step < xtol:
            converged, message = True, "relative step below tolerance"
            break
        r_new = residuals(trial)
        chi2_new = float(r_new @ r_new)
        if chi2_new < chi2:
            rel = (chi2 - chi2_new) / chi2
            x, r, chi2 = trial, r_new, chi2_new
            J = jacobian(x, r)
            history.append(chi2)
            lam = max(lam * lam_down, 1e-15)
            if rel < ftol:
                converged, message = True, "relative chi2 change below tolerance"
                break
        else:
            lam *= lam_up
            if lam > 1e20:
                message = "damping diverged without reducing chi2"
                break
    return LeastSquaresResult(x, chi2, r, J, it, converged, message, last_step, history)


def parameter_uncertainties(
    jacobian,
    residuals,
    *,
    absolute_sigma: bool = False,
    names: Sequence[str] | None = None,
    rcond: float = 1e-10,
):
    """Standard errors and covariance from a (weighted) Jacobian.

    ``cov = s^2 (J^T J)^-1`` with ``s^2 = RSS / (n - p)``; pass
    ``absolute_sigma=True`` to take ``s^2 = 1`` when the residuals are
    already normalised by known measurement errors.

    Raises:
        RankDeficientError: ``J`` lacks full column rank; the message lists
            the parameter combinations that the data cannot distinguish.
    """
    J = np.atleast_2d(np.asarray(jacobian, dtype=float))
    r = np.asarray(residuals, dtype=float)
    n, p = J.shape
    names = list(names) if names is not None else [f"p{k}" for k in range(p)]
    _, s, vt = np.linalg.svd(J, full_matrices=False)
    if s.size < p or s[-1] <= rcond * s[0]:
        dead = vt[s <= rcond * s[0]] if s.size == p else vt
        terms = [
            " + ".join(f"{c:.3g}*{nm}" for c, nm in zip(row, names) if abs(c) > 1e-3)
            for row in dead
        ]
        raise RankDeficientError(
            "jacobian is rank deficient; dependent directions: " + "; ".join(terms), dead
        )
    cov = (vt.T / s**2) @ vt
    if not absolute_sigma:
        dof = n - p
        if dof < 1:
            raise FitError("need more residuals than parameters")
        cov = cov * float(r @ r) / dof
    cov = 0.5 * (cov + cov.T)
    return np.sqrt(np.clip(np.diag(cov), 0.0, None)), cov
