"""Levenberg-Marquardt for small weighted least-squares problems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LMOutcome:
    params: np.ndarray
    chi_sq: float
    jacobian: np.ndarray
    converged: bool
    n_iter: int
    message: str


def levenberg_marquardt(fun, p0, max_iter=500, ftol=1e-12, xtol=1e-10, lam0=1e-3):
    """Minimise sum(r**2) where ``fun(p) -> (r, J)`` gives residuals and dr/dp.

    Marquardt scaling (lambda * diag(J^T J)); the damping is cut by 10 on an
    accepted step and raised by 10 on a rejected one.
    """
    p = np.asarray(p0, dtype=float).copy()
    r, J = fun(p)
    chi = float(r @ r)
    lam = lam0
    stalled = 0
    for it in range(1, max_iter + 1):
        g = J.T @ r
        A = J.T @ J
        d = np.diag(A).copy()
        d[d == 0] = 1.0
        while True:
            M = A + lam * np.diag(d)
            step = np.linalg.lstsq(M, -g, rcond=None)[0]
            p_new = p + step
            r_new, J_new = fun(p_new)
            chi_new = float(r_new @ r_new)
            if np.isfinite(chi_new) and chi_new <= chi:
                break
            lam *= 10.0
            if lam > 1e16:
                return LMOutcome(p, chi, J, chi < 1e-20, it, "damping overflow")
        small_step = np.all(np.abs(step) <= xtol * (np.abs(p) + xtol))
        small_drop = (chi - chi_new) <= ftol * chi
        p, r, J, chi = p_new, r_new, J_new, chi_new
        lam = max(lam / 10.0, 1e-12)
        stalled = stalled + 1 if small_drop else 0
        if chi == 0.0 or (small_step and small_drop) or chi < 1e-28 or stalled >= 4:
            return LMOutcome(p, chi, J, True, it, "converged")
    return LMOutcome(p, chi, J, False, max_iter, "iteration limit")
