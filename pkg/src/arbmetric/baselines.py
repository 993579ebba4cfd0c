"""CoSaMP greedy sparse recovery, used as a comparison baseline."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

__all__ = ["CosampOptions", "cosamp"]

RIDGE = 1e-10


@dataclass(frozen=True)
class CosampOptions:
    sparsity: int
    max_iterations: int = 50
    halting_tolerance: float = 1e-6

    def __post_init__(self):
        if self.sparsity < 0:
            raise DomainError("sparsity must be nonnegative")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")


def _least_squares(A, y):
    """Solve min ||A z - y||; fall back to a small ridge when A is rank deficient."""
    sol, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank == A.shape[1]:
        return sol, False
    gram = A.T @ A
    gram[np.diag_indices_from(gram)] += RIDGE * max(np.trace(gram) / max(A.shape[1], 1), 1.0)
    return np.linalg.solve(gram, A.T @ y), True


def _top(v, k):
    if k >= v.size:
        return np.arange(v.size)
    return np.sort(np.argpartition(-np.abs(v), k - 1)[:k])


def cosamp(phi, y, opts, full_output=False):
    """K-sparse estimate of x from ``y = Phi x + noise``.

    Each pass merges the 2K largest entries of the proxy ``Phi.T r`` with
    the current support, solves least squares there and keeps the K largest
    coefficients.  A pass is accepted only if it lowers the residual norm.
    ``full_output`` also returns a dict with the iteration count, residual
    history and whether a regularized solve was needed.
    """
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if phi.ndim != 2 or phi.shape[0] != y.shape[0]:
        raise DimensionError(f"matrix {phi.shape} does not match {y.shape[0]} measurements")
    m, n = phi.shape
    k = opts.sparsity
    if k > n:
        raise DomainError(f"sparsity {k} exceeds signal length {n}")
    if k > m / 2:
        warnings.warn(f"CoSaMP sparsity {k} exceeds M/2 = {m / 2:g}", RuntimeWarning, stacklevel=2)

    x = np.zeros(n)
    info = {"iterations": 0, "residuals": [float(np.linalg.norm(y))], "regularized": False}
    if k == 0 or not np.any(y):
        return (x, info) if full_output else x

    y_norm = np.linalg.norm(y)
    support = np.zeros(0, dtype=int)
    resid = y.copy()
    for it in range(1, opts.max_iterations + 1):
        proxy = phi.T @ resid
        merged = np.union1d(support, _top(proxy, 2 * k))
        coef, ridge = _least_squares(phi[:, merged], y)
        keep = _top(coef, k)
        cand_support = merged[keep]
        cand = np.zeros(n)
        cand[cand_support] = coef[keep]
        cand_resid = y - phi @ cand
        r_norm = float(np.linalg.norm(cand_resid))
        info["iterations"] = it
        if r_norm >= info["residuals"][-1]:
            break
        info["regularized"] |= ridge
        x, support, resid = cand, cand_support, cand_resid
        info["residuals"].append(r_norm)
        if r_norm <= opts.halting_tolerance * y_norm:
            break
    return (x, info) if full_output else x
