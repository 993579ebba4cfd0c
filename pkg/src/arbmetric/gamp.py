"""Sum-product GAMP (relaxed belief propagation) for separable channels.

Each iteration alternates an output step on ``p = Phi @ xhat`` (with the
Onsager correction) and an input step that denoises ``r = xhat + tau_r *
Phi.T @ s``.  At convergence ``r`` behaves like ``x + N(0, tau_r)``, which
is the scalar-channel summary ``(q, mu)`` consumed by the estimators.

Matrices with a large common row mean (e.g. {0,1} Bernoulli entries) make
plain GAMP diverge.  With ``mean_removal`` the rank-one mean is split off
and carried by one auxiliary variable tied to ``sum(x)`` through a
noiseless constraint row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, GampDiverged, UnsupportedPriorError
from .model import AWGN, Poisson
from .posterior import GRID_POINTS, _adaptive_nodes, posterior_batch, posterior_moments

__all__ = ["GampOptions", "GampOutput", "gamp_run", "input_denoiser", "output_step"]

POISSON_GRID = 1001
POISSON_RATE_FLOOR = 1e-12
CONSTRAINT_VARIANCE = 1e-10


@dataclass(frozen=True)
class GampOptions:
    max_iterations: int = 20
    damping: float = 0.9
    convergence_tolerance: float = 1e-8
    variance_floor: float = 1e-12
    mean_removal: bool | str = "auto"
    # quadrature nodes for the per-iteration denoiser of grid-based priors;
    # the returned x_mmse always uses the full posterior grid
    denoiser_grid_points: int = 501

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")
        if not 0.0 < self.damping <= 1.0:
            raise DomainError("damping must lie in (0, 1]")
        if self.variance_floor <= 0:
            raise DomainError("variance_floor must be positive")
        if self.mean_removal not in (True, False, "auto"):
            raise DomainError("mean_removal must be True, False or 'auto'")


@dataclass
class GampOutput:
    """Scalar-channel statistics returned by :func:`gamp_run`.

    ``trace`` holds ``(iteration, mean tau_r, residual norm)`` tuples;
    ``mu_components`` is the final per-component ``tau_r`` that ``mu``
    averages.
    """

    q: np.ndarray
    mu: float
    x_mmse: np.ndarray
    trace: list = field(default_factory=list)
    mu_components: np.ndarray | None = None
    iterations: int = 0
    converged: bool = False
    mean_removed: bool = False


def input_denoiser(prior, r, tau, grid_points=GRID_POINTS):
    """Posterior mean and variance of x given ``r = x + N(0, tau)``."""
    scalar = np.ndim(r) == 0 and np.ndim(tau) == 0
    mean, var = posterior_moments(posterior_batch(prior, r, tau, grid_points=grid_points))
    if scalar:
        return float(mean[0]), float(var[0])
    return mean, var


def _poisson_moments(gain, y, p_hat, tau_p):
    sd = np.sqrt(tau_p)
    like_c = y / gain
    like_sd = np.sqrt(np.maximum(y, 1.0)) / gain
    lo = np.minimum(p_hat - 10.0 * sd, like_c - 10.0 * like_sd)
    hi = np.maximum(p_hat + 10.0 * sd, like_c + 10.0 * like_sd)

    def log_f(w):
        rate = gain * np.maximum(w, POISSON_RATE_FLOOR)
        d = w - p_hat[:, None]
        return -0.5 * d * d / tau_p[:, None] + y[:, None] * np.log(rate) - rate

    w, lf, _ = _adaptive_nodes(log_f, lo, hi, POISSON_GRID)
    wt = np.exp(lf - lf.max(axis=1, keepdims=True))
    wt /= wt.sum(axis=1, keepdims=True)
    mean = np.einsum("ij,ij->i", wt, w)
    dev = w - mean[:, None]
    return mean, np.einsum("ij,ij->i", wt, dev * dev)


def output_step(channel, y, p_hat, tau_p):
    """Posterior mean/variance of w given y with prior ``w ~ N(p_hat, tau_p)``."""
    scalar = all(np.ndim(a) == 0 for a in (y, p_hat, tau_p))
    y, p_hat, tau_p = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (y, p_hat, tau_p))
    y, p_hat, tau_p = np.broadcast_arrays(y, p_hat, tau_p)
    if np.any(~(tau_p > 0)):
        raise DomainError("tau_p must be positive")
    if isinstance(channel, AWGN):
        v = channel.noise_variance
        gain = tau_p / (tau_p + v)
        mean = p_hat + gain * (y - p_hat)
        var = tau_p * v / (tau_p + v)
    elif isinstance(channel, Poisson):
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DomainError("Poisson outputs must be nonnegative integers")
        mean, var = _poisson_moments(channel.gain, y, p_hat, tau_p)
    else:
        raise UnsupportedPriorError(f"unsupported channel {type(channel).__name__}")
    if scalar:
        return float(mean[0]), float(var[0])
    return mean, var


def _wants_mean_removal(phi, setting):
    if setting != "auto":
        return bool(setting)
    m, n = phi.shape
    if m < 2 or n < 2:
        return False
    row_mean = phi.mean(axis=1)
    rank_one = math.sqrt(n) * np.linalg.norm(row_mean)
    centered = np.linalg.norm(phi - row_mean[:, None]) / math.sqrt(min(m, n))
    return rank_one > 2.0 * centered


def _augment(phi, y):
    """Return the mean-removed system [[Phi - b 1^T, sqrt(N) b], [1^T/sqrt(N), -1]]."""
    m, n = phi.shape
    b = phi.mean(axis=1)
    big = np.empty((m + 1, n + 1))
    big[:m, :n] = phi - b[:, None]
    big[:m, n] = math.sqrt(n) * b
    big[m, :n] = 1.0 / math.sqrt(n)
    big[m, n] = -1.0
    return big, np.append(y, 0.0)


def _residual(channel, phi, y, x):
    return float(np.linalg.norm(y - channel.expected_output(phi @ x)))


def gamp_run(phi, y, prior, channel, opts=None):
    """Run GAMP and return the scalar-channel statistics ``(q, mu)``.

    Raises :class:`GampDiverged` when the residual grows tenfold over its
    running minimum or the iterates stop being finite.
    """
    opts = opts or GampOptions()
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if phi.ndim != 2 or phi.shape[0] != y.shape[0]:
        raise DimensionError(f"matrix {phi.shape} does not match {y.shape[0]} measurements")
    m, n = phi.shape
    floor = opts.variance_floor
    damp = opts.damping

    removed = _wants_mean_removal(phi, opts.mean_removal)
    if removed:
        A, _ = _augment(phi, y)
        aux_mean = math.sqrt(n) * prior.mean()
        aux_var = max(prior.var(), floor)
    else:
        A = phi
    A2 = A * A
    n_all = A.shape[1]

    xhat = np.full(n_all, prior.mean())
    tau_x = np.full(n_all, max(prior.var(), floor))
    if removed:
        xhat[n] = aux_mean
        tau_x[n] = aux_var
    s_hat = np.zeros(A.shape[0])
    tau_s = None

    def output(p_hat, tau_p):
        if not removed:
            return output_step(channel, y, p_hat, tau_p)
        z, tz = output_step(channel, y, p_hat[:m], tau_p[:m])
        zc, tzc = output_step(AWGN(CONSTRAINT_VARIANCE), 0.0, p_hat[m], tau_p[m])
        return np.append(z, zc), np.append(tz, tzc)

    trace = []
    best_resid = math.inf
    converged = False
    r_hat = xhat.copy()
    tau_r = tau_x.copy()
    it = 0
    for it in range(1, opts.max_iterations + 1):
        tau_p = np.maximum(A2 @ tau_x, floor)
        p_hat = A @ xhat - tau_p * s_hat
        z_hat, tau_z = output(p_hat, tau_p)
        s_new = (z_hat - p_hat) / tau_p
        ts_new = np.maximum((1.0 - tau_z / tau_p) / tau_p, floor)
        if tau_s is None:
            s_hat, tau_s = s_new, ts_new
        else:
            s_hat = damp * s_new + (1.0 - damp) * s_hat
            tau_s = damp * ts_new + (1.0 - damp) * tau_s

        tau_r = np.maximum(1.0 / (A2.T @ tau_s), floor)
        r_hat = xhat + tau_r * (A.T @ s_hat)
        x_new, tx_new = input_denoiser(prior, r_hat[:n], tau_r[:n], opts.denoiser_grid_points)
        if removed:
            # Gaussian prior on the auxiliary mean variable
            g = aux_var / (aux_var + tau_r[n])
            x_new = np.append(x_new, aux_mean + g * (r_hat[n] - aux_mean))
            tx_new = np.append(tx_new, g * tau_r[n])
        x_old = xhat
        xhat = damp * x_new + (1.0 - damp) * xhat
        tau_x = np.maximum(damp * tx_new + (1.0 - damp) * tau_x, floor)

        resid = _residual(channel, phi, y, xhat[:n])
        mean_tau = float(np.mean(tau_r[:n]))
        trace.append((it, mean_tau, resid))
        state = {"q": r_hat[:n].copy(), "mu": mean_tau, "x": xhat[:n].copy()}
        if not (np.all(np.isfinite(xhat)) and np.all(np.isfinite(r_hat)) and math.isfinite(resid)):
            raise GampDiverged(f"non-finite iterate at iteration {it}", trace, state)
        best_resid = min(best_resid, resid)
        if resid > 10.0 * best_resid and resid > 1e-300:
            raise GampDiverged(
                f"residual grew from {best_resid:.3g} to {resid:.3g} at iteration {it}", trace, state
            )
        scale = np.linalg.norm(xhat[:n])
        change = np.linalg.norm(xhat[:n] - x_old[:n])
        if change <= opts.convergence_tolerance * max(scale, 1e-300):
            converged = True
            break

    q = r_hat[:n].copy()
    mu = float(np.mean(tau_r[:n]))
    x_mmse, _ = input_denoiser(prior, q, mu)
    return GampOutput(
        q=q,
        mu=mu,
        x_mmse=np.asarray(x_mmse),
        trace=trace,
        mu_components=tau_r[:n].copy(),
        iterations=it,
        converged=converged,
        mean_removed=removed,
    )
