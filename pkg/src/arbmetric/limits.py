"""Minimum achievable expected errors on the scalar Gaussian channel.

By separability the N-component limit is N times a two-dimensional scalar
integral: the conditional error of the metric-optimal estimate given ``q``,
averaged over the marginal density of ``q``.  The outer integral uses a
trapezoid rule on a node set that resolves both the narrow atom-driven
peak of width ``sqrt(mu)`` and the spread of the nonzero components.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, erfc, expit, ndtr, ndtri

from .errors import DegeneratePriorError, DomainError, PrecisionWarning, UnsupportedPriorError
from .estimators import _expected, _optimal_batch, support_threshold
from .model import Absolute, ErrorMetric, SparseGaussian, SparseWeibull, Squared, SupportXor, Tabulated
from .posterior import posterior_batch

__all__ = [
    "LimitQuery",
    "mmue_limit",
    "mmae_limit",
    "mmsue_limit",
    "mmae_conditional",
    "mmue_monte_carlo",
    "CONVERGENCE_TOL",
]

CONVERGENCE_TOL = 1e-3
MC_CHUNK = 100_000
_SPAN = 10.0


@dataclass(frozen=True)
class LimitQuery:
    prior: object
    mu: float
    metric: ErrorMetric | None = None
    n: int = 1
    outer_points: int = 4001
    inner_points: int = 2001
    monte_carlo_samples: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise DomainError("mu must be positive and finite")
        if self.n < 1:
            raise DomainError("n must be at least 1")
        if self.outer_points < 101 or self.inner_points < 101:
            raise DomainError("quadrature point counts must be at least 101")
        if self.monte_carlo_samples < 1:
            raise DomainError("monte_carlo_samples must be positive")


# ---------------------------------------------------------------------------
# support error
# ---------------------------------------------------------------------------


def mmsue_limit(s, sigma2, mu, n=1):
    """Expected number of support errors of the optimal detector (N components)."""
    if not 0.0 < s < 1.0:
        raise DegeneratePriorError(f"support limit undefined for sparsity {s}")
    if not (sigma2 > 0 and mu > 0):
        raise DomainError("sigma2 and mu must be positive")
    tau = support_threshold(s, sigma2, mu)
    false_alarm = erfc(math.sqrt(tau / (2.0 * mu)))
    missed = erf(math.sqrt(tau / (2.0 * (sigma2 + mu))))
    return float(n * ((1.0 - s) * false_alarm + s * missed))


# ---------------------------------------------------------------------------
# outer quadrature over q
# ---------------------------------------------------------------------------


def _outer_nodes(prior, mu, n):
    sd = math.sqrt(mu)
    parts = [np.linspace(-_SPAN * sd, _SPAN * sd, n)]
    if isinstance(prior, SparseGaussian):
        wide = math.sqrt(prior.variance + mu)
        parts.append(np.linspace(-_SPAN * wide, _SPAN * wide, n))
    elif isinstance(prior, SparseWeibull):
        # slab quantiles put nodes where the heavy-tailed mass sits
        t = expit(np.linspace(-30.0, 30.0, n))
        x = prior.scale * (-np.log1p(-t)) ** (1.0 / prior.shape)
        x = x[np.isfinite(x)]
        parts.append(x)
        parts.append(np.linspace(-_SPAN * sd, x.max() + _SPAN * sd, n))
    elif isinstance(prior, Tabulated):
        per = max(n // max(len(prior.points), 1), 101)
        for p in prior.points:
            parts.append(np.linspace(p - _SPAN * sd, p + _SPAN * sd, per))
    else:
        raise UnsupportedPriorError(f"unsupported prior {type(prior).__name__}")
    return np.unique(np.concatenate(parts))


def _integrate(conditional, prior, mu, n):
    q = _outer_nodes(prior, mu, n)
    inner, density = conditional(q)
    return float(np.trapezoid(inner * density, q))


def _with_convergence_check(conditional, prior, mu, n_outer, label):
    coarse = _integrate(conditional, prior, mu, n_outer)
    fine = _integrate(conditional, prior, mu, 2 * n_outer - 1)
    scale = max(abs(fine), 1e-300)
    if abs(fine - coarse) > CONVERGENCE_TOL * scale:
        warnings.warn(
            f"{label}: doubling the outer quadrature changed the result by "
            f"{abs(fine - coarse) / scale:.2e} relative",
            PrecisionWarning,
            stacklevel=3,
        )
    return fine


# ---------------------------------------------------------------------------
# absolute error
# ---------------------------------------------------------------------------


def _sg_parts(prior, q, mu):
    s, v = prior.sparsity, prior.variance
    var_slab, var_spike = v + mu, mu
    log_slab = math.log(s) - 0.5 * (math.log(2 * math.pi * var_slab) + q * q / var_slab)
    log_spike = (math.log1p(-s) if s < 1 else -np.inf) - 0.5 * (
        math.log(2 * math.pi * var_spike) + q * q / var_spike
    )
    density = np.exp(log_slab) + np.exp(log_spike)
    with np.errstate(invalid="ignore"):
        pi = expit(log_slab - log_spike)
    m = q * v / (v + mu)
    sd = math.sqrt(v * mu / (v + mu))
    return pi, m, sd, density


def _sg_median(pi, m, sd):
    atom = 1.0 - pi
    below = pi * ndtr(-m / sd)
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = m + sd * ndtri(np.clip(0.5 / pi, 0.0, 1.0))
        hi = m + sd * ndtri(np.clip((0.5 - atom) / pi, 0.0, 1.0))
    med = np.where(0.5 <= below, lo, np.where(0.5 <= below + atom, 0.0, hi))
    return np.where(np.isfinite(med), med, 0.0)


def mmae_conditional(prior, q, mu, with_offset_terms=False):
    """E[|X - median| | q] and the marginal density of ``q`` (sparse Gaussian).

    The integral of ``x`` above the median minus the integral below it is
    evaluated in closed form.  With ``with_offset_terms`` the terms
    ``median * (2F(median) - 1)`` that vanish at the median are added back,
    so callers can confirm they cancel.
    """
    if not isinstance(prior, SparseGaussian):
        raise UnsupportedPriorError("closed-form conditional MAE needs a sparse Gaussian prior")
    q = np.asarray(q, dtype=float)
    pi, m, sd, density = _sg_parts(prior, q, mu)
    med = _sg_median(pi, m, sd)
    z = (med - m) / sd
    phi_z = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    inner = pi * (m * (1.0 - 2.0 * ndtr(z)) + 2.0 * sd * phi_z)
    if with_offset_terms:
        cdf = pi * ndtr(z) + (1.0 - pi) * (med >= 0)
        inner = inner + med * (2.0 * cdf - 1.0)
    return inner, density


def mmae_limit(query):
    """N times the minimum expected absolute error of one component."""
    prior, mu = query.prior, query.mu
    if isinstance(prior, SparseGaussian):
        value = _with_convergence_check(
            lambda q: mmae_conditional(prior, q, mu), prior, mu, query.outer_points, "mmae_limit"
        )
        return query.n * value
    return mmue_limit(LimitQuery(**{**query.__dict__, "metric": Absolute()}))


# ---------------------------------------------------------------------------
# generic metric
# ---------------------------------------------------------------------------


def _generic_conditional(metric, prior, mu, grid_points):
    def conditional(q):
        inner = np.empty(q.shape[0])
        density = np.empty(q.shape[0])
        for i in range(0, q.shape[0], 1024):
            batch = posterior_batch(prior, q[i : i + 1024], mu, grid_points=grid_points)
            xhat = _optimal_batch(metric, batch, True)
            inner[i : i + 1024] = _expected(metric, batch, xhat)
            density[i : i + 1024] = np.exp(batch.log_evidence)
        return inner, density

    return conditional


def mmue_limit(query, method="quadrature"):
    """N times the minimum expected value of an additive metric.

    ``method="quadrature"`` integrates the conditional error of the
    metric-optimal estimate over ``q``; ``"monte-carlo"`` averages over
    sampled ``(x, v)`` pairs and returns only the estimate (see
    :func:`mmue_monte_carlo` for the standard error).
    """
    if query.metric is None:
        raise DomainError("mmue_limit needs a metric")
    if method == "monte-carlo":
        return mmue_monte_carlo(query)[0]
    if method != "quadrature":
        raise DomainError(f"unknown method {method!r}")
    conditional = _generic_conditional(query.metric, query.prior, query.mu, query.inner_points)
    value = _with_convergence_check(conditional, query.prior, query.mu, query.outer_points, "mmue_limit")
    return query.n * value


def mmue_monte_carlo(query, samples=None, seed=None):
    """(estimate, standard error) of the N-component limit by simulation.

    Samples are drawn in fixed chunks, each from its own child of
    ``SeedSequence(seed)``, so the result depends only on the seed.
    """
    if query.metric is None:
        raise DomainError("mmue_monte_carlo needs a metric")
    samples = query.monte_carlo_samples if samples is None else int(samples)
    seed = query.seed if seed is None else seed
    n_chunks = -(-samples // MC_CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    total = 0.0
    total_sq = 0.0
    sd = math.sqrt(query.mu)
    metric = query.metric
    # closed-form shortcuts never touch the grid, so keep it minimal
    grid_points = query.inner_points
    if isinstance(query.prior, SparseGaussian) and isinstance(metric, (Squared, Absolute, SupportXor)):
        grid_points = 3
    for k, child in enumerate(children):
        size = min(MC_CHUNK, samples - k * MC_CHUNK)
        rng = np.random.default_rng(child)
        x = query.prior.sample(rng, size)
        q = x + sd * rng.standard_normal(size)
        for i in range(0, size, 2048):
            batch = posterior_batch(query.prior, q[i : i + 2048], query.mu, grid_points=grid_points)
            err = metric(_optimal_batch(metric, batch, True), x[i : i + 2048])
            total += float(err.sum())
            total_sq += float(np.dot(err, err))
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0)
    return query.n * mean, query.n * math.sqrt(var / samples)
