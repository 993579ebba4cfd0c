"""Bayes estimators for additive error metrics on scalar Gaussian channels.

Every estimator works component by component on the posterior of
``x_j`` given ``q_j``.  The generic path minimizes the posterior expected
error ``E[d(c, X) | q]`` over ``c`` with a batched golden-section search,
preceded by a coarse scan when the metric is not known to be convex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegeneratePriorError, DomainError, UnsupportedPriorError
from .model import Absolute, ErrorMetric, SparseGaussian, Squared, SupportXor, parse_metric
from .posterior import (
    MixedPosterior,
    PosteriorBatch,
    ScalarChannelOutput,
    posterior_batch,
    posterior_moments,
    posterior_quantile,
    slab_mean,
)

__all__ = [
    "COARSE_POINTS",
    "REL_TOL",
    "MetricOptimal",
    "LpHeuristic",
    "WienerLinf",
    "SupportThreshold",
    "parse_estimator",
    "apply_estimator",
    "expected_error",
    "metric_optimal_scalar",
    "metric_optimal",
    "lp_estimate",
    "wiener_linf",
    "support_threshold",
    "support_estimate",
]

COARSE_POINTS = 512
COARSE_BINS = 128
REL_TOL = 1e-9
# rows per block in the coarse scan, which builds (rows, 512, bins) arrays
SCAN_ROWS = 48
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# posterior expected error
# ---------------------------------------------------------------------------


def _expected(metric, batch, c):
    """E[d(c, X)] per row; ``c`` has shape (rows,) or (rows, k)."""
    if c.ndim == 1:
        at_zero = metric(c, 0.0)
        cont = np.einsum("ij,ij->i", batch.weights, metric(c[:, None], batch.grid))
        return batch.atom * at_zero + cont
    at_zero = metric(c, 0.0)
    cont = np.einsum("ij,ikj->ik", batch.weights, metric(c[:, :, None], batch.grid[:, None, :]))
    return batch.atom[:, None] * at_zero + cont


def expected_error(metric, post, c):
    """E[d(c, X) | q] for one posterior and a scalar or 1-d array of ``c``."""
    batch = PosteriorBatch.from_single(post)
    c = np.asarray(c, dtype=float)
    vals = _expected(metric, batch, np.atleast_1d(c).ravel()[None, :])[0]
    return float(vals[0]) if c.ndim == 0 else vals


def _log_lp_cost(p, batch, log_w, log_atom, c):
    """log E[|c - X|^p] per row, evaluated without leaving log space."""
    with np.errstate(divide="ignore"):
        la = log_atom + p * np.log(np.abs(c))
        lg = log_w + p * np.log(np.abs(c[:, None] - batch.grid))
    return np.logaddexp(la, logsumexp(lg, axis=1))


# ---------------------------------------------------------------------------
# batched minimization
# ---------------------------------------------------------------------------


def _bracket(batch):
    n = len(batch)
    if batch.grid.shape[1] == 0:
        return np.zeros(n), np.zeros(n)
    lo = np.minimum(batch.grid.min(axis=1), 0.0)
    hi = np.maximum(batch.grid.max(axis=1), 0.0)
    return lo, hi


def _golden(cost, a, b, tol):
    """Vectorized golden-section search; returns the final midpoints."""
    a = a.copy()
    b = b.copy()
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = cost(c), cost(d)
    width = float(np.max((b - a) / np.maximum(tol, 1e-300))) if a.size else 0.0
    n_iter = int(math.ceil(math.log(max(width, 1.0)) / -math.log(_INV_PHI))) + 1
    for _ in range(n_iter):
        left = fc <= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        # reuse the surviving interior point and evaluate the new one
        c_new = np.where(left, b - _INV_PHI * (b - a), d)
        d_new = np.where(left, c, a + _INV_PHI * (b - a))
        probe = np.where(left, c_new, d_new)
        fp = cost(probe)
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
        c, d = c_new, d_new
    return 0.5 * (a + b)


def _bin_starts(g, bins):
    # bin edges mirrored about the centre of the grid
    k = np.arange(bins // 2 + 1)
    left = (k * g) // bins
    edges = np.unique(np.concatenate((left, g - left[::-1])))
    return edges[:-1]


def _rebin(batch, bins=COARSE_BINS):
    """Coarser batch that keeps the mass and the mean inside every bin."""
    g = batch.grid.shape[1]
    if g <= bins:
        return batch
    starts = _bin_starts(g, bins)
    w = np.add.reduceat(batch.weights, starts, axis=1)
    wx = np.add.reduceat(batch.weights * batch.grid, starts, axis=1)
    mid = np.add.reduceat(batch.grid, starts, axis=1) / np.diff(np.append(starts, g))
    with np.errstate(invalid="ignore", divide="ignore"):
        x = np.where(w > 0, wx / w, mid)
    return PosteriorBatch(batch.atom, x, w)


def _symmetric_points(lo, hi, n):
    t = np.linspace(-1.0, 1.0, n)
    t = 0.5 * (t - t[::-1])
    return 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * t


def _coarse_scan(metric, batch, lo, hi):
    """Best of COARSE_POINTS candidates on a rebinned posterior, and the bin width."""
    coarse = _rebin(batch)
    best = np.empty(len(batch))
    for i in range(0, len(batch), SCAN_ROWS):
        sl = slice(i, i + SCAN_ROWS)
        cand = _symmetric_points(lo[sl], hi[sl], COARSE_POINTS)
        vals = _expected(metric, coarse.rows(sl), cand)
        best[sl] = cand[np.arange(cand.shape[0]), vals.argmin(axis=1)]
    if coarse.grid.shape[1] > 1:
        bin_width = np.max(np.diff(coarse.grid, axis=1), axis=1)
    else:
        bin_width = np.zeros(len(batch))
    return best, bin_width


def _generic_argmin(metric, batch):
    """argmin_c E[d(c, X)] for every row of ``batch``.

    Convex metrics get a golden-section search over the whole bracket.
    Otherwise a coarse scan picks the basin and golden section refines
    within a few coarse cells of it; small discrete grids also try every
    node, since metrics with a cusp at zero are concave between nodes.
    """
    n = len(batch)
    if n == 0:
        return np.zeros(0)
    lo, hi = _bracket(batch)
    scale = np.maximum(hi - lo, 1e-300)
    tol = REL_TOL * scale

    def cost(c):
        return _expected(metric, batch, c)

    candidates = [np.zeros(n)]
    if metric.convex:
        a, b = lo, hi
    else:
        coarse_best, bin_width = _coarse_scan(metric, batch, lo, hi)
        reach = np.maximum((hi - lo) / (COARSE_POINTS - 1), 2.0 * bin_width)
        a = np.maximum(lo, coarse_best - reach)
        b = np.minimum(hi, coarse_best + reach)
        candidates.append(coarse_best)
        if batch.grid.shape[1] <= COARSE_BINS:
            candidates.extend(batch.grid.T)
    candidates.insert(1, _golden(cost, a, b, tol))
    values = np.stack([cost(c) for c in candidates])
    # earlier candidates win ties, so exact zero is preferred
    pick = values.argmin(axis=0)
    return np.stack(candidates)[pick, np.arange(n)]


def _lp_argmin(p, batch):
    n = len(batch)
    if n == 0:
        return np.zeros(0)
    lo, hi = _bracket(batch)
    tol = REL_TOL * np.maximum(hi - lo, 1e-300)
    with np.errstate(divide="ignore"):
        log_w = np.log(batch.weights)
        log_atom = np.log(batch.atom)

    def cost(c):
        return _log_lp_cost(p, batch, log_w, log_atom, c)

    x = _golden(cost, lo, hi, tol)
    zero = np.zeros(n)
    return np.where(cost(zero) <= cost(x), zero, x)


# ---------------------------------------------------------------------------
# metric-optimal estimation
# ---------------------------------------------------------------------------


def _support_choice(batch):
    pi = 1.0 - batch.atom
    return np.where(pi > 0.5, slab_mean(batch), 0.0)


def _optimal_batch(metric, batch, shortcuts):
    if shortcuts:
        if isinstance(metric, Squared):
            return posterior_moments(batch)[0]
        if isinstance(metric, Absolute):
            return posterior_quantile(batch, 0.5)
        if isinstance(metric, SupportXor):
            return _support_choice(batch)
    return _generic_argmin(metric, batch)


def metric_optimal_scalar(metric, post, shortcuts=True):
    """Estimate minimizing the posterior expected error of one component.

    With ``shortcuts`` the squared, absolute and support metrics use their
    closed-form minimizers (mean, median, thresholded slab mean); otherwise
    every metric goes through the numerical search.
    """
    if not isinstance(metric, ErrorMetric):
        raise TypeError("metric must be an ErrorMetric")
    return float(_optimal_batch(metric, PosteriorBatch.from_single(post), shortcuts)[0])


def _channel(sco):
    if isinstance(sco, ScalarChannelOutput):
        return sco.q, sco.mu
    return np.asarray(sco.q, dtype=float), float(sco.mu)


def _row_blocks(prior, q, mu, block=2048):
    for i in range(0, q.shape[0], block):
        yield slice(i, i + block), posterior_batch(prior, q[i : i + block], mu)


def metric_optimal(metric, sco, prior, shortcuts=True):
    """Componentwise metric-optimal estimate from scalar-channel outputs."""
    q, mu = _channel(sco)
    out = np.empty(q.shape[0])
    for sl, batch in _row_blocks(prior, q, mu):
        out[sl] = _optimal_batch(metric, batch, shortcuts)
    return out


def lp_estimate(p, sco, prior):
    """Componentwise minimizer of E[|xhat - X|^p | q] for p >= 1."""
    p = float(p)
    if not p >= 1.0:
        raise DomainError(f"lp_estimate needs p >= 1, got {p}")
    q, mu = _channel(sco)
    out = np.empty(q.shape[0])
    for sl, batch in _row_blocks(prior, q, mu):
        out[sl] = _lp_argmin(p, batch)
    return out


def wiener_linf(sco, prior, signal_variance="slab"):
    """Linear shrinkage ``gain * q`` with ``gain = v / (v + mu)``.

    ``signal_variance="slab"`` uses the nonzero-component variance;
    ``"mixture"`` uses the overall prior variance ``s * sigma^2``.
    """
    if not isinstance(prior, SparseGaussian):
        raise UnsupportedPriorError("the Wiener estimator needs a sparse Gaussian prior")
    q, mu = _channel(sco)
    if signal_variance == "slab":
        v = prior.variance
    elif signal_variance == "mixture":
        v = prior.sparsity * prior.variance
    else:
        raise DomainError(f"unknown signal_variance {signal_variance!r}")
    return (v / (v + mu)) * q


def support_threshold(s, sigma2, mu):
    """Squared-observation threshold above which a component is declared nonzero.

    Clamped at 0 when the prior already favours the nonzero hypothesis at
    ``q = 0``.
    """
    if not 0.0 < s < 1.0:
        raise DegeneratePriorError(f"threshold undefined for sparsity {s}")
    snr = sigma2 / mu
    tau = 2.0 * mu * (sigma2 + mu) / sigma2 * (math.log1p(-s) + 0.5 * math.log1p(snr) - math.log(s))
    return max(tau, 0.0)


def support_estimate(sco, prior):
    """(support indicator vector, threshold) of the support-optimal detector."""
    if not isinstance(prior, SparseGaussian):
        raise UnsupportedPriorError("support thresholding needs a sparse Gaussian prior")
    q, mu = _channel(sco)
    tau = support_threshold(prior.sparsity, prior.variance, mu)
    return q * q > tau, tau


# ---------------------------------------------------------------------------
# estimator descriptors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricOptimal:
    metric: ErrorMetric

    @property
    def name(self):
        return f"metric-optimal:{self.metric.name}"


@dataclass(frozen=True)
class LpHeuristic:
    p: float

    def __post_init__(self):
        if not float(self.p) >= 1.0:
            raise DomainError("LpHeuristic needs p >= 1; use MetricOptimal(PowP(p)) below 1")
        object.__setattr__(self, "p", float(self.p))

    @property
    def name(self):
        return f"lp:{self.p:g}"


@dataclass(frozen=True)
class WienerLinf:
    signal_variance: str = "slab"

    @property
    def name(self):
        return "wiener-linf" if self.signal_variance == "slab" else "wiener-linf:mixture"


@dataclass(frozen=True)
class SupportThreshold:
    @property
    def name(self):
        return "support-threshold"


def parse_estimator(text):
    """Estimator descriptor from its configuration string.

    Accepted forms: ``metric-optimal:<metric>`` (metric names as in
    :func:`~arbmetric.model.parse_metric`), ``lp:<p>``, ``wiener-linf``,
    ``wiener-linf:mixture`` and ``support-threshold``.
    """
    key = text.strip().lower()
    if key.startswith("metric-optimal:"):
        return MetricOptimal(parse_metric(key.split(":", 1)[1]))
    if key.startswith("lp:"):
        try:
            p = float(key[3:])
        except ValueError:
            raise DomainError(f"bad exponent in {text!r}") from None
        return LpHeuristic(p)
    if key == "wiener-linf":
        return WienerLinf()
    if key == "wiener-linf:mixture":
        return WienerLinf("mixture")
    if key == "support-threshold":
        return SupportThreshold()
    raise DomainError(f"unknown estimator {text!r}")


def apply_estimator(est, sco, prior):
    """Run an estimator descriptor on scalar-channel outputs."""
    if isinstance(est, str):
        est = parse_estimator(est)
    if isinstance(est, MetricOptimal):
        return metric_optimal(est.metric, sco, prior)
    if isinstance(est, LpHeuristic):
        return lp_estimate(est.p, sco, prior)
    if isinstance(est, WienerLinf):
        return wiener_linf(sco, prior, est.signal_variance)
    if isinstance(est, SupportThreshold):
        support, _ = support_estimate(sco, prior)
        q, mu = _channel(sco)
        return np.where(support, q * prior.variance / (prior.variance + mu), 0.0)
    raise TypeError(f"not an estimator descriptor: {est!r}")
