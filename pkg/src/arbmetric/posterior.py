"""Posterior of a sparse input seen through a scalar Gaussian channel.

For ``q = x + v`` with ``v ~ N(0, mu)`` the posterior of ``x`` is a point
mass at zero plus a continuous part.  The continuous part is stored on a
grid of quadrature nodes whose weights already include the quadrature rule,
so ``atom + weights.sum() == 1``.  Sparse Gaussian priors have a closed
form; other priors go through an adaptive grid computed in log space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp, ndtr, ndtri

from .errors import DomainError, UnsupportedPriorError
from .model import SparseGaussian, SparseWeibull, Tabulated

GRID_POINTS = 2001
HALF_WIDTH = 8.0
# nodes whose log-integrand falls more than this below the peak carry
# relative mass < 2e-22 and are cut when the window is refined
LOG_DROP = 50.0
MAX_PASSES = 8
ROW_CHUNK = 256
# log(1e-300): Weibull slab is truncated where its density (in u = x**k) drops below this
_LOG_TINY_DENSITY = np.log(1e-300)
_LOG_2PI = np.log(2.0 * np.pi)

__all__ = [
    "ScalarChannelOutput",
    "MixedPosterior",
    "PosteriorBatch",
    "posterior",
    "posterior_batch",
    "posterior_moments",
    "posterior_quantile",
    "nonzero_probability",
    "slab_mean",
]


@dataclass(frozen=True)
class ScalarChannelOutput:
    """Pseudo-observations ``q = x + N(0, mu)`` with a common noise variance."""

    q: np.ndarray
    mu: float

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).ravel()
        if not np.all(np.isfinite(q)):
            raise DomainError("channel observations must be finite")
        if not (self.mu > 0 and np.isfinite(self.mu)):
            raise DomainError("mu must be positive and finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "mu", float(self.mu))


@dataclass(frozen=True)
class MixedPosterior:
    """Posterior of one component: atom at zero plus weighted nodes.

    ``slab_mean``/``slab_var`` hold the exact moments of the continuous part
    when they are known in closed form (sparse Gaussian prior); the
    estimators then use them instead of the quadrature.
    """

    atom_mass_at_zero: float
    grid: np.ndarray
    density_weights: np.ndarray
    slab_mean: float | None = None
    slab_var: float | None = None
    log_evidence: float = np.nan

    @property
    def total_mass(self):
        return self.atom_mass_at_zero + float(np.sum(self.density_weights))


@dataclass(frozen=True)
class PosteriorBatch:
    """Row-stacked posteriors for many components sharing a grid size."""

    atom: np.ndarray
    grid: np.ndarray
    weights: np.ndarray
    slab_mean: np.ndarray | None = None
    slab_var: np.ndarray | None = None
    log_evidence: np.ndarray | None = None

    def __len__(self):
        return self.atom.shape[0]

    def __getitem__(self, j):
        def pick(a):
            return None if a is None else float(a[j])

        return MixedPosterior(
            atom_mass_at_zero=float(self.atom[j]),
            grid=self.grid[j],
            density_weights=self.weights[j],
            slab_mean=pick(self.slab_mean),
            slab_var=pick(self.slab_var),
            log_evidence=np.nan if self.log_evidence is None else float(self.log_evidence[j]),
        )

    def rows(self, sl):
        def take(a):
            return None if a is None else a[sl]

        return PosteriorBatch(
            self.atom[sl],
            self.grid[sl],
            self.weights[sl],
            take(self.slab_mean),
            take(self.slab_var),
            take(self.log_evidence),
        )

    @classmethod
    def stack(cls, parts):
        def cat(name):
            vals = [getattr(p, name) for p in parts]
            if any(v is None for v in vals):
                return None
            return np.concatenate(vals)

        return cls(*(cat(f) for f in ("atom", "grid", "weights", "slab_mean", "slab_var", "log_evidence")))

    @classmethod
    def from_single(cls, post):
        def arr(v):
            return None if v is None else np.array([v], dtype=float)

        return cls(
            np.array([post.atom_mass_at_zero]),
            np.asarray(post.grid, dtype=float)[None, :],
            np.asarray(post.density_weights, dtype=float)[None, :],
            arr(post.slab_mean),
            arr(post.slab_var),
            np.array([post.log_evidence]),
        )


def _gauss_logpdf(x, var):
    return -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * x * x / var


def _check_inputs(q, mu):
    q = np.atleast_1d(np.asarray(q, dtype=float))
    mu = np.asarray(mu, dtype=float)
    if np.any(~(mu > 0)) or np.any(~np.isfinite(mu)):
        raise DomainError("channel noise variance mu must be positive and finite")
    if np.any(~np.isfinite(q)):
        raise DomainError("channel observations must be finite")
    q, mu = np.broadcast_arrays(q, mu)
    return q.ravel().astype(float), mu.ravel().astype(float)


def _mixture_split(log_slab, log_spike):
    # nonzero probability and atom mass, both accurate near 0 and 1
    with np.errstate(invalid="ignore"):
        diff = log_slab - log_spike
    pi = expit(diff)
    atom = expit(-diff)
    return pi, atom, np.logaddexp(log_slab, log_spike)


def _sparse_gaussian_closed(prior, q, mu, n_grid):
    s, v = prior.sparsity, prior.variance
    with np.errstate(divide="ignore"):
        log_s, log_1ms = np.log(s), np.log1p(-s)
    log_slab = log_s + _gauss_logpdf(q, v + mu)
    log_spike = log_1ms + _gauss_logpdf(q, mu)
    pi, atom, log_ev = _mixture_split(log_slab, log_spike)

    m = q * v / (v + mu)
    var = v * mu / (v + mu)
    sd = np.sqrt(var)
    t = np.linspace(-HALF_WIDTH, HALF_WIDTH, n_grid)
    # exactly antisymmetric nodes make the posterior of -q the mirror image of q's
    t = 0.5 * (t - t[::-1])
    base = np.exp(-0.5 * t * t)
    base[0] *= 0.5
    base[-1] *= 0.5
    base /= base.sum()
    grid = m[:, None] + sd[:, None] * t
    # the atom owns x = 0 exactly
    grid[grid == 0.0] = np.finfo(float).tiny
    weights = pi[:, None] * base
    return PosteriorBatch(atom, grid, weights, m, var, log_ev)


def _adaptive_nodes(log_f, lo, hi, n):
    """Midpoint nodes on per-row windows, shrunk onto where the mass is.

    ``log_f`` maps an (rows, n) array of nodes to the log integrand.  A
    window is replaced by the hull of nodes within ``LOG_DROP`` of the row
    maximum (plus one cell of margin) whenever that hull is at least four
    times narrower, and the integrand is re-evaluated.
    """
    t = (np.arange(n) + 0.5) / n
    for attempt in range(MAX_PASSES):
        width = hi - lo
        u = lo[:, None] + width[:, None] * t
        lf = log_f(u)
        peak = lf.max(axis=1)
        keep = lf >= (peak - LOG_DROP)[:, None]
        first = keep.argmax(axis=1)
        last = n - 1 - keep[:, ::-1].argmax(axis=1)
        cell = width / n
        new_lo = np.maximum(lo, lo + cell * (first - 1))
        new_hi = np.minimum(hi, lo + cell * (last + 2))
        shrink = (new_hi - new_lo) < 0.25 * width
        if not shrink.any() or attempt == MAX_PASSES - 1:
            break
        lo = np.where(shrink, new_lo, lo)
        hi = np.where(shrink, new_hi, hi)
    return u, lf, width / n


def _slab_grid(log_slab_u, x_of_u, q, mu, lo, hi, log_s, log_1ms, n_grid):
    def log_f(u):
        x = x_of_u(u)
        r = q[:, None] - x
        return log_slab_u(u) - 0.5 * r * r / mu[:, None] - 0.5 * (_LOG_2PI + np.log(mu))[:, None]

    u, lf, cell = _adaptive_nodes(log_f, lo, hi, n_grid)
    log_cell = np.log(cell)[:, None]
    log_mass = logsumexp(lf + log_cell, axis=1)
    log_slab = log_s + log_mass
    log_spike = log_1ms + _gauss_logpdf(q, mu)
    pi, atom, log_ev = _mixture_split(log_slab, log_spike)
    shape = np.exp(lf - lf.max(axis=1, keepdims=True))
    shape /= shape.sum(axis=1, keepdims=True)
    grid = x_of_u(u)
    grid[grid == 0.0] = np.finfo(float).tiny
    return PosteriorBatch(atom, grid, pi[:, None] * shape, None, None, log_ev)


def _sparse_gaussian_grid(prior, q, mu, n_grid):
    v = prior.variance
    with np.errstate(divide="ignore"):
        log_s, log_1ms = np.log(prior.sparsity), np.log1p(-prior.sparsity)
    half = HALF_WIDTH * np.sqrt(mu)
    lo = np.minimum(q - half, -HALF_WIDTH * np.sqrt(v))
    hi = np.maximum(q + half, HALF_WIDTH * np.sqrt(v))

    def log_slab_u(u):
        return _gauss_logpdf(u, v)

    return _slab_grid(log_slab_u, lambda u: u, q, mu, lo, hi, log_s, log_1ms, n_grid)


def _sparse_weibull_grid(prior, q, mu, n_grid):
    # In u = x**k the Weibull slab is exponential with rate scale**-k,
    # which removes the x**(k-1) singularity at the origin.
    lam, k = prior.scale, prior.shape
    rate = lam**-k
    with np.errstate(divide="ignore"):
        log_s, log_1ms = np.log(prior.sparsity), np.log1p(-prior.sparsity)
    u_max = (-np.log(rate) - _LOG_TINY_DENSITY) / rate
    x_hi = np.maximum(q + HALF_WIDTH * np.sqrt(mu), 0.0)
    hi = np.minimum(np.maximum(x_hi**k, 40.0 / rate), u_max)
    lo = np.zeros_like(q)

    def log_slab_u(u):
        return np.log(rate) - rate * u

    def x_of_u(u):
        return u ** (1.0 / k)

    return _slab_grid(log_slab_u, x_of_u, q, mu, lo, hi, log_s, log_1ms, n_grid)


def _tabulated(prior, q, mu):
    pts = np.asarray(prior.points, dtype=float)
    wts = np.asarray(prior.weights, dtype=float)
    n = q.shape[0]
    if pts.size == 0:
        return PosteriorBatch(
            np.ones(n), np.zeros((n, 0)), np.zeros((n, 0)), None, None, _gauss_logpdf(q, mu)
        )
    with np.errstate(divide="ignore"):
        log_atom = np.log(prior.atom) + _gauss_logpdf(q, mu)
        lw = np.log(wts)[None, :] + _gauss_logpdf(q[:, None] - pts[None, :], mu[:, None])
    log_all = np.concatenate([log_atom[:, None], lw], axis=1)
    log_ev = logsumexp(log_all, axis=1)
    probs = np.exp(log_all - log_ev[:, None])
    return PosteriorBatch(
        probs[:, 0], np.broadcast_to(pts, (n, pts.size)).copy(), probs[:, 1:], None, None, log_ev
    )


def posterior_batch(prior, q, mu, method="auto", grid_points=GRID_POINTS):
    """Posteriors for a vector of observations ``q`` with noise variance ``mu``.

    ``mu`` may be a scalar or a per-component array.  ``method`` is
    ``"auto"`` (closed form when available), ``"closed"`` or ``"grid"``.
    """
    q, mu = _check_inputs(q, mu)
    if method not in ("auto", "closed", "grid"):
        raise ValueError(f"unknown method {method!r}")
    if isinstance(prior, SparseGaussian):
        if method == "grid":
            fn = _sparse_gaussian_grid
        else:
            return _sparse_gaussian_closed(prior, q, mu, grid_points)
    elif isinstance(prior, SparseWeibull):
        if method == "closed":
            raise UnsupportedPriorError("no closed-form posterior for the Weibull prior")
        fn = _sparse_weibull_grid
    elif isinstance(prior, Tabulated):
        return _tabulated(prior, q, mu)
    else:
        raise UnsupportedPriorError(f"unsupported prior {type(prior).__name__}")

    parts = [
        fn(prior, q[i : i + ROW_CHUNK], mu[i : i + ROW_CHUNK], grid_points)
        for i in range(0, q.shape[0], ROW_CHUNK)
    ]
    return parts[0] if len(parts) == 1 else PosteriorBatch.stack(parts)


def posterior(prior, q, mu, method="auto", grid_points=GRID_POINTS):
    """Posterior of one component given its channel observation ``q``."""
    if np.ndim(q) != 0 or np.ndim(mu) != 0:
        raise DomainError("posterior() takes scalar q and mu; use posterior_batch()")
    return posterior_batch(prior, q, mu, method, grid_points)[0]


def _as_batch(post):
    if isinstance(post, MixedPosterior):
        return PosteriorBatch.from_single(post), True
    return post, False


def _unwrap(values, single):
    if single:
        return tuple(float(v[0]) for v in values) if isinstance(values, tuple) else float(values[0])
    return values


def _moments(batch):
    if batch.slab_mean is not None:
        pi = 1.0 - batch.atom
        m = batch.slab_mean
        mean = pi * m
        var = pi * batch.slab_var + pi * batch.atom * m * m
        return mean, var
    w, x = batch.weights, batch.grid
    mean = np.einsum("ij,ij->i", w, x)
    dev = x - mean[:, None]
    var = np.einsum("ij,ij->i", w, dev * dev) + batch.atom * mean * mean
    return mean, np.maximum(var, 0.0)


def posterior_moments(post):
    """(mean, variance) of a posterior or of every row of a batch."""
    batch, single = _as_batch(post)
    return _unwrap(_moments(batch), single)


def nonzero_probability(post):
    batch, single = _as_batch(post)
    return _unwrap(1.0 - batch.atom, single)


def slab_mean(post):
    """Mean of the continuous part alone (0 where it has no mass)."""
    batch, single = _as_batch(post)
    if batch.slab_mean is not None:
        out = batch.slab_mean.copy()
    else:
        mass = batch.weights.sum(axis=1)
        num = np.einsum("ij,ij->i", batch.weights, batch.grid)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(mass > 0, num / mass, 0.0)
    return _unwrap(out, single)


def _quantile_closed(batch, alpha):
    atom = batch.atom
    pi = 1.0 - atom
    m = batch.slab_mean
    sd = np.sqrt(batch.slab_var)
    below = pi * ndtr(-m / sd)  # continuous mass on (-inf, 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        lower = np.clip(alpha / pi, 0.0, 1.0)
        upper = np.clip((alpha - atom) / pi, 0.0, 1.0)
        x_lo = m + sd * ndtri(lower)
        x_hi = m + sd * ndtri(upper)
    out = np.where(alpha <= below, x_lo, np.where(alpha <= below + atom, 0.0, x_hi))
    # rounding can push the inverse CDF to +-inf at the extreme branch edges
    return np.where(np.isfinite(out), out, 0.0)


def _invert_rows(x, cm, target):
    """Linear inverse of the nondecreasing rows ``cm`` sampled at ``x``."""
    n, g = x.shape
    rows = np.arange(n)
    hit = cm >= target[:, None]
    k = np.where(hit.any(axis=1), hit.argmax(axis=1), g - 1)
    km = np.maximum(k - 1, 0)
    c0, c1 = cm[rows, km], cm[rows, k]
    x0, x1 = x[rows, km], x[rows, k]
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.clip((target - c0) / (c1 - c0), 0.0, 1.0)
    frac = np.where(c1 > c0, frac, 1.0)
    return np.where(k == 0, x[:, 0], x0 + frac * (x1 - x0))


def _quantile_grid(batch, alpha):
    # the continuous CDF is interpolated linearly between cell centres,
    # where it equals the mass to the left plus half the node's own weight
    x, w, atom = batch.grid, batch.weights, batch.atom
    n, g = x.shape
    if g == 0:
        return np.zeros(n)
    cm = np.cumsum(w, axis=1) - 0.5 * w
    rows = np.arange(n)
    j = (x < 0).sum(axis=1)
    jl, jr = np.clip(j - 1, 0, g - 1), np.clip(j, 0, g - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = -x[rows, jl] / (x[rows, jr] - x[rows, jl])
    mid = cm[rows, jl] + np.nan_to_num(t) * (cm[rows, jr] - cm[rows, jl])
    below = np.where(j == 0, 0.0, np.where(j == g, w.sum(axis=1), mid))
    neg = np.minimum(_invert_rows(x, cm, np.full(n, alpha)), 0.0)
    pos = np.maximum(_invert_rows(x, cm, alpha - atom), 0.0)
    return np.where(alpha <= below, neg, np.where(alpha <= below + atom, 0.0, pos))


def posterior_quantile(post, alpha):
    """Smallest x with CDF(x) >= alpha; exactly 0 when the atom straddles alpha."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    batch, single = _as_batch(post)
    if batch.slab_mean is not None:
        out = _quantile_closed(batch, alpha)
    else:
        out = _quantile_grid(batch, alpha)
    return _unwrap(out, single)
