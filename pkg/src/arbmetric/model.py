"""Signal priors, output channels, error metrics and total-error evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError, DomainError, MetricError

__all__ = [
    "SparseGaussian",
    "SparseWeibull",
    "Tabulated",
    "AWGN",
    "Poisson",
    "ErrorMetric",
    "Squared",
    "Absolute",
    "PowP",
    "SupportXor",
    "Pointwise",
    "eval_metric",
    "eval_linf",
]


def _check_probability(name, value):
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {value}")


def _check_positive(name, value):
    if not value > 0.0 or not math.isfinite(value):
        raise DomainError(f"{name} must be positive and finite, got {value}")


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SparseGaussian:
    """Spike-and-slab prior: zero w.p. ``1 - sparsity``, else N(0, variance)."""

    sparsity: float
    variance: float = 1.0

    def __post_init__(self):
        _check_probability("sparsity", self.sparsity)
        _check_positive("variance", self.variance)

    def mean(self):
        return 0.0

    def second_moment(self):
        return self.sparsity * self.variance

    def var(self):
        return self.second_moment()

    def sample(self, rng, n):
        mask = rng.random(n) < self.sparsity
        values = rng.standard_normal(n) * math.sqrt(self.variance)
        return np.where(mask, values, 0.0)


@dataclass(frozen=True)
class SparseWeibull:
    """Zero w.p. ``1 - sparsity``, else Weibull with the given scale and shape."""

    sparsity: float
    scale: float = 1.0
    shape: float = 0.5

    def __post_init__(self):
        _check_probability("sparsity", self.sparsity)
        _check_positive("scale", self.scale)
        _check_positive("shape", self.shape)

    def mean(self):
        return self.sparsity * self.scale * math.gamma(1.0 + 1.0 / self.shape)

    def second_moment(self):
        return self.sparsity * self.scale**2 * math.gamma(1.0 + 2.0 / self.shape)

    def var(self):
        return self.second_moment() - self.mean() ** 2

    def sample(self, rng, n):
        mask = rng.random(n) < self.sparsity
        values = self.scale * rng.weibull(self.shape, n)
        return np.where(mask, values, 0.0)


@dataclass(frozen=True)
class Tabulated:
    """Discrete prior: an atom at zero plus weighted nonzero support points.

    Points equal to zero are folded into the atom; the remaining points are
    stored sorted and de-duplicated.
    """

    atom: float
    points: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        wts = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape != wts.shape:
            raise DimensionError("points and weights must have equal length")
        if np.any(wts < 0) or self.atom < 0:
            raise DomainError("tabulated weights must be nonnegative")
        if not np.all(np.isfinite(pts)):
            raise DomainError("support points must be finite")
        total = self.atom + wts.sum()
        if abs(total - 1.0) > 1e-9:
            raise DomainError(f"atom + sum(weights) must equal 1, got {total}")
        atom = self.atom + wts[pts == 0.0].sum()
        keep = (pts != 0.0) & (wts > 0.0)
        uniq, inverse = np.unique(pts[keep], return_inverse=True)
        merged = np.zeros(uniq.shape)
        np.add.at(merged, inverse, wts[keep])
        object.__setattr__(self, "atom", float(atom))
        object.__setattr__(self, "points", tuple(uniq.tolist()))
        object.__setattr__(self, "weights", tuple(merged.tolist()))

    @property
    def sparsity(self):
        return 1.0 - self.atom

    def mean(self):
        return float(np.dot(self.points, self.weights))

    def second_moment(self):
        return float(np.dot(np.square(self.points), self.weights))

    def var(self):
        return self.second_moment() - self.mean() ** 2

    def sample(self, rng, n):
        support = np.concatenate(([0.0], self.points))
        probs = np.concatenate(([self.atom], self.weights))
        return rng.choice(support, size=n, p=probs / probs.sum())


# ---------------------------------------------------------------------------
# Output channels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AWGN:
    noise_variance: float

    def __post_init__(self):
        _check_positive("noise_variance", self.noise_variance)

    def expected_output(self, w):
        return w

    def sample(self, rng, w):
        w = np.asarray(w, dtype=float)
        return w + math.sqrt(self.noise_variance) * rng.standard_normal(w.shape)


@dataclass(frozen=True)
class Poisson:
    """Photon-counting channel y ~ Poisson(gain * w)."""

    gain: float

    def __post_init__(self):
        _check_positive("gain", self.gain)

    def expected_output(self, w):
        return self.gain * w

    def sample(self, rng, w):
        w = np.asarray(w, dtype=float)
        if np.any(w < 0):
            raise DomainError("Poisson channel requires nonnegative inputs")
        return rng.poisson(self.gain * w).astype(float)


# ---------------------------------------------------------------------------
# Error metrics
# ---------------------------------------------------------------------------


class ErrorMetric:
    """Pointwise distance d(xhat, x); the total error is the sum over components.

    Subclasses implement ``__call__`` with numpy broadcasting.  ``convex``
    tells the estimators whether ``E[d(c, X)]`` is convex in ``c``.
    """

    name = "metric"
    convex = False

    def __call__(self, xhat, x):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Squared(ErrorMetric):
    name = "squared"
    convex = True

    def __call__(self, xhat, x):
        return np.square(np.subtract(xhat, x))


class Absolute(ErrorMetric):
    name = "mae"
    convex = True

    def __call__(self, xhat, x):
        return np.abs(np.subtract(xhat, x))


class PowP(ErrorMetric):
    """|xhat - x| ** p; the ``Error_p`` family (p=1 is absolute, p=2 squared)."""

    def __init__(self, p):
        p = float(p)
        _check_positive("p", p)
        self.p = p
        self.name = f"error_{p:g}"
        self.convex = p >= 1.0

    def __call__(self, xhat, x):
        d = np.abs(np.subtract(xhat, x))
        if self.p == 2.0:
            return d * d
        if self.p == 1.0:
            return d
        if self.p == 0.5:
            return np.sqrt(d)
        if self.p == 1.5:
            return d * np.sqrt(d)
        return np.power(d, self.p)

    def __eq__(self, other):
        return isinstance(other, PowP) and other.p == self.p

    def __hash__(self):
        return hash(("pow", self.p))


class SupportXor(ErrorMetric):
    """1 where exactly one of xhat, x is nonzero (exact-zero test)."""

    name = "support"
    convex = False

    def __call__(self, xhat, x):
        return (np.not_equal(xhat, 0.0) ^ np.not_equal(x, 0.0)).astype(float)


@dataclass(eq=False, repr=False)
class Pointwise(ErrorMetric):
    """Wraps a user function ``func(xhat, x)``.

    The function should broadcast over numpy arrays; scalar-only functions
    are wrapped with ``np.vectorize``.  On construction it is probed at
    random points to check ``d(x, x) == 0`` and ``d >= 0``.
    """

    func: Callable
    name: str = "custom"
    convex: bool = False
    check_samples: int = 256
    _vectorized: Callable = field(init=False, default=None)

    def __post_init__(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal(self.check_samples) * 3.0
        b = rng.standard_normal(self.check_samples) * 3.0
        a[:8] = 0.0
        try:
            probe = np.asarray(self.func(a, b), dtype=float)
            if probe.shape != a.shape:
                raise ValueError
            self._vectorized = self.func
        except Exception:
            self._vectorized = np.vectorize(self.func, otypes=[float])
            probe = self._vectorized(a, b)
        same = np.asarray(self._vectorized(a, a), dtype=float)
        if np.any(~np.isfinite(probe)) or np.any(probe < 0):
            raise MetricError(f"metric {self.name!r} is negative or non-finite")
        if np.any(same != 0.0):
            raise MetricError(f"metric {self.name!r} violates d(x, x) = 0")

    def __call__(self, xhat, x):
        out = np.asarray(self._vectorized(xhat, x), dtype=float)
        if np.any(~np.isfinite(out)) or np.any(out < 0):
            raise MetricError(f"metric {self.name!r} returned a negative or NaN value")
        return out


def _paired(estimate, truth):
    xhat = np.asarray(estimate, dtype=float)
    x = np.asarray(truth, dtype=float)
    if xhat.shape != x.shape:
        raise DimensionError(f"length mismatch: {xhat.shape} vs {x.shape}")
    return xhat, x


def eval_metric(metric, estimate, truth):
    """Total additive error sum_j d(estimate_j, truth_j)."""
    xhat, x = _paired(estimate, truth)
    return float(np.sum(metric(xhat, x)))


def eval_linf(estimate, truth):
    """max_j |estimate_j - truth_j| (0 for empty vectors)."""
    xhat, x = _paired(estimate, truth)
    if xhat.size == 0:
        return 0.0
    return float(np.max(np.abs(xhat - x)))


def parse_metric(name):
    """Build a built-in metric from its configuration name.

    Accepted: ``squared``/``mse``, ``mae``/``abs``/``absolute``,
    ``support``, ``error_<p>`` and ``pow:<p>``.  ``linf`` is not additive
    and is handled by :func:`eval_linf` instead.
    """
    key = name.strip().lower()
    if key in ("squared", "mse", "sq"):
        return Squared()
    if key in ("mae", "abs", "absolute"):
        return Absolute()
    if key in ("support", "support-xor", "xor"):
        return SupportXor()
    for prefix in ("error_", "pow:", "error"):
        if key.startswith(prefix):
            try:
                return PowP(float(key[len(prefix):]))
            except ValueError:
                break
    raise DomainError(f"unknown metric {name!r}")
