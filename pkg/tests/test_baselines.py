import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arbmetric.baselines import CosampOptions, cosamp
from arbmetric.errors import DimensionError, DomainError


def sparse_instance(rng, m, n, k):
    phi = rng.standard_normal((m, n)) / np.sqrt(m)
    x = np.zeros(n)
    x[rng.choice(n, k, replace=False)] = rng.standard_normal(k)
    return phi, x


def test_zero_sparsity_returns_zero():
    rng = np.random.default_rng(0)
    phi, x = sparse_instance(rng, 20, 40, 3)
    np.testing.assert_array_equal(cosamp(phi, phi @ x, CosampOptions(0)), np.zeros(40))


def test_identity_exact():
    x = np.zeros(30)
    x[[2, 11, 25]] = [1.5, -0.3, 2.0]
    xhat = cosamp(np.eye(30), x, CosampOptions(3))
    np.testing.assert_array_equal(xhat, x)


def test_random_recovery_rate():
    successes = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        phi, x = sparse_instance(rng, 40, 80, 3)
        xhat = cosamp(phi, phi @ x, CosampOptions(3))
        successes += np.max(np.abs(xhat - x)) < 1e-6
    assert successes >= 95


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 12), noise=st.floats(0.0, 0.5))
def test_k_sparse_and_residuals_nonincreasing(seed, k, noise):
    rng = np.random.default_rng(seed)
    phi, x = sparse_instance(rng, 30, 60, min(k, 10))
    y = phi @ x + noise * rng.standard_normal(30)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        xhat, info = cosamp(phi, y, CosampOptions(k), full_output=True)
    assert np.count_nonzero(xhat) <= k
    res = np.asarray(info["residuals"])
    assert np.all(np.diff(res) <= 0)
    assert res[-1] == pytest.approx(np.linalg.norm(y - phi @ xhat), rel=1e-9, abs=1e-12)


def test_rank_deficient_support_uses_ridge():
    rng = np.random.default_rng(3)
    base = rng.standard_normal((10, 4))
    phi = np.hstack([base, base])  # every column duplicated
    x = np.zeros(8)
    x[[0, 1]] = [1.0, -2.0]
    xhat, info = cosamp(phi, phi @ x, CosampOptions(2), full_output=True)
    assert info["regularized"]
    assert np.all(np.isfinite(xhat))
    assert info["residuals"][-1] <= np.linalg.norm(phi @ x)


def test_warns_above_half_measurements():
    rng = np.random.default_rng(1)
    phi, x = sparse_instance(rng, 10, 30, 2)
    with pytest.warns(RuntimeWarning):
        cosamp(phi, phi @ x, CosampOptions(6))


def test_errors():
    with pytest.raises(DomainError):
        CosampOptions(-1)
    with pytest.raises(DomainError):
        CosampOptions(2, max_iterations=0)
    with pytest.raises(DomainError):
        cosamp(np.eye(3), np.ones(3), CosampOptions(4))
    with pytest.raises(DimensionError):
        cosamp(np.eye(3), np.ones(4), CosampOptions(1))
