import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from titan import (grad_check, hard_threshold_columns, prox_exponential,
                   soft_threshold_weighted, spectral_norm_gram)
from titan.errors import ConfigError
from titan.numerics import FLOOR, PowerIterOptions


# spectral norms

def test_spectral_identity_and_diagonal():
    assert spectral_norm_gram(np.eye(5)) == pytest.approx(1.0, rel=1e-12)
    assert spectral_norm_gram(np.diag([3.0, 2.0, 1.0])) == pytest.approx(9.0, rel=1e-12)


def test_spectral_zero_returns_floor():
    assert spectral_norm_gram(np.zeros((4, 3))) == FLOOR


@pytest.mark.parametrize("side", ["left", "right"])
def test_spectral_random_vs_eigh(side):
    B = np.random.default_rng(0).standard_normal((20, 7))
    G = B @ B.T if side == "left" else B.T @ B
    ref = np.linalg.eigvalsh(G)[-1]
    assert abs(spectral_norm_gram(B, side) - ref) <= 1e-6 * ref


def test_spectral_clustered_spectrum():
    # two nearly equal top singular values stress plain power iteration
    rng = np.random.default_rng(1)
    Q1, _ = np.linalg.qr(rng.standard_normal((30, 30)))
    Q2, _ = np.linalg.qr(rng.standard_normal((10, 10)))
    s = np.array([5.0, 5.0 - 1e-7] + [1.0] * 8)
    B = Q1[:, :10] @ np.diag(s) @ Q2.T
    assert abs(spectral_norm_gram(B) - 25.0) <= 1e-6 * 25.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 25), st.integers(1, 25), st.integers(0, 2**31))
def test_spectral_rayleigh_lower_bound(m, n, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((m, n))
    z = rng.standard_normal(m)
    lam = spectral_norm_gram(B)
    assert lam >= float(np.sum((B.T @ z) ** 2) / (z @ z)) * (1 - 1e-6)


def test_power_options_validation():
    with pytest.raises(ConfigError):
        PowerIterOptions(tol=0)
    with pytest.raises(ConfigError):
        PowerIterOptions(max_iters=0)
    with pytest.raises(ConfigError):
        spectral_norm_gram(np.ones((2, 2)), side="up")


# hard threshold

def test_hard_threshold_examples():
    np.testing.assert_array_equal(hard_threshold_columns([[3], [1], [2]], 2), [[3], [0], [2]])
    np.testing.assert_array_equal(hard_threshold_columns([[2], [2], [1]], 1), [[2], [0], [0]])
    X = np.random.default_rng(0).random((5, 3))
    np.testing.assert_array_equal(hard_threshold_columns(X, 5), X)
    with pytest.raises(ConfigError):
        hard_threshold_columns(X, 0)
    with pytest.raises(ConfigError):
        hard_threshold_columns(X, 6)


def _best_support_projection(col, s):
    # enumerate all supports of size s; keep the first one at minimal distance
    best, best_d = None, math.inf
    for supp in itertools.combinations(range(col.size), s):
        cand = np.zeros_like(col)
        cand[list(supp)] = col[list(supp)]
        d = float(np.sum((cand - col) ** 2))
        if d < best_d:
            best, best_d = cand, d
    return best


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.sampled_from([0.0, 0.5, 1.0, 2.0, 3.0])),
       st.integers(1, 6))
def test_hard_threshold_is_projection_with_tiebreak(X, s):
    out = hard_threshold_columns(X, s)
    assert (np.count_nonzero(out, axis=0) <= s).all()
    for j in range(X.shape[1]):
        np.testing.assert_array_equal(out[:, j], _best_support_projection(X[:, j], s))


# soft threshold

def test_soft_threshold_examples():
    assert soft_threshold_weighted(np.array(1.2), np.array(1.0), 0.5) == pytest.approx(0.7)
    assert soft_threshold_weighted(np.array(-0.3), np.array(1.0), 0.5) == 0.0
    P = np.random.default_rng(0).standard_normal((4, 3))
    np.testing.assert_array_equal(soft_threshold_weighted(P, np.zeros_like(P), 2.0), P)
    with pytest.raises(ConfigError):
        soft_threshold_weighted(P, -np.ones_like(P), 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-3, 3), st.floats(0, 2), st.floats(0.01, 2))
def test_soft_threshold_minimizes(p, w, tau):
    x = float(soft_threshold_weighted(np.array(p), np.array(w), tau))

    def obj(t):
        return 0.5 * (t - p) ** 2 + tau * w * abs(t)
    for t in (x - 1e-3, x + 1e-3, 0.0, p):
        assert obj(x) <= obj(t) + 1e-12


# exponential prox

def _q(x, v, gam, theta):
    return 0.5 * (x - v) ** 2 - gam * np.expm1(-theta * np.abs(x))


def test_prox_examples():
    assert prox_exponential(0.0, 0.3, 2.0) == 0.0
    x = prox_exponential(10.0, 0.1, 5.0)
    assert abs(x - (10.0 - 0.5 * math.exp(-50.0))) <= 1e-8
    with pytest.raises(ConfigError):
        prox_exponential(1.0, 0.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(1e-3, 2), st.floats(0.1, 10))
def test_prox_beats_grid_and_is_stationary(v, gam, theta):
    x = prox_exponential(v, gam, theta)
    ts = np.linspace(-abs(v) - 1, abs(v) + 1, 20001)
    assert _q(x, v, gam, theta) <= np.min(_q(ts, v, gam, theta)) + 1e-10
    if x != 0.0:
        assert abs(x - v + math.copysign(1, x) * gam * theta * math.exp(-theta * abs(x))) <= 1e-10
        assert math.copysign(1, x) == math.copysign(1, v)


def test_prox_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    v = rng.uniform(-3, 3, (4, 5))
    out = prox_exponential(v, 0.4, 3.0)
    assert out.shape == v.shape
    for idx in np.ndindex(v.shape):
        assert out[idx] == prox_exponential(float(v[idx]), 0.4, 3.0)


# gradient check

def test_grad_check_linear_is_exact():
    rng = np.random.default_rng(0)
    c = rng.standard_normal((3, 4))

    def fun(x):
        return float(np.sum(c * x))
    assert grad_check(fun, lambda x: c, np.zeros((3, 4))) <= 1e-10
    # any step is exact for a linear map; a larger one keeps f's rounding small
    assert grad_check(fun, lambda x: c, rng.standard_normal((3, 4)), h=1e-2) <= 1e-10


def test_grad_check_quadratic_surrogate():
    rng = np.random.default_rng(2)
    H = rng.standard_normal((6, 6))
    H = H @ H.T + np.eye(6)
    g0 = rng.standard_normal(6)
    y = rng.standard_normal(6)

    def u(x):
        d = x - y
        return float(g0 @ d + 0.5 * d @ H @ d)
    assert grad_check(u, lambda x: g0 + H @ (x - y), rng.standard_normal(6)) <= 1e-8


def test_grad_check_detects_wrong_gradient():
    assert grad_check(lambda x: float(np.sum(x ** 2)), lambda x: x, np.ones(3)) > 0.5
