"""Hot inner loops, each in a numba flavour and a vectorized numpy flavour.

The public names at the bottom of the module are bound to one flavour
according to :data:`titan._backend.BACKEND`. Both flavours stay importable
(``*_numba`` / ``*_numpy``) so tests and the benchmark can compare them.
Every kernel reduces in a fixed order, so each backend is deterministic.
"""
import numpy as np

from ._backend import BACKEND, njit

_NEWTON_MAX_ITERS = 100


# ---------------------------------------------------------------------------
# residuals and gradients over an observation mask
# ---------------------------------------------------------------------------

@njit
def mask_residual_numba(rows, cols, vals, U, V):
    nnz = rows.shape[0]
    r = U.shape[1]
    out = np.empty(nnz)
    for e in range(nnz):
        i = rows[e]
        j = cols[e]
        acc = 0.0
        for k in range(r):
            acc += U[i, k] * V[k, j]
        out[e] = vals[e] - acc
    return out


def mask_residual_numpy(rows, cols, vals, U, V):
    return vals - np.einsum("ek,ek->e", U[rows], V[:, cols].T)


@njit
def mask_left_product_numba(rows, cols, w, V, m):
    # sum_e w_e * e_{row_e} V[:, col_e]^T, i.e. P(W) V^T for a masked W
    r = V.shape[0]
    out = np.zeros((m, r))
    for e in range(rows.shape[0]):
        i = rows[e]
        j = cols[e]
        we = w[e]
        for k in range(r):
            out[i, k] += we * V[k, j]
    return out


def mask_left_product_numpy(rows, cols, w, V, m):
    r = V.shape[0]
    out = np.empty((m, r))
    for k in range(r):
        out[:, k] = np.bincount(rows, weights=w * V[k, cols], minlength=m)
    return out


@njit
def mask_right_product_numba(rows, cols, w, U, n):
    # U^T P(W) for a masked W
    r = U.shape[1]
    out = np.zeros((r, n))
    for e in range(rows.shape[0]):
        i = rows[e]
        j = cols[e]
        we = w[e]
        for k in range(r):
            out[k, j] += we * U[i, k]
    return out


def mask_right_product_numpy(rows, cols, w, U, n):
    r = U.shape[1]
    out = np.empty((r, n))
    for k in range(r):
        out[k, :] = np.bincount(cols, weights=w * U[rows, k], minlength=n)
    return out


# ---------------------------------------------------------------------------
# per-column hard thresholding
# ---------------------------------------------------------------------------

@njit
def hard_threshold_columns_numba(X, s):
    rows, ncols = X.shape
    out = X.copy()
    for j in range(ncols):
        order = np.argsort(-np.abs(X[:, j]), kind="mergesort")
        for t in range(s, rows):
            out[order[t], j] = 0.0
    return out


def hard_threshold_columns_numpy(X, s):
    out = X.copy()
    if s < X.shape[0]:
        order = np.argsort(-np.abs(X), axis=0, kind="stable")
        np.put_along_axis(out, order[s:], 0.0, axis=0)
    return out


# ---------------------------------------------------------------------------
# prox of x -> gam * (1 - exp(-theta |x|))
# ---------------------------------------------------------------------------

@njit
def _prox_exp_scalar(v, gam, theta):
    a = abs(v)
    if a == 0.0:
        return 0.0
    gt = gam * theta
    gt2 = gt * theta
    # h(x) = q'(x) on x >= 0 is convex; its minimizer is xm
    xm = np.log(gt2) / theta if gt2 > 1.0 else 0.0
    if xm >= a:
        return 0.0
    hmin = xm - a + gt * np.exp(-theta * xm)
    if hmin >= 0.0:
        return 0.0
    # h < 0 at xm and h(a) > 0: Newton from a decreases monotonically to the root
    x = a
    lo = xm
    for _ in range(_NEWTON_MAX_ITERS):
        e = np.exp(-theta * x)
        h = x - a + gt * e
        dh = 1.0 - gt2 * e
        if h <= 0.0 or dh <= 0.0:
            break
        step = h / dh
        x_new = x - step
        if x_new <= lo:
            x_new = 0.5 * (lo + x)
        if x - x_new <= 1e-16 * max(1.0, x):
            x = x_new
            break
        x = x_new
    q_root = 0.5 * (x - a) ** 2 - gam * np.expm1(-theta * x)
    q_zero = 0.5 * a * a
    if q_root < q_zero:
        return x if v > 0.0 else -x
    return 0.0


@njit
def prox_exponential_numba(v, gam, theta):
    out = np.empty(v.shape[0])
    for e in range(v.shape[0]):
        out[e] = _prox_exp_scalar(v[e], gam[e], theta[e])
    return out


def prox_exponential_numpy(v, gam, theta):
    a = np.abs(v)
    gt = gam * theta
    gt2 = gt * theta
    with np.errstate(divide="ignore"):
        xm = np.where(gt2 > 1.0, np.log(np.maximum(gt2, 1.0)) / theta, 0.0)
    hmin = xm - a + gt * np.exp(-theta * xm)
    active = (a > 0.0) & (xm < a) & (hmin < 0.0)
    x = a.copy()
    lo = xm
    todo = active.copy()
    for _ in range(_NEWTON_MAX_ITERS):
        if not todo.any():
            break
        e = np.exp(-theta * x)
        h = x - a + gt * e
        dh = 1.0 - gt2 * e
        stop = todo & ((h <= 0.0) | (dh <= 0.0))
        todo &= ~stop
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = np.where(todo, x - h / dh, x)
        x_new = np.where(todo & (x_new <= lo), 0.5 * (lo + x), x_new)
        done = todo & (x - x_new <= 1e-16 * np.maximum(1.0, x))
        x = np.where(todo, x_new, x)
        todo &= ~done
    q_root = 0.5 * (x - a) ** 2 - gam * np.expm1(-theta * x)
    keep = active & (q_root < 0.5 * a * a)
    return np.where(keep, np.where(v > 0.0, x, -x), 0.0)


if BACKEND == "numba":
    mask_residual = mask_residual_numba
    mask_left_product = mask_left_product_numba
    mask_right_product = mask_right_product_numba
    hard_threshold_columns_kernel = hard_threshold_columns_numba
    prox_exponential_kernel = prox_exponential_numba
else:
    mask_residual = mask_residual_numpy
    mask_left_product = mask_left_product_numpy
    mask_right_product = mask_right_product_numpy
    hard_threshold_columns_kernel = hard_threshold_columns_numpy
    prox_exponential_kernel = prox_exponential_numpy
