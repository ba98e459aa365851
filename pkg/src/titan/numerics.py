"""Shared numerical kernels: spectral norms, thresholding operators, the
scalar exponential prox and finite-difference gradient checks."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError

#: Lower bound applied to every Lipschitz constant / modulus before division.
FLOOR = 1e-12


@dataclass(frozen=True)
class PowerIterOptions:
    tol: float = 1e-8
    max_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("PowerIterOptions.tol must be positive")
        if self.max_iters < 1:
            raise ConfigError("PowerIterOptions.max_iters must be >= 1")


_DEFAULT_POWER = PowerIterOptions()


def spectral_norm_gram(B, side="left", opts=None):
    """Largest eigenvalue of ``B B^T`` (``side='left'``) or ``B^T B``.

    Both equal ``sigma_max(B)**2``; the computation always works on the
    smaller of the two Gram matrices. The iterate is advanced by repeated
    squaring of the (normalized) Gram matrix, i.e. ``z_j = G^(2^j) z_0``,
    and stops once the Rayleigh quotient changes by less than ``tol``
    (relative) and the eigen-residual ``||G z - lambda z||`` is below
    ``tol * lambda``. An all-zero ``B`` returns :data:`FLOOR`.
    """
    if side not in ("left", "right"):
        raise ConfigError(f"side must be 'left' or 'right', got {side!r}")
    opts = opts or _DEFAULT_POWER
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    if B.size == 0:
        raise ConfigError("spectral_norm_gram needs a nonempty matrix")
    scale = float(np.max(np.abs(B)))
    if scale == 0.0 or not np.isfinite(scale):
        return FLOOR
    Bs = B / scale
    G = Bs.T @ Bs if B.shape[1] <= B.shape[0] else Bs @ Bs.T
    rng = np.random.default_rng(opts.seed)
    z0 = rng.standard_normal(G.shape[0])
    z0 /= np.linalg.norm(z0)
    P = G / np.linalg.norm(G)
    lam_prev = None
    lam = 0.0
    for _ in range(opts.max_iters):
        z = P @ z0
        nz = np.linalg.norm(z)
        if nz == 0.0:
            # z0 orthogonal to the dominant subspace after underflow; restart from a row of P
            z = P[np.argmax(np.linalg.norm(P, axis=1))].copy()
            nz = np.linalg.norm(z)
        z /= nz
        w = G @ z
        lam = float(z @ w)
        res = float(np.linalg.norm(w - lam * z))
        if (lam_prev is not None and abs(lam - lam_prev) <= opts.tol * abs(lam)
                and res <= opts.tol * abs(lam)):
            break
        lam_prev = lam
        P = P @ P
        P /= np.linalg.norm(P)
    return max(lam * scale * scale, FLOOR)


def hard_threshold_columns(X, s):
    """Keep the ``s`` largest-magnitude entries of every column of ``X``.

    Ties are resolved in favour of the smaller row index.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ConfigError("hard_threshold_columns expects a matrix")
    if not 1 <= s <= X.shape[0]:
        raise ConfigError(f"s must lie in [1, {X.shape[0]}], got {s}")
    return kernels.hard_threshold_columns_kernel(np.ascontiguousarray(X), int(s))


def soft_threshold_weighted(P, W, tau):
    """Entry-wise ``[|p| - tau * w]_+ * sign(p)``."""
    P = np.asarray(P, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if P.shape != W.shape:
        raise ConfigError(f"shape mismatch: P {P.shape} vs W {W.shape}")
    if (W < 0).any():
        raise ConfigError("weights must be nonnegative")
    return np.maximum(np.abs(P) - tau * W, 0.0) * np.sign(P)


def prox_exponential(v, gam, theta):
    """Global minimizer of ``x -> 0.5 (x - v)^2 + gam (1 - exp(-theta |x|))``.

    Accepts scalars or arrays (broadcast together). On the branch with the
    sign of ``v`` the stationarity equation ``x = |v| - gam theta exp(-theta x)``
    is solved by a safeguarded Newton iteration; the result is compared
    with ``x = 0`` and the zero candidate wins exact ties.
    """
    if np.any(np.asarray(gam) <= 0) or np.any(np.asarray(theta) <= 0):
        raise ConfigError("prox_exponential needs gam > 0 and theta > 0")
    v, gam, theta = np.broadcast_arrays(np.asarray(v, dtype=np.float64),
                                        np.asarray(gam, dtype=np.float64),
                                        np.asarray(theta, dtype=np.float64))
    shape = v.shape
    out = kernels.prox_exponential_kernel(np.ascontiguousarray(v).ravel(),
                                          np.ascontiguousarray(gam).ravel(),
                                          np.ascontiguousarray(theta).ravel())
    if shape == ():
        return float(out[0])
    return out.reshape(shape)


def exponential_penalty(x, gam, theta):
    """``gam * sum(1 - exp(-theta |x|))`` evaluated without cancellation."""
    return float(-gam * np.sum(np.expm1(-theta * np.abs(x))))


def grad_check(fun, grad, x, h=None):
    """Max relative error between ``grad(x)`` and central differences of ``fun``.

    The relative error of an entry is ``|fd - an| / max(1, |an|)``.
    """
    x = np.array(x, dtype=np.float64)
    if h is None:
        h = 1e-6 * (1.0 + float(np.max(np.abs(x))) if x.size else 1.0)
    if not h > 0:
        raise ConfigError("grad_check step must be positive")
    an = np.asarray(grad(x), dtype=np.float64)
    if an.shape != x.shape:
        raise ConfigError(f"gradient shape {an.shape} != point shape {x.shape}")
    flat = x.ravel()
    fd = np.empty(flat.size)
    for e in range(flat.size):
        old = flat[e]
        flat[e] = hi = old + h
        fp = fun(x)
        flat[e] = lo = old - h
        fm = fun(x)
        flat[e] = old
        # divide by the representable step, not the nominal 2h
        fd[e] = (fp - fm) / (hi - lo)
    an = an.ravel()
    return float(np.max(np.abs(fd - an) / np.maximum(1.0, np.abs(an)))) if flat.size else 0.0
