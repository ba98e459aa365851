"""Block surrogate functions and their strong-convexity moduli.

A block-``i`` surrogate ``u_i(x_i, y)`` of ``f`` touches ``f`` at ``x_i = y_i``
and lies above ``x_i -> f(x_i, y_{!=i})`` everywhere. Five families are
provided: :class:`Proximal`, :class:`LipschitzGradient`, :class:`Bregman`,
:class:`Quadratic` and :class:`Composite`.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .numerics import FLOOR

GENERAL = "general"
BLOCK_F_CONVEX = "block_f_convex"
FULLY_CONVEX = "fully_convex"
CONVEXITY_MODES = (GENERAL, BLOCK_F_CONVEX, FULLY_CONVEX)


def _floor(value, what):
    value = float(value)
    if not np.isfinite(value):
        raise ConfigError(f"{what} is not finite: {value}")
    return max(value, FLOOR)


def _dot(a, b):
    return float(np.vdot(a, b))


def _swap(y, i, xi):
    return y.replace(i, xi)


# ---------------------------------------------------------------------------
# Bregman kernels
# ---------------------------------------------------------------------------

class Kernel:
    """A differentiable strongly convex kernel ``phi`` for Bregman surrogates.

    ``modulus`` is the strong-convexity constant of ``phi``. Kernels that can
    invert their gradient implement ``grad_inverse`` so that unconstrained
    mirror steps have a closed form.
    """

    modulus = 1.0

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def grad_inverse(self, g):
        raise NotImplementedError

    def divergence(self, x, v):
        return self.value(x) - self.value(v) - _dot(self.grad(v), x - v)


class SquaredNormKernel(Kernel):
    """``phi(x) = ||x||^2 / 2``; its divergence is the squared distance / 2."""

    modulus = 1.0

    def value(self, x):
        return 0.5 * _dot(x, x)

    def grad(self, x):
        return np.asarray(x, dtype=np.float64).copy()

    def grad_inverse(self, g):
        return np.asarray(g, dtype=np.float64).copy()


class QuadraticKernel(Kernel):
    """``phi(x) = vec(x)^T H vec(x) / 2`` for a symmetric positive definite ``H``."""

    def __init__(self, H):
        H = np.asarray(H, dtype=np.float64)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ConfigError("QuadraticKernel needs a square matrix")
        if not np.allclose(H, H.T, rtol=0, atol=1e-12 * max(1.0, np.abs(H).max())):
            raise ConfigError("QuadraticKernel matrix must be symmetric")
        eig = np.linalg.eigvalsh(H)
        if eig[0] <= 0:
            raise ConfigError("QuadraticKernel matrix must be positive definite")
        self.H = H
        self.modulus = float(eig[0])
        self.norm = float(eig[-1])

    def value(self, x):
        v = np.ravel(x)
        return 0.5 * float(v @ self.H @ v)

    def grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (self.H @ x.ravel()).reshape(x.shape)

    def grad_inverse(self, g):
        g = np.asarray(g, dtype=np.float64)
        return np.linalg.solve(self.H, g.ravel()).reshape(g.shape)


class QuarticKernel(Kernel):
    """``phi(x) = ||x||^4 / 4 + ||x||^2 / 2``, 1-strongly convex.

    Quartic objectives such as ``sum_j ((a_j^T x)^2 - b_j)^2 / 4`` are smooth
    relative to this kernel without having a globally Lipschitz gradient.
    """

    modulus = 1.0

    def value(self, x):
        s = _dot(x, x)
        return 0.25 * s * s + 0.5 * s

    def grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (_dot(x, x) + 1.0) * x

    def grad_inverse(self, g):
        g = np.asarray(g, dtype=np.float64)
        n = float(np.linalg.norm(g))
        if n == 0.0:
            return np.zeros_like(g)
        # t (t^2 + 1) = ||g|| has one real root (Cardano); the two cube roots
        # multiply to -1/3, which avoids the cancelling one
        a = np.cbrt(0.5 * n + np.sqrt(0.25 * n * n + 1.0 / 27.0))
        t = a - 1.0 / (3.0 * a)
        t -= (t * (t * t + 1.0) - n) / (3.0 * t * t + 1.0)
        return g / (t * t + 1.0)


# ---------------------------------------------------------------------------
# surrogate families
# ---------------------------------------------------------------------------

class Surrogate:
    """Common interface; see the concrete families."""

    kappa = 1.0
    mode = GENERAL

    def _validate(self):
        if self.mode not in CONVEXITY_MODES:
            raise ConfigError(f"unknown convexity mode {self.mode!r}")
        if self.kappa < 1.0:
            raise ConfigError(f"kappa must be >= 1, got {self.kappa}")

    def value(self, i, xi, y, p):
        raise NotImplementedError

    def modulus(self, i, y, g_convex):
        raise NotImplementedError

    def error(self, i, xi, y, p):
        """Approximation error ``h_i(x_i, y) = u_i(x_i, y) - f(x_i, y_{!=i})``."""
        return self.value(i, xi, y, p) - float(p.f(_swap(y, i, xi)))

    def _scaled_modulus(self, base, g_convex, what):
        # h_i is (kappa - 1) * base strongly convex; u_i + g_i is kappa * base
        # strongly convex when g_i is convex
        rho = (self.kappa if g_convex else self.kappa - 1.0) * base
        if rho <= 0.0:
            raise ConfigError(
                f"{what}: modulus {rho} <= 0 (kappa = 1 requires a convex g_i)")
        return rho


@dataclass
class Proximal(Surrogate):
    """``u_i(x_i, y) = f(x_i, y_{!=i}) + rho/2 ||x_i - y_i||^2``.

    ``rho`` is a positive number or a callback ``rho(i, y)``. ``solve(i, y, z,
    rho)`` must return ``argmin f(x_i, y_{!=i}) + rho/2 ||x_i - z||^2 + g_i(x_i)``;
    it is only needed when the surrogate drives a solver.
    """

    rho: object = 1.0
    solve: Optional[Callable] = None
    mode: str = GENERAL
    kappa: float = 1.0

    def __post_init__(self):
        self._validate()

    def rho_at(self, i, y):
        rho = self.rho(i, y) if callable(self.rho) else self.rho
        return _floor(rho, "proximal rho")

    def value(self, i, xi, y, p):
        d = xi - y[i]
        return float(p.f(_swap(y, i, xi))) + 0.5 * self.rho_at(i, y) * _dot(d, d)

    def modulus(self, i, y, g_convex):
        return self.rho_at(i, y)


@dataclass
class LipschitzGradient(Surrogate):
    """``u_i = f(y) + <grad_i f(y), x_i - y_i> + kappa L/2 ||x_i - y_i||^2``.

    ``lipschitz(i, y)`` returns the Lipschitz constant of ``grad_i f(., y_{!=i})``.
    """

    kappa: float = 1.0
    lipschitz: Optional[Callable] = None
    mode: str = GENERAL

    def __post_init__(self):
        self._validate()
        if self.lipschitz is None:
            raise ConfigError("LipschitzGradient needs a lipschitz(i, y) callback")

    def L(self, i, y):
        return _floor(self.lipschitz(i, y), "Lipschitz constant")

    def value(self, i, xi, y, p):
        d = xi - y[i]
        return (float(p.f(y)) + _dot(p.grad(i, y), d)
                + 0.5 * self.kappa * self.L(i, y) * _dot(d, d))

    def modulus(self, i, y, g_convex):
        return self._scaled_modulus(self.L(i, y), g_convex, "LipschitzGradient")


@dataclass
class Bregman(Surrogate):
    """``u_i = f(y) + <grad_i f(y), x_i - y_i> + kappa L D_phi(x_i, y_i)``.

    ``relative_L(i, y)`` makes ``L phi - f(., y_{!=i})`` convex. The optional
    ``inner_solver(i, y, c, center, weight)`` returns ``argmin <c, x> + weight
    D_phi(x, center) + g_i(x)``; without it the kernel's ``grad_inverse`` is
    used, which is valid only when ``g_i = 0``.
    """

    kappa: float = 1.0
    kernel: Kernel = field(default_factory=SquaredNormKernel)
    relative_L: Optional[Callable] = None
    inner_solver: Optional[Callable] = None
    mode: str = GENERAL

    def __post_init__(self):
        self._validate()
        if self.relative_L is None:
            raise ConfigError("Bregman needs a relative_L(i, y) callback")
        if self.mode == FULLY_CONVEX:
            raise ConfigError("Bregman surrogates support general/block_f_convex modes only")

    def L(self, i, y):
        return _floor(self.relative_L(i, y), "relative smoothness constant")

    def value(self, i, xi, y, p):
        return (float(p.f(y)) + _dot(p.grad(i, y), xi - y[i])
                + self.kappa * self.L(i, y) * self.kernel.divergence(xi, y[i]))

    def modulus(self, i, y, g_convex):
        return self._scaled_modulus(self.L(i, y) * self.kernel.modulus, g_convex, "Bregman")


@dataclass
class Quadratic(Surrogate):
    """``u_i = f(y) + <grad_i f(y), d> + kappa/2 vec(d)^T H vec(d)``, ``d = x_i - y_i``.

    ``hessian(i, y)`` returns a symmetric positive definite matrix acting on
    ``vec(x_i)`` that dominates the block Hessian of ``f``.
    """

    kappa: float = 1.0
    hessian: Optional[Callable] = None
    inner_solver: Optional[Callable] = None
    mode: str = GENERAL

    def __post_init__(self):
        self._validate()
        if self.hessian is None:
            raise ConfigError("Quadratic needs a hessian(i, y) callback")
        if self.mode == FULLY_CONVEX:
            raise ConfigError("Quadratic surrogates support general/block_f_convex modes only")

    def H(self, i, y):
        H = np.asarray(self.hessian(i, y), dtype=np.float64)
        d = y[i].size
        if H.shape != (d, d):
            raise ConfigError(f"hessian for block {i} must be {(d, d)}, got {H.shape}")
        return H

    def eig_range(self, i, y):
        eig = np.linalg.eigvalsh(self.H(i, y))
        return _floor(eig[0], "lambda_min(H)"), _floor(eig[-1], "||H||")

    def value(self, i, xi, y, p):
        d = np.ravel(xi - y[i])
        return (float(p.f(y)) + _dot(p.grad(i, y), xi - y[i])
                + 0.5 * self.kappa * float(d @ self.H(i, y) @ d))

    def modulus(self, i, y, g_convex):
        return self._scaled_modulus(self.eig_range(i, y)[0], g_convex, "Quadratic")


@dataclass
class Composite(Surrogate):
    """Surrogate for ``f = psi + phi o r`` with ``phi`` block-wise concave.

    ``u_i(x_i, y) = u_i^psi(x_i, y) + phi(r(y)) + <grad_i phi(r(y)), r_i(x_i) - r_i(y_i)>``
    where ``u_i^psi`` is the ``inner`` surrogate of ``psi`` (a :class:`~titan.blocks.Problem`).

    ``phi(rx)`` takes the list of per-block ``r_i`` values; ``phi_grad(i, rx)``
    is its block-``i`` gradient; ``r(i, x_i)`` is the inner map with Lipschitz
    constant ``r_lipschitz``; ``phi_lipschitz`` bounds the gradient of ``phi``.
    ``linearized_step(i, c, z, lam, W)`` returns ``argmin <c, x> + lam/2
    ||x - z||^2 + <W, r_i(x)> + g_i(x)``.
    """

    inner: Optional[Surrogate] = None
    psi: object = None
    phi: Optional[Callable] = None
    phi_grad: Optional[Callable] = None
    r: Optional[Callable] = None
    r_lipschitz: float = 1.0
    phi_lipschitz: float = 0.0
    linearized_step: Optional[Callable] = None
    mode: str = GENERAL

    def __post_init__(self):
        if self.inner is None or self.psi is None:
            raise ConfigError("Composite needs an inner surrogate and the psi problem")
        if self.phi is None or self.phi_grad is None or self.r is None:
            raise ConfigError("Composite needs phi, phi_grad and r")
        self.kappa = self.inner.kappa
        self._validate()

    def r_all(self, y):
        return [self.r(j, y[j]) for j in range(len(y))]

    def weights(self, i, y):
        return self.phi_grad(i, self.r_all(y))

    def linear_part(self, i, xi, y):
        return composite_linearization(self.phi, self.phi_grad, self.r, y, i, xi)

    def value(self, i, xi, y, p):
        return self.inner.value(i, xi, y, self.psi) + self.linear_part(i, xi, y)

    def psi_error(self, i, xi, y):
        return self.inner.error(i, xi, y, self.psi)

    def modulus(self, i, y, g_convex):
        return self.inner.modulus(i, y, g_convex)


# ---------------------------------------------------------------------------
# module-level operations
# ---------------------------------------------------------------------------

def surrogate_value(cfg, i, xi, y, p):
    """``u_i(x_i, y)`` for the configured family."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != y[i].shape:
        raise ConfigError(f"x_i shape {xi.shape} != block shape {y[i].shape}")
    return cfg.value(i, xi, y, p)


def surrogate_modulus(cfg, i, y, g_convex):
    """Strong-convexity modulus ``rho_i^(y)`` used to build step constants."""
    return cfg.modulus(i, y, g_convex)


def composite_linearization(phi, phi_grad, r, y, i, xi):
    """``phi(r(y)) + <grad_i phi(r(y)), r_i(x_i) - r_i(y_i)>``."""
    ry = [r(j, y[j]) for j in range(len(y))]
    return float(phi(ry)) + _dot(phi_grad(i, ry), r(i, xi) - ry[i])


@dataclass
class MajorizationReport:
    violations: int
    max_gap_at_anchor: float
    min_gap: float
    samples: int


def check_majorization(cfg, i, p, y, samples=1000, radius=1.0, seed=0, slack=1e-10):
    """Sample ``x_i`` uniformly in the ball of ``radius`` around ``y_i``.

    Counts points where ``u_i(x_i, y) - f(x_i, y_{!=i}) < -slack`` and reports
    the anchor gap ``|u_i(y_i, y) - f(y)|``.
    """
    if samples < 1:
        raise ConfigError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    yi = y[i]
    d = yi.size
    violations = 0
    min_gap = np.inf
    for _ in range(samples):
        direction = rng.standard_normal(yi.shape)
        nrm = np.linalg.norm(direction)
        if nrm == 0.0:
            continue
        step = radius * rng.random() ** (1.0 / d) / nrm
        xi = yi + step * direction
        gap = cfg.error(i, xi, y, p)
        min_gap = min(min_gap, gap)
        if gap < -slack:
            violations += 1
    anchor = abs(cfg.value(i, yi, y, p) - float(p.f(y)))
    return MajorizationReport(violations, anchor, float(min_gap), samples)
