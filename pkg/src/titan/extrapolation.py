"""Extrapolation operators, step constants and admissible inertia bounds.

Every inertial step subtracts an operator value ``G`` from the block
surrogate and certifies ``||G|| <= A ||x_i^k - x_i^{k-1}||``. Given the
surrogate modulus ``rho`` the pair ``(gamma, eta)`` of the per-update
decrease inequality

    F_before + gamma/2 ||x^k - x^{k-1}||^2 >= F_after + eta/2 ||x^{k+1} - x^k||^2

follows from :func:`step_constants`, and inertia parameters are capped so
that ``gamma`` at one update of a block never exceeds ``C`` times ``eta``
at the previous update of that block.
"""
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .numerics import FLOOR
from .surrogates import CONVEXITY_MODES, FULLY_CONVEX

NO_INERTIA = "none"
HEAVY_BALL = "heavy_ball"
NESTEROV = "nesterov"
HESSIAN_DAMPING = "hessian_damping"
BREGMAN_LINESEARCH = "bregman_linesearch"
KINDS = (NO_INERTIA, HEAVY_BALL, NESTEROV, HESSIAN_DAMPING, BREGMAN_LINESEARCH)

MU_SHIFTED = "shifted"
MU_LITERAL = "literal"


@dataclass
class ExtrapolationConfig:
    """How inertia is generated and capped.

    ``beta`` is either ``None`` (Nesterov weights from the mu schedule), a
    float, or a callable ``beta(k)`` of the per-block update counter. The
    applied ``beta`` is always ``min(schedule, admissible cap)``, then
    multiplied by ``beta_scale`` (values above 1 deliberately break the cap
    and are meant to be paired with ``restart_enabled``).

    ``tau_ratio`` sets ``tau = tau_ratio * beta`` for Nesterov steps and
    ``alpha_ratio`` sets ``alpha = alpha_ratio * kappa * beta`` for Hessian
    damping. ``tau_shrink`` is the backtracking factor of the Bregman line
    search. ``mu_variant='literal'`` switches the Nesterov weight from
    ``(mu_{k-1} - 1)/mu_k`` to ``(mu_k - 1)/mu_k``.
    """

    kind: str = NESTEROV
    C: float = 0.9999 ** 2
    nu: float = 0.5
    restart_enabled: bool = False
    beta: object = None
    beta_scale: float = 1.0
    tau_ratio: float = 1.0
    alpha_ratio: float = 1.0
    tau_shrink: float = 0.5
    mu_variant: str = MU_SHIFTED

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown extrapolation kind {self.kind!r}")
        if not 0.0 < self.C < 1.0:
            raise ConfigError(f"C must lie in (0, 1), got {self.C}")
        if not 0.0 < self.nu < 1.0:
            raise ConfigError(f"nu must lie in (0, 1), got {self.nu}")
        if not self.beta_scale >= 0.0:
            raise ConfigError("beta_scale must be nonnegative")
        if not 0.0 <= self.tau_ratio <= 1.0:
            raise ConfigError("tau_ratio must lie in [0, 1] (tau <= beta)")
        if not 0.0 <= self.alpha_ratio <= 1.0:
            raise ConfigError("alpha_ratio must lie in [0, 1] (alpha <= kappa beta)")
        if not 0.0 < self.tau_shrink < 1.0:
            raise ConfigError("tau_shrink must lie in (0, 1)")
        if self.mu_variant not in (MU_SHIFTED, MU_LITERAL):
            raise ConfigError(f"unknown mu_variant {self.mu_variant!r}")
        if isinstance(self.beta, (int, float)) and self.beta < 0:
            raise ConfigError("beta must be nonnegative")

    def schedule_beta(self, k, mu):
        """Uncapped beta for the ``k``-th update of a block."""
        if self.kind == NO_INERTIA:
            return 0.0
        if self.beta is None:
            return mu.weight
        if callable(self.beta):
            return float(self.beta(k))
        return float(self.beta)


@dataclass(frozen=True)
class StepConstants:
    A: float
    rho: float
    gamma: float
    eta: float


# ---------------------------------------------------------------------------
# Nesterov weights
# ---------------------------------------------------------------------------

def mu_next(mu_prev):
    """``(1 + sqrt(1 + 4 mu_prev^2)) / 2``."""
    if not mu_prev >= 1.0:
        raise ConfigError(f"mu must be >= 1, got {mu_prev}")
    return 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * mu_prev * mu_prev))


def nesterov_weight(mu_prev, mu_cur, variant=MU_SHIFTED):
    if variant == MU_LITERAL:
        return (mu_cur - 1.0) / mu_cur
    return (mu_prev - 1.0) / mu_cur


@dataclass(frozen=True)
class MuSchedule:
    """Per-block Nesterov counter; the first update carries zero weight.

    ``advance`` returns the state of the next update, leaving ``self`` intact.
    """

    variant: str = MU_SHIFTED
    k: int = 0
    mu_prev: float = 1.0
    mu: float = 1.0
    weight: float = 0.0

    def advance(self):
        if self.k == 0:
            return MuSchedule(self.variant, 1, 1.0, 1.0, 0.0)
        mu = mu_next(self.mu)
        return MuSchedule(self.variant, self.k + 1, self.mu, mu,
                          nesterov_weight(self.mu, mu, self.variant))


# ---------------------------------------------------------------------------
# step constants and bounds
# ---------------------------------------------------------------------------

def step_constants(mode, A, rho, nu, L=None, beta=None, tau=None):
    """``(gamma, eta)`` of the per-update decrease inequality.

    ``general`` / ``block_f_convex``: ``gamma = A^2/(nu rho)``, ``eta = (1-nu) rho``.
    ``fully_convex`` (convex block of ``f`` and convex ``g_i`` with a Lipschitz
    surrogate): ``gamma = L (tau^2 + (beta - tau)^2/nu)`` and ``eta = (1-nu) L``,
    or ``eta = L`` when ``beta == tau``.
    """
    if mode not in CONVEXITY_MODES:
        raise ConfigError(f"unknown convexity mode {mode!r}")
    if not 0.0 < nu < 1.0:
        raise ConfigError(f"nu must lie in (0, 1), got {nu}")
    if A < 0:
        raise ConfigError(f"A must be nonnegative, got {A}")
    if mode == FULLY_CONVEX:
        if L is None or not L > 0:
            raise ConfigError(f"fully_convex mode needs L > 0, got {L}")
        beta = 0.0 if beta is None else float(beta)
        tau = beta if tau is None else float(tau)
        gamma = L * (tau * tau + (beta - tau) ** 2 / nu)
        eta = L if beta == tau else (1.0 - nu) * L
        return StepConstants(float(A), float(L), float(gamma), float(eta))
    if not rho > 0:
        raise ConfigError(f"modulus rho must be positive, got {rho}")
    return StepConstants(float(A), float(rho), A * A / (nu * rho), (1.0 - nu) * rho)


def beta_bound(mode, C, nu, kappa, L_prev, L_cur, g_convex, inertia_factor=1.0):
    """Largest beta with ``gamma_cur <= C eta_prev`` for Lipschitz surrogates.

    In ``fully_convex`` mode (with ``tau = beta``) the bound is
    ``sqrt(C L_prev / L_cur)``. Otherwise ``A = kappa L beta * inertia_factor``
    and ``rho = (kappa - 1) L`` (nonconvex ``g``) or ``kappa L`` (convex ``g``),
    which gives ``(rho/(kappa L)) sqrt(C nu (1-nu) L_prev / L_cur) / inertia_factor``.
    """
    L_prev = max(float(L_prev), FLOOR)
    L_cur = max(float(L_cur), FLOOR)
    if mode == FULLY_CONVEX:
        return math.sqrt(C * L_prev / L_cur)
    factor = 1.0 if g_convex else (kappa - 1.0) / kappa
    return factor * math.sqrt(C * nu * (1.0 - nu) * L_prev / L_cur) / inertia_factor


def beta_cap(gamma_per_beta2, eta_prev, C):
    """Largest beta with ``gamma_per_beta2 * beta^2 <= C eta_prev``."""
    if gamma_per_beta2 <= 0.0:
        return math.inf
    return math.sqrt(C * eta_prev / gamma_per_beta2)


# ---------------------------------------------------------------------------
# extrapolation operators
# ---------------------------------------------------------------------------

@dataclass
class InertiaTerm:
    """Operator value ``G`` with its certificate ``A`` and the reduced subproblem.

    Minimizing ``u_i(x, y) - <G, x> + g_i(x)`` for a Lipschitz-type surrogate
    is the same as minimizing ``<c, x> + kappa L/2 ||x - z||^2 + g_i(x)``.
    ``c`` is ``None`` when no gradient callback was supplied.
    """

    G: np.ndarray
    A: float
    z: np.ndarray
    c: Optional[np.ndarray] = None
    xbar: Optional[np.ndarray] = None


def _metric_apply(metric, d):
    if metric is None:
        return d
    return (metric @ d.ravel()).reshape(d.shape)


def build_inertia(kind, xk, xk_prev, kappa=1.0, L=1.0, beta=0.0, tau=None, alpha=None,
                  grad_at: Optional[Callable] = None, block_convex=False, metric=None,
                  certify=True):
    """Extrapolation operator for block ``i`` at update ``k``.

    ``xk`` is the current block value (the anchor ``y_i``) and ``xk_prev``
    its value at the previous update. ``grad_at(v)`` returns the block
    gradient of ``f`` with block ``i`` set to ``v`` and the other blocks at
    the anchor. ``L`` is the block Lipschitz constant (or the proximal
    weight with ``kappa = 1``); ``metric`` replaces the identity in the heavy
    ball term by a symmetric matrix acting on ``vec(x_i)``.

    heavy ball:       ``G = kappa L beta M d``, ``A = kappa L beta ||M||``
    Nesterov:         ``G = grad(y) - grad(xbar) + kappa L beta d``, ``xbar = y + tau d``,
                      ``A = L (tau + kappa beta)``, or ``kappa L beta`` for a convex
                      block with ``beta >= tau``
    Hessian damping:  ``G = alpha (grad(x^{k-1}) - grad(y)) + kappa L beta d``,
                      ``A = L (alpha + kappa beta)``, or ``kappa L beta`` for a
                      convex block with ``alpha <= kappa beta``

    With ``certify=False`` a Nesterov step skips the gradient at the anchor,
    which only ``G`` needs, and returns ``G = None``.
    """
    xk = np.asarray(xk, dtype=np.float64)
    xk_prev = np.asarray(xk_prev, dtype=np.float64)
    if xk.shape != xk_prev.shape:
        raise ConfigError(f"block shapes differ: {xk.shape} vs {xk_prev.shape}")
    d = xk - xk_prev
    zero = np.zeros_like(xk)
    if kind == NO_INERTIA:
        c = None if grad_at is None else np.asarray(grad_at(xk), dtype=np.float64)
        return InertiaTerm(zero, 0.0, xk.copy(), c, xk.copy())
    if beta < 0:
        raise ConfigError("beta must be nonnegative")
    w = kappa * L * beta
    z = xk + beta * d

    if kind == HEAVY_BALL:
        G = w * _metric_apply(metric, d)
        mnorm = 1.0 if metric is None else float(np.linalg.norm(metric, 2))
        c = None if grad_at is None else np.asarray(grad_at(xk), dtype=np.float64)
        return InertiaTerm(G, w * mnorm, z, c, xk.copy())

    if grad_at is None:
        raise ConfigError(f"{kind} extrapolation needs grad_at")
    if metric is not None:
        raise ConfigError(f"{kind} extrapolation supports the identity metric only")

    if kind == NESTEROV:
        tau = beta if tau is None else float(tau)
        if tau < 0:
            raise ConfigError("tau must be nonnegative")
        xbar = xk + tau * d
        g_bar = np.asarray(grad_at(xbar), dtype=np.float64)
        G = None
        if certify:
            G = np.asarray(grad_at(xk), dtype=np.float64) - g_bar + w * d
        A = w if (block_convex and beta >= tau) else L * (tau + kappa * beta)
        return InertiaTerm(G, A, z, g_bar, xbar)

    if kind == HESSIAN_DAMPING:
        alpha = kappa * beta if alpha is None else float(alpha)
        if alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        g_y = np.asarray(grad_at(xk), dtype=np.float64)
        g_prev = np.asarray(grad_at(xk_prev), dtype=np.float64)
        G = alpha * (g_prev - g_y) + w * d
        A = w if (block_convex and alpha <= kappa * beta) else L * (alpha + kappa * beta)
        c = (1.0 + alpha) * g_y - alpha * g_prev
        return InertiaTerm(G, A, z, c, xk.copy())

    raise ConfigError(f"build_inertia does not handle kind {kind!r}; "
                      "use bregman_linesearch_tau for Bregman surrogates")


@dataclass
class LineSearchResult:
    tau: float
    ratio: float
    G: np.ndarray
    xbar: np.ndarray
    steps: int


def bregman_linesearch_tau(kernel, xk, xk_prev, kappa, L, C, rho_k, rho_k1, tau_bar,
                           scale=1.0, max_steps=200):
    """Backtrack ``tau`` over ``1, tau_bar, tau_bar^2, ...`` for a Bregman heavy ball.

    Accepts the first ``tau`` with
    ``scale * kappa L ||grad phi(xbar) - grad phi(x^k)||^2 <= C ||x^k - x^{k-1}||^2 rho_k rho_k1``,
    ``xbar = x^k + tau (x^k - x^{k-1})``. Returns ``tau``, the ratio
    ``||grad phi(xbar) - grad phi(x^k)|| / ||x^k - x^{k-1}||`` and
    ``G = kappa L (grad phi(xbar) - grad phi(x^k))``. A zero displacement
    returns ``tau = 1`` and ``G = 0``.
    """
    if not 0.0 < tau_bar < 1.0:
        raise ConfigError(f"tau_bar must lie in (0, 1), got {tau_bar}")
    xk = np.asarray(xk, dtype=np.float64)
    d = xk - np.asarray(xk_prev, dtype=np.float64)
    dn2 = float(np.vdot(d, d))
    if dn2 == 0.0:
        return LineSearchResult(1.0, 0.0, np.zeros_like(xk), xk.copy(), 0)
    w = kappa * L
    rhs = C * dn2 * rho_k * rho_k1
    gk = kernel.grad(xk)
    tau = 1.0
    for step in range(max_steps + 1):
        xbar = xk + tau * d
        diff = kernel.grad(xbar) - gk
        dd = float(np.vdot(diff, diff))
        if np.isfinite(dd) and scale * w * dd <= rhs:
            return LineSearchResult(tau, math.sqrt(dd / dn2), w * diff, xbar, step)
        tau *= tau_bar
    return LineSearchResult(0.0, 0.0, np.zeros_like(xk), xk.copy(), max_steps + 1)
