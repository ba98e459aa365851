"""Sparse nonnegative matrix factorization.

    min_{U, V} 1/2 ||M - U V||_F^2   s.t.  U >= 0, V >= 0, ||U[:, j]||_0 <= s

Block ``U`` uses a Lipschitz gradient surrogate with ``kappa > 1`` (its
constraint set is nonconvex), block ``V`` the plain Lipschitz surrogate.
Both take Nesterov inertia capped by the admissible bound.
"""
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..blocks import BlockVector, Problem
from ..errors import ConfigError
from ..extrapolation import NESTEROV, NO_INERTIA, ExtrapolationConfig
from ..numerics import FLOOR, hard_threshold_columns, spectral_norm_gram
from ..solver import Schedule, SolverOptions, titan_run
from ..surrogates import BLOCK_F_CONVEX, FULLY_CONVEX, LipschitzGradient

VARIANTS = ("titan", "palm")


@dataclass
class SparseNmfInstance:
    M: np.ndarray
    r: int
    s: Optional[int] = None
    kappa: float = 1.0001
    C: float = 0.9999 ** 2
    nu: float = 0.5

    def __post_init__(self):
        self.M = np.ascontiguousarray(self.M, dtype=np.float64)
        if self.M.ndim != 2:
            raise ConfigError("M must be a matrix")
        if not np.isfinite(self.M).all() or (self.M < 0).any():
            raise ConfigError("M must be finite and nonnegative")
        if self.r < 1:
            raise ConfigError("rank r must be >= 1")
        if self.s is None:
            self.s = math.ceil(0.25 * self.r)
        if not 1 <= self.s <= self.M.shape[0]:
            raise ConfigError(f"sparsity s must lie in [1, {self.M.shape[0]}]")
        if not self.kappa > 1.0:
            raise ConfigError("kappa must exceed 1 for the sparsity-constrained block")


def gram_norm(B, side, method):
    """``||B B^T||`` (``side='left'``) or ``||B^T B||`` by power method or ``eigh``."""
    if method == "power":
        return spectral_norm_gram(B, side=side)
    if method == "eigh":
        G = B @ B.T if side == "left" else B.T @ B
        return max(float(np.linalg.eigvalsh(G)[-1]), FLOOR)
    raise ConfigError(f"unknown spectral method {method!r}")


class SparseNmfProblem(Problem):
    """Objective and block oracles with products cached per fixed partner block.

    While ``V`` is unchanged the ``U`` gradient reuses ``V V^T`` and ``M V^T``
    (and vice versa), so repeated updates of one block cost ``O(m r^2)``.
    """

    m = 2

    def __init__(self, M, s, spectral_method="power"):
        self.M = M
        self.s = int(s)
        self.spectral_method = spectral_method
        self._v_key = None
        self._u_key = None

    def _v_cache(self, V):
        if self._v_key is not V:
            self._v_key = V
            self._VVt = V @ V.T
            self._MVt = self.M @ V.T
            self._L1 = gram_norm(V, "left", self.spectral_method)
        return self._VVt, self._MVt, self._L1

    def _u_cache(self, U):
        if self._u_key is not U:
            self._u_key = U
            self._UtU = U.T @ U
            self._UtM = U.T @ self.M
            self._L2 = gram_norm(U, "right", self.spectral_method)
        return self._UtU, self._UtM, self._L2

    def f(self, x):
        U, V = x
        R = self.M - U @ V
        return 0.5 * float(np.vdot(R, R))

    def grad(self, i, x):
        U, V = x
        if i == 0:
            VVt, MVt, _ = self._v_cache(V)
            return U @ VVt - MVt
        UtU, UtM, _ = self._u_cache(U)
        return UtU @ V - UtM

    def lipschitz(self, i, x):
        return self._v_cache(x[1])[2] if i == 0 else self._u_cache(x[0])[2]

    def g(self, i, xi):
        if (xi < 0).any():
            return math.inf
        if i == 0 and (np.count_nonzero(xi, axis=0) > self.s).any():
            return math.inf
        return 0.0

    def prox(self, i, c, z, lam):
        P = np.maximum(z - c / lam, 0.0)
        return hard_threshold_columns(P, self.s) if i == 0 else P

    def g_convex(self, i):
        return i == 1

    def g_is_zero(self, i):
        return False

    def relative_error(self, x):
        return math.sqrt(2.0 * self.f(x)) / float(np.linalg.norm(self.M))


def nmf_setup(inst, variant="titan", restart=False, spectral_method="power"):
    """Problem, surrogates and extrapolation configs for one run."""
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}")
    p = SparseNmfProblem(inst.M, inst.s, spectral_method)
    cfgs = [LipschitzGradient(inst.kappa, p.lipschitz, mode=BLOCK_F_CONVEX),
            LipschitzGradient(1.0, p.lipschitz, mode=FULLY_CONVEX)]
    kind = NESTEROV if variant == "titan" else NO_INERTIA
    ex = ExtrapolationConfig(kind=kind, C=inst.C, nu=inst.nu, restart_enabled=restart)
    return p, cfgs, ex


def nmf_initial_point(inst, seed):
    """Uniform ``[0, 1)`` factors, ``U`` projected onto the sparsity set."""
    rng = np.random.default_rng(seed)
    m, n = inst.M.shape
    U = hard_threshold_columns(rng.random((m, inst.r)), inst.s)
    V = rng.random((inst.r, n))
    return BlockVector([U, V])


def sparse_nmf_run(inst, opts=None, seed=0, variant="titan", repeats=(1, 1), restart=False,
                   spectral_method="power", ex=None, x0=None):
    """Run TITAN (or its inertia-free PALM counterpart) on a sparse NMF instance.

    ``repeats=(p, q)`` updates ``U`` ``p`` times and then ``V`` ``q`` times per
    outer iteration. ``ex`` overrides the extrapolation config. Returns
    ``(U, V, log)``.
    """
    p, cfgs, ex_default = nmf_setup(inst, variant, restart, spectral_method)
    ex = ex or ex_default
    rp, rq = int(repeats[0]), int(repeats[1])
    if rp < 1 or rq < 1:
        raise ConfigError("repeat counts must be >= 1")
    if (rp, rq) == (1, 1):
        schedule = Schedule.cyclic(2)
    else:
        schedule = Schedule.essentially_cyclic((0,) * rp + (1,) * rq, rp + rq, m=2)
    x0 = nmf_initial_point(inst, seed) if x0 is None else x0
    opts = opts or SolverOptions()
    user_cb = opts.callback

    def record_error(k, x, log):
        log.iterations[-1].metric = p.relative_error(x)
        if user_cb is not None:
            user_cb(k, x, log)
    x, log = titan_run(p, cfgs, ex, schedule, replace(opts, callback=record_error), x0)
    return x[0], x[1], log
