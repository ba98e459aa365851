"""Matrix completion with an exponential sparsity regularizer.

    min_{U, V} 1/2 ||P(A - U V)||^2
               + lam (sum_ij (1 - exp(-theta |u_ij|)) + sum_ij (1 - exp(-theta |v_ij|)))

``P`` keeps the observed (training) entries. The regularizer is a concave
function of ``|x|``; linearizing it at the current iterate turns every block
subproblem into a weighted soft-thresholding step.

Variants: ``titan_extra`` (Nesterov inertia), ``titan_no`` (no inertia) and
``palm`` (proximal gradient with the exact exponential prox, a standalone loop).
"""
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .. import kernels
from ..blocks import BlockVector, ObservationMask, Problem
from ..errors import ConfigError, DataError, NumericalError
from ..extrapolation import NESTEROV, NO_INERTIA, ExtrapolationConfig
from ..numerics import exponential_penalty, prox_exponential, soft_threshold_weighted
from ..solver import IterationRecord, RunLog, Schedule, SolverOptions, titan_run
from ..surrogates import FULLY_CONVEX, Composite, LipschitzGradient
from .nmf import gram_norm

VARIANTS = ("titan_extra", "titan_no", "palm")


@dataclass
class McpInstance:
    train: ObservationMask
    test: ObservationMask
    r: int
    lam: float = 0.1
    theta: float = 5.0
    C: float = 0.9999 ** 2

    def __post_init__(self):
        if self.r < 1:
            raise ConfigError("rank r must be >= 1")
        if self.lam < 0 or not self.theta > 0:
            raise ConfigError("need lam >= 0 and theta > 0")
        if self.train.shape != self.test.shape:
            raise ConfigError("train and test masks must share the matrix shape")
        if self.train.nnz == 0:
            raise DataError("training mask is empty")
        if np.intersect1d(self.train.keys(), self.test.keys()).size:
            raise DataError("train and test masks overlap")


class _Psi(Problem):
    """Masked least squares ``1/2 ||P(A - U V)||^2``."""

    m = 2

    def __init__(self, mask, spectral_method):
        self.mask = mask
        self.spectral_method = spectral_method
        self._keys = [None, None]
        self._L = [None, None]

    def f(self, x):
        res = self.mask.residual(x[0], x[1])
        return 0.5 * float(res @ res)

    def grad(self, i, x):
        U, V = x
        mk = self.mask
        res = mk.residual(U, V)
        if i == 0:
            return -kernels.mask_left_product(mk.rows, mk.cols, res, V, mk.shape[0])
        return -kernels.mask_right_product(mk.rows, mk.cols, res, U, mk.shape[1])

    def lipschitz(self, i, x):
        # ||V V^T|| for U, ||U^T U|| for V, cached on the partner block
        partner = x[1] if i == 0 else x[0]
        if self._keys[i] is not partner:
            self._keys[i] = partner
            self._L[i] = gram_norm(partner, "left" if i == 0 else "right",
                                   self.spectral_method)
        return self._L[i]


class McpProblem(Problem):
    """Full objective ``psi + phi(r(x))`` with no extra ``g``."""

    m = 2

    def __init__(self, inst, spectral_method="power"):
        self.inst = inst
        self.psi = _Psi(inst.train, spectral_method)

    def penalty(self, xi):
        return exponential_penalty(xi, self.inst.lam, self.inst.theta)

    def f(self, x):
        return self.psi.f(x) + self.penalty(x[0]) + self.penalty(x[1])

    def grad(self, i, x):
        raise NotImplementedError("the regularizer is not differentiable at 0")

    # composite pieces
    def phi(self, rx):
        lam, theta = self.inst.lam, self.inst.theta
        return float(sum(-lam * np.sum(np.expm1(-theta * r)) for r in rx))

    def phi_grad(self, i, rx):
        return self.inst.lam * self.inst.theta * np.exp(-self.inst.theta * rx[i])

    @staticmethod
    def r(i, xi):
        return np.abs(xi)

    @staticmethod
    def linearized_step(i, c, z, lam, W):
        return soft_threshold_weighted(z - c / lam, W, 1.0 / lam)


def mcp_setup(inst, variant="titan_extra", spectral_method="power"):
    if variant not in VARIANTS[:2]:
        raise ConfigError(f"solver-driven variants are {VARIANTS[:2]}, got {variant!r}")
    p = McpProblem(inst, spectral_method)
    inner = LipschitzGradient(1.0, p.psi.lipschitz, mode=FULLY_CONVEX)
    cfg = Composite(inner=inner, psi=p.psi, phi=p.phi, phi_grad=p.phi_grad, r=p.r,
                    r_lipschitz=1.0, phi_lipschitz=inst.lam * inst.theta ** 2,
                    linearized_step=p.linearized_step, mode=FULLY_CONVEX)
    kind = NESTEROV if variant == "titan_extra" else NO_INERTIA
    ex = ExtrapolationConfig(kind=kind, C=inst.C)
    return p, [cfg, cfg], ex


def mcp_initial_point(train, r, seed=0, power_iters=None, tol=1e-6):
    """Randomized range finder for ``P(A)`` followed by a small SVD.

    ``U0`` is an orthonormal ``m x r`` basis approximating the range of
    ``P(A)`` (subspace iteration, ``r`` passes by default, stopped early when
    the projection residual changes by less than ``tol`` relative). ``V0`` is
    the right singular factor ``W^T`` of ``U0^T P(A) = Z S W^T``.
    """
    m, n = train.shape
    if r > min(m, n):
        raise ConfigError(f"rank {r} exceeds min(m, n) = {min(m, n)}")
    rows, cols, vals = train.rows, train.cols, train.vals
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((r, n))

    def apply(B):  # P(A) B^T for B of shape r x n
        return kernels.mask_left_product(rows, cols, vals, B, m)

    def apply_t(Q):  # Q^T P(A)
        return kernels.mask_right_product(rows, cols, vals, Q, n)

    Q, _ = np.linalg.qr(apply(omega))
    norm_a = math.sqrt(float(vals @ vals))
    prev = None
    for _ in range(r if power_iters is None else power_iters):
        Q, _ = np.linalg.qr(apply(apply_t(Q)))
        resid = math.sqrt(max(norm_a ** 2 - float(np.sum(apply_t(Q) ** 2)), 0.0)) / norm_a
        if prev is not None and abs(prev - resid) <= tol * max(resid, 1e-300):
            break
        prev = resid
    B = apply_t(Q)
    _, _, Wt = np.linalg.svd(B, full_matrices=False)
    return BlockVector([Q, Wt])


def rmse(mask, U, V):
    """Root mean squared error of ``U V`` on the entries of ``mask``."""
    if mask.nnz == 0:
        raise DataError("RMSE is undefined on an empty test set")
    res = mask.residual(U, V)
    return math.sqrt(float(res @ res) / mask.nnz)


def _trace_callback(inst, every, trace, user_cb):
    def cb(k, x, log):
        val = rmse(inst.test, x[0], x[1]) if inst.test.nnz else None
        log.iterations[-1].metric = val
        if val is not None and k % every == 0:
            trace.append((k, val))
        if user_cb is not None:
            user_cb(k, x, log)
    return cb


def palm_mcp(inst, opts, x0, spectral_method="power", trace_every=10):
    """Proximal alternating linearized minimization with the exact scalar prox.

    Each block takes ``prox_{lam/L}(x - grad psi / L)`` entry-wise, with the
    penalty ``lam (1 - exp(-theta |.|))`` handled exactly.
    """
    p = McpProblem(inst, spectral_method)
    psi = p.psi
    x = x0
    F = p.f(x)
    log = RunLog(F0=F, C=[inst.C, inst.C])
    trace = []
    cb = _trace_callback(inst, trace_every, trace, opts.callback)
    elapsed = 0.0
    k = 0
    while True:
        if opts.max_iters is not None and k >= opts.max_iters:
            log.stop_reason = "max_iters"
            break
        if opts.time_budget is not None and elapsed >= opts.time_budget:
            log.stop_reason = "time_budget"
            break
        t0 = time.perf_counter()
        steps = []
        for i in (0, 1):
            L = psi.lipschitz(i, x)
            P = x[i] - psi.grad(i, x) / L
            xi = prox_exponential(P, inst.lam / L, inst.theta) if inst.lam > 0 else P
            steps.append(float(np.linalg.norm(xi - x[i])))
            x = x.replace(i, xi)
        F = p.f(x)
        log.objective_evals += 1
        if not math.isfinite(F):
            raise NumericalError(f"objective is not finite at iteration {k}", snapshot={"x": x})
        elapsed += time.perf_counter() - t0
        log.iterations.append(IterationRecord(k, F, elapsed, False, steps, 0.0, 0.0, 0.0, 0.0))
        k += 1
        cb(k, x, log)
        rel = max(s / (1.0 + float(np.linalg.norm(x[i]))) for i, s in enumerate(steps))
        if opts.stop_tol is not None and rel < opts.stop_tol:
            log.stop_reason = "stop_tol"
            break
    return x, log, trace


def mcp_run(inst, opts=None, seed=0, variant="titan_extra", spectral_method="power",
            trace_every=10, x0=None):
    """Run one MCP variant. Returns ``(U, V, log, rmse_trace)``.

    ``rmse_trace`` lists ``(iteration, test RMSE)`` every ``trace_every``
    iterations; the per-iteration RMSE is also stored on the log records.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}")
    if inst.test.nnz == 0:
        raise DataError("RMSE is undefined on an empty test set")
    opts = opts or SolverOptions()
    x0 = mcp_initial_point(inst.train, inst.r, seed) if x0 is None else x0
    if variant == "palm":
        x, log, trace = palm_mcp(inst, opts, x0, spectral_method, trace_every)
        return x[0], x[1], log, trace
    p, cfgs, ex = mcp_setup(inst, variant, spectral_method)
    trace = []
    opts = replace(opts, callback=_trace_callback(inst, trace_every, trace, opts.callback))
    x, log = titan_run(p, cfgs, ex, Schedule.cyclic(2), opts, x0)
    return x[0], x[1], log, trace
