"""Runtime self-checks behind ``titan check``.

Each check builds a small seeded instance, runs a component and compares it
against a slow but obvious reference (sampling, grids, dense algebra).
"""
import math
from dataclasses import dataclass

import numpy as np

from .apps.mcp import McpProblem, mcp_initial_point, mcp_setup
from .apps.nmf import SparseNmfInstance, nmf_setup, nmf_initial_point
from .apps.synth import planted_nmf, synthesize_instances
from .blocks import BlockVector, FunctionalProblem
from .numerics import (grad_check, prox_exponential, soft_threshold_weighted,
                       spectral_norm_gram)
from .solver import Schedule, SolverOptions, telescoping_check, titan_run
from .surrogates import (Bregman, Composite, FULLY_CONVEX, LipschitzGradient, Proximal,
                         Quadratic, QuarticKernel, check_majorization)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


# ---------------------------------------------------------------------------
# instances shared by the majorization checks
# ---------------------------------------------------------------------------

def nmf_family_instance(seed=0, shape=(12, 9), r=3):
    """Two-block ``1/2 ||M - U V||^2`` with its Lipschitz callback."""
    rng = np.random.default_rng(seed)
    M = rng.random(shape)

    def f(x):
        R = M - x[0] @ x[1]
        return 0.5 * float(np.vdot(R, R))

    def grad(i, x):
        R = x[0] @ x[1] - M
        return R @ x[1].T if i == 0 else x[0].T @ R

    def lip(i, y):
        return spectral_norm_gram(y[1]) if i == 0 else spectral_norm_gram(y[0], side="right")

    p = FunctionalProblem(2, f, grad)
    y = BlockVector([rng.random((shape[0], r)), rng.random((r, shape[1]))])
    return p, y, lip


def quadratic_family_instance(seed=0, d1=5, d2=4, rows=7, eps=1e-3):
    """``1/2 ||A1 x1 + A2 x2 - c||^2 + sum log cosh(x1)`` with ``H = A1^T A1 + (1+eps) I``."""
    rng = np.random.default_rng(seed)
    A1 = rng.standard_normal((rows, d1))
    A2 = rng.standard_normal((rows, d2))
    c = rng.standard_normal(rows)

    def f(x):
        r = A1 @ x[0] + A2 @ x[1] - c
        return 0.5 * float(r @ r) + float(np.sum(np.logaddexp(x[0], -x[0]) - math.log(2.0)))

    def grad(i, x):
        r = A1 @ x[0] + A2 @ x[1] - c
        return A1.T @ r + np.tanh(x[0]) if i == 0 else A2.T @ r

    H1 = A1.T @ A1 + (1.0 + eps) * np.eye(d1)
    H2 = A2.T @ A2 + eps * np.eye(d2)
    p = FunctionalProblem(2, f, grad)
    y = BlockVector([rng.standard_normal(d1), rng.standard_normal(d2)])
    return p, y, (lambda i, yy: H1 if i == 0 else H2)


def quartic_family_instance(seed=0, d1=4, d2=3, n=6):
    """``1/4 sum ((a1_j^T x1 + a2_j^T x2)^2 - b_j)^2``, smooth relative to the quartic kernel."""
    rng = np.random.default_rng(seed)
    A = [rng.standard_normal((n, d1)), rng.standard_normal((n, d2))]
    b = rng.standard_normal(n)

    def lin(x):
        return A[0] @ x[0] + A[1] @ x[1]

    def f(x):
        t = lin(x) ** 2 - b
        return 0.25 * float(t @ t)

    def grad(i, x):
        s = lin(x)
        return A[i].T @ ((s * s - b) * s)

    def rel_L(i, y):
        c = lin(y) - A[i] @ y[i]
        an = np.sum(A[i] ** 2, axis=1)
        return float(np.sum(6.0 * an ** 2 + (6.0 * c ** 2 + np.abs(b)) * an))

    p = FunctionalProblem(2, f, grad)
    y = BlockVector([rng.standard_normal(d1), rng.standard_normal(d2)])
    return p, y, rel_L


def mcp_family_instance(seed=0, shape=(6, 4), r=2, lam=0.1, theta=5.0):
    inst = synthesize_instances("mcp", shape, r, density=0.8, seed=seed, lam=lam, theta=theta)
    p, cfgs, _ = mcp_setup(inst, "titan_no", spectral_method="eigh")
    rng = np.random.default_rng(seed + 1)
    y = BlockVector([rng.standard_normal((shape[0], r)), rng.standard_normal((r, shape[1]))])
    return p, y, cfgs[0]


def family_surrogates(seed=0):
    """``(name, surrogate, problem, anchor)`` for each of the five families."""
    out = []
    p, y, lip = nmf_family_instance(seed)
    out.append(("proximal", Proximal(rho=0.7), p, y))
    out.append(("lipschitz", LipschitzGradient(1.0, lip), p, y))
    pq, yq, hess = quadratic_family_instance(seed)
    out.append(("quadratic", Quadratic(1.0, hess), pq, yq))
    pb, yb, rel = quartic_family_instance(seed)
    out.append(("bregman", Bregman(1.0, QuarticKernel(), rel), pb, yb))
    pc, yc, comp = mcp_family_instance(seed)
    out.append(("composite", comp, pc, yc))
    return out


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------

def check_majorization_families(samples=200, seed=0):
    worst = []
    ok = True
    for name, cfg, p, y in family_surrogates(seed):
        for i in range(p.m):
            rep = check_majorization(cfg, i, p, y, samples=samples, radius=1.0, seed=seed + i)
            f_y = float(p.f(y))
            good = rep.violations == 0 and rep.max_gap_at_anchor <= 1e-10 * (1 + abs(f_y))
            ok &= good
            worst.append(f"{name}[{i}]:{rep.violations}")
    return CheckResult("majorization", ok, " ".join(worst))


def check_nmf_nsdp(iters=60):
    M, _, _ = planted_nmf((30, 20), 3, noise=0.05, seed=0)
    inst = SparseNmfInstance(M, 3)
    p, cfgs, ex = nmf_setup(inst)
    x, log = titan_run(p, cfgs, ex, Schedule.cyclic(2),
                       SolverOptions(max_iters=iters, monitor="full", stop_tol=None),
                       nmf_initial_point(inst, 0))
    worst = min((u.nsdp / (1.0 + abs(u.F_before)) for u in log.updates), default=0.0)
    c4 = len(log.condition4_violations())
    tele = all(telescoping_check(log, K=K) for K in range(1, len(log) + 1))
    ok = worst >= -1e-8 and c4 == 0 and tele
    return CheckResult("nsdp", ok, f"min scaled residual {worst:.3e}, "
                                   f"inertia-cap violations {c4}, telescoping {tele}")


def check_prox_grid(n=50, grid=20001, seed=0):
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(n):
        v = rng.uniform(-3, 3)
        gam = rng.uniform(0.01, 2.0)
        theta = rng.uniform(0.1, 10.0)
        x = prox_exponential(v, gam, theta)

        def q(t):
            return 0.5 * (t - v) ** 2 - gam * np.expm1(-theta * np.abs(t))
        ts = np.linspace(-abs(v) - 1, abs(v) + 1, grid)
        worst = max(worst, float(q(x) - np.min(q(ts))))
    return CheckResult("prox_exponential", worst <= 1e-8, f"worst margin {worst:.3e}")


def check_soft_threshold(n=200, seed=0):
    rng = np.random.default_rng(seed)
    P = rng.uniform(-2, 2, n)
    W = rng.uniform(0, 1, n)
    tau = 0.7
    got = soft_threshold_weighted(P, W, tau)
    ts = np.linspace(-3, 3, 60001)
    err = 0.0
    for p_, w_, g_ in zip(P, W, got):
        obj = 0.5 * (ts - p_) ** 2 + tau * w_ * np.abs(ts)
        err = max(err, abs(ts[np.argmin(obj)] - g_))
    return CheckResult("soft_threshold", bool(err <= 1e-4), f"max argument error {err:.2e}")


def check_spectral(n=20, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        B = rng.standard_normal(tuple(rng.integers(1, 30, size=2)))
        ref = float(np.linalg.svd(B, compute_uv=False)[0] ** 2)
        worst = max(worst, abs(spectral_norm_gram(B) - ref) / ref)
    return CheckResult("spectral_norm", worst <= 1e-6, f"worst relative error {worst:.2e}")


def check_mcp_gradients(seed=0):
    inst = synthesize_instances("mcp", (8, 6), 2, density=0.7, seed=seed)
    p = McpProblem(inst)
    x = mcp_initial_point(inst.train, 2, seed)
    errs = []
    for i in (0, 1):
        def fun(xi, i=i):
            return p.psi.f(x.replace(i, xi))

        def grad(xi, i=i):
            return p.psi.grad(i, x.replace(i, xi))
        errs.append(grad_check(fun, grad, x[i]))
    return CheckResult("mcp_gradients", max(errs) <= 1e-6, f"relative errors {errs}")


def check_palm_equivalence(iters=20, seed=0):
    """TITAN without inertia on MCP against a hand-written soft-threshold loop."""
    inst = synthesize_instances("mcp", (20, 15), 3, density=0.5, seed=seed)
    p, cfgs, ex = mcp_setup(inst, "titan_no", spectral_method="eigh")
    x0 = mcp_initial_point(inst.train, 3, seed)
    x, _ = titan_run(p, cfgs, ex, Schedule.cyclic(2),
                     SolverOptions(max_iters=iters, stop_tol=None, monitor="off"), x0)
    mask = inst.train.indicator()
    A = inst.train.to_dense()
    U, V = x0[0].copy(), x0[1].copy()
    lam, th = inst.lam, inst.theta
    for _ in range(iters):
        L = np.linalg.eigvalsh(V @ V.T)[-1]
        G = -((A - U @ V) * mask) @ V.T
        W = lam * th * np.exp(-th * np.abs(U))
        P = U - G / L
        U = np.sign(P) * np.maximum(np.abs(P) - W / L, 0)
        L = np.linalg.eigvalsh(U.T @ U)[-1]
        G = -U.T @ ((A - U @ V) * mask)
        W = lam * th * np.exp(-th * np.abs(V))
        Q = V - G / L
        V = np.sign(Q) * np.maximum(np.abs(Q) - W / L, 0)
    err = max(float(np.max(np.abs(U - x[0]))), float(np.max(np.abs(V - x[1]))))
    return CheckResult("palm_equivalence", err <= 1e-12, f"max iterate difference {err:.2e}")


ALL_CHECKS = (check_majorization_families, check_nmf_nsdp, check_prox_grid,
              check_soft_threshold, check_spectral, check_mcp_gradients,
              check_palm_equivalence)


def run_checks():
    return [fn() for fn in ALL_CHECKS]
