"""The inertial block majorization-minimization loop.

One outer iteration walks through a block order (cyclic or essentially
cyclic). Each block update minimizes the chosen surrogate minus an
extrapolation term plus ``g_i``, with inertia capped so that ``gamma`` at an
update never exceeds ``C`` times ``eta`` at the previous update of the same
block. With ``restart_enabled`` an iteration that fails to decrease ``F``
is redone without inertia.
"""
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from .blocks import BlockVector, objective_value
from .errors import ConfigError, InnerSolverError, NumericalError, ShapeError, TitanError
from .extrapolation import (BREGMAN_LINESEARCH, HEAVY_BALL, HESSIAN_DAMPING, NESTEROV,
                            NO_INERTIA, ExtrapolationConfig, MuSchedule, StepConstants,
                            beta_cap, bregman_linesearch_tau, build_inertia, step_constants)
from .surrogates import (BLOCK_F_CONVEX, FULLY_CONVEX, Bregman, Composite,
                         LipschitzGradient, Proximal, Quadratic)

MONITOR_LEVELS = ("off", "sampled", "full")
_NUDGE_MAX = 64


# ---------------------------------------------------------------------------
# configuration and logs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Block order of one outer iteration.

    ``Schedule.cyclic(m)`` visits ``0..m-1``. ``Schedule.essentially_cyclic``
    takes an explicit order whose every window of ``T`` consecutive entries
    (read cyclically across iterations) contains each block.
    """

    order: tuple
    T: int
    kind: str = "cyclic"

    @classmethod
    def cyclic(cls, m):
        if m < 1:
            raise ConfigError("need at least one block")
        return cls(tuple(range(m)), m, "cyclic")

    @classmethod
    def essentially_cyclic(cls, order, T, m=None):
        order = tuple(int(i) for i in order)
        if not order:
            raise ConfigError("empty block order")
        m = (max(order) + 1) if m is None else m
        if min(order) < 0 or max(order) >= m:
            raise ConfigError(f"block index out of range [0, {m})")
        if T < m:
            raise ConfigError(f"interval T={T} must be >= m={m}")
        ring = order * (1 + (T + len(order) - 1) // len(order))
        for start in range(len(order)):
            window = set(ring[start:start + T]) if T <= len(order) else set(order)
            if len(window) != m:
                missing = sorted(set(range(m)) - window)
                raise ConfigError(
                    f"window of length {T} starting at {start} misses blocks {missing}")
        return cls(order, int(T), "essentially_cyclic")

    @property
    def m(self):
        return max(self.order) + 1


@dataclass
class SolverOptions:
    """Stopping rules and monitoring.

    ``stop_tol`` stops once every update of an iteration moved its block by
    less than ``stop_tol * (1 + ||x_i||)``; ``None`` disables the test.
    ``monitor`` is ``off``, ``sampled`` (every ``monitor_every`` iterations)
    or ``full``; monitored iterations evaluate ``F`` after each block update.
    ``restart_enabled`` overrides the extrapolation configs when set.
    ``callback(k, x, log)`` runs after each iteration outside the timer.
    """

    max_iters: Optional[int] = 1000
    time_budget: Optional[float] = None
    stop_tol: Optional[float] = 1e-9
    restart_enabled: Optional[bool] = None
    monitor: str = "sampled"
    monitor_every: int = 10
    seed: int = 0
    callback: Optional[Callable] = None

    def __post_init__(self):
        if self.max_iters is None and self.time_budget is None and self.stop_tol is None:
            raise ConfigError("at least one stopping criterion must be active")
        if self.max_iters is not None and self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.time_budget is not None and not self.time_budget > 0:
            raise ConfigError("time_budget must be positive")
        if self.monitor not in MONITOR_LEVELS:
            raise ConfigError(f"monitor must be one of {MONITOR_LEVELS}")
        if self.monitor_every < 1:
            raise ConfigError("monitor_every must be >= 1")


@dataclass
class UpdateRecord:
    iteration: int
    block: int
    beta: float
    tau: float
    A: float
    rho: float
    gamma: float
    eta: float
    eta_prev: Optional[float]
    L: float
    step_prev_sq: float
    step_cur_sq: float
    bound_G: float
    restart: bool
    F_before: Optional[float] = None
    F_after: Optional[float] = None
    nsdp: Optional[float] = None


@dataclass
class IterationRecord:
    iteration: int
    F: float
    time_s: float
    restart: bool
    step_norms: List[float]
    max_gamma: float
    min_eta: float
    max_A: float
    max_bound_G: float
    kept_previous: bool = False
    metric: Optional[float] = None


@dataclass
class RunLog:
    F0: float
    C: List[float]
    iterations: List[IterationRecord] = field(default_factory=list)
    updates: List[UpdateRecord] = field(default_factory=list)
    stop_reason: str = ""
    objective_evals: int = 0

    @property
    def F(self):
        return [self.F0] + [r.F for r in self.iterations]

    def __len__(self):
        return len(self.iterations)

    def restarts(self):
        return sum(r.restart for r in self.iterations)

    def nsdp_residuals(self):
        return [u.nsdp for u in self.updates if u.nsdp is not None]

    def condition4_violations(self):
        """Updates with ``gamma > C eta_prev`` (exact floating-point comparison)."""
        return [u for u in self.updates
                if u.eta_prev is not None and u.gamma > self.C[u.block] * u.eta_prev]


# ---------------------------------------------------------------------------
# block state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockState:
    """What one block remembers between its updates."""

    prev: np.ndarray
    eta_prev: Optional[float] = None
    rho_prev: Optional[float] = None
    mu: MuSchedule = MuSchedule()
    count: int = 0


def _ex_list(ex, m):
    if isinstance(ex, ExtrapolationConfig):
        return [ex] * m
    ex = list(ex)
    if len(ex) != m:
        raise ConfigError(f"need {m} extrapolation configs, got {len(ex)}")
    return ex


def _solve(fn, i, iteration, *args):
    try:
        out = fn(*args)
    except TitanError:
        raise
    except Exception as exc:
        raise InnerSolverError(f"block subproblem failed: {exc!r}", i, iteration) from exc
    if out is None:
        raise InnerSolverError("block subproblem returned nothing", i, iteration)
    return np.asarray(out, dtype=np.float64)


def _fit_beta(beta, cap, scale, eta_prev, C, constants_of):
    """Apply the cap and scale, then nudge down until ``gamma <= C eta_prev``."""
    beta = min(beta, cap) * scale
    if eta_prev is None or scale > 1.0:
        return beta, constants_of(beta)
    sc = constants_of(beta)
    for _ in range(_NUDGE_MAX):
        if sc.gamma <= C * eta_prev or beta == 0.0:
            break
        beta = np.nextafter(beta, 0.0)
        sc = constants_of(beta)
    else:
        beta = 0.0
        sc = constants_of(beta)
    return beta, sc


@dataclass
class StepResult:
    x_new: np.ndarray
    constants: StepConstants
    beta: float
    tau: float
    L: float
    bound_G: float


def titan_block_step(p, cfg, ex, x, bs, i, iteration=0, no_inertia=False):
    """Update block ``i`` of ``x`` (the point ``x^{k,i-1}``).

    ``bs`` is the block's :class:`BlockState` (``bs.prev`` is its value at
    the previous update, ``bs.mu`` the Nesterov counter already advanced for
    this update). Returns a :class:`StepResult`; ``x`` and ``bs`` are not
    modified.
    """
    y = x
    yi = y[i]
    d = yi - bs.prev
    dn = float(np.linalg.norm(d))
    g_convex = bool(p.g_convex(i))
    kind = NO_INERTIA if no_inertia else ex.kind
    sched = 0.0 if kind == NO_INERTIA else ex.schedule_beta(bs.count, bs.mu)
    C, nu = ex.C, ex.nu

    if isinstance(cfg, (LipschitzGradient, Composite)):
        if isinstance(cfg, Composite):
            inner = cfg.inner
            if not isinstance(inner, LipschitzGradient):
                raise ConfigError("Composite surrogates need a LipschitzGradient inner surrogate")
            fgrad = cfg.psi.grad
        else:
            inner = cfg
            fgrad = p.grad
        if kind == BREGMAN_LINESEARCH:
            raise ConfigError("bregman_linesearch needs a Bregman surrogate")
        kappa = inner.kappa
        L = inner.L(i, y)
        lam = kappa * L
        mode = cfg.mode
        r = ex.tau_ratio
        if mode == FULLY_CONVEX:
            if not g_convex:
                raise ConfigError(f"fully_convex mode needs a convex g_{i}")
            rho = lam

            def constants_of(b):
                return step_constants(FULLY_CONVEX, lam * b, lam, nu, L=lam, beta=b, tau=r * b)
            q = lam * (r * r + (1.0 - r) ** 2 / nu)
            eta_now = lam if r == 1.0 else (1.0 - nu) * lam
        else:
            rho = inner.modulus(i, y, g_convex)
            convex_block = mode == BLOCK_F_CONVEX
            if kind == NESTEROV and not (convex_block and r <= 1.0):
                a = L * (r + kappa)
            elif kind == HESSIAN_DAMPING and not convex_block:
                a = L * (ex.alpha_ratio * kappa + kappa)
            else:
                a = lam

            def constants_of(b):
                return step_constants(mode, a * b, rho, nu)
            q = a * a / (nu * rho)
            eta_now = (1.0 - nu) * rho
        cap = beta_cap(q, eta_now if bs.eta_prev is None else bs.eta_prev, C)
        beta, sc = _fit_beta(sched, cap, ex.beta_scale, bs.eta_prev, C, constants_of)
        tau = r * beta if kind == NESTEROV else beta

        def grad_at(v):
            return fgrad(i, y.replace(i, v))
        term = build_inertia(kind if beta > 0 else NO_INERTIA, yi, bs.prev, kappa=kappa,
                             L=L, beta=beta, tau=tau, alpha=ex.alpha_ratio * kappa * beta,
                             grad_at=grad_at, block_convex=mode != "general",
                             certify=False)
        if isinstance(cfg, Composite):
            W = cfg.weights(i, y)
            if cfg.linearized_step is None:
                raise ConfigError("Composite surrogate needs linearized_step")
            x_new = _solve(cfg.linearized_step, i, iteration, i, term.c, term.z, lam, W)
        else:
            x_new = _solve(p.prox, i, iteration, i, term.c, term.z, lam)
        bound = sc.A * dn

    elif isinstance(cfg, Proximal):
        if kind not in (NO_INERTIA, HEAVY_BALL):
            raise ConfigError("Proximal surrogates support heavy_ball inertia only")
        if cfg.solve is None:
            raise ConfigError("Proximal surrogate needs a solve(i, y, z, rho) callback")
        rho = cfg.rho_at(i, y)
        L = rho

        def constants_of(b):
            return step_constants("general", rho * b, rho, nu)
        cap = beta_cap(rho / nu, (1.0 - nu) * rho if bs.eta_prev is None else bs.eta_prev, C)
        beta, sc = _fit_beta(sched, cap, ex.beta_scale, bs.eta_prev, C, constants_of)
        tau = beta
        z = yi + beta * d
        x_new = _solve(cfg.solve, i, iteration, i, y, z, rho)
        bound = sc.A * dn

    elif isinstance(cfg, Quadratic):
        if kind not in (NO_INERTIA, HEAVY_BALL):
            raise ConfigError("Quadratic surrogates support heavy_ball inertia only")
        H = cfg.H(i, y)
        kappa = cfg.kappa
        rho = cfg.modulus(i, y, g_convex)
        hnorm = cfg.eig_range(i, y)[1]
        L = hnorm
        a = kappa * hnorm

        def constants_of(b):
            return step_constants(cfg.mode, a * b, rho, nu)
        cap = beta_cap(a * a / (nu * rho),
                       (1.0 - nu) * rho if bs.eta_prev is None else bs.eta_prev, C)
        beta, sc = _fit_beta(sched, cap, ex.beta_scale, bs.eta_prev, C, constants_of)
        tau = beta
        z = yi + beta * d
        c = np.asarray(p.grad(i, y), dtype=np.float64)
        if cfg.inner_solver is not None:
            x_new = _solve(cfg.inner_solver, i, iteration, i, y, c, z, kappa * H)
        elif p.g_is_zero(i):
            x_new = z - np.linalg.solve(kappa * H, c.ravel()).reshape(z.shape)
        else:
            diag = np.diag(H)
            if not np.array_equal(H, np.diag(diag)) or np.ptp(diag) != 0.0:
                raise ConfigError("Quadratic surrogate with nonzero g needs an inner_solver "
                                  "unless H is a multiple of the identity")
            x_new = _solve(p.prox, i, iteration, i, c, z, kappa * diag[0])
        bound = sc.A * dn

    elif isinstance(cfg, Bregman):
        if kind not in (NO_INERTIA, BREGMAN_LINESEARCH):
            raise ConfigError("Bregman surrogates support bregman_linesearch inertia only")
        kappa = cfg.kappa
        L = cfg.L(i, y)
        w = kappa * L
        rho = cfg.modulus(i, y, g_convex)
        rho_prev = rho if bs.rho_prev is None else bs.rho_prev
        eta_prev = bs.eta_prev
        xbar = yi.copy()
        G = np.zeros_like(yi)
        tau, ratio = 0.0, 0.0
        if kind == BREGMAN_LINESEARCH and dn > 0.0:
            scale = w / (nu * (1.0 - nu))
            ls = bregman_linesearch_tau(cfg.kernel, yi, bs.prev, kappa, L, C, rho_prev, rho,
                                        ex.tau_shrink, scale=scale)
            tau, ratio, G, xbar = ls.tau, ls.ratio, ls.G, ls.xbar
        sc = step_constants(cfg.mode, w * ratio, rho, nu)
        # rounding guard: shrink tau until the cap holds in floating point
        while eta_prev is not None and sc.gamma > C * eta_prev and tau > 0.0:
            tau *= ex.tau_shrink
            if tau < 1e-300:
                tau = 0.0
            xbar = yi + tau * d
            diff = cfg.kernel.grad(xbar) - cfg.kernel.grad(yi)
            ratio = float(np.linalg.norm(diff)) / dn
            G = w * diff
            sc = step_constants(cfg.mode, w * ratio, rho, nu)
        beta = tau
        c = np.asarray(p.grad(i, y), dtype=np.float64)
        if cfg.inner_solver is not None:
            x_new = _solve(cfg.inner_solver, i, iteration, i, y, c, xbar, w)
        elif p.g_is_zero(i):
            x_new = cfg.kernel.grad_inverse(cfg.kernel.grad(xbar) - c / w)
        else:
            raise ConfigError("Bregman surrogate with nonzero g needs an inner_solver")
        bound = float(np.linalg.norm(G))

    else:
        raise ConfigError(f"unsupported surrogate type {type(cfg).__name__}")

    if x_new.shape != yi.shape:
        raise InnerSolverError(f"returned shape {x_new.shape}, expected {yi.shape}",
                               i, iteration)
    if not np.isfinite(x_new).all():
        raise NumericalError(f"block {i} update produced non-finite entries "
                             f"(iteration {iteration})",
                             snapshot={"iteration": iteration, "block": i, "x": x})
    return StepResult(x_new, sc, float(beta), float(tau), float(L), float(bound))


# ---------------------------------------------------------------------------
# monitors
# ---------------------------------------------------------------------------

def nsdp_check(F_before, F_after, gamma, eta, step_prev_normsq, step_cur_normsq):
    """``(F_before + gamma/2 ||d_prev||^2) - (F_after + eta/2 ||d_cur||^2)``."""
    if step_prev_normsq < 0 or step_cur_normsq < 0:
        raise ConfigError("squared step norms must be nonnegative")
    return (F_before + 0.5 * gamma * step_prev_normsq) - (F_after + 0.5 * eta * step_cur_normsq)


def telescoping_terms(log, K):
    """Both sides of the summed decrease inequality after ``K`` iterations.

    ``lhs = F(x^K) + (1 - C) sum eta/2 ||d||^2`` over updates before ``K`` and
    ``rhs = F(x^0) + sum_i gamma_i^first/2 ||x_i^0 - x_i^{-1}||^2``, i.e.
    ``C eta^{-1}/2 ||x^0 - x^{-1}||^2`` with ``eta^{-1} = gamma^first / C``.
    """
    if not 0 <= K <= len(log.iterations):
        raise ConfigError(f"K={K} outside the {len(log.iterations)} recorded iterations")
    F_K = log.F0 if K == 0 else log.iterations[K - 1].F
    lhs = F_K
    rhs = log.F0
    seen = set()
    for u in log.updates:
        if u.iteration >= K:
            break
        C = log.C[u.block]
        lhs += (1.0 - C) * 0.5 * u.eta * u.step_cur_sq
        if u.block not in seen:
            seen.add(u.block)
            rhs += 0.5 * u.gamma * u.step_prev_sq
    return lhs, rhs


def telescoping_check(log, C=None, K=None, rel_tol=1e-8):
    """True iff the summed decrease inequality holds after ``K`` iterations.

    ``C`` overrides the per-block constants stored in the log.
    """
    if C is not None:
        log = replace(log, C=[C] * len(log.C))
    K = len(log.iterations) if K is None else K
    lhs, rhs = telescoping_terms(log, K)
    return lhs <= rhs + rel_tol * (1.0 + abs(rhs))


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

def _objective(p, x, log, where):
    F = objective_value(p, x)
    log.objective_evals += 1
    if not math.isfinite(F):
        raise NumericalError(f"objective is not finite ({F}) {where}",
                             snapshot={"x": x, "where": where})
    return F


def _sweep(p, cfgs, exs, order, x, states, k, log, monitored, no_inertia, F_start):
    records = []
    F_cur = F_start
    for i in order:
        bs = states[i]
        bs = replace(bs, mu=bs.mu.advance())
        res = titan_block_step(p, cfgs[i], exs[i], x, bs, i, iteration=k,
                               no_inertia=no_inertia)
        yi = x[i]
        d_prev = yi - bs.prev
        d_cur = res.x_new - yi
        x = x.replace(i, res.x_new)
        sc = res.constants
        rec = UpdateRecord(
            iteration=k, block=i, beta=res.beta, tau=res.tau, A=sc.A, rho=sc.rho,
            gamma=sc.gamma, eta=sc.eta, eta_prev=bs.eta_prev, L=res.L,
            step_prev_sq=float(np.vdot(d_prev, d_prev)),
            step_cur_sq=float(np.vdot(d_cur, d_cur)),
            bound_G=res.bound_G, restart=no_inertia)
        if monitored:
            F_after = _objective(p, x, log, f"after block {i} at iteration {k}")
            rec.F_before, rec.F_after = F_cur, F_after
            rec.nsdp = nsdp_check(F_cur, F_after, sc.gamma, sc.eta,
                                  rec.step_prev_sq, rec.step_cur_sq)
            F_cur = F_after
        records.append(rec)
        states[i] = BlockState(prev=yi, eta_prev=sc.eta, rho_prev=sc.rho, mu=bs.mu,
                               count=bs.count + 1)
    return x, states, records


def titan_run(p, cfgs, ex, schedule=None, opts=None, x0=None, x_minus1=None):
    """Run the inertial block MM method from ``x0``.

    ``cfgs`` lists one surrogate per block; ``ex`` is one
    :class:`ExtrapolationConfig` or a per-block list. ``x_minus1`` defaults
    to ``x0``. Returns ``(x_final, RunLog)``.
    """
    if x0 is None:
        raise ConfigError("x0 is required")
    if not isinstance(x0, BlockVector):
        x0 = BlockVector(x0)
    m = len(x0)
    if m != p.m:
        raise ShapeError(f"problem has {p.m} blocks, x0 has {m}")
    if len(cfgs) != m:
        raise ConfigError(f"need {m} surrogate configs, got {len(cfgs)}")
    exs = _ex_list(ex, m)
    schedule = schedule or Schedule.cyclic(m)
    if schedule.m > m or set(schedule.order) != set(range(m)):
        raise ConfigError("schedule must visit every block of the problem")
    opts = opts or SolverOptions()
    if x_minus1 is None:
        x_minus1 = x0
    elif not isinstance(x_minus1, BlockVector):
        x_minus1 = BlockVector(x_minus1)
    if x_minus1.shapes != x0.shapes:
        raise ShapeError(f"x^-1 shapes {x_minus1.shapes} != x^0 shapes {x0.shapes}")
    restart = [e.restart_enabled for e in exs] if opts.restart_enabled is None \
        else [opts.restart_enabled] * m
    restart_on = any(restart)

    log = RunLog(F0=0.0, C=[e.C for e in exs])
    x = x0
    F = _objective(p, x, log, "at x^0")
    log.F0 = F
    states = [BlockState(prev=x_minus1[i], mu=MuSchedule(exs[i].mu_variant)) for i in range(m)]
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
        monitored = opts.monitor == "full" or (
            opts.monitor == "sampled" and k % opts.monitor_every == 0)
        saved = list(states)
        x_new, states, records = _sweep(p, cfgs, exs, schedule.order, x, states, k, log,
                                        monitored, False, F)
        F_new = _objective(p, x_new, log, f"at iteration {k}")
        restarted = False
        kept = False
        if restart_on and F_new >= F:
            restarted = True
            states = list(saved)
            x_new, states, records = _sweep(p, cfgs, exs, schedule.order, x, states, k, log,
                                            monitored, True, F)
            F_new = _objective(p, x_new, log, f"at restarted iteration {k}")
            if F_new > F:
                # rounding defeated even the inertia-free step: stay put
                kept = True
                x_new, F_new = x, F
                states = [replace(s, prev=x[i]) for i, s in enumerate(states)]
        elapsed += time.perf_counter() - t0

        steps = [math.sqrt(r.step_cur_sq) for r in records]
        rel = 0.0 if kept else max((math.sqrt(r.step_cur_sq) / (1.0 + float(np.linalg.norm(x_new[r.block])))
                   for r in records), default=0.0)
        log.updates.extend(records)
        log.iterations.append(IterationRecord(
            iteration=k, F=F_new, time_s=elapsed, restart=restarted, step_norms=steps,
            max_gamma=max(r.gamma for r in records), min_eta=min(r.eta for r in records),
            max_A=max(r.A for r in records), max_bound_G=max(r.bound_G for r in records),
            kept_previous=kept))
        x, F = x_new, F_new
        k += 1
        if opts.callback is not None:
            opts.callback(k, x, log)
        if opts.stop_tol is not None and rel < opts.stop_tol:
            log.stop_reason = "stop_tol"
            break
    return x, log
