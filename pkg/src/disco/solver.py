"""Distributed inexact damped Newton method.

Each outer step solves the Newton system H v = grad f(w) approximately with
preconditioned CG and then takes the damped step ``w - v / (1 + delta)``.
The inner solver comes in two data layouts:

* sample-partitioned (mode ``"S"``): node 0 owns w, the preconditioner and
  all CG vector algebra; every node contributes its part of each Hessian-vector
  product (one Broadcast and one ReduceAll of length d per CG step).
* feature-partitioned (mode ``"F"``): node j owns coordinates w[j] and runs
  the CG recurrences on its slice; a CG step costs one ReduceAll of length n
  plus two scalar ReduceAlls.

Both are SPMD programs run on :class:`disco.collectives.Cluster`.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .collectives import (
    INTEGRATION,
    OUTER_GRADIENT,
    PCG_ITERATION,
    PCG_SETUP,
    Cluster,
)
from .data import PartitionMode, partition
from .losses import LossModel, Objective
from .precond import BlockDiagonalPrecond, build_preconditioner

MASTER = 0

# Stop rules for the inner solver. Both guarantee ||H v - grad|| <= eps on exit.
# "certified" uses lambda_max(P) * <r, P^-1 r> >= ||r||^2 and so needs no
# communication beyond the CG scalars; "residual" tests ||r|| directly, which
# costs one extra scalar ReduceAll per step in the feature-partitioned solver.
CERTIFIED = "certified"
RESIDUAL = "residual"


class DivergenceError(FloatingPointError):
    pass


class PcgBreakdown(ArithmeticError):
    """u^T H u <= 0: the Hessian is not positive definite along u."""


class PcgNotConverged(RuntimeError):
    pass


@dataclass
class DiscoConfig:
    tau: int = 100
    mu: float = 1e-2
    eps_beta: float = 0.05
    eps_mode: str = "relative"  # or "absolute"
    eps_abs: float = 1e-8
    max_outer: int = 100
    grad_tol: float = 1e-10
    hessian_fraction: float = 1.0
    seed: int = 0
    stop_rule: str = CERTIFIED
    max_inner: int | None = None
    # S mode only: feature boundaries making node 0's preconditioner block diagonal
    precond_blocks: tuple | None = None
    keep_iterates: bool = False

    def validate(self):
        if self.tau < 1:
            raise ValueError("tau must be at least 1")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if not self.eps_beta >= 0:
            raise ValueError("eps_beta must be nonnegative")
        if self.eps_mode not in ("relative", "absolute"):
            raise ValueError(f"unknown eps_mode {self.eps_mode!r}")
        if self.max_outer < 0:
            raise ValueError("max_outer must be nonnegative")
        if not 0 < self.hessian_fraction <= 1:
            raise ValueError("hessian_fraction must lie in (0, 1]")
        if self.stop_rule not in (CERTIFIED, RESIDUAL):
            raise ValueError(f"unknown stop_rule {self.stop_rule!r}")
        return self


def eps_policy(grad_norm, config):
    """Inner tolerance for one Newton step."""
    if grad_norm < 0:
        raise ValueError("gradient norm must be nonnegative")
    if config.eps_mode == "absolute":
        return float(config.eps_abs)
    return float(config.eps_beta * grad_norm)


@dataclass
class PcgState:
    t: int
    v: np.ndarray
    r: np.ndarray
    s: np.ndarray
    u: np.ndarray
    Hv: np.ndarray
    alpha: float
    rs: float


@dataclass
class NewtonStepResult:
    v: np.ndarray
    delta: float
    inner_iters: int
    comm_rounds: int
    r: np.ndarray = field(repr=False, default=None)


TRACE_FIELDS = (
    "k",
    "t_total_inner",
    "f_value",
    "grad_norm",
    "rounds_cum",
    "scalars_cum",
    "vec_elements_cum",
    "wall_seconds",
    "vector_rounds_cum",
)


@dataclass
class TraceRecord:
    k: int
    t_total_inner: int
    f_value: float
    grad_norm: float
    rounds_cum: int
    scalars_cum: int
    vec_elements_cum: int
    wall_seconds: float
    vector_rounds_cum: int


def write_trace_csv(trace, fh, timing=True):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TRACE_FIELDS)
    for rec in trace:
        row = []
        for name in TRACE_FIELDS:
            val = getattr(rec, name)
            if name == "wall_seconds" and not timing:
                val = 0.0
            row.append(repr(float(val)) if isinstance(val, float) else val)
        writer.writerow(row)


@dataclass
class DiscoResult:
    w: np.ndarray
    trace: list
    ledger: object
    converged: bool
    mode: str
    m: int
    inner_iters: list
    deltas: list
    iterates: list | None = None

    @property
    def outer_iters(self):
        return len(self.inner_iters)

    @property
    def total_inner(self):
        return int(sum(self.inner_iters))


def _mul(A, v):
    return np.asarray(A @ v).ravel()


def _converged(rule, rr, rs, lam_max, eps):
    if rule == RESIDUAL:
        return math.sqrt(max(rr, 0.0)) <= eps
    return lam_max * rs <= eps * eps


def _decrement(v, Hv_prev, Hu, alpha):
    # v_{t+1}^T H v_t + alpha_t v_{t+1}^T H u_t == v^T H v at exit
    return float(v @ Hv_prev) + alpha * float(v @ Hu)


def _pcg_rounds(ctx):
    return ctx.cluster.ledger_snapshot().total(phase=PCG_ITERATION).rounds


def pcg_disco_s(ctx, shard, coef, divisor, lam, grad=None, precond=None, eps=0.0, *,
                stop_rule=CERTIFIED, max_iter=None, callback=None):
    """Sample-partitioned PCG for H v = grad.

    Every node passes its shard and its Hessian coefficients ``coef`` (one per
    local sample; zero for samples left out of a subsampled Hessian) and the
    common normaliser ``divisor``. Only node 0 passes ``grad``, ``precond`` and
    ``eps``; it returns a :class:`NewtonStepResult`, the other nodes return None.
    """
    X = shard.X

    def local_hv(u):
        return _mul(X, coef * _mul(X.T, u))

    if ctx.node_id != MASTER:
        while True:
            u = ctx.broadcast(None, root=MASTER)
            if u.size == 0:
                return None
            ctx.reduce_all(local_hv(u), phase=PCG_ITERATION)

    before = _pcg_rounds(ctx)
    r = np.array(grad, dtype=float)
    d = r.size
    max_iter = d if max_iter is None else max_iter
    v = np.zeros(d)
    Hv = np.zeros(d)
    if not np.any(r):
        ctx.broadcast(np.empty(0), root=MASTER, phase=INTEGRATION)
        return NewtonStepResult(v, 0.0, 0, 0, r)

    s = precond.solve(r)
    u = s.copy()
    rs = float(r @ s)
    lam_max = precond.lambda_max
    t = 0
    while True:
        if t >= max_iter:
            raise PcgNotConverged(f"residual above {eps:.3g} after {t} CG steps")
        ctx.broadcast(u, root=MASTER, phase=PCG_ITERATION)
        Hu = ctx.reduce_all(local_hv(u), phase=PCG_ITERATION) / divisor + lam * u
        uHu = float(u @ Hu)
        if not uHu > 0:
            raise PcgBreakdown(f"u^T H u = {uHu:.3g} at CG step {t}")
        alpha = rs / uHu
        v = v + alpha * u
        Hv_prev = Hv
        Hv = Hv + alpha * Hu
        r = r - alpha * Hu
        t += 1
        s = precond.solve(r)
        rs_new = float(r @ s)
        if callback is not None:
            callback(PcgState(t, v, r, s, u, Hv, alpha, rs_new))
        rr = float(r @ r) if stop_rule == RESIDUAL else None
        if _converged(stop_rule, rr, rs_new, lam_max, eps):
            break
        beta = rs_new / rs
        u = s + beta * u
        rs = rs_new

    ctx.broadcast(np.empty(0), root=MASTER, phase=INTEGRATION)
    delta = math.sqrt(max(_decrement(v, Hv_prev, Hu, alpha), 0.0))
    return NewtonStepResult(v, delta, t, _pcg_rounds(ctx) - before, r)


def pcg_disco_f(ctx, shard, coef, divisor, lam, grad, precond, eps, grad_norm, *,
                stop_rule=CERTIFIED, max_iter=None, callback=None):
    """Feature-partitioned PCG for H v = grad; all vectors are local slices.

    ``coef`` has one entry per sample (all n of them, replicated on every
    node), ``precond`` is this node's diagonal block and ``grad_norm`` the
    global gradient norm. Returns the local slice of v with the global delta.
    """
    X = shard.X
    before = _pcg_rounds(ctx)
    r = np.array(grad, dtype=float)
    dj = r.size
    max_iter = shard.d if max_iter is None else max_iter
    v = np.zeros(dj)
    Hv = np.zeros(dj)
    if grad_norm == 0:
        return NewtonStepResult(v, 0.0, 0, 0, r)

    s = precond.solve(r)
    u = s.copy()
    rs = ctx.reduce_all(float(r @ s), phase=PCG_SETUP)
    lam_max = None
    if stop_rule == CERTIFIED:
        lam_max = ctx.reduce_all(precond.lambda_max, op="max", phase=PCG_SETUP)
    t = 0
    while True:
        if t >= max_iter:
            raise PcgNotConverged(f"residual above {eps:.3g} after {t} CG steps")
        z = ctx.reduce_all(_mul(X.T, u), phase=PCG_ITERATION)
        Hu = _mul(X, coef * z) / divisor + lam * u
        uHu = ctx.reduce_all(float(u @ Hu), phase=PCG_ITERATION)
        if not uHu > 0:
            raise PcgBreakdown(f"u^T H u = {uHu:.3g} at CG step {t}")
        alpha = rs / uHu
        v = v + alpha * u
        Hv_prev = Hv
        Hv = Hv + alpha * Hu
        r = r - alpha * Hu
        t += 1
        s = precond.solve(r)
        rs_new = ctx.reduce_all(float(r @ s), phase=PCG_ITERATION)
        if callback is not None:
            callback(PcgState(t, v, r, s, u, Hv, alpha, rs_new))
        rr = None
        if stop_rule == RESIDUAL:
            rr = ctx.reduce_all(float(r @ r), phase=PCG_ITERATION)
        if _converged(stop_rule, rr, rs_new, lam_max, eps):
            break
        beta = rs_new / rs
        u = s + beta * u
        rs = rs_new

    delta_sq = ctx.reduce_all(_decrement(v, Hv_prev, Hu, alpha), phase=INTEGRATION)
    delta = math.sqrt(max(delta_sq, 0.0))
    return NewtonStepResult(v, delta, t, _pcg_rounds(ctx) - before, r)


def _hessian_weights(loss, margins, y, offset, n, cfg, rng):
    coef = loss.second_derivative(margins, y)
    if cfg.hessian_fraction >= 1.0:
        return coef, n
    size = max(1, int(round(cfg.hessian_fraction * n)))
    # every node draws the same subset from an identically seeded generator
    subset = rng.choice(n, size=size, replace=False)
    local = subset - offset
    local = local[(local >= 0) & (local < coef.size)]
    mask = np.zeros(coef.size)
    mask[local] = 1.0
    return coef * mask, size


def _record(ctx, k, total_inner, f, gnorm, start):
    tot = ctx.cluster.ledger_snapshot().total()
    return TraceRecord(
        k=k,
        t_total_inner=total_inner,
        f_value=f,
        grad_norm=gnorm,
        rounds_cum=tot.rounds,
        scalars_cum=tot.scalars,
        vec_elements_cum=tot.vector_elements,
        wall_seconds=time.perf_counter() - start,
        vector_rounds_cum=tot.vector_rounds,
    )


def _check_finite(f, gnorm, k):
    if not (math.isfinite(f) and math.isfinite(gnorm)):
        raise DivergenceError(f"objective became non-finite at outer iteration {k}")


def _s_node(ctx, shard, obj, cfg, start):
    loss, lam = obj.loss, obj.lam
    X, y, n, d = shard.X, shard.y, shard.n, shard.d
    master = ctx.node_id == MASTER
    rng = np.random.default_rng(cfg.seed)
    w = np.zeros(d) if master else None
    out = {"trace": [], "iterates": [], "inner": [], "deltas": [], "converged": False}
    total_inner = 0
    for k in range(cfg.max_outer + 1):
        w = ctx.broadcast(w if master else None, root=MASTER, phase=OUTER_GRADIENT)
        margins = _mul(X.T, w)
        g = ctx.reduce_all(_mul(X, loss.derivative(margins, y)), phase=OUTER_GRADIENT) / n + lam * w
        loss_sum = ctx.reduce_all(float(np.sum(loss.loss(margins, y))), phase=OUTER_GRADIENT)
        f = loss_sum / n + 0.5 * lam * float(w @ w)
        gnorm = math.sqrt(float(g @ g))
        _check_finite(f, gnorm, k)
        if master:
            out["trace"].append(_record(ctx, k, total_inner, f, gnorm, start))
            if cfg.keep_iterates:
                out["iterates"].append(w.copy())
        if gnorm <= cfg.grad_tol:
            out["converged"] = True
            break
        if k == cfg.max_outer:
            break
        coef, divisor = _hessian_weights(loss, margins, y, shard.offset, n, cfg, rng)
        if master:
            p = build_preconditioner(X, y, margins, loss, lam, cfg.mu, cfg.tau)
            if cfg.precond_blocks is not None:
                p = BlockDiagonalPrecond.from_full(p, cfg.precond_blocks)
            step = pcg_disco_s(ctx, shard, coef, divisor, lam, g, p, eps_policy(gnorm, cfg),
                               stop_rule=cfg.stop_rule, max_iter=cfg.max_inner)
            w = w - step.v / (1.0 + step.delta)
            total_inner += step.inner_iters
            out["inner"].append(step.inner_iters)
            out["deltas"].append(step.delta)
        else:
            pcg_disco_s(ctx, shard, coef, divisor, lam)
    out["w"] = w
    return out


def _f_node(ctx, shard, obj, cfg, start):
    loss, lam = obj.loss, obj.lam
    X, y, n = shard.X, shard.y, shard.n
    rng = np.random.default_rng(cfg.seed)
    w = np.zeros(X.shape[0])
    out = {"trace": [], "iterates": [], "inner": [], "deltas": [], "converged": False}
    total_inner = 0
    for k in range(cfg.max_outer + 1):
        z = ctx.reduce_all(_mul(X.T, w), phase=OUTER_GRADIENT)
        g = _mul(X, loss.derivative(z, y)) / n + lam * w
        loss_sum = float(np.sum(loss.loss(z, y)))
        gsq = ctx.reduce_all(float(g @ g), phase=OUTER_GRADIENT)
        wsq = ctx.reduce_all(float(w @ w), phase=OUTER_GRADIENT)
        f = loss_sum / n + 0.5 * lam * wsq
        gnorm = math.sqrt(gsq)
        _check_finite(f, gnorm, k)
        if ctx.node_id == MASTER:
            out["trace"].append(_record(ctx, k, total_inner, f, gnorm, start))
        if cfg.keep_iterates:
            out["iterates"].append(w.copy())
        if gnorm <= cfg.grad_tol:
            out["converged"] = True
            break
        if k == cfg.max_outer:
            break
        coef, divisor = _hessian_weights(loss, z, y, 0, n, cfg, rng)
        p = build_preconditioner(X, y, z, loss, lam, cfg.mu, cfg.tau)
        step = pcg_disco_f(ctx, shard, coef, divisor, lam, g, p, eps_policy(gnorm, cfg), gnorm,
                           stop_rule=cfg.stop_rule, max_iter=cfg.max_inner)
        w = w - step.v / (1.0 + step.delta)
        total_inner += step.inner_iters
        out["inner"].append(step.inner_iters)
        out["deltas"].append(step.delta)
    out["w"] = w
    return out


def _normalize_mode(mode):
    key = str(mode).strip().upper()
    if key in ("S", "SAMPLES"):
        return "S"
    if key in ("F", "FEATURES"):
        return "F"
    raise ValueError(f"unknown mode {mode!r}; use 'S' or 'F'")


def disco_outer(shards, objective, mode, config=None, cluster=None, scheduler="threads"):
    """Run the damped Newton loop over pre-partitioned shards."""
    mode = _normalize_mode(mode)
    cfg = (config or DiscoConfig()).validate()
    shards = sorted(shards, key=lambda s: s.node_id)
    expected = PartitionMode.BY_SAMPLES if mode == "S" else PartitionMode.BY_FEATURES
    if any(s.mode is not expected for s in shards):
        raise ValueError(f"mode {mode} needs shards partitioned {expected.value}")
    if cluster is None:
        cluster = Cluster(len(shards), scheduler=scheduler)
    if cluster.m != len(shards):
        raise ValueError("cluster size does not match shard count")
    available = shards[0].X.shape[1]
    if cfg.tau > available:
        raise ValueError(f"tau={cfg.tau} exceeds the {available} samples available to the preconditioner")
    if mode == "F" and cfg.precond_blocks is not None:
        raise ValueError("precond_blocks only applies to mode S")

    start = time.perf_counter()
    program = _s_node if mode == "S" else _f_node
    outs = cluster.run(program, [(s, objective, cfg, start) for s in shards])
    lead = outs[MASTER]
    if mode == "S":
        w = lead["w"]
        iterates = lead["iterates"] if cfg.keep_iterates else None
    else:
        w = np.concatenate([o["w"] for o in outs])
        iterates = None
        if cfg.keep_iterates:
            iterates = [np.concatenate(parts) for parts in zip(*(o["iterates"] for o in outs))]
    return DiscoResult(
        w=w,
        trace=lead["trace"],
        ledger=cluster.ledger_snapshot(),
        converged=lead["converged"],
        mode=mode,
        m=cluster.m,
        inner_iters=lead["inner"],
        deltas=lead["deltas"],
        iterates=iterates,
    )


def solve(dataset, loss, lam, mode="F", nodes=1, config=None, scheduler="threads"):
    """Partition ``dataset`` over ``nodes`` and run the damped Newton solver."""
    mode = _normalize_mode(mode)
    pmode = PartitionMode.BY_SAMPLES if mode == "S" else PartitionMode.BY_FEATURES
    shards = partition(dataset, nodes, pmode)
    obj = Objective(LossModel.parse(loss), lam)
    return disco_outer(shards, obj, mode, config, scheduler=scheduler)


def config_with(config, **changes):
    return replace(config or DiscoConfig(), **changes)

