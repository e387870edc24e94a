"""Policy optimization: batch, stochastic and majorize-minimize trainers.

All trainers minimize some counterfactual objective over the parameters of
a log-linear policy.  The robust trainers work on the joint dual program:
the objective ``g(theta, beta, gamma)`` is minimized over the policy
parameters and both dual variables at once, with the ambiguity radius
calibrated internally from the requested confidence level (no tunable
radius is exposed).  Batch mode uses a quasi-Newton method over
``(theta, beta, log-parametrized gamma)``; stochastic mode runs projected,
clipped mini-batch SGD on unbiased per-sample gradients of the same
objective.  The majorize-minimize trainer replaces the weight ratio with
its log tangent at an anchor, yielding a fully convex inner problem and a
monotone outer loop.

Reports carry the full iteration trajectory (objective, gradient norm,
dual variables, elapsed seconds) and can be serialized to CSV or JSON
lines.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import optimize as sp_optimize

from .divergences import DivergenceKind, conjugate_derivative, phi_conjugate
from .dro import DualPoint, SolverError, robust_risk_dual
from .estimators import BanditLog, estimate_rho
from .intervals import calibrated_radius
from .policies import LinearPolicy

__all__ = [
    "OptimizerConfig",
    "IterationRecord",
    "TrainReport",
    "write_report",
    "train_dro",
    "train_dro_cv",
    "train_poem",
    "train_dro_stochastic",
    "train_log_trick",
]


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs shared by all trainers.

    ``max_iters`` counts quasi-Newton iterations in batch mode and SGD
    steps in stochastic mode.  ``gamma_min`` keeps the dual scale variable
    away from its nonsmooth boundary during joint optimization.
    ``resolve_every`` optionally interleaves an exact re-solve of the dual
    pair every that many batch iterations (off by default).
    """

    mode: str = "batch"
    max_iters: int = 300
    tolerance: float = 1e-10
    batch_size: int = 64
    step_size: float = 0.05
    step_decay: float = 1000.0
    gradient_clip_norm: float = 10.0
    seed: int = 0
    gamma_min: float = 1e-8
    eval_every: int = 100
    resolve_every: Optional[int] = None

    def __post_init__(self) -> None:
        if self.mode not in ("batch", "stochastic"):
            raise ValueError("mode must be 'batch' or 'stochastic'")
        if self.max_iters < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("iteration counts must be positive")
        if self.tolerance <= 0 or self.step_size <= 0 or self.step_decay <= 0:
            raise ValueError("tolerances and steps must be positive")
        if self.gradient_clip_norm <= 0 or self.gamma_min <= 0:
            raise ValueError("gradient_clip_norm and gamma_min must be positive")
        if self.resolve_every is not None and self.resolve_every < 1:
            raise ValueError("resolve_every must be positive when set")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    gradient_norm: float
    beta: float
    gamma: float
    elapsed: float


@dataclass
class TrainReport:
    """Outcome of one training run."""

    final_value: float
    iterations: int
    wall_time: float
    trajectory: "list[IterationRecord]" = field(default_factory=list)
    dual: Optional[DualPoint] = None
    converged: bool = False


def write_report(report: TrainReport, path) -> None:
    """Serialize the iteration trajectory; format chosen by suffix (.csv or .jsonl)."""
    target = Path(path)
    fields = ["iteration", "objective", "gradient_norm", "beta", "gamma", "elapsed"]
    if target.suffix == ".csv":
        with target.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(fields)
            for rec in report.trajectory:
                writer.writerow([getattr(rec, name) for name in fields])
    else:
        with target.open("w", encoding="utf-8") as fh:
            for rec in report.trajectory:
                fh.write(json.dumps({name: getattr(rec, name) for name in fields}) + "\n")


# ----------------------------------------------------------------------
# shared machinery
# ----------------------------------------------------------------------

# builder(policy, idx) -> (z, coef) with dz_i/dtheta = coef_i * grad log pi(a_i | x_i)
_Builder = Callable[[LinearPolicy, Optional[np.ndarray]], "tuple[np.ndarray, np.ndarray]"]


def _plain_builder(log: BanditLog) -> _Builder:
    log_p0 = np.log(log.propensities)

    def build(policy: LinearPolicy, idx: Optional[np.ndarray] = None):
        if idx is None:
            feats, acts, costs, lp0 = log.features, log.actions, log.costs, log_p0
        else:
            feats, acts, costs, lp0 = (
                log.features[idx], log.actions[idx], log.costs[idx], log_p0[idx],
            )
        w = np.exp(policy.log_prob(feats, acts) - lp0)
        z = w * costs
        return z, z

    return build


def _cv_builder(log: BanditLog, rho: float) -> _Builder:
    log_p0 = np.log(log.propensities)

    def build(policy: LinearPolicy, idx: Optional[np.ndarray] = None):
        if idx is None:
            feats, acts, costs, lp0 = log.features, log.actions, log.costs, log_p0
        else:
            feats, acts, costs, lp0 = (
                log.features[idx], log.actions[idx], log.costs[idx], log_p0[idx],
            )
        w = np.exp(policy.log_prob(feats, acts) - lp0)
        coef = (costs - rho) * w
        return coef + rho, coef

    return build


def _log_trick_builder(log: BanditLog, anchor: LinearPolicy) -> _Builder:
    anchor_lp = anchor.log_prob(log.features, log.actions)
    if np.any(np.isneginf(anchor_lp)):
        raise ValueError("anchor policy must have positive probability on logged actions")
    w0 = np.exp(anchor_lp - np.log(log.propensities))
    w0c = w0 * log.costs

    def build(policy: LinearPolicy, idx: Optional[np.ndarray] = None):
        if idx is None:
            feats, acts, lp_a, coef = log.features, log.actions, anchor_lp, w0c
        else:
            feats, acts, lp_a, coef = (
                log.features[idx], log.actions[idx], anchor_lp[idx], w0c[idx],
            )
        log_ratio = np.maximum(policy.log_prob(feats, acts) - lp_a, -1e12)
        return coef * (1.0 + log_ratio), coef

    return build


def _slice_log(log: BanditLog, idx: Optional[np.ndarray]):
    if idx is None:
        return log.features, log.actions
    return log.features[idx], log.actions[idx]


_PENALTY_BASE = 1e8
_PENALTY_SLOPE = 1e4
# beyond this the exponential conjugate overflows float64 anyway
_KL_U_CAP = 500.0


def _domain_cap(kind: DivergenceKind) -> Optional[float]:
    if kind in (DivergenceKind.BURG, DivergenceKind.HELLINGER):
        return 1.0 - 1e-12
    if kind is DivergenceKind.KL:
        return _KL_U_CAP
    return None


def _robust_value_grads(
    kind: DivergenceKind,
    epsilon: float,
    z: np.ndarray,
    beta: float,
    gamma: float,
):
    """Value and analytic partials of the dual objective on one batch of weighted costs.

    Returns ``(value, d1, g_beta, g_gamma)`` where ``d1`` are the per-record
    conjugate derivatives (the chain weights for the policy gradient), or
    ``None`` when the point violates the conjugate domain.
    """
    u = (z - beta) / gamma
    cap = _domain_cap(kind)
    if cap is not None and float(u.max(initial=-np.inf)) >= cap:
        return None
    with np.errstate(over="ignore"):
        vals = np.asarray(phi_conjugate(kind, u), dtype=float)
        d1 = np.asarray(conjugate_derivative(kind, u), dtype=float)
    value = beta + gamma * epsilon + gamma * float(vals.mean())
    g_beta = 1.0 - float(d1.mean())
    g_gamma = epsilon + float((vals - u * d1).mean())
    return value, d1, g_beta, g_gamma


def _robust_batch_minimize(
    log: BanditLog,
    kind: DivergenceKind,
    epsilon: float,
    policy_init: LinearPolicy,
    config: OptimizerConfig,
    builder: _Builder,
):
    """Joint quasi-Newton minimization of the dual objective over (theta, beta, log-gamma)."""
    theta_shape = policy_init.theta.shape
    n = log.n
    start = time.perf_counter()

    def make_policy(theta_flat: np.ndarray) -> LinearPolicy:
        return replace(policy_init, theta=theta_flat.reshape(theta_shape))

    def unpack(w: np.ndarray):
        beta = float(w[-2])
        psi = min(float(w[-1]), 60.0)
        gamma = config.gamma_min + math.exp(psi)
        return w[:-2], beta, psi, gamma

    def fun(w: np.ndarray):
        theta_flat, beta, psi, gamma = unpack(w)
        policy = make_policy(theta_flat)
        z, coef = builder(policy, None)
        state = _robust_value_grads(kind, epsilon, z, beta, gamma)
        if state is None:
            # linear penalty pushing back inside the conjugate domain
            cap = _domain_cap(kind) or 1.0
            imax = int(np.argmax(z))
            viol = (float(z[imax]) - beta) - cap * gamma
            g = np.zeros_like(w)
            g_theta = policy.weighted_grad_log_prob_sum(
                *_slice_log(log, None), np.where(np.arange(n) == imax, coef, 0.0)
            )
            g[:-2] = _PENALTY_SLOPE * g_theta.ravel()
            g[-2] = -_PENALTY_SLOPE
            g[-1] = -_PENALTY_SLOPE * cap * math.exp(psi)
            return _PENALTY_BASE + _PENALTY_SLOPE * viol, g
        value, d1, g_beta, g_gamma = state
        g_theta = policy.weighted_grad_log_prob_sum(*_slice_log(log, None), d1 * coef) / n
        g = np.empty_like(w)
        g[:-2] = g_theta.ravel()
        g[-2] = g_beta
        g[-1] = g_gamma * math.exp(psi)
        return value, g

    # initialize the dual pair exactly at the starting policy, so a warm
    # start from a previous optimum is a fixed point of the joint solve
    z0, _ = builder(policy_init, None)
    point0 = robust_risk_dual(z0, kind, epsilon)
    gamma0 = max(point0.gamma, config.gamma_min * 2.0)
    w0 = np.concatenate(
        [policy_init.theta.ravel(), [point0.beta, math.log(max(gamma0 - config.gamma_min, 1e-12))]]
    )

    trajectory: "list[IterationRecord]" = []

    def record(w: np.ndarray, iteration: int) -> None:
        value, grad = fun(w)
        _, beta, _, gamma = unpack(w)
        trajectory.append(
            IterationRecord(
                iteration, value, float(np.linalg.norm(grad)), beta, gamma,
                time.perf_counter() - start,
            )
        )

    record(w0, 0)
    iters_done = 0
    converged = False
    w = w0
    segments = (
        [config.max_iters]
        if config.resolve_every is None
        else [config.resolve_every] * max(1, config.max_iters // config.resolve_every)
    )
    for seg in segments:
        counter = {"i": iters_done}

        def callback(xk: np.ndarray) -> None:
            counter["i"] += 1
            record(xk, counter["i"])

        res = sp_optimize.minimize(
            fun,
            w,
            jac=True,
            method="L-BFGS-B",
            callback=callback,
            options={"maxiter": seg, "ftol": config.tolerance, "gtol": 1e-9},
        )
        w = res.x
        iters_done = counter["i"]
        converged = bool(res.success) or res.status == 0
        if config.resolve_every is not None:
            theta_flat, _, _, _ = unpack(w)
            z_cur, _ = builder(make_policy(theta_flat), None)
            pt = robust_risk_dual(z_cur, kind, epsilon)
            gamma_r = max(pt.gamma, config.gamma_min * 2.0)
            w = np.concatenate(
                [theta_flat, [pt.beta, math.log(max(gamma_r - config.gamma_min, 1e-12))]]
            )
        if res.status == 0 and config.resolve_every is None:
            break

    theta_flat, _, _, _ = unpack(w)
    policy = make_policy(theta_flat)
    z_final, _ = builder(policy, None)
    final_point = robust_risk_dual(z_final, kind, epsilon)
    record(
        np.concatenate(
            [theta_flat, [final_point.beta,
                          math.log(max(final_point.gamma, config.gamma_min * 2.0) - config.gamma_min)]]
        ),
        iters_done,
    )
    report = TrainReport(
        final_value=final_point.value,
        iterations=iters_done,
        wall_time=time.perf_counter() - start,
        trajectory=trajectory,
        dual=final_point,
        converged=converged,
    )
    return policy, report


# ----------------------------------------------------------------------
# public trainers
# ----------------------------------------------------------------------


def train_dro(
    log: BanditLog,
    kind: DivergenceKind,
    delta: float,
    policy_init: LinearPolicy,
    config: OptimizerConfig = OptimizerConfig(),
):
    """Minimize the robust reweighted risk at the radius calibrated from ``delta``.

    No radius hyper-parameter is exposed: the ambiguity size is always
    ``calibrated_radius(kind, delta, n)``.  ``config.mode`` selects the
    batch quasi-Newton path or the stochastic one.
    """
    if config.mode == "stochastic":
        return train_dro_stochastic(log, kind, delta, policy_init, config)
    eps = calibrated_radius(kind, delta, log.n)
    return _robust_batch_minimize(log, kind, eps, policy_init, config, _plain_builder(log))


def train_dro_cv(
    log: BanditLog,
    kind: DivergenceKind,
    delta: float,
    policy_init: LinearPolicy,
    config: OptimizerConfig = OptimizerConfig(),
    rho: "float | str" = "mean",
):
    """Robust trainer over control-variate weighted costs ``(c - rho) w + rho``.

    ``rho`` may be a number, ``"mean"`` (the logged costs' empirical mean)
    or ``"zero"`` (recovering :func:`train_dro` exactly).
    """
    if isinstance(rho, str):
        if rho == "mean":
            rho_value = estimate_rho(log)
        elif rho == "zero":
            rho_value = 0.0
        else:
            raise ValueError("rho must be a number, 'mean' or 'zero'")
    else:
        rho_value = float(rho)
    eps = calibrated_radius(kind, delta, log.n)
    builder = _plain_builder(log) if rho_value == 0.0 else _cv_builder(log, rho_value)
    if config.mode == "stochastic":
        return _stochastic_minimize(log, kind, eps, policy_init, config, builder)
    return _robust_batch_minimize(log, kind, eps, policy_init, config, builder)


def train_poem(
    log: BanditLog,
    lam: float,
    policy_init: LinearPolicy,
    config: OptimizerConfig = OptimizerConfig(),
):
    """Minimize the variance-penalized weighted risk ``mean(z) + lam sqrt(var(z)/n)``.

    The objective is not convex in the policy parameters; the returned
    policy is a best-effort local minimum from the given initialization.
    In stochastic mode the square root and the squared-mean coupling are
    re-majorized from a full pass at every nominal epoch, so the whole log
    must stay in memory; the inner steps then use per-record gradients.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    n = log.n
    if n < 2:
        raise ValueError("the penalized objective needs at least 2 records")
    if config.mode == "stochastic":
        return _poem_stochastic(log, lam, policy_init, config)
    theta_shape = policy_init.theta.shape
    builder = _plain_builder(log)
    start = time.perf_counter()

    def fun(theta_flat: np.ndarray):
        policy = replace(policy_init, theta=theta_flat.reshape(theta_shape))
        z, coef = builder(policy, None)
        mean = float(z.mean())
        grad_mean = policy.weighted_grad_log_prob_sum(log.features, log.actions, coef) / n
        variance = float(z.var(ddof=1))
        value = mean + lam * math.sqrt(variance / n)
        grad = grad_mean
        if lam > 0 and variance > 1e-18:
            dv_coef = 2.0 / (n - 1) * (z - mean) * coef
            grad_var = policy.weighted_grad_log_prob_sum(log.features, log.actions, dv_coef)
            grad = grad + grad_var * (lam / (2.0 * math.sqrt(variance / n) * n))
        return value, grad.ravel()

    trajectory: "list[IterationRecord]" = []

    def record(theta_flat: np.ndarray, iteration: int) -> None:
        value, grad = fun(theta_flat)
        trajectory.append(
            IterationRecord(
                iteration, value, float(np.linalg.norm(grad)), math.nan, math.nan,
                time.perf_counter() - start,
            )
        )

    w0 = policy_init.theta.ravel().copy()
    record(w0, 0)
    counter = {"i": 0}

    def callback(xk: np.ndarray) -> None:
        counter["i"] += 1
        record(xk, counter["i"])

    res = sp_optimize.minimize(
        fun,
        w0,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": config.max_iters, "ftol": config.tolerance, "gtol": 1e-9},
    )
    policy = replace(policy_init, theta=res.x.reshape(theta_shape))
    report = TrainReport(
        final_value=float(res.fun),
        iterations=counter["i"],
        wall_time=time.perf_counter() - start,
        trajectory=trajectory,
        dual=None,
        converged=bool(res.success) or res.status == 0,
    )
    return policy, report


def _poem_stochastic(
    log: BanditLog,
    lam: float,
    policy_init: LinearPolicy,
    config: OptimizerConfig,
):
    """Epoch-majorized stochastic descent on the variance-penalized objective.

    Each epoch takes one full pass to freeze the current mean ``m0`` and
    variance ``v0``; the concave square root and the ``-n mean^2`` term are
    replaced by their tangents there, leaving a per-record decomposable
    upper bound ``z_i + c (n/(n-1)) (z_i^2 - 2 m0 z_i)`` with
    ``c = lam / (2 sqrt(n v0))``.
    """
    theta_shape = policy_init.theta.shape
    n = log.n
    batch_size = min(config.batch_size, n)
    steps_per_epoch = max(1, -(-n // batch_size))
    rng = np.random.default_rng(config.seed)
    builder = _plain_builder(log)
    start = time.perf_counter()

    def make_policy(theta_flat: np.ndarray) -> LinearPolicy:
        return replace(policy_init, theta=theta_flat.reshape(theta_shape))

    def full_objective(theta_flat: np.ndarray) -> float:
        z, _ = builder(make_policy(theta_flat), None)
        return float(z.mean() + lam * math.sqrt(z.var(ddof=1) / n))

    theta = policy_init.theta.ravel().copy()
    trajectory: "list[IterationRecord]" = []
    m0 = 0.0
    scale = 0.0
    last_norm = 0.0
    for t in range(config.max_iters):
        if t % steps_per_epoch == 0:  # re-majorize from a full pass
            z_full, _ = builder(make_policy(theta), None)
            m0 = float(z_full.mean())
            v0 = float(z_full.var(ddof=1))
            scale = 0.0 if lam == 0.0 else lam / (2.0 * math.sqrt(n * max(v0, 1e-12)))
        if t % config.eval_every == 0:
            trajectory.append(
                IterationRecord(t, full_objective(theta), last_norm, math.nan, math.nan,
                                time.perf_counter() - start)
            )
        idx = np.arange(n) if batch_size == n else rng.integers(0, n, size=batch_size)
        policy = make_policy(theta)
        z, coef = builder(policy, idx)
        mult = 1.0 + scale * (n / (n - 1)) * (2.0 * z - 2.0 * m0)
        feats, acts = _slice_log(log, idx)
        grad = policy.weighted_grad_log_prob_sum(feats, acts, mult * coef) / idx.size
        grad_flat = grad.ravel()
        norm = float(np.linalg.norm(grad_flat))
        last_norm = norm
        if norm > config.gradient_clip_norm:
            grad_flat = grad_flat * (config.gradient_clip_norm / norm)
        step = config.step_size / math.sqrt(1.0 + t / config.step_decay)
        theta -= step * grad_flat
    final_value = full_objective(theta)
    trajectory.append(
        IterationRecord(config.max_iters, final_value, last_norm, math.nan, math.nan,
                        time.perf_counter() - start)
    )
    report = TrainReport(
        final_value=final_value,
        iterations=config.max_iters,
        wall_time=time.perf_counter() - start,
        trajectory=trajectory,
        dual=None,
        converged=math.isfinite(final_value),
    )
    return make_policy(theta), report


def _stochastic_minimize(
    log: BanditLog,
    kind: DivergenceKind,
    epsilon: float,
    policy_init: LinearPolicy,
    config: OptimizerConfig,
    builder: _Builder,
):
    """Projected, clipped mini-batch SGD on per-sample dual terms.

    Each record contributes ``beta + gamma eps + (gamma phi)*(z_i - beta)``,
    so a uniform mini-batch average is an unbiased estimate of the full
    objective and its gradient.  A batch that violates the conjugate domain
    triggers a doubling of ``gamma``; one hundred consecutive violations
    abort the run.
    """
    theta_shape = policy_init.theta.shape
    n = log.n
    batch_size = min(config.batch_size, n)
    rng = np.random.default_rng(config.seed)
    start = time.perf_counter()

    def make_policy(theta_flat: np.ndarray) -> LinearPolicy:
        return replace(policy_init, theta=theta_flat.reshape(theta_shape))

    z0, _ = builder(policy_init, None)
    point0 = robust_risk_dual(z0, kind, epsilon)
    theta = policy_init.theta.ravel().copy()
    beta = point0.beta
    gamma = max(point0.gamma, config.gamma_min)

    trajectory: "list[IterationRecord]" = []

    def full_objective(theta_flat, beta_v, gamma_v) -> float:
        z, _ = builder(make_policy(theta_flat), None)
        state = _robust_value_grads(kind, epsilon, z, beta_v, gamma_v)
        return math.inf if state is None else state[0]

    inflations = 0
    last_norm = 0.0
    for t in range(config.max_iters):
        if t % config.eval_every == 0:
            trajectory.append(
                IterationRecord(
                    t, full_objective(theta, beta, gamma), last_norm, beta, gamma,
                    time.perf_counter() - start,
                )
            )
        idx = np.arange(n) if batch_size == n else rng.integers(0, n, size=batch_size)
        policy = make_policy(theta)
        z, coef = builder(policy, idx)
        state = _robust_value_grads(kind, epsilon, z, beta, gamma)
        if state is None:
            gamma *= 2.0
            inflations += 1
            if inflations > 100:
                raise SolverError(
                    "mini-batch objective stayed outside the conjugate domain",
                    best=DualPoint(beta=beta, gamma=gamma, value=math.inf),
                )
            continue
        inflations = 0
        _, d1, g_beta, g_gamma = state
        feats, acts = _slice_log(log, idx)
        g_theta = policy.weighted_grad_log_prob_sum(feats, acts, d1 * coef) / idx.size
        grad = np.concatenate([g_theta.ravel(), [g_beta, g_gamma]])
        norm = float(np.linalg.norm(grad))
        last_norm = norm
        if norm > config.gradient_clip_norm:
            grad *= config.gradient_clip_norm / norm
        step = config.step_size / math.sqrt(1.0 + t / config.step_decay)
        theta -= step * grad[:-2]
        beta -= step * float(grad[-2])
        gamma = max(gamma - step * float(grad[-1]), config.gamma_min)

    final_value = full_objective(theta, beta, gamma)
    trajectory.append(
        IterationRecord(
            config.max_iters, final_value, last_norm, beta, gamma, time.perf_counter() - start,
        )
    )
    policy = make_policy(theta)
    report = TrainReport(
        final_value=final_value,
        iterations=config.max_iters,
        wall_time=time.perf_counter() - start,
        trajectory=trajectory,
        dual=DualPoint(beta=beta, gamma=gamma, value=final_value),
        converged=math.isfinite(final_value),
    )
    return policy, report


def train_dro_stochastic(
    log: BanditLog,
    kind: DivergenceKind,
    delta: float,
    policy_init: LinearPolicy,
    config: OptimizerConfig = OptimizerConfig(),
):
    """Stochastic counterpart of :func:`train_dro`; see :func:`_stochastic_minimize`."""
    eps = calibrated_radius(kind, delta, log.n)
    return _stochastic_minimize(log, kind, eps, policy_init, config, _plain_builder(log))


def train_log_trick(
    log: BanditLog,
    kind: DivergenceKind,
    delta: float,
    policy_init: LinearPolicy,
    config: OptimizerConfig = OptimizerConfig(),
    outer_iters: int = 20,
):
    """Majorize-minimize loop on the tangent upper bound of the weighted costs.

    Each outer step minimizes the robust objective of the convex surrogate
    anchored at the current policy, then re-anchors.  The surrogate equals
    the true weighted costs at the anchor and dominates them elsewhere
    (costs are nonpositive), so the true robust risk is nonincreasing
    across outer steps.
    """
    if outer_iters < 1:
        raise ValueError("outer_iters must be positive")
    if np.any(log.costs > 1e-12):
        raise ValueError("the tangent surrogate requires nonpositive costs")
    eps = calibrated_radius(kind, delta, log.n)
    start = time.perf_counter()
    anchor = policy_init
    trajectory: "list[IterationRecord]" = []
    inner_config = replace(config, mode="batch")

    def true_value(policy: LinearPolicy) -> DualPoint:
        z, _ = _plain_builder(log)(policy, None)
        return robust_risk_dual(z, kind, eps)

    current = true_value(anchor)
    trajectory.append(
        IterationRecord(0, current.value, math.nan, current.beta, current.gamma,
                        time.perf_counter() - start)
    )
    total_inner = 0
    reached_fixed_point = False
    for outer in range(1, outer_iters + 1):
        builder = _log_trick_builder(log, anchor)
        candidate, inner_report = _robust_batch_minimize(
            log, kind, eps, anchor, inner_config, builder
        )
        total_inner += inner_report.iterations
        cand_point = true_value(candidate)
        trajectory.append(
            IterationRecord(outer, cand_point.value, math.nan, cand_point.beta,
                            cand_point.gamma, time.perf_counter() - start)
        )
        improved = cand_point.value <= current.value + 1e-12
        if improved:
            anchor = candidate
        stalled = abs(current.value - cand_point.value) <= max(config.tolerance, 1e-12)
        current = cand_point if improved else current
        if stalled or not improved:
            reached_fixed_point = True
            break
    report = TrainReport(
        final_value=current.value,
        iterations=total_inner,
        wall_time=time.perf_counter() - start,
        trajectory=trajectory,
        dual=current,
        converged=reached_fixed_point,
    )
    return anchor, report
