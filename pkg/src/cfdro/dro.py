"""Robust and optimistic reweighted risks via their two-dimensional convex dual.

The robust risk of a weighted-cost vector ``z`` at radius ``epsilon`` is the
supremum of ``q . z`` over reweightings ``q`` on the simplex whose divergence
from the uniform vector is at most ``epsilon``.  Strong duality reduces it to

    inf over (beta, gamma >= 0) of
        beta + gamma * epsilon + mean_i (gamma phi)*(z_i - beta),

a jointly convex two-dimensional program.  The solver here minimizes the
reduced function ``h(gamma) = min_beta g(beta, gamma)``: the inner step is an
exact one-dimensional minimization in ``beta`` (safeguarded Newton on the
stationarity condition), and the outer step is a golden-section search over
``log gamma``; ``h`` is convex in ``gamma`` by partial minimization, so the
search is globally correct.  A quasi-Newton fallback over
``(beta, softplus-parametrized gamma)`` covers the rare case where the
primary path fails to certify.

Extended-real arithmetic is used throughout: out-of-domain conjugate values
propagate ``+inf`` as a barrier and no NaN ever escapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize as sp_optimize

from .divergences import DivergenceKind, conjugate_derivative, phi_conjugate
from .estimators import BanditLog, WeightedCosts, importance_weights
from .policies import LinearPolicy

__all__ = [
    "DualPoint",
    "DualSolverOptions",
    "SolverError",
    "dual_objective",
    "robust_risk_dual",
    "optimistic_risk_dual",
    "primal_oracle",
    "kl_reduced_dual",
    "kl_softmax_risk",
    "dual_gradient",
    "dual_gradient_policy",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class SolverError(RuntimeError):
    """Raised when a dual solve cannot certify convergence; carries the best iterate."""

    def __init__(self, message: str, best: "DualPoint"):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class DualPoint:
    """A dual iterate ``(beta, gamma)`` together with its objective value."""

    beta: float
    gamma: float
    value: float

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")


@dataclass(frozen=True)
class DualSolverOptions:
    """Tolerances and search limits for the two-dimensional dual solver.

    ``bracket_tol`` is in log-gamma units; the objective error at
    termination is quadratic in it, so the default certifies values to
    roughly 1e-8 relative.
    """

    bracket_tol: float = 1e-4
    root_tol: float = 1e-12
    max_iters: int = 200
    gamma_log_floor: float = -40.0
    gamma_log_cap: float = 45.0


_DEFAULT_OPTIONS = DualSolverOptions()


def _as_values(z) -> np.ndarray:
    if isinstance(z, WeightedCosts):
        z = z.values
    arr = np.asarray(z, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("z must be a nonempty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("z must be finite")
    return arr


def dual_objective(z, kind: DivergenceKind, epsilon: float, beta: float, gamma: float) -> float:
    """Evaluate ``g(beta, gamma) = beta + gamma eps + mean_i (gamma phi)*(z_i - beta)``.

    Returns ``+inf`` when the conjugate domain is violated; never NaN.
    """
    zv = _as_values(z)
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    s = zv - beta
    if gamma == 0.0:
        if np.any(s > 0):
            return float("inf")
        return float(beta)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = gamma * np.asarray(phi_conjugate(kind, s / gamma), dtype=float)
        total = beta + gamma * epsilon + float(np.mean(vals))
    if math.isnan(total):  # pragma: no cover - defensive: inputs are finite
        raise FloatingPointError("dual objective produced NaN")
    return float(total)


def _mean_stats(zv: np.ndarray, kind: DivergenceKind, beta: float, gamma: float):
    """Mean conjugate first/second derivatives at ``u = (z - beta) / gamma``.

    Fused per-kind fast path; callers wrap the Newton loop in a single
    ``errstate`` so overflow in the exponential branch propagates as inf.
    """
    u = (zv - beta) / gamma
    if kind is DivergenceKind.CHI_SQUARE:
        d1 = np.maximum(1.0 + 0.5 * u, 0.0)
        return float(d1.mean()), 0.5 * float(np.count_nonzero(u > -2.0)) / u.size
    if kind is DivergenceKind.KL:
        e = np.exp(u)
        m = float(e.mean())
        return m, m
    r = 1.0 / (1.0 - u)
    if kind is DivergenceKind.BURG:
        return float(r.mean()), float((r * r).mean())
    r2 = r * r
    return float(r2.mean()), 2.0 * float((r2 * r).mean())


def _solve_beta(
    zv: np.ndarray,
    kind: DivergenceKind,
    gamma: float,
    warm: Optional[float],
    opts: DualSolverOptions,
) -> float:
    """Exact inner minimization over ``beta`` at fixed ``gamma > 0``.

    Solves the stationarity condition ``mean (phi*)'((z - beta)/gamma) = 1``;
    the left side is nonincreasing in ``beta``, so a bracketing Newton
    iteration is globally safe.
    """
    zmax = float(zv.max())
    scale = max(1.0, float(np.max(np.abs(zv))))
    hi = zmax  # mean derivative <= (phi*)'(0) = 1 here
    with np.errstate(over="ignore", divide="ignore"):
        if kind in (DivergenceKind.BURG, DivergenceKind.HELLINGER):
            lo = zmax - gamma * (1.0 - 1e-9)
        else:
            step = gamma + float(zv.std()) + 1e-3 * scale
            lo = zmax - step
            for _ in range(200):
                m, _ = _mean_stats(zv, kind, lo, gamma)
                if m > 1.0:
                    break
                step *= 3.0
                lo = zmax - step
            else:  # pragma: no cover - derivative grows without bound
                return zmax
        beta = warm if warm is not None and lo < warm < hi else 0.5 * (lo + hi)
        for _ in range(100):
            m, md = _mean_stats(zv, kind, beta, gamma)
            if abs(m - 1.0) <= opts.root_tol:
                break
            if m > 1.0:
                lo = beta
            else:
                hi = beta
            # Newton on log(m): exact for the exponential conjugate and far
            # better conditioned than Newton on m in its tail
            if m > 0 and math.isfinite(m) and math.isfinite(md) and md > 0:
                candidate = beta + math.log(m) * gamma * m / md
            else:
                candidate = 0.5 * (lo + hi)
            if not (lo < candidate < hi):
                candidate = 0.5 * (lo + hi)
            beta = candidate
            if hi - lo <= 1e-15 * max(1.0, abs(hi)):
                break
    return beta


class _ReducedObjective:
    """Callable ``h(t) = min_beta g(beta, e^t)`` with a warm-started inner solve."""

    def __init__(self, zv: np.ndarray, kind: DivergenceKind, epsilon: float, opts: DualSolverOptions):
        self.zv = zv
        self.kind = kind
        self.epsilon = epsilon
        self.opts = opts
        self.warm_beta: Optional[float] = None

    def __call__(self, t: float) -> "tuple[float, float]":
        gamma = math.exp(t)
        beta = _solve_beta(self.zv, self.kind, gamma, self.warm_beta, self.opts)
        self.warm_beta = beta
        return dual_objective(self.zv, self.kind, self.epsilon, beta, gamma), beta


def _bracket_and_golden(
    h: _ReducedObjective, t0: float, opts: DualSolverOptions, floor: Optional[float] = None
):
    """Bracket a minimizer of the unimodal ``h`` in log-gamma, then golden-section it.

    ``floor`` guards the scale below which the inner location solve loses
    float64 resolution; at a boundary optimum (the reweighting fully
    concentrating) the value there is exact to within ``exp(floor)``.
    """
    floor = opts.gamma_log_floor if floor is None else floor
    cap = opts.gamma_log_cap
    t0 = min(max(t0, floor + 1.0), cap - 1.0)
    v0, _ = h(t0)
    step = 1.0
    t_lo, t_hi = t0 - step, t0 + step
    v_lo, _ = h(t_lo)
    v_hi, _ = h(t_hi)
    guard = 0
    while not (v0 <= v_lo and v0 <= v_hi):
        guard += 1
        if guard > 200:  # pragma: no cover - geometric expansion terminates
            break
        if v_lo < v0:
            t_hi, v_hi = t0, v0
            t0, v0 = t_lo, v_lo
            step *= 2.0
            t_lo = t0 - step
            if t_lo < floor:
                # value keeps improving toward gamma -> 0: the optimum sits
                # on the boundary (the reweighting concentrates fully)
                t_lo = floor
                v_lo, _ = h(t_lo)
                if v_lo <= v0:
                    beta = _solve_beta(h.zv, h.kind, math.exp(floor), h.warm_beta, opts)
                    return floor, beta, v_lo, 0.0
            else:
                v_lo, _ = h(t_lo)
        else:
            t_lo, v_lo = t0, v0
            t0, v0 = t_hi, v_hi
            step *= 2.0
            t_hi = t0 + step
            if t_hi > cap:  # pragma: no cover - epsilon > 0 makes h coercive upward
                t_hi = cap
            v_hi, _ = h(t_hi)
    a, b = t_lo, t_hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    vc, _ = h(c)
    vd, _ = h(d)
    for _ in range(opts.max_iters):
        if b - a <= opts.bracket_tol:
            break
        if vc < vd:
            b, d, vd = d, c, vc
            c = b - _GOLDEN * (b - a)
            vc, _ = h(c)
        else:
            a, c, vc = c, d, vd
            d = a + _GOLDEN * (b - a)
            vd, _ = h(d)
    t_best = c if vc < vd else d
    v_best = min(vc, vd)
    beta = _solve_beta(h.zv, h.kind, math.exp(t_best), h.warm_beta, opts)
    return t_best, beta, v_best, b - a


def _softplus(x: float) -> float:
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def _solve_quasi_newton(
    zv: np.ndarray, kind: DivergenceKind, epsilon: float, beta0: float, gamma0: float
) -> DualPoint:
    """Quasi-Newton fallback over (beta, softplus-parametrized gamma)."""

    def pack(beta: float, gamma: float) -> np.ndarray:
        psi = math.log(math.expm1(gamma)) if gamma > 1e-8 else math.log(gamma)
        return np.array([beta, psi])

    def fun(w: np.ndarray):
        beta, psi = float(w[0]), float(w[1])
        gamma = _softplus(psi)
        if gamma <= 0:
            return 1e12, np.array([0.0, -1.0])
        val = dual_objective(zv, kind, epsilon, beta, gamma)
        if not math.isfinite(val):
            smax = float(zv.max()) - beta
            viol = max(smax - gamma, 0.0) + 1e-6
            return 1e10 + 1e6 * viol, np.array([-1e6, -1e6 / (1.0 + math.exp(-psi))])
        gb, gg = dual_gradient(zv, kind, epsilon, beta, gamma)
        return val, np.array([gb, gg / (1.0 + math.exp(-psi))])

    res = sp_optimize.minimize(fun, pack(beta0, gamma0), jac=True, method="L-BFGS-B")
    beta, psi = float(res.x[0]), float(res.x[1])
    gamma = _softplus(psi)
    return DualPoint(beta=beta, gamma=gamma, value=dual_objective(zv, kind, epsilon, beta, gamma))


def robust_risk_dual(
    z,
    kind: DivergenceKind,
    epsilon: float,
    options: Optional[DualSolverOptions] = None,
) -> DualPoint:
    """Solve the robust reweighted risk at radius ``epsilon``.

    Parameters
    ----------
    z:
        Weighted-cost vector (or :class:`WeightedCosts`).
    epsilon:
        Ambiguity radius; ``epsilon = 0`` short-circuits to the plain mean.

    Returns
    -------
    DualPoint
        The certified minimizer; its ``value`` attribute is the robust risk.

    Raises
    ------
    SolverError
        If neither the primary search nor the quasi-Newton fallback can
        certify convergence.  The exception carries the best iterate found.
    """
    zv = _as_values(z)
    opts = options or _DEFAULT_OPTIONS
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    mean = float(zv.mean())
    if epsilon == 0.0:
        return DualPoint(beta=mean, gamma=0.0, value=mean)
    if float(np.ptp(zv)) == 0.0:
        return DualPoint(beta=mean, gamma=0.0, value=mean)
    h = _ReducedObjective(zv, kind, epsilon, opts)
    t0 = math.log(max(float(zv.std()), 1e-3))
    scale = max(1.0, float(np.max(np.abs(zv))))
    floor = max(math.log(1e-12 * scale), opts.gamma_log_floor)
    t_best, beta, value, width = _bracket_and_golden(h, t0, opts, floor=floor)
    gamma = math.exp(t_best)
    point = DualPoint(beta=beta, gamma=gamma, value=value)
    if math.isfinite(value) and (width <= opts.bracket_tol * 4.0 or t_best <= floor):
        return point
    fallback = _solve_quasi_newton(zv, kind, epsilon, beta, max(gamma, 1e-6))
    if math.isfinite(fallback.value) and fallback.value <= value + 1e-9:
        try:
            gb, gg = dual_gradient(zv, kind, epsilon, fallback.beta, max(fallback.gamma, 1e-300))
            certified = math.hypot(gb, gg) <= 1e-5 * max(1.0, abs(fallback.value))
        except ValueError:
            certified = False
        if certified:
            return fallback
        point = fallback if fallback.value < value else point
    raise SolverError("dual solve failed to certify convergence", best=point)


def optimistic_risk_dual(
    z,
    kind: DivergenceKind,
    epsilon: float,
    options: Optional[DualSolverOptions] = None,
) -> DualPoint:
    """Solve the optimistic (infimum) reweighted risk at radius ``epsilon``.

    Computed by negation: the infimum of ``q . z`` over the divergence ball
    equals minus the robust risk of ``-z`` over the same ball.  The returned
    dual variables refer to the internal maximization of ``-z``, with
    ``beta`` negated so the point stays in the original cost units.
    """
    zv = _as_values(z)
    sol = robust_risk_dual(-zv, kind, epsilon, options)
    return DualPoint(beta=-sol.beta, gamma=sol.gamma, value=-sol.value)


# ----------------------------------------------------------------------
# closed-form path for the exponential (KL) generator
# ----------------------------------------------------------------------


def kl_reduced_dual(z, epsilon: float, gamma: float) -> float:
    """KL dual with the location variable eliminated in closed form.

    ``h(gamma) = gamma * epsilon + gamma * log mean exp(z / gamma)``;
    minimizing this one-dimensional function over ``gamma > 0`` recovers
    the KL robust risk.  Overflow is avoided with a max shift.
    """
    zv = _as_values(z)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    zmax = float(zv.max())
    shifted = np.exp((zv - zmax) / gamma)
    return float(gamma * epsilon + zmax + gamma * math.log(float(np.mean(shifted))))


def kl_softmax_risk(z, gamma: float) -> float:
    """Softmax-tilted weighted cost ``sum_i softmax(z / gamma)_i z_i`` at temperature ``gamma``."""
    zv = _as_values(z)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    shifted = np.exp((zv - float(zv.max())) / gamma)
    w = shifted / shifted.sum()
    return float(np.dot(w, zv))


# ----------------------------------------------------------------------
# brute-force primal oracle (test instrument for small n)
# ----------------------------------------------------------------------

_GRID_CACHE: dict = {}
_DIV_CACHE: dict = {}
_VALUES_CACHE: dict = {}
_PREFIX_CACHE: dict = {}


def _simplex_grid(n: int, resolution: float) -> np.ndarray:
    steps = max(1, int(round(1.0 / resolution)))
    key = (n, steps)
    if key in _GRID_CACHE:
        return _GRID_CACHE[key]
    if n == 1:
        grid = np.array([[1.0]])
    elif n == 2:
        q1 = np.linspace(0.0, 1.0, steps + 1)
        grid = np.column_stack([q1, 1.0 - q1])
    elif n == 3:
        i, j = np.meshgrid(np.arange(steps + 1), np.arange(steps + 1), indexing="ij")
        mask = i + j <= steps
        i, j = i[mask], j[mask]
        grid = np.column_stack([i, j, steps - i - j]) / steps
    elif n == 4:
        pts = []
        for i in range(steps + 1):
            for j in range(steps + 1 - i):
                k = np.arange(steps + 1 - i - j)
                pts.append(np.column_stack([np.full_like(k, i), np.full_like(k, j), k, steps - i - j - k]))
        grid = np.vstack(pts) / steps
    else:
        raise ValueError("the simplex-grid oracle supports n <= 4 only")
    _GRID_CACHE[key] = grid
    return grid


def _grid_divergences(kind: DivergenceKind, n: int, resolution: float):
    steps = max(1, int(round(1.0 / resolution)))
    key = (kind, n, steps)
    if key in _DIV_CACHE:
        return _DIV_CACHE[key]
    grid = _simplex_grid(n, resolution)
    t = n * grid
    # direct formulas (kept independent of the conjugate machinery above)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind is DivergenceKind.CHI_SQUARE:
            vals = (t - 1.0) ** 2
        elif kind is DivergenceKind.KL:
            safe = np.where(t > 0, t, 1.0)
            vals = np.where(t > 0, t * np.log(safe) - t + 1.0, 1.0)
        elif kind is DivergenceKind.BURG:
            vals = np.where(t > 0, -np.log(np.where(t > 0, t, 1.0)) + t - 1.0, np.inf)
        else:
            vals = (np.sqrt(t) - 1.0) ** 2
    d = vals.mean(axis=1)
    # sort by divergence once so any radius becomes a prefix query
    order = np.argsort(d, kind="stable")
    out = (d[order], order)
    _DIV_CACHE[key] = out
    return out


def primal_oracle(z, kind: DivergenceKind, epsilon: float, grid_resolution: float = 1e-4) -> float:
    """Grid maximum of ``q . z`` over the feasible simplex slice; a lower bound on the true supremum.

    Intended as an independent test oracle for ``n <= 4``.  The grid points
    are sorted by divergence once and the objective's running maximum along
    that order is cached per vector, so sweeping several radii or
    generators over the same ``z`` costs one binary search each.
    """
    zv = _as_values(z)
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    n = zv.size
    d_sorted, order = _grid_divergences(kind, n, grid_resolution)
    steps = max(1, int(round(1.0 / grid_resolution)))
    vkey = (n, steps, zv.tobytes())
    if _VALUES_CACHE.get("key") == vkey:
        values = _VALUES_CACHE["values"]
    else:
        values = _simplex_grid(n, grid_resolution) @ zv
        _VALUES_CACHE["key"] = vkey
        _VALUES_CACHE["values"] = values
    pkey = (kind, vkey)
    if _PREFIX_CACHE.get(kind, (None,))[0] == pkey:
        prefix = _PREFIX_CACHE[kind][1]
    else:
        prefix = np.maximum.accumulate(values[order])
        _PREFIX_CACHE[kind] = (pkey, prefix)
    count = int(np.searchsorted(d_sorted, epsilon + 1e-12, side="right"))
    # the uniform point has divergence 0, so the feasible set is never empty
    return float(prefix[count - 1])


# ----------------------------------------------------------------------
# gradients
# ----------------------------------------------------------------------


def dual_gradient(z, kind: DivergenceKind, epsilon: float, beta: float, gamma: float):
    """Analytic partials of the dual objective with respect to ``beta`` and ``gamma``.

    Requires ``gamma > 0`` and the conjugate arguments strictly inside
    their domain; a boundary point raises so the caller can back off.
    """
    zv = _as_values(z)
    if gamma <= 0:
        raise ValueError("dual_gradient requires gamma > 0")
    u = (zv - beta) / gamma
    if kind in (DivergenceKind.BURG, DivergenceKind.HELLINGER) and float(u.max()) >= 1.0:
        raise ValueError("point is outside the conjugate domain")
    with np.errstate(over="ignore"):
        d1 = np.asarray(conjugate_derivative(kind, u), dtype=float)
        vals = np.asarray(phi_conjugate(kind, u), dtype=float)
    if not (np.all(np.isfinite(d1)) and np.all(np.isfinite(vals))):
        raise ValueError("gradient is not finite at this point")
    g_beta = 1.0 - float(np.mean(d1))
    g_gamma = epsilon + float(np.mean(vals - u * d1))
    return g_beta, g_gamma


def dual_gradient_policy(
    log: BanditLog,
    policy: LinearPolicy,
    kind: DivergenceKind,
    epsilon: float,
    beta: float,
    gamma: float,
    weighted: Optional[WeightedCosts] = None,
):
    """Full gradient ``(d/dbeta, d/dgamma, d/dtheta)`` of the dual objective.

    The policy enters through ``z_i = w_i c_i``, so by the chain rule the
    parameter gradient is ``mean_i (phi*)'(u_i) z_i grad log pi(a_i | x_i)``.
    """
    wc = weighted if weighted is not None else importance_weights(log, policy)
    zv = wc.values
    g_beta, g_gamma = dual_gradient(zv, kind, epsilon, beta, gamma)
    u = (zv - beta) / gamma
    d1 = np.asarray(conjugate_derivative(kind, u), dtype=float)
    g_theta = policy.weighted_grad_log_prob_sum(log.features, log.actions, d1 * zv) / log.n
    return g_beta, g_gamma, g_theta
