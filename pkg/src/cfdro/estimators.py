"""Counterfactual risk estimators over a logged bandit history.

The logged history is a sequence of (context, action, logging propensity,
cost) records.  Estimators reweight the observed costs by the ratio of the
candidate policy's probability to the logging propensity.  Costs are kept
in two unit systems: the raw cost as produced by the environment (Hamming
distance, for supervised conversions) and a rescaled version in [-1, 0]
that the robust machinery requires; the affine map between the two lives
in :class:`CostScale`.

All per-record terms are independent; reductions use numpy's pairwise
summation so results are deterministic for a fixed record order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .policies import ActionSpace, LinearPolicy, Multiclass

__all__ = [
    "CostScale",
    "BanditLog",
    "WeightedCosts",
    "importance_weights",
    "ips_risk",
    "empirical_variance",
    "crm_objective",
    "cv_risk",
    "estimate_rho",
    "log_trick_upper_bound",
]


@dataclass(frozen=True)
class CostScale:
    """Affine map ``scaled = scale * raw + offset`` between cost unit systems."""

    scale: float
    offset: float

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def apply(self, raw):
        return self.scale * np.asarray(raw, dtype=float) + self.offset

    def invert(self, scaled):
        return (np.asarray(scaled, dtype=float) - self.offset) / self.scale

    @classmethod
    def identity(cls) -> "CostScale":
        return cls(1.0, 0.0)

    @classmethod
    def for_hamming(cls, n_labels: int) -> "CostScale":
        """Map Hamming costs in [0, L] onto [-1, 0] (best action cost -1)."""
        return cls(1.0 / n_labels, -1.0)


@dataclass(frozen=True)
class BanditLog:
    """Immutable logged bandit history.

    Attributes
    ----------
    features: ``(n, d)`` context matrix.
    actions: ``(n,)`` integer ids (multiclass) or ``(n, L)`` bit-vectors (factorized).
    propensities: ``(n,)`` logging probabilities of the recorded actions; strictly positive.
    costs_raw: ``(n,)`` costs in environment units.
    costs: ``(n,)`` rescaled costs in [-1, 0].
    """

    features: np.ndarray
    actions: np.ndarray
    propensities: np.ndarray
    costs_raw: np.ndarray
    costs: np.ndarray
    action_space: ActionSpace
    cost_scale: CostScale

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=float)
        props = np.asarray(self.propensities, dtype=float)
        raw = np.asarray(self.costs_raw, dtype=float)
        scaled = np.asarray(self.costs, dtype=float)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValueError("features must be a nonempty (n, d) matrix")
        n = feats.shape[0]
        if isinstance(self.action_space, Multiclass):
            acts = np.asarray(self.actions, dtype=int)
            if acts.shape != (n,):
                raise ValueError("multiclass actions must be a length-n id vector")
            if acts.size and (acts.min() < 0 or acts.max() >= self.action_space.n_actions):
                raise ValueError("action id out of range")
        else:
            acts = np.asarray(self.actions, dtype=np.int8)
            if acts.shape != (n, self.action_space.n_labels):
                raise ValueError("factorized actions must be an (n, L) bit matrix")
        for name, arr in (("propensities", props), ("costs_raw", raw), ("costs", scaled)):
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape (n,)")
        if np.any(props <= 0) or np.any(props > 1.0 + 1e-9):
            raise ValueError("propensities must lie in (0, 1]")
        if np.any(scaled < -1.0 - 1e-9) or np.any(scaled > 1e-9):
            raise ValueError("rescaled costs must lie in [-1, 0]")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "actions", acts)
        object.__setattr__(self, "propensities", props)
        object.__setattr__(self, "costs_raw", raw)
        object.__setattr__(self, "costs", scaled)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class WeightedCosts:
    """Per-record importance weights and weighted costs for one candidate policy."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if values.shape != weights.shape or values.ndim != 1:
            raise ValueError("values and weights must be 1-D of equal length")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.values.shape[0]


def _check_policy_matches(log: BanditLog, policy: LinearPolicy) -> None:
    if type(policy.action_space) is not type(log.action_space):
        raise ValueError("policy and log use different action space kinds")
    if policy.action_space != log.action_space:
        raise ValueError("policy and log disagree on the action space size")
    if policy.feature_dim != log.feature_dim:
        raise ValueError("policy and log disagree on the feature dimension")


def importance_weights(
    log: BanditLog, policy: LinearPolicy, weight_clip: Optional[float] = None
) -> WeightedCosts:
    """Per-record weights ``w_i = pi(a_i | x_i) / p0_i`` and weighted costs ``z_i = w_i c_i``.

    Parameters
    ----------
    weight_clip:
        Optional cap applied to the weights before forming ``z``; when set
        it is applied identically by every estimator in this module.
    """
    _check_policy_matches(log, policy)
    logp = policy.log_prob(log.features, log.actions)
    weights = np.exp(logp - np.log(log.propensities))
    if weight_clip is not None:
        if weight_clip <= 0:
            raise ValueError("weight_clip must be positive")
        weights = np.minimum(weights, weight_clip)
    return WeightedCosts(values=weights * log.costs, weights=weights)


def ips_risk(log: BanditLog, policy: LinearPolicy, weight_clip: Optional[float] = None) -> float:
    """Importance-weighted empirical risk: the mean of the weighted costs."""
    return float(importance_weights(log, policy, weight_clip).values.mean())


def empirical_variance(
    log: BanditLog, policy: LinearPolicy, weight_clip: Optional[float] = None
) -> float:
    """Unbiased sample variance of the weighted costs; requires ``n >= 2``."""
    if log.n < 2:
        raise ValueError("variance needs at least 2 records")
    z = importance_weights(log, policy, weight_clip).values
    return float(z.var(ddof=1))


def crm_objective(
    log: BanditLog,
    policy: LinearPolicy,
    lam: float,
    weight_clip: Optional[float] = None,
) -> float:
    """Variance-penalized risk: ``ips + lam * sqrt(var / n)``."""
    if lam < 0:
        raise ValueError("the variance penalty weight must be nonnegative")
    z = importance_weights(log, policy, weight_clip).values
    if log.n < 2:
        raise ValueError("the penalized objective needs at least 2 records")
    return float(z.mean() + lam * np.sqrt(z.var(ddof=1) / log.n))


def cv_risk(
    log: BanditLog,
    policy: LinearPolicy,
    rho: float,
    weight_clip: Optional[float] = None,
) -> float:
    """Control-variate risk ``mean((c_i - rho) w_i) + rho``.

    Unbiased for every ``rho`` because importance weights have unit mean
    under the logging policy; reduces to the plain weighted mean at
    ``rho = 0``.
    """
    wc = importance_weights(log, policy, weight_clip)
    return float(np.mean((log.costs - rho) * wc.weights) + rho)


def estimate_rho(log: BanditLog) -> float:
    """Empirical mean of the logged (rescaled) costs, the practical control-variate center."""
    return float(log.costs.mean())


def log_trick_upper_bound(
    log: BanditLog,
    policy: LinearPolicy,
    anchor: LinearPolicy,
    weight_clip: Optional[float] = None,
) -> float:
    """Tangent-majorized risk: convex in the policy parameters and above the weighted mean.

    Replaces each weight ratio ``pi / pi_anchor`` with its tangent
    ``1 + log(pi / pi_anchor)`` at the anchor, so the bound is exact at
    ``policy == anchor`` and valid whenever costs are nonpositive and the
    policy is log-concave.
    """
    _check_policy_matches(log, policy)
    _check_policy_matches(log, anchor)
    if np.any(log.costs > 1e-12):
        raise ValueError("the tangent bound requires nonpositive costs")
    anchor_wc = importance_weights(log, anchor, weight_clip)
    log_ratio = policy.log_prob(log.features, log.actions) - anchor.log_prob(
        log.features, log.actions
    )
    if np.any(np.isneginf(log_ratio)):
        raise ValueError("policy assigns probability 0 to a logged action")
    if np.any(anchor_wc.weights == 0):
        raise ValueError("anchor policy must have positive probability on logged actions")
    return float(np.mean(anchor_wc.weights * (1.0 + log_ratio) * log.costs))
