"""Log-linear policies over discrete action spaces and labeled datasets.

Two parametrizations are provided.  ``Multiclass`` treats the action set as
``K`` mutually exclusive choices scored by a softmax over linear logits.
``FactorizedLabels`` treats an action as a bit-vector of ``L`` independent
Bernoulli decisions, each driven by its own linear logit; the joint action
probability is the product of the per-label probabilities.  Both are
log-concave in the parameter matrix, which the convex policy-optimization
surrogates rely on.

A bias feature is appended internally, so a policy over ``d``-dimensional
contexts carries a ``(d + 1, m)`` parameter matrix whose last row is the
per-logit intercept.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.special import expit, log_expit, logsumexp

__all__ = [
    "Multiclass",
    "FactorizedLabels",
    "ActionSpace",
    "LinearPolicy",
    "LabeledDataset",
    "true_risk",
    "greedy_risk",
    "save_policy",
    "load_policy",
    "action_bitvectors",
]

_MAX_ENUMERABLE = 4096


@dataclass(frozen=True)
class Multiclass:
    """Action space of ``n_actions`` mutually exclusive choices."""

    n_actions: int

    def __post_init__(self) -> None:
        if self.n_actions < 2:
            raise ValueError("a multiclass space needs at least 2 actions")

    @property
    def n_logits(self) -> int:
        return self.n_actions


@dataclass(frozen=True)
class FactorizedLabels:
    """Action space of length-``n_labels`` bit-vectors with independent coordinates."""

    n_labels: int

    def __post_init__(self) -> None:
        if self.n_labels < 1:
            raise ValueError("a factorized space needs at least 1 label")

    @property
    def n_logits(self) -> int:
        return self.n_labels

    @property
    def n_actions(self) -> int:
        return 1 << self.n_labels


ActionSpace = Union[Multiclass, FactorizedLabels]


def _space_to_dict(space: ActionSpace) -> dict:
    if isinstance(space, Multiclass):
        return {"kind": "multiclass", "size": space.n_actions}
    return {"kind": "factorized", "size": space.n_labels}


def _space_from_dict(payload: dict) -> ActionSpace:
    kind = payload.get("kind")
    if kind == "multiclass":
        return Multiclass(int(payload["size"]))
    if kind == "factorized":
        return FactorizedLabels(int(payload["size"]))
    raise ValueError(f"unknown action space kind {kind!r}")


def action_bitvectors(n_labels: int) -> np.ndarray:
    """Table of all ``2**n_labels`` bit-vectors; row ``k`` is the bits of ``k`` (LSB first)."""
    if n_labels > 12:
        raise ValueError("action enumeration limited to 12 labels")
    ids = np.arange(1 << n_labels)[:, None]
    return ((ids >> np.arange(n_labels)[None, :]) & 1).astype(np.int8)


def _with_bias(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.concatenate([x, [1.0]])
    return np.hstack([x, np.ones((x.shape[0], 1))])


@dataclass(frozen=True)
class LinearPolicy:
    """Immutable linear policy with parameter matrix ``theta`` of shape ``(d + 1, n_logits)``.

    ``temperature`` divides the logits before the softmax / sigmoid, so
    larger values yield smoother (higher-entropy) policies without
    retraining.  Policies are value objects: all operations are pure and
    thread-safe, and sampling requires an explicit generator.
    """

    theta: np.ndarray
    action_space: ActionSpace
    temperature: float = 1.0

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 2:
            raise ValueError("theta must be a 2-D matrix")
        if theta.shape[1] != self.action_space.n_logits:
            raise ValueError(
                f"theta has {theta.shape[1]} columns but the action space "
                f"needs {self.action_space.n_logits}"
            )
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "theta", theta)

    @property
    def feature_dim(self) -> int:
        return self.theta.shape[0] - 1

    # ------------------------------------------------------------------
    # core probability computations (vectorized over records)
    # ------------------------------------------------------------------

    def _scores(self, x: np.ndarray) -> np.ndarray:
        return _with_bias(x) @ self.theta / self.temperature

    def log_prob(self, x: np.ndarray, actions) -> np.ndarray:
        """Log probability of each action given its context.

        ``x`` may be a single context or a ``(n, d)`` batch; ``actions``
        are integer ids for a multiclass space and ``(..., L)`` bit-vectors
        for a factorized one.
        """
        single = np.ndim(x) == 1
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        scores = self._scores(xs)
        if isinstance(self.action_space, Multiclass):
            acts = np.atleast_1d(np.asarray(actions, dtype=int))
            logp = scores - logsumexp(scores, axis=1, keepdims=True)
            out = logp[np.arange(xs.shape[0]), acts]
        else:
            acts = np.asarray(actions, dtype=float)
            acts = acts[None, :] if acts.ndim == 1 else acts
            # log sigma(s) and log sigma(-s) via the numerically stable form
            out = np.sum(acts * log_expit(scores) + (1.0 - acts) * log_expit(-scores), axis=1)
        return float(out[0]) if single else out

    def prob(self, x: np.ndarray, actions) -> np.ndarray:
        out = np.exp(self.log_prob(x, actions))
        return out

    def action_prob(self, x: np.ndarray, action) -> float:
        """Probability of one action in one context."""
        return float(np.exp(self.log_prob(x, action)))

    def class_probabilities(self, x: np.ndarray) -> np.ndarray:
        """Softmax probabilities over actions (multiclass spaces only)."""
        if not isinstance(self.action_space, Multiclass):
            raise ValueError("class_probabilities is only defined for multiclass spaces")
        single = np.ndim(x) == 1
        scores = self._scores(np.atleast_2d(np.asarray(x, dtype=float)))
        logp = scores - logsumexp(scores, axis=1, keepdims=True)
        probs = np.exp(logp)
        return probs[0] if single else probs

    def label_probabilities(self, x: np.ndarray) -> np.ndarray:
        """Per-label Bernoulli probabilities (factorized spaces only)."""
        if not isinstance(self.action_space, FactorizedLabels):
            raise ValueError("label_probabilities is only defined for factorized spaces")
        single = np.ndim(x) == 1
        probs = expit(self._scores(np.atleast_2d(np.asarray(x, dtype=float))))
        return probs[0] if single else probs

    def joint_action_probabilities(self, x: np.ndarray) -> np.ndarray:
        """Probability of every action in one context, enumerated.

        For factorized spaces the enumeration covers all ``2**L``
        bit-vectors, ordered by their integer encoding.
        """
        if isinstance(self.action_space, Multiclass):
            return self.class_probabilities(x)
        if self.action_space.n_actions > _MAX_ENUMERABLE:
            raise ValueError("action space too large to enumerate")
        bits = action_bitvectors(self.action_space.n_labels)
        p = self.label_probabilities(x)
        return np.prod(np.where(bits == 1, p[None, :], 1.0 - p[None, :]), axis=1)

    # ------------------------------------------------------------------
    # decisions
    # ------------------------------------------------------------------

    def sample_actions(self, x: np.ndarray, rng: np.random.Generator):
        """Draw one action per context row; deterministic given the generator state."""
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        n = xs.shape[0]
        if isinstance(self.action_space, Multiclass):
            probs = self.class_probabilities(xs)
            cdf = np.cumsum(probs, axis=1)
            u = rng.random(n)
            # guard against cumulative rounding at the top end
            cdf[:, -1] = 1.0
            return (u[:, None] < cdf).argmax(axis=1)
        probs = self.label_probabilities(xs)
        return (rng.random(probs.shape) < probs).astype(np.int8)

    def sample_action(self, x: np.ndarray, rng: np.random.Generator):
        out = self.sample_actions(np.atleast_2d(np.asarray(x, dtype=float)), rng)
        if isinstance(self.action_space, Multiclass):
            return int(out[0])
        return out[0]

    def greedy_actions(self, x: np.ndarray):
        """Highest-probability action per context; ties resolve to the lowest index."""
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        if isinstance(self.action_space, Multiclass):
            return self.class_probabilities(xs).argmax(axis=1)
        # joint argmax factorizes; a label at exactly 1/2 ties toward 0,
        # which is the lexicographically smallest action
        return (self.label_probabilities(xs) > 0.5).astype(np.int8)

    def greedy_action(self, x: np.ndarray):
        out = self.greedy_actions(np.atleast_2d(np.asarray(x, dtype=float)))
        if isinstance(self.action_space, Multiclass):
            return int(out[0])
        return out[0]

    # ------------------------------------------------------------------
    # gradients
    # ------------------------------------------------------------------

    def grad_log_prob(self, x: np.ndarray, action) -> np.ndarray:
        """Gradient of ``log pi(action | x)`` w.r.t. ``theta``, shape ``(d + 1, n_logits)``."""
        xb = _with_bias(np.asarray(x, dtype=float))
        if isinstance(self.action_space, Multiclass):
            probs = self.class_probabilities(x)
            indicator = np.zeros(self.action_space.n_actions)
            indicator[int(action)] = 1.0
            return np.outer(xb, indicator - probs) / self.temperature
        probs = self.label_probabilities(x)
        bits = np.asarray(action, dtype=float)
        return np.outer(xb, bits - probs) / self.temperature

    def weighted_grad_log_prob_sum(
        self, x: np.ndarray, actions, coefficients: np.ndarray
    ) -> np.ndarray:
        """Compute ``sum_i coefficients[i] * grad_theta log pi(a_i | x_i)`` in one pass."""
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        xb = _with_bias(xs)
        coef = np.asarray(coefficients, dtype=float)
        if isinstance(self.action_space, Multiclass):
            probs = self.class_probabilities(xs)
            resid = -probs
            resid[np.arange(xs.shape[0]), np.asarray(actions, dtype=int)] += 1.0
        else:
            resid = np.asarray(actions, dtype=float) - self.label_probabilities(xs)
        return xb.T @ (coef[:, None] * resid) / self.temperature


@dataclass(frozen=True)
class LabeledDataset:
    """Rows of (features, label bit-vector) used for conversion and exact scoring."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int8)
        if feats.ndim != 2 or labels.ndim != 2:
            raise ValueError("features and labels must be 2-D")
        if feats.shape[0] != labels.shape[0]:
            raise ValueError("features and labels must have the same number of rows")
        if feats.shape[0] < 1:
            raise ValueError("dataset must contain at least one row")
        if labels.size and (labels.min() < 0 or labels.max() > 1):
            raise ValueError("labels must be 0/1 bit-vectors")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=int)
        return LabeledDataset(self.features[idx], self.labels[idx])


def true_risk(policy: LinearPolicy, dataset: LabeledDataset) -> float:
    """Exact expected Hamming cost of ``policy`` with contexts drawn uniformly from the rows.

    For factorized policies the expectation over actions has the closed
    form ``sum_j [ t_j (1 - p_j) + (1 - t_j) p_j ]`` per row; multiclass
    policies are scored by full enumeration of the action set.
    """
    t = dataset.labels.astype(float)
    if isinstance(policy.action_space, FactorizedLabels):
        if policy.action_space.n_labels != dataset.n_labels:
            raise ValueError("policy and dataset disagree on the number of labels")
        p = policy.label_probabilities(dataset.features)
        per_row = np.sum(t * (1.0 - p) + (1.0 - t) * p, axis=1)
        return float(per_row.mean())
    space = policy.action_space
    if space.n_actions > _MAX_ENUMERABLE:
        raise ValueError("multiclass action space too large for exact enumeration")
    n_labels = dataset.n_labels
    if space.n_actions != (1 << n_labels):
        raise ValueError("multiclass space must enumerate all label bit-vectors")
    bits = action_bitvectors(n_labels).astype(float)
    # Hamming(a, t) = sum(a) + sum(t) - 2 a.t for 0/1 vectors
    hamming = t.sum(axis=1, keepdims=True) + bits.sum(axis=1)[None, :] - 2.0 * t @ bits.T
    probs = policy.class_probabilities(dataset.features)
    return float(np.mean(np.sum(probs * hamming, axis=1)))


def greedy_risk(policy: LinearPolicy, dataset: LabeledDataset) -> float:
    """Exact Hamming risk of the deterministic argmax version of ``policy``.

    Reported alongside :func:`true_risk`; neither dominates the other in
    general, so both are surfaced rather than asserting an ordering.
    """
    t = dataset.labels.astype(float)
    if isinstance(policy.action_space, FactorizedLabels):
        bits = policy.greedy_actions(dataset.features).astype(float)
    else:
        n_labels = dataset.n_labels
        if policy.action_space.n_actions != (1 << n_labels):
            raise ValueError("multiclass space must enumerate all label bit-vectors")
        table = action_bitvectors(n_labels).astype(float)
        bits = table[policy.greedy_actions(dataset.features)]
    return float(np.sum(np.abs(bits - t), axis=1).mean())


_CHECKPOINT_FORMAT = "cfdro-policy"
_CHECKPOINT_VERSION = 1


def save_policy(policy: LinearPolicy, path) -> None:
    """Write a policy checkpoint as versioned JSON; exact float round-trip."""
    payload = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "action_space": _space_to_dict(policy.action_space),
        "temperature": policy.temperature,
        "theta": [[float(v) for v in row] for row in policy.theta],
    }
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def load_policy(path) -> LinearPolicy:
    """Read a checkpoint written by :func:`save_policy`."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != _CHECKPOINT_FORMAT:
        raise ValueError("not a policy checkpoint")
    if payload.get("version") != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    return LinearPolicy(
        theta=np.asarray(payload["theta"], dtype=float),
        action_space=_space_from_dict(payload["action_space"]),
        temperature=float(payload["temperature"]),
    )
