"""Supervised-to-bandit conversion pipeline.

A labeled multilabel dataset is turned into logged bandit feedback by (1)
splitting it, (2) fitting a smoothed linear logging policy on a small
fraction of the training rows, and (3) replaying the logging policy over
the training rows, recording for each sampled action its exact logging
probability and its Hamming cost against the true labels.  Raw Hamming
costs in ``[0, L]`` are affinely rescaled to ``[-1, 0]`` so that better
actions have smaller cost.

File formats (documented bit-exactly):

* LibSVM multilabel text, one row per line::

      label[,label]* index:value [index:value ...]

  Labels are 0-based positions into the label bit-vector; feature indices
  are 1-based.  Missing indices are zero.  An empty label field yields the
  all-zero label vector.

* Bandit logs as JSON lines: a header object with metadata followed by one
  record object per line with keys ``features``, ``action``, ``propensity``,
  ``cost_raw`` and ``cost_scaled``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import optimize as sp_optimize
from scipy.special import expit, logsumexp

from .estimators import BanditLog, CostScale
from .policies import (
    ActionSpace,
    FactorizedLabels,
    LabeledDataset,
    LinearPolicy,
    Multiclass,
    action_bitvectors,
)

__all__ = [
    "SplitSpec",
    "DatasetSplits",
    "LoggingPolicyConfig",
    "parse_libsvm_multilabel",
    "write_libsvm_multilabel",
    "split_dataset",
    "train_logging_policy",
    "collect_bandit_log",
    "sample_bandit_log",
    "write_bandit_log",
    "read_bandit_log",
    "synthetic_multilabel_dataset",
]


@dataclass(frozen=True)
class SplitSpec:
    """Fractions for the train/validation/test partition and the logging subset."""

    train_frac: float = 0.5
    validation_frac: float = 0.25
    test_frac: float = 0.25
    logging_frac: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("train_frac", "validation_frac", "test_frac"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if abs(self.train_frac + self.validation_frac + self.test_frac - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if not 0 < self.logging_frac <= 1:
            raise ValueError("logging_frac must lie in (0, 1]")


@dataclass(frozen=True)
class DatasetSplits:
    train: LabeledDataset
    validation: LabeledDataset
    test: LabeledDataset
    logging: LabeledDataset
    indices: dict


def parse_libsvm_multilabel(
    path,
    n_features: Optional[int] = None,
    n_labels: Optional[int] = None,
) -> LabeledDataset:
    """Parse a multilabel LibSVM text file into dense features and label bit-vectors.

    Dimensions are inferred from the file when not given; explicit values
    may only enlarge them.  Malformed lines and duplicate feature indices
    raise with the offending line number.
    """
    rows: list[tuple[list[int], dict[int, float]]] = []
    max_feat = 0
    max_label = -1
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            tokens = line.split()
            label_token = tokens[0]
            feat_tokens = tokens[1:]
            if ":" in label_token:
                # empty label field: the line starts directly with features
                feat_tokens = tokens
                label_token = ""
            labels: list[int] = []
            if label_token:
                try:
                    labels = [int(part) for part in label_token.split(",") if part != ""]
                except ValueError as exc:
                    raise ValueError(f"line {lineno}: bad label field {label_token!r}") from exc
                if any(lab < 0 for lab in labels):
                    raise ValueError(f"line {lineno}: negative label")
            feats: dict[int, float] = {}
            for token in feat_tokens:
                idx_str, _, val_str = token.partition(":")
                try:
                    idx = int(idx_str)
                    val = float(val_str)
                except ValueError as exc:
                    raise ValueError(f"line {lineno}: bad feature token {token!r}") from exc
                if idx < 1:
                    raise ValueError(f"line {lineno}: feature indices are 1-based")
                if idx in feats:
                    raise ValueError(f"line {lineno}: duplicate feature index {idx}")
                feats[idx] = val
            rows.append((labels, feats))
            if feats:
                max_feat = max(max_feat, max(feats))
            if labels:
                max_label = max(max_label, max(labels))
    if not rows:
        raise ValueError("empty dataset file")
    dim = max_feat if n_features is None else n_features
    n_lab = (max_label + 1) if n_labels is None else n_labels
    if dim < max_feat:
        raise ValueError(f"n_features={dim} is smaller than the largest index {max_feat}")
    if n_lab < max_label + 1:
        raise ValueError(f"n_labels={n_lab} is smaller than the largest label {max_label}")
    n_lab = max(n_lab, 1)
    features = np.zeros((len(rows), dim))
    labels = np.zeros((len(rows), n_lab), dtype=np.int8)
    for i, (labs, feats) in enumerate(rows):
        for idx, val in feats.items():
            features[i, idx - 1] = val
        for lab in labs:
            labels[i, lab] = 1
    return LabeledDataset(features, labels)


def write_libsvm_multilabel(dataset: LabeledDataset, path) -> None:
    """Write a dataset in the multilabel LibSVM text format (nonzero features only)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for i in range(dataset.n_rows):
            labs = ",".join(str(j) for j in np.flatnonzero(dataset.labels[i]))
            feats = " ".join(
                f"{j + 1}:{float(dataset.features[i, j])!r}"
                for j in np.flatnonzero(dataset.features[i])
            )
            fh.write((labs + " " + feats).strip() + "\n")


def split_dataset(dataset: LabeledDataset, spec: SplitSpec) -> DatasetSplits:
    """Seeded shuffle into disjoint train/validation/test, plus a logging subset of train."""
    m = dataset.n_rows
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(m)
    n_train = int(round(spec.train_frac * m))
    n_val = int(round(spec.validation_frac * m))
    n_train = max(1, min(n_train, m - 2))
    n_val = max(1, min(n_val, m - n_train - 1))
    train_idx = perm[:n_train]
    val_idx = perm[n_train : n_train + n_val]
    test_idx = perm[n_train + n_val :]
    n_logging = max(1, int(round(spec.logging_frac * n_train)))
    logging_idx = rng.choice(train_idx, size=n_logging, replace=False)
    return DatasetSplits(
        train=dataset.subset(train_idx),
        validation=dataset.subset(val_idx),
        test=dataset.subset(test_idx),
        logging=dataset.subset(logging_idx),
        indices={
            "train": train_idx.tolist(),
            "validation": val_idx.tolist(),
            "test": test_idx.tolist(),
            "logging": logging_idx.tolist(),
        },
    )


@dataclass(frozen=True)
class LoggingPolicyConfig:
    """Supervised fit settings for the logging policy.

    ``temperature`` smooths the fitted policy after training, guaranteeing
    full support (and hence finite importance weights) on every action.
    """

    action_space: str = "factorized"
    max_iters: int = 300
    tolerance: float = 1e-8
    l2: float = 1e-4
    temperature: float = 2.0

    def __post_init__(self) -> None:
        if self.action_space not in ("factorized", "multiclass"):
            raise ValueError("action_space must be 'factorized' or 'multiclass'")
        if self.temperature <= 0 or self.l2 < 0 or self.max_iters < 1:
            raise ValueError("invalid logging-policy configuration")


def _with_bias(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def train_logging_policy(
    dataset: LabeledDataset, config: LoggingPolicyConfig = LoggingPolicyConfig()
) -> LinearPolicy:
    """Fit a linear policy to the labels by regularized maximum likelihood.

    Factorized spaces use one logistic regression per label; multiclass
    spaces use a softmax cross-entropy against the integer encoding of the
    label bit-vector.  Weight decay excludes the bias row.
    """
    xb = _with_bias(dataset.features)
    m, d1 = xb.shape
    if config.action_space == "factorized":
        space: ActionSpace = FactorizedLabels(dataset.n_labels)
        targets = dataset.labels.astype(float)

        def objective(flat: np.ndarray):
            theta = flat.reshape(d1, space.n_logits)
            scores = xb @ theta
            # mean BCE over all (row, label) cells, in the stable log1p form
            loss = float(np.mean(np.logaddexp(0.0, scores) - targets * scores))
            grad = xb.T @ (expit(scores) - targets) / (m * space.n_logits)
            grad_flat = grad.ravel()
            if config.l2 > 0:
                loss += 0.5 * config.l2 * float(np.sum(theta[:-1] ** 2))
                reg = np.zeros_like(theta)
                reg[:-1] = config.l2 * theta[:-1]
                grad_flat = grad_flat + reg.ravel()
            return loss, grad_flat

    else:
        n_labels = dataset.n_labels
        if n_labels > 12:
            raise ValueError("multiclass encoding limited to 12 labels")
        space = Multiclass(1 << n_labels)
        powers = 1 << np.arange(n_labels)
        classes = dataset.labels.astype(int) @ powers

        def objective(flat: np.ndarray):
            theta = flat.reshape(d1, space.n_logits)
            scores = xb @ theta
            lse = logsumexp(scores, axis=1)
            loss = float(np.mean(lse - scores[np.arange(m), classes]))
            probs = np.exp(scores - lse[:, None])
            probs[np.arange(m), classes] -= 1.0
            grad = xb.T @ probs / m
            grad_flat = grad.ravel()
            if config.l2 > 0:
                loss += 0.5 * config.l2 * float(np.sum(theta[:-1] ** 2))
                reg = np.zeros_like(theta)
                reg[:-1] = config.l2 * theta[:-1]
                grad_flat = grad_flat + reg.ravel()
            return loss, grad_flat

    result = sp_optimize.minimize(
        objective,
        np.zeros(d1 * space.n_logits),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": config.max_iters, "ftol": config.tolerance, "gtol": 1e-10},
    )
    theta = result.x.reshape(d1, space.n_logits)
    return LinearPolicy(theta=theta, action_space=space, temperature=config.temperature)


def _hamming_costs(actions, labels: np.ndarray, space: ActionSpace) -> np.ndarray:
    t = labels.astype(float)
    if isinstance(space, FactorizedLabels):
        a = np.asarray(actions, dtype=float)
        return np.sum(np.abs(a - t), axis=1)
    bits = action_bitvectors(int(math.log2(space.n_actions))).astype(float)
    a = bits[np.asarray(actions, dtype=int)]
    return np.sum(np.abs(a - t), axis=1)


def _log_from_rows(
    dataset: LabeledDataset, policy0: LinearPolicy, row_idx: np.ndarray, rng: np.random.Generator
) -> BanditLog:
    feats = dataset.features[row_idx]
    labels = dataset.labels[row_idx]
    actions = policy0.sample_actions(feats, rng)
    propensities = np.exp(policy0.log_prob(feats, actions))
    raw = _hamming_costs(actions, labels, policy0.action_space)
    scale = CostScale.for_hamming(dataset.n_labels)
    return BanditLog(
        features=feats,
        actions=actions,
        propensities=propensities,
        costs_raw=raw,
        costs=scale.apply(raw),
        action_space=policy0.action_space,
        cost_scale=scale,
    )


def collect_bandit_log(
    dataset: LabeledDataset, policy0: LinearPolicy, replay_count: int, seed: int = 0
) -> BanditLog:
    """Replay the logging policy over every row ``replay_count`` times.

    Produces ``replay_count * n_rows`` records; each stores the exact
    probability the logging policy assigned to its sampled action.
    """
    if replay_count < 1:
        raise ValueError("replay count must be a positive integer")
    rng = np.random.default_rng(seed)
    row_idx = np.tile(np.arange(dataset.n_rows), replay_count)
    return _log_from_rows(dataset, policy0, row_idx, rng)


def sample_bandit_log(
    dataset: LabeledDataset, policy0: LinearPolicy, n: int, seed: int = 0
) -> BanditLog:
    """Collect ``n`` records with contexts drawn independently and uniformly from the rows."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    row_idx = rng.integers(0, dataset.n_rows, size=n)
    return _log_from_rows(dataset, policy0, row_idx, rng)


_LOG_FORMAT = "cfdro-banditlog"
_LOG_VERSION = 1


def write_bandit_log(log: BanditLog, path) -> None:
    """Serialize a bandit log as JSON lines: one metadata header, then one record per line."""
    if isinstance(log.action_space, Multiclass):
        space = {"kind": "multiclass", "size": log.action_space.n_actions}
        encode = lambda a: int(a)  # noqa: E731 - tiny per-record closure
    else:
        space = {"kind": "factorized", "size": log.action_space.n_labels}
        encode = lambda a: [int(b) for b in a]  # noqa: E731
    header = {
        "format": _LOG_FORMAT,
        "version": _LOG_VERSION,
        "n": log.n,
        "feature_dim": log.feature_dim,
        "action_space": space,
        "cost_scale": {"scale": log.cost_scale.scale, "offset": log.cost_scale.offset},
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for i in range(log.n):
            record = {
                "features": [float(v) for v in log.features[i]],
                "action": encode(log.actions[i]),
                "propensity": float(log.propensities[i]),
                "cost_raw": float(log.costs_raw[i]),
                "cost_scaled": float(log.costs[i]),
            }
            fh.write(json.dumps(record) + "\n")


def read_bandit_log(path) -> BanditLog:
    """Read a log written by :func:`write_bandit_log`, validating every record."""
    with Path(path).open("r", encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ValueError("missing or malformed log header") from exc
        if header.get("format") != _LOG_FORMAT or header.get("version") != _LOG_VERSION:
            raise ValueError("not a recognized bandit-log file")
        space_meta = header["action_space"]
        if space_meta["kind"] == "multiclass":
            space: ActionSpace = Multiclass(int(space_meta["size"]))
        elif space_meta["kind"] == "factorized":
            space = FactorizedLabels(int(space_meta["size"]))
        else:
            raise ValueError(f"unknown action space kind {space_meta['kind']!r}")
        dim = int(header["feature_dim"])
        n = int(header["n"])
        feats, actions, props, raws, scaleds = [], [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            record = json.loads(line)
            vec = record["features"]
            if len(vec) != dim:
                raise ValueError(f"line {lineno}: feature dimension mismatch")
            if record["propensity"] <= 0:
                raise ValueError(f"line {lineno}: nonpositive propensity")
            action = record["action"]
            if isinstance(space, FactorizedLabels):
                if len(action) != space.n_labels:
                    raise ValueError(f"line {lineno}: action length mismatch")
            feats.append(vec)
            actions.append(action)
            props.append(record["propensity"])
            raws.append(record["cost_raw"])
            scaleds.append(record["cost_scaled"])
    if len(feats) != n:
        raise ValueError(f"header announces {n} records but file has {len(feats)}")
    scale = CostScale(**header["cost_scale"])
    return BanditLog(
        features=np.asarray(feats, dtype=float),
        actions=np.asarray(actions),
        propensities=np.asarray(props, dtype=float),
        costs_raw=np.asarray(raws, dtype=float),
        costs=np.asarray(scaleds, dtype=float),
        action_space=space,
        cost_scale=scale,
    )


def synthetic_multilabel_dataset(
    n_rows: int = 200,
    n_labels: int = 4,
    n_features: int = 5,
    seed: int = 7,
    label_noise: float = 0.5,
) -> LabeledDataset:
    """Deterministic synthetic multilabel dataset used by the tests and the CLI.

    Labels are thresholded noisy linear scores of Gaussian features, so the
    dataset is learnable by a linear policy but not separable.  The default
    dimensions keep a 10-row logging fit well-determined.
    """
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(n_rows, n_features))
    weights = rng.normal(scale=1.2, size=(n_features, n_labels))
    bias = rng.normal(scale=0.3, size=n_labels)
    scores = features @ weights + bias + rng.normal(scale=label_noise, size=(n_rows, n_labels))
    labels = (scores > 0).astype(np.int8)
    return LabeledDataset(features, labels)
