"""Shared fixtures: hand-checked small logs and a discrete synthetic environment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from cfdro.estimators import BanditLog, CostScale
from cfdro.policies import LinearPolicy, Multiclass


def make_two_record_log() -> BanditLog:
    """Two records with logging propensities 0.3 / 0.4 and costs -1 / -0.5.

    Paired with :func:`make_two_record_policy`, the importance weights are
    (2.0, 0.5) and the weighted costs (-2.0, -0.25); every derived number
    in the tests was computed by hand from those.
    """
    return BanditLog(
        features=np.array([[1.0, 0.0], [0.0, 1.0]]),
        actions=np.array([0, 0]),
        propensities=np.array([0.3, 0.4]),
        costs_raw=np.array([-1.0, -0.5]),
        costs=np.array([-1.0, -0.5]),
        action_space=Multiclass(2),
        cost_scale=CostScale.identity(),
    )


def make_two_record_policy() -> LinearPolicy:
    """Policy giving probability 0.6 to the first logged action and 0.2 to the second."""
    theta = np.array(
        [
            [np.log(0.6), np.log(0.4)],
            [np.log(0.2), np.log(0.8)],
            [0.0, 0.0],
        ]
    )
    return LinearPolicy(theta=theta, action_space=Multiclass(2))


@pytest.fixture
def two_record_log() -> BanditLog:
    return make_two_record_log()


@pytest.fixture
def two_record_policy() -> LinearPolicy:
    return make_two_record_policy()


@dataclass
class DiscreteEnv:
    """Three one-hot contexts, three actions, fully known probabilities and costs.

    Cost may depend on the action or not; the exact risk of any row-wise
    policy table is computable in closed form, which makes the environment
    a Monte-Carlo oracle for the estimators.
    """

    p0: np.ndarray  # (3, 3) logging probabilities per context
    p1: np.ndarray  # (3, 3) target-policy probabilities per context
    costs: np.ndarray  # (3, 3) cost table in [-1, 0]

    @staticmethod
    def _policy_from_table(table: np.ndarray) -> LinearPolicy:
        # one-hot contexts turn the log-probability table into exact logits
        theta = np.vstack([np.log(table), np.zeros(3)])
        return LinearPolicy(theta=theta, action_space=Multiclass(3))

    @property
    def logging_policy(self) -> LinearPolicy:
        return self._policy_from_table(self.p0)

    @property
    def target_policy(self) -> LinearPolicy:
        return self._policy_from_table(self.p1)

    def true_risk(self, table: np.ndarray) -> float:
        return float(np.mean(np.sum(table * self.costs, axis=1)))

    def sample_log(self, n: int, rng: np.random.Generator) -> BanditLog:
        ctx = rng.integers(0, 3, size=n)
        u = rng.random(n)
        cdf = np.cumsum(self.p0, axis=1)
        actions = (u[:, None] < cdf[ctx]).argmax(axis=1)
        cost = self.costs[ctx, actions]
        return BanditLog(
            features=np.eye(3)[ctx],
            actions=actions,
            propensities=self.p0[ctx, actions],
            costs_raw=cost,
            costs=cost,
            action_space=Multiclass(3),
            cost_scale=CostScale.identity(),
        )


@pytest.fixture
def action_dependent_env() -> DiscreteEnv:
    return DiscreteEnv(
        p0=np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]]),
        p1=np.array([[0.2, 0.5, 0.3], [0.4, 0.3, 0.3], [0.5, 0.3, 0.2]]),
        costs=np.array([[-1.0, -0.2, -0.6], [-0.4, -0.8, 0.0], [-0.3, -0.9, -0.5]]),
    )


@pytest.fixture
def context_cost_env() -> DiscreteEnv:
    """Costs depend on the context only, so cost and importance weight are independent."""
    return DiscreteEnv(
        p0=np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]]),
        p1=np.array([[0.3, 0.4, 0.3], [0.3, 0.3, 0.4], [0.2, 0.4, 0.4]]),
        costs=np.tile(np.array([[-0.9], [-0.5], [-0.2]]), (1, 3)),
    )
