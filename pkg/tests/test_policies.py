"""Policy probabilities, sampling, gradients, exact risks and checkpoints."""

import math
from dataclasses import replace

import numpy as np
import pytest

from cfdro.policies import (
    FactorizedLabels,
    LabeledDataset,
    LinearPolicy,
    Multiclass,
    action_bitvectors,
    greedy_risk,
    load_policy,
    save_policy,
    true_risk,
)


def uniform_policy(space, dim=3):
    return LinearPolicy(theta=np.zeros((dim + 1, space.n_logits)), action_space=space)


def random_policy(space, dim, rng, scale=1.0):
    return LinearPolicy(
        theta=scale * rng.normal(size=(dim + 1, space.n_logits)), action_space=space
    )


def test_zero_parameters_give_uniform_probabilities():
    x = np.array([0.3, -1.0, 2.0])
    pol = uniform_policy(Multiclass(4))
    for a in range(4):
        assert pol.action_prob(x, a) == pytest.approx(0.25, abs=1e-12)
    fac = uniform_policy(FactorizedLabels(3))
    bits = action_bitvectors(3)
    for row in bits:
        assert fac.action_prob(x, row) == pytest.approx(0.125, abs=1e-12)


@pytest.mark.parametrize("space", [Multiclass(5), FactorizedLabels(4)])
def test_probabilities_sum_to_one(space):
    rng = np.random.default_rng(0)
    pol = random_policy(space, 3, rng)
    for _ in range(10):
        x = rng.normal(size=3)
        assert pol.joint_action_probabilities(x).sum() == pytest.approx(1.0, abs=1e-10)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(1)
    pol = random_policy(Multiclass(4), 3, rng)
    shift = rng.normal(size=4)  # added to every class column: all logits move together
    shifted = replace(pol, theta=pol.theta + shift[:, None])
    for _ in range(5):
        x = rng.normal(size=3)
        np.testing.assert_allclose(
            pol.class_probabilities(x), shifted.class_probabilities(x), atol=1e-10
        )


def test_sampling_frequencies_match_probabilities():
    pol = uniform_policy(Multiclass(4))
    rng = np.random.default_rng(2)
    x = np.tile(np.array([0.5, -0.5, 1.0]), (100_000, 1))
    draws = pol.sample_actions(x, rng)
    freqs = np.bincount(draws, minlength=4) / draws.size
    sigma = math.sqrt(0.25 * 0.75 / draws.size)
    assert np.all(np.abs(freqs - 0.25) < 3 * sigma)


def test_degenerate_logits_always_win():
    theta = np.zeros((4, 3))
    theta[3, 1] = 40.0  # bias pushes action 1 to probability ~1
    pol = LinearPolicy(theta=theta, action_space=Multiclass(3))
    rng = np.random.default_rng(3)
    draws = pol.sample_actions(np.zeros((5000, 3)), rng)
    assert np.all(draws == 1)


def test_sampling_is_deterministic_given_the_seed():
    rng1 = np.random.default_rng(42)
    rng2 = np.random.default_rng(42)
    pol = uniform_policy(FactorizedLabels(3))
    x = np.random.default_rng(0).normal(size=(50, 3))
    np.testing.assert_array_equal(pol.sample_actions(x, rng1), pol.sample_actions(x, rng2))


def test_greedy_action_tie_rule_and_argmax():
    pol = uniform_policy(Multiclass(4))
    assert pol.greedy_action(np.zeros(3)) == 0  # exact tie resolves to the lowest id
    fac = uniform_policy(FactorizedLabels(3))
    np.testing.assert_array_equal(fac.greedy_action(np.zeros(3)), [0, 0, 0])
    rng = np.random.default_rng(4)
    rand = random_policy(Multiclass(6), 3, rng)
    for _ in range(20):
        x = rng.normal(size=3)
        assert rand.greedy_action(x) == int(np.argmax(rand.joint_action_probabilities(x)))


def test_greedy_action_invariant_to_temperature():
    rng = np.random.default_rng(5)
    pol = random_policy(Multiclass(5), 3, rng)
    hot = replace(pol, temperature=10.0)
    for _ in range(20):
        x = rng.normal(size=3)
        assert pol.greedy_action(x) == hot.greedy_action(x)


@pytest.mark.parametrize("space", [Multiclass(4), FactorizedLabels(3)])
def test_grad_log_prob_matches_finite_differences(space):
    rng = np.random.default_rng(6)
    pol = random_policy(space, 3, rng, scale=0.7)
    x = rng.normal(size=3)
    action = 2 if isinstance(space, Multiclass) else np.array([1, 0, 1], dtype=np.int8)
    grad = pol.grad_log_prob(x, action)
    h = 1e-6
    for i in range(pol.theta.shape[0]):
        for j in range(pol.theta.shape[1]):
            up = pol.theta.copy()
            up[i, j] += h
            down = pol.theta.copy()
            down[i, j] -= h
            fd = (
                replace(pol, theta=up).log_prob(x, action)
                - replace(pol, theta=down).log_prob(x, action)
            ) / (2 * h)
            assert grad[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_softmax_score_identity_at_zero():
    pol = uniform_policy(Multiclass(4))
    x = np.array([0.5, -1.0, 0.25])
    total = sum(pol.action_prob(x, a) * pol.grad_log_prob(x, a) for a in range(4))
    np.testing.assert_allclose(total, 0.0, atol=1e-12)


def test_factorized_gradient_is_sum_of_per_label_scores():
    rng = np.random.default_rng(7)
    pol = random_policy(FactorizedLabels(3), 2, rng)
    x = rng.normal(size=2)
    bits = np.array([1, 0, 1], dtype=np.int8)
    grad = pol.grad_log_prob(x, bits)
    p = pol.label_probabilities(x)
    xb = np.concatenate([x, [1.0]])
    expected = np.outer(xb, bits - p)
    np.testing.assert_allclose(grad, expected, atol=1e-12)


def test_weighted_grad_sum_matches_loop():
    rng = np.random.default_rng(8)
    pol = random_policy(FactorizedLabels(3), 2, rng)
    xs = rng.normal(size=(7, 2))
    acts = (rng.random((7, 3)) < 0.5).astype(np.int8)
    coefs = rng.normal(size=7)
    batched = pol.weighted_grad_log_prob_sum(xs, acts, coefs)
    looped = sum(c * pol.grad_log_prob(x, a) for c, x, a in zip(coefs, xs, acts))
    np.testing.assert_allclose(batched, looped, atol=1e-10)


def make_dataset(rng, m=40, d=3, labels=3):
    feats = rng.normal(size=(m, d))
    labs = (rng.random((m, labels)) < 0.5).astype(np.int8)
    return LabeledDataset(feats, labs)


class TestTrueRisk:
    def test_label_matching_policy_has_zero_risk(self):
        rng = np.random.default_rng(9)
        w = rng.normal(size=(3, 3))
        feats = rng.normal(size=(120, 3))
        scores = feats @ w
        keep = np.min(np.abs(scores), axis=1) > 0.1  # margin so a sharp policy saturates
        ds = LabeledDataset(feats[keep], (scores[keep] > 0).astype(np.int8))
        sharp = LinearPolicy(
            theta=np.vstack([w * 500.0, np.zeros(3)]), action_space=FactorizedLabels(3)
        )
        assert true_risk(sharp, ds) == pytest.approx(0.0, abs=1e-8)
        assert greedy_risk(sharp, ds) == 0.0

    def test_uniform_factorized_policy_costs_half_the_labels(self):
        rng = np.random.default_rng(10)
        ds = make_dataset(rng, labels=4)
        pol = uniform_policy(FactorizedLabels(4))
        assert true_risk(pol, ds) == pytest.approx(2.0, abs=1e-12)

    @pytest.mark.parametrize("space", [Multiclass(8), FactorizedLabels(3)])
    def test_matches_monte_carlo(self, space):
        rng = np.random.default_rng(11)
        ds = make_dataset(rng, m=12, labels=3)
        pol = random_policy(space, 3, rng, scale=0.6)
        exact = true_risk(pol, ds)
        draws = 100_000
        rows = rng.integers(0, ds.n_rows, size=draws)
        actions = pol.sample_actions(ds.features[rows], rng)
        if isinstance(space, Multiclass):
            bits = action_bitvectors(3)[actions]
        else:
            bits = actions
        costs = np.abs(bits - ds.labels[rows]).sum(axis=1)
        stderr = costs.std(ddof=1) / math.sqrt(draws)
        assert abs(costs.mean() - exact) <= 3 * stderr

    def test_greedy_and_stochastic_risks_both_reported(self):
        rng = np.random.default_rng(12)
        ds = make_dataset(rng)
        pol = random_policy(FactorizedLabels(3), 3, rng)
        stochastic = true_risk(pol, ds)
        greedy = greedy_risk(pol, ds)
        assert stochastic >= 0.0 and greedy >= 0.0


@pytest.mark.parametrize("space", [Multiclass(4), FactorizedLabels(3)])
def test_log_probability_is_concave_in_parameters(space):
    rng = np.random.default_rng(13)
    x = rng.normal(size=3)
    action = 1 if isinstance(space, Multiclass) else np.array([0, 1, 1], dtype=np.int8)
    for _ in range(30):
        a = random_policy(space, 3, rng)
        b = random_policy(space, 3, rng)
        mid = replace(a, theta=(a.theta + b.theta) / 2)
        assert mid.log_prob(x, action) >= (
            a.log_prob(x, action) + b.log_prob(x, action)
        ) / 2 - 1e-10


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(14)
    for space in (Multiclass(4), FactorizedLabels(3)):
        pol = random_policy(space, 5, rng)
        pol = replace(pol, temperature=1.7)
        path = tmp_path / "policy.json"
        save_policy(pol, path)
        back = load_policy(path)
        np.testing.assert_array_equal(back.theta, pol.theta)
        assert back.action_space == pol.action_space
        assert back.temperature == pol.temperature


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "bogus.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(ValueError):
        load_policy(path)


def test_policy_validation():
    with pytest.raises(ValueError):
        LinearPolicy(theta=np.zeros((3, 2)), action_space=Multiclass(3))
    with pytest.raises(ValueError):
        LinearPolicy(theta=np.zeros((3, 2)), action_space=Multiclass(2), temperature=0.0)
