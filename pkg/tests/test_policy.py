import math

import numpy as np
import pytest

from shapdistill import (
    EnvSpec,
    LinearSoftmaxPolicy,
    TabularPolicy,
    evaluate_returns,
    load_policy,
    make_env,
    q_learn,
    save_policy,
)
from shapdistill.policy import PolicyError, Quantizer, softmax


def all_policies(tree_oracle):
    rng = np.random.default_rng(3)
    return [
        tree_oracle,
        LinearSoftmaxPolicy(rng.normal(size=(3, 4)), rng.normal(size=3)),
        LinearSoftmaxPolicy.uniform(4, 3),
        LinearSoftmaxPolicy.constant(4, 3, 2),
        TabularPolicy(Quantizer(np.zeros(4), np.ones(4)), 3),
    ]


class TestActAndProbs:
    def test_tabular_zero_values_acts_zero(self):
        pol = TabularPolicy(Quantizer(np.zeros(2), np.ones(2)), 4)
        assert pol.act([0.3, 0.8]) == 0

    def test_linear_softmax_argmax(self):
        pol = LinearSoftmaxPolicy(np.zeros((3, 1)), [1.0, 3.0, 2.0])
        assert pol.act([0.0]) == 1

    def test_one_hot_for_tabular(self):
        q = Quantizer(np.zeros(1), np.ones(1), bins=2)
        pol = TabularPolicy(q, 4, {q([0.2]): np.array([0.0, 0.1, 0.5, 0.2])})
        assert pol.action_probs([0.2]).tolist() == [0.0, 0.0, 1.0, 0.0]

    def test_zero_weights_uniform(self):
        p = LinearSoftmaxPolicy.uniform(5, 4).action_probs(np.ones(5))
        assert np.allclose(p, 0.25, atol=0, rtol=1e-15)

    def test_softmax_closed_form(self):
        p = softmax([0.0, math.log(2.0)])
        assert abs(p[0] - 1 / 3) <= 1e-12 and abs(p[1] - 2 / 3) <= 1e-12

    def test_act_is_argmax_of_probs(self, tree_oracle):
        states = np.random.default_rng(0).uniform(size=(1000, 4))
        for pol in all_policies(tree_oracle):
            probs = pol.probs_batch(states)
            assert np.all(probs >= 0)
            assert np.max(np.abs(probs.sum(axis=1) - 1.0)) <= 1e-9
            assert np.array_equal(pol.act_batch(states), np.argmax(probs, axis=1))
            assert [pol.act(s) for s in states[:20]] == pol.act_batch(states[:20]).tolist()

    def test_dimension_mismatch(self, tree_oracle):
        for pol in all_policies(tree_oracle):
            with pytest.raises(ValueError):
                pol.act(np.zeros(5))

    def test_tie_break_lowest(self):
        pol = LinearSoftmaxPolicy(np.zeros((3, 2)), [2.0, 2.0, 1.0])
        assert pol.act([0.5, 0.5]) == 0

    def test_save_load(self, tmp_path, tree_oracle):
        for i, pol in enumerate(all_policies(tree_oracle)):
            save_policy(pol, tmp_path / f"p{i}.json")
            loaded = load_policy(tmp_path / f"p{i}.json")
            states = np.random.default_rng(i).uniform(size=(50, 4))
            assert np.array_equal(loaded.act_batch(states), pol.act_batch(states))
            assert np.array_equal(loaded.probs_batch(states), pol.probs_batch(states))


class TestQLearn:
    def test_beats_uniform_on_gridworld(self):
        env = make_env(EnvSpec("grid", 4, 4, gamma=0.9, max_steps=40), "gridworld", seed=7)
        pol, curve = q_learn(env, 5000, seed=0)
        assert len(curve) == 5000
        learned = evaluate_returns(env, pol, 100, seed=1)
        uniform = evaluate_returns(env, LinearSoftmaxPolicy.uniform(4, 4), 100, seed=1)
        assert learned.mean >= uniform.mean

    def test_recovers_hidden_tree(self, tree_env, tree_oracle):
        # the tree env is a contextual bandit: no bootstrapping, slower exploration decay
        pol, _ = q_learn(tree_env, 1000, seed=0, bins=tree_env.levels, gamma=0.0,
                         epsilon_schedule=(1.0, 0.1, 0.999))
        g = tree_env.grid_states()
        assert np.mean(pol.act_batch(g) == tree_oracle.act_batch(g)) >= 0.95

    def test_deterministic(self, tree_env):
        a, ca = q_learn(tree_env, 50, seed=3)
        b, cb = q_learn(tree_env, 50, seed=3)
        assert ca == cb
        assert a.to_dict() == b.to_dict()

    def test_divergence_guard(self, tree_env):
        with pytest.raises(PolicyError, match="diverged"):
            q_learn(tree_env, 200, seed=0, q_bound=0.5)

    @pytest.mark.parametrize("alpha", [0.0, 1.5])
    def test_alpha_range(self, tree_env, alpha):
        with pytest.raises(ValueError):
            q_learn(tree_env, 10, alpha=alpha)
