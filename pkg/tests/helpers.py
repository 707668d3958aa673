"""Independent reference implementations used as test oracles.

Nothing here imports the package's Shapley or conditioning code: the subset
enumeration uses itertools and factorials directly, and the neighbour
selection sorts (distance, index) tuples in pure Python. The small policies and
instance generators at the bottom are shared by several test modules.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from shapdistill import LinearSoftmaxPolicy, StateDataset
from shapdistill.policy import Policy


def brute_force_shapley(v, n):
    """Literal subset sum over C ⊆ N \\ {i}; ``v`` takes a frozenset of players."""
    phi = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        total = 0.0
        for size in range(n):
            w = math.factorial(size) * math.factorial(n - size - 1) / math.factorial(n)
            for C in itertools.combinations(others, size):
                total += w * (v(frozenset(C) | {i}) - v(frozenset(C)))
        phi.append(total)
    return np.array(phi)


def knn_weights(X, anchor, coalition, knn_k):
    """Uniform weights on the knn_k rows nearest to ``anchor`` on ``coalition``; ties to lowest row."""
    m, n = len(X), len(anchor)
    w = [0.0] * m
    if not coalition:
        return np.full(m, 1.0 / m)
    cols = sorted(coalition)
    dist = [(sum((float(X[r][c]) - float(anchor[c])) ** 2 for c in cols), r) for r in range(m)]
    if len(cols) == n:
        same = [r for d, r in dist if d == 0.0]
        if same:
            w[same[0]] = 1.0
            return np.array(w)
    for _, r in sorted(dist)[:knn_k]:
        w[r] = 1.0 / knn_k
    return np.array(w)


def exact_match_weights(X, anchor, coalition):
    m = len(X)
    if not coalition:
        return np.full(m, 1.0 / m)
    cols = sorted(coalition)
    hit = np.array([all(X[r][c] == anchor[c] for c in cols) for r in range(m)], dtype=float)
    if hit.sum() == 0:
        return np.full(m, 1.0 / m)
    return hit / hit.sum()


def det_game(policy, X, anchor, knn_k=None, exact_match=False):
    """Characteristic function of the deterministic mode, on frozensets."""
    y = np.array([policy.act(s) for s in X], dtype=float)
    a_full = float(policy.act(anchor))
    n = len(anchor)

    def v(C):
        if len(C) == n:
            return a_full
        w = exact_match_weights(X, anchor, C) if exact_match else knn_weights(X, anchor, C, knn_k)
        return float(np.dot(w, y))

    return v


def stoch_game(policy, X, anchor, action, knn_k):
    y = np.array([policy.action_probs(s)[action] for s in X], dtype=float)
    a_full = float(policy.action_probs(anchor)[action])
    n = len(anchor)

    def v(C):
        if len(C) == n:
            return a_full
        return float(np.dot(knn_weights(X, anchor, C, knn_k), y))

    return v


def as_mask_game(v_sets, n):
    """Adapt a frozenset game to the package's bitmask convention."""
    return lambda mask: v_sets(frozenset(i for i in range(n) if mask >> i & 1))


class SumPolicy(Policy):
    """Deterministic: action = rounded sum of features, clipped to [0, k)."""

    def __init__(self, n_features, n_actions, weights=None):
        super().__init__(n_features, n_actions)
        self.weights = np.ones(n_features) if weights is None else np.asarray(weights, dtype=float)

    def action_probs(self, state):
        a = int(np.clip(np.rint(self.weights @ self._check(state)), 0, self.n_actions - 1))
        p = np.zeros(self.n_actions)
        p[a] = 1.0
        return p


def dataset(states, k=3):
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    m = len(states)
    return StateDataset(np.zeros(m), np.arange(m), states, np.zeros(m), np.zeros(m), states.shape[1], k)


def random_instance(seed, n=None):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9)) if n is None else n
    k = int(rng.integers(2, 6))
    m = int(rng.integers(max(4, n), 40))
    X = np.round(rng.normal(size=(m, n)), 1)
    pol = LinearSoftmaxPolicy(rng.normal(size=(k, n)) * 2, rng.normal(size=k))
    anchor = X[int(rng.integers(m))] if rng.random() < 0.7 else np.round(rng.normal(size=n), 1)
    knn_k = int(rng.integers(1, m + 1))
    return X, pol, anchor, knn_k, k
