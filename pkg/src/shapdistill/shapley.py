"""On-manifold characteristic functions and Shapley attribution of policy outputs.

Features are the players. The value of a coalition ``C`` at an anchor state is
the policy output averaged over dataset states that agree with the anchor on
``C`` (an empirical stand-in for the state distribution conditioned on the
observed features). Two outputs are supported:

* ``"det"``: the action index chosen by the policy, averaged as a number.
* ``"stoch"``: the probability the policy assigns to one target action
  (by default the greedy action at the anchor).

Coalitions are handled as integer bitmasks (bit ``i`` set means feature ``i``
is observed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed

from .envs import StateDataset, select_indices

EXACT_LIMIT = 12


class ShapleyError(ValueError):
    pass


@dataclass(frozen=True)
class ConditionalConfig:
    method: str = "knn"  # "knn" | "exact_match"
    knn_k: int = 32
    distance: str = "euclidean"
    fallback: str = "global_mean"

    def __post_init__(self):
        if self.method not in ("knn", "exact_match"):
            raise ValueError(f"unknown conditional method {self.method!r}")
        if self.distance != "euclidean":
            raise ValueError(f"unsupported distance {self.distance!r}")
        if self.fallback != "global_mean":
            raise ValueError(f"unsupported fallback {self.fallback!r}")
        if int(self.knn_k) < 1:
            raise ValueError("knn_k must be >= 1")


@dataclass
class ShapVector:
    values: np.ndarray
    state_index: int
    v_full: float
    v_empty: float
    se: np.ndarray | None = None

    @property
    def efficiency_residual(self) -> float:
        return abs(float(np.sum(self.values)) - (self.v_full - self.v_empty))

    def to_dict(self) -> dict:
        d = {"state_index": int(self.state_index), "phi": [float(x) for x in self.values],
             "v_full": float(self.v_full), "v_empty": float(self.v_empty)}
        if self.se is not None:
            d["se"] = [float(x) for x in self.se]
        return d

    @classmethod
    def from_dict(cls, d) -> "ShapVector":
        se = d.get("se")
        return cls(np.asarray(d["phi"], dtype=float), int(d["state_index"]), float(d["v_full"]),
                   float(d["v_empty"]), None if se is None else np.asarray(se, dtype=float))


def coalition_mask(members: Sequence[int], n: int) -> int:
    mask = 0
    for i in members:
        i = int(i)
        if not 0 <= i < n:
            raise ShapleyError(f"feature index {i} outside [0, {n})")
        if mask >> i & 1:
            raise ShapleyError(f"feature index {i} repeated in coalition")
        mask |= 1 << i
    return mask


def mask_members(mask: int, n: int) -> np.ndarray:
    return np.array([i for i in range(n) if mask >> i & 1], dtype=np.int64)


def _as_states(ds) -> np.ndarray:
    return ds.states if isinstance(ds, StateDataset) else np.asarray(ds, dtype=float)


def _weights_for_mask(X: np.ndarray, anchor: np.ndarray, mask: int, cfg: ConditionalConfig) -> np.ndarray:
    m, n = X.shape
    if m == 0:
        raise ShapleyError("empty dataset")
    full = (1 << n) - 1
    w = np.zeros(m)
    if mask == 0:
        w[:] = 1.0 / m
        return w
    cols = mask_members(mask, n)
    diff = X[:, cols] - anchor[cols]
    if mask == full:
        # point mass on the anchor's own record (lowest index among duplicates);
        # an anchor absent from the dataset falls through to the estimator
        hit = np.flatnonzero(np.all(diff == 0.0, axis=1))
        if len(hit):
            w[hit[0]] = 1.0
            return w
    if cfg.method == "exact_match":
        hit = np.all(diff == 0.0, axis=1)
        if not hit.any():
            w[:] = 1.0 / m
        else:
            w[hit] = 1.0 / hit.sum()
        return w
    if cfg.knn_k > m:
        raise ShapleyError(f"knn_k={cfg.knn_k} exceeds dataset size {m}")
    d2 = np.einsum("ij,ij->i", diff, diff)
    nearest = np.argsort(d2, kind="stable")[: cfg.knn_k]
    w[nearest] = 1.0 / cfg.knn_k
    return w


def conditional_weights(ds, coalition: Sequence[int], anchor, cfg: ConditionalConfig | None = None) -> np.ndarray:
    """Weights over dataset states approximating the distribution given ``anchor`` on ``coalition``."""
    cfg = cfg or ConditionalConfig()
    X = _as_states(ds)
    anchor = np.asarray(anchor, dtype=float).reshape(-1)
    if X.ndim != 2 or anchor.shape[0] != X.shape[1]:
        raise ShapleyError("anchor dimension does not match dataset")
    return _weights_for_mask(X, anchor, coalition_mask(coalition, X.shape[1]), cfg)


def _make_value_fn(X, y, anchor, anchor_value, cfg) -> Callable[[int], float]:
    m, n = X.shape
    full = (1 << n) - 1

    def v(mask: int) -> float:
        if mask == full:
            return float(anchor_value)
        if mask == 0:
            return float(np.mean(y))
        return float(_weights_for_mask(X, anchor, mask, cfg) @ y)

    return v


def char_value_det(policy, ds, anchor, coalition: Sequence[int], cfg: ConditionalConfig | None = None) -> float:
    """Expected action index over states consistent with ``anchor`` on ``coalition``."""
    cfg = cfg or ConditionalConfig()
    X = _as_states(ds)
    anchor = np.asarray(anchor, dtype=float)
    y = policy.act_batch(X).astype(float)
    return _make_value_fn(X, y, anchor, policy.act(anchor), cfg)(coalition_mask(coalition, X.shape[1]))


def char_value_stoch(policy, ds, anchor, coalition: Sequence[int], target_action: int,
                     cfg: ConditionalConfig | None = None) -> float:
    """Expected probability of ``target_action`` over consistent states."""
    cfg = cfg or ConditionalConfig()
    if not 0 <= int(target_action) < policy.n_actions:
        raise ShapleyError(f"target_action {target_action} outside [0, {policy.n_actions})")
    X = _as_states(ds)
    anchor = np.asarray(anchor, dtype=float)
    y = policy.probs_batch(X)[:, int(target_action)]
    anchor_value = policy.action_probs(anchor)[int(target_action)]
    return _make_value_fn(X, y, anchor, anchor_value, cfg)(coalition_mask(coalition, X.shape[1]))


# ---------------------------------------------------------------------------
# Shapley combination over a characteristic function on bitmasks
# ---------------------------------------------------------------------------


def _subset_weights(n: int) -> np.ndarray:
    return np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)])


def shapley_from_game(v: Callable[[int], float], n: int) -> tuple[np.ndarray, float, float]:
    """Exact Shapley values of the game ``v`` on ``n`` players.

    ``v`` is evaluated once per coalition (``2**n`` calls). Returns
    ``(phi, v(N), v(empty))``.
    """
    size = 1 << n
    table = np.array([v(mask) for mask in range(size)], dtype=float)
    masks = np.arange(size)
    popcount = np.array([bin(mask).count("1") for mask in range(size)])
    weights = _subset_weights(n) if n else np.zeros(0)
    phi = np.zeros(n)
    for i in range(n):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        phi[i] = np.sum(weights[popcount[without]] * (table[without | bit] - table[without]))
    return phi, float(table[size - 1]), float(table[0])


def shapley_permutation(v: Callable[[int], float], n: int, permutations: int,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray | None, float, float]:
    """Permutation-sampling estimate; returns ``(phi_hat, standard_error, v(N), v(empty))``.

    ``standard_error`` is ``None`` for a single permutation.
    """
    if permutations < 1:
        raise ShapleyError("permutations must be >= 1")
    memo: dict[int, float] = {}

    def cached(mask):
        if mask not in memo:
            memo[mask] = v(mask)
        return memo[mask]

    contrib = np.zeros((permutations, n))
    v_empty = cached(0)
    for p in range(permutations):
        mask, prev = 0, v_empty
        for i in rng.permutation(n):
            mask |= 1 << int(i)
            cur = cached(mask)
            contrib[p, i] = cur - prev
            prev = cur
    phi = contrib.mean(axis=0)
    se = contrib.std(axis=0, ddof=1) / math.sqrt(permutations) if permutations > 1 else None
    return phi, se, cached((1 << n) - 1), v_empty


# ---------------------------------------------------------------------------
# policy-level attribution
# ---------------------------------------------------------------------------


def _anchor_values(policy, X, mode):
    if mode == "det":
        return policy.act_batch(X).astype(float)
    if mode == "stoch":
        return policy.probs_batch(X)
    raise ShapleyError(f"unknown mode {mode!r}; expected 'det' or 'stoch'")


def _attribute_anchor(X, outputs, index, anchor, anchor_output, mode, target_action, cfg, method,
                      permutations, seed, exact_limit) -> ShapVector:
    n = X.shape[1]
    if mode == "det":
        y, a_val = outputs, anchor_output
    else:
        a = int(np.argmax(anchor_output)) if target_action is None else int(target_action)
        y, a_val = outputs[:, a], anchor_output[a]
    v = _make_value_fn(X, y, anchor, a_val, cfg)
    if method == "exact":
        if n > exact_limit:
            raise ShapleyError(f"{n} features exceeds exact_limit={exact_limit}; use method='sampled'")
        phi, v_full, v_empty = shapley_from_game(v, n)
        return ShapVector(phi, index, v_full, v_empty)
    if method == "sampled":
        rng = np.random.default_rng([int(seed), int(max(index, 0))])
        phi, se, v_full, v_empty = shapley_permutation(v, n, permutations, rng)
        return ShapVector(phi, index, v_full, v_empty, se)
    raise ShapleyError(f"unknown method {method!r}")


def _resolve(policy, ds, mode, target_action):
    if isinstance(ds, StateDataset) and (policy.n_features != ds.n_features):
        raise ShapleyError("policy and dataset disagree on n_features")
    if mode == "stoch" and target_action is not None and not 0 <= int(target_action) < policy.n_actions:
        raise ShapleyError(f"target_action {target_action} outside [0, {policy.n_actions})")
    X = _as_states(ds)
    return X, _anchor_values(policy, X, mode)


def shapley_exact(policy, ds, anchor, mode: str = "det", cfg: ConditionalConfig | None = None,
                  target_action: int | None = None, exact_limit: int = EXACT_LIMIT,
                  state_index: int = -1) -> ShapVector:
    """Exact attribution at one anchor state (``2**n`` coalition evaluations)."""
    cfg = cfg or ConditionalConfig()
    X, outputs = _resolve(policy, ds, mode, target_action)
    anchor = np.asarray(anchor, dtype=float).reshape(-1)
    anchor_output = _anchor_values(policy, anchor[None, :], mode)[0]
    return _attribute_anchor(X, outputs, state_index, anchor, anchor_output, mode, target_action, cfg,
                             "exact", None, 0, exact_limit)


def shapley_sampled(policy, ds, anchor, mode: str = "det", cfg: ConditionalConfig | None = None,
                    permutations: int = 1000, seed: int = 0, target_action: int | None = None,
                    state_index: int = -1) -> ShapVector:
    """Monte-Carlo permutation estimate at one anchor, with per-feature standard errors."""
    cfg = cfg or ConditionalConfig()
    X, outputs = _resolve(policy, ds, mode, target_action)
    anchor = np.asarray(anchor, dtype=float).reshape(-1)
    anchor_output = _anchor_values(policy, anchor[None, :], mode)[0]
    return _attribute_anchor(X, outputs, state_index, anchor, anchor_output, mode, target_action, cfg,
                             "sampled", permutations, seed, EXACT_LIMIT)


def _attribute_chunk(X, outputs, indices, mode, target_action, cfg, method, permutations, seed, exact_limit):
    return [_attribute_anchor(X, outputs, int(i), X[i], outputs[i], mode, target_action, cfg, method,
                              permutations, seed, exact_limit) for i in indices]


def attribute_dataset(policy, ds: StateDataset, mode: str = "det", cfg: ConditionalConfig | None = None,
                      method: str = "exact", permutations: int = 1000, seed: int = 0,
                      max_states: int | None = None, exact_limit: int = EXACT_LIMIT,
                      target_action: int | None = None, n_jobs: int = 1) -> list[ShapVector]:
    """One Shapley vector per selected dataset state, in dataset order.

    The policy is queried once per dataset state up front; the per-state work
    only touches those cached outputs, so it parallelizes over ``n_jobs``
    processes without shipping the policy. ``max_states`` picks a seeded subset
    of anchors; the conditioning set is always the whole dataset.
    """
    cfg = cfg or ConditionalConfig()
    if method == "exact" and ds.n_features > exact_limit:
        raise ShapleyError(f"{ds.n_features} features exceeds exact_limit={exact_limit}; use method='sampled'")
    X, outputs = _resolve(policy, ds, mode, target_action)
    if len(X) == 0:
        raise ShapleyError("empty dataset")
    selected = select_indices(len(X), max_states, seed)
    n_chunks = max(1, min(int(n_jobs), len(selected))) if n_jobs and n_jobs > 0 else 1
    args = (mode, target_action, cfg, method, permutations, seed, exact_limit)
    if n_chunks == 1:
        return _attribute_chunk(X, outputs, selected, *args)
    chunks = np.array_split(selected, n_chunks)
    results = Parallel(n_jobs=n_chunks)(delayed(_attribute_chunk)(X, outputs, c, *args) for c in chunks)
    return [sv for part in results for sv in part]


def save_shap_vectors(vectors: Sequence[ShapVector], path) -> None:
    lines = [json.dumps(sv.to_dict(), allow_nan=False) for sv in vectors]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_shap_vectors(path) -> list[ShapVector]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if line.strip():
            try:
                out.append(ShapVector.from_dict(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ShapleyError(f"{path}:{lineno}: bad Shapley record ({exc})") from None
    return out
