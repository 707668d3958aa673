"""Interpretable surrogates: CART tree, floored linear regression, softmax regression.

All three map a feature vector to an action index. Inference follows the
printed conventions of the surrogate tables they are meant to reproduce:
tree walks go left on ``x[f] <= threshold``, the linear score is floored and
clamped to the action range, and the softmax model predicts the lowest-index
class among the maximal logits.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .policy import Policy, one_hot, softmax

BUNDLE_VERSION = 1
_TIE_EPS = 1e-12


class SurrogateError(ValueError):
    pass


class BundleError(ValueError):
    pass


# ---------------------------------------------------------------------------
# decision tree
# ---------------------------------------------------------------------------


@dataclass
class DecisionTree:
    """Flat binary tree; ``feature[i] == -1`` marks a leaf holding ``value[i]``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_features: int
    n_actions: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=float)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=np.int64)
        self.validate()

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, i: int) -> bool:
        return self.feature[i] == -1

    def validate(self) -> None:
        m = self.n_nodes
        if m == 0 or not (len(self.threshold) == len(self.left) == len(self.right) == len(self.value) == m):
            raise SurrogateError("malformed tree: node arrays empty or of unequal length")
        seen = set()
        stack = [0]
        while stack:
            i = stack.pop()
            if not 0 <= i < m or i in seen:
                raise SurrogateError(f"malformed tree: node {i} out of range or reached twice")
            seen.add(i)
            if self.feature[i] == -1:
                if not 0 <= self.value[i] < self.n_actions:
                    raise SurrogateError(f"malformed tree: leaf {i} class {self.value[i]} out of range")
            else:
                if not 0 <= self.feature[i] < self.n_features or not math.isfinite(self.threshold[i]):
                    raise SurrogateError(f"malformed tree: bad split at node {i}")
                stack.extend([int(self.right[i]), int(self.left[i])])
        if len(seen) != m:
            raise SurrogateError("malformed tree: unreachable nodes")

    def depth(self) -> int:
        def rec(i):
            return 0 if self.is_leaf(i) else 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)

    def predict(self, state) -> int:
        x = np.asarray(state, dtype=float).reshape(-1)
        if x.shape[0] != self.n_features:
            raise SurrogateError(f"state has {x.shape[0]} features, tree expects {self.n_features}")
        i = 0
        while self.feature[i] != -1:
            i = self.left[i] if x[self.feature[i]] <= self.threshold[i] else self.right[i]
        return int(self.value[i])

    def predict_batch(self, states) -> np.ndarray:
        return np.array([self.predict(s) for s in np.asarray(states, dtype=float)], dtype=np.int64)

    @classmethod
    def from_nested(cls, node: dict, n_features: int, n_actions: int, params: dict | None = None):
        """Build from ``{"feature", "threshold", "left", "right"}`` / ``{"class"}`` dicts (preorder ids)."""
        arrays = {"feature": [], "threshold": [], "left": [], "right": [], "value": []}

        def add(nd):
            i = len(arrays["feature"])
            for a in arrays.values():
                a.append(-1)
            arrays["threshold"][i] = 0.0
            if "class" in nd:
                arrays["value"][i] = int(nd["class"])
                return i
            arrays["feature"][i] = int(nd["feature"])
            arrays["threshold"][i] = float(nd["threshold"])
            arrays["left"][i] = add(nd["left"])
            arrays["right"][i] = add(nd["right"])
            return i

        add(node)
        return cls(n_features=n_features, n_actions=n_actions, params=params or {}, **arrays)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, d, n_features, n_actions) -> "DecisionTree":
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"], n_features, n_actions,
                   dict(d.get("params", {})))


def _gini_rows(counts: np.ndarray, totals: np.ndarray) -> np.ndarray:
    p = counts / totals[:, None]
    return 1.0 - np.sum(p * p, axis=1)


def _best_split(X, y, k, min_leaf):
    m, n = X.shape
    best = None
    for f in range(n):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        onehot = np.zeros((m, k))
        onehot[np.arange(m), ys] = 1.0
        left_counts = np.cumsum(onehot, axis=0)[:-1]
        right_counts = left_counts[-1] + onehot[-1] - left_counts
        n_left = np.arange(1, m, dtype=float)
        n_right = m - n_left
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        g = (n_left * _gini_rows(left_counts, n_left) + n_right * _gini_rows(right_counts, n_right)) / m
        for p in np.flatnonzero(valid):
            if best is None or g[p] < best[0] - _TIE_EPS:
                lo, hi = xs[p], xs[p + 1]
                thr = (lo + hi) / 2.0
                if not lo <= thr < hi:
                    thr = lo
                best = (float(g[p]), f, float(thr))
    return best


def fit_tree(X, y, n_actions: int, max_depth: int = 4, min_leaf: int = 1) -> DecisionTree:
    """Greedy CART on weighted Gini impurity.

    Candidate thresholds are midpoints between consecutive distinct values.
    Ties go to the lowest feature index, then the lowest threshold. Any impure
    node within the depth budget with an admissible split is split, even when
    the impurity does not drop (this keeps XOR-shaped labelings reachable).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise SurrogateError("X must be 2-D with one label per row")
    if len(y) < 2:
        raise SurrogateError("tree surrogate needs at least 2 boundary points")
    if max_depth < 1 or min_leaf < 1:
        raise SurrogateError("max_depth and min_leaf must be >= 1")
    if y.min() < 0 or y.max() >= n_actions:
        raise SurrogateError(f"labels must lie in [0, {n_actions})")
    k = int(n_actions)
    nodes = {"feature": [], "threshold": [], "left": [], "right": [], "value": []}

    def build(idx, depth):
        i = len(nodes["feature"])
        counts = np.bincount(y[idx], minlength=k)
        for key, val in (("feature", -1), ("threshold", 0.0), ("left", -1), ("right", -1),
                         ("value", int(np.argmax(counts)))):
            nodes[key].append(val)
        if depth >= max_depth or counts.max() == len(idx) or len(idx) < 2 * min_leaf:
            return i
        split = _best_split(X[idx], y[idx], k, min_leaf)
        if split is None:
            return i
        _, f, thr = split
        go_left = X[idx, f] <= thr
        nodes["feature"][i] = f
        nodes["threshold"][i] = thr
        nodes["value"][i] = -1
        nodes["left"][i] = build(idx[go_left], depth + 1)
        nodes["right"][i] = build(idx[~go_left], depth + 1)
        return i

    build(np.arange(len(y)), 0)
    return DecisionTree(n_features=X.shape[1], n_actions=k,
                        params={"max_depth": int(max_depth), "min_leaf": int(min_leaf), "criterion": "gini"},
                        **nodes)


def tree_predict(tree: DecisionTree, state) -> int:
    return tree.predict(state)


# ---------------------------------------------------------------------------
# linear regression on the action index
# ---------------------------------------------------------------------------


@dataclass
class LinearSurrogate:
    intercept: float
    coeffs: np.ndarray
    n_actions: int

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)

    @property
    def n_features(self) -> int:
        return len(self.coeffs)

    def raw_score(self, state) -> float:
        x = np.asarray(state, dtype=float).reshape(-1)
        if x.shape[0] != self.n_features:
            raise SurrogateError(f"state has {x.shape[0]} features, model expects {self.n_features}")
        return float(self.intercept + self.coeffs @ x)

    def predict(self, state) -> int:
        raw = self.raw_score(state)
        return int(min(max(math.floor(raw), 0), self.n_actions - 1))

    def predict_batch(self, states) -> np.ndarray:
        return np.array([self.predict(s) for s in np.asarray(states, dtype=float)], dtype=np.int64)

    def to_dict(self) -> dict:
        return {"intercept": float(self.intercept), "coeffs": [float(c) for c in self.coeffs]}

    @classmethod
    def from_dict(cls, d, n_actions) -> "LinearSurrogate":
        return cls(float(d["intercept"]), d["coeffs"], n_actions)


def fit_linear(X, y, n_actions: int, jitter: float = 1e-8) -> LinearSurrogate:
    """Least squares of the action index on the features, intercept included.

    Solved through the centered normal equations; a ridge ``jitter`` is added
    only when the Gram matrix is singular or badly conditioned.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < 2:
        raise SurrogateError("linear surrogate needs at least 2 boundary points")
    mu, ybar = X.mean(axis=0), y.mean()
    Xc, yc = X - mu, y - ybar
    gram = Xc.T @ Xc
    rhs = Xc.T @ yc
    n = X.shape[1]
    try:
        np.linalg.cholesky(gram)
        well_posed = np.linalg.cond(gram) < 1e12
    except np.linalg.LinAlgError:
        well_posed = False
    if not well_posed:
        gram = gram + jitter * np.eye(n)
    try:
        beta = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        raise SurrogateError("degenerate design even after ridge jitter") from None
    if not np.all(np.isfinite(beta)):
        raise SurrogateError("degenerate design even after ridge jitter")
    return LinearSurrogate(float(ybar - mu @ beta), beta, int(n_actions))


def linear_predict(model: LinearSurrogate, state) -> int:
    return model.predict(state)


# ---------------------------------------------------------------------------
# multinomial logistic regression
# ---------------------------------------------------------------------------


@dataclass
class LogisticSurrogate:
    """Per-class logits ``intercepts[c] + coefs[c] @ x`` over the observed ``classes``."""

    classes: np.ndarray
    intercepts: np.ndarray
    coefs: np.ndarray
    n_actions: int
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.int64)
        self.intercepts = np.asarray(self.intercepts, dtype=float)
        self.coefs = np.asarray(self.coefs, dtype=float).reshape(len(self.classes), -1)
        if np.any(np.diff(self.classes) <= 0):
            raise SurrogateError("logistic classes must be strictly increasing")

    @property
    def n_features(self) -> int:
        return self.coefs.shape[1]

    def logits(self, state) -> np.ndarray:
        x = np.asarray(state, dtype=float).reshape(-1)
        if x.shape[0] != self.n_features:
            raise SurrogateError(f"state has {x.shape[0]} features, model expects {self.n_features}")
        return self.intercepts + self.coefs @ x

    def class_probs(self, state) -> np.ndarray:
        return softmax(self.logits(state))

    def predict(self, state) -> tuple[int, np.ndarray]:
        """Return ``(action, probabilities over all n_actions)``; absent actions get 0."""
        p = self.class_probs(state)
        full = np.zeros(self.n_actions)
        full[self.classes] = p
        return int(self.classes[int(np.argmax(p))]), full

    def predict_batch(self, states) -> np.ndarray:
        return np.array([self.predict(s)[0] for s in np.asarray(states, dtype=float)], dtype=np.int64)

    def to_dict(self) -> dict:
        return {"classes": self.classes.tolist(), "intercepts": [float(b) for b in self.intercepts],
                "coefs": [[float(c) for c in row] for row in self.coefs], "info": dict(self.info)}

    @classmethod
    def from_dict(cls, d, n_actions) -> "LogisticSurrogate":
        return cls(d["classes"], d["intercepts"], d["coefs"], n_actions, dict(d.get("info", {})))


def logistic_objective(W, b, Z, Y, l2):
    """Mean cross-entropy plus ``l2 / 2 * ||W||^2`` and its gradient.

    ``Z`` is the (standardized) design, ``Y`` one-hot targets. Returns
    ``(loss, grad_W, grad_b)``.
    """
    m = len(Z)
    logits = Z @ W.T + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_norm
    loss = -np.sum(Y * log_p) / m + 0.5 * l2 * np.sum(W * W)
    diff = np.exp(log_p) - Y
    return loss, diff.T @ Z / m + l2 * W, diff.mean(axis=0)


def fit_logistic(X, y, n_actions: int, l2: float = 1e-3, lr: float = 0.1, max_epochs: int = 5000,
                 tol: float = 1e-7) -> LogisticSurrogate:
    """Full-batch gradient descent on L2-regularized softmax cross-entropy.

    Only labels present in ``y`` become classes. Features are standardized for
    the optimization (zero-variance columns left unscaled) and the fitted
    coefficients are mapped back to raw feature units. Parameters start at 0.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    classes = np.unique(y)
    if len(classes) < 2:
        raise SurrogateError("logistic surrogate needs >= 2 distinct labels; use the tree or linear model")
    mu = X.mean(axis=0)
    sigma = X.std(axis=0)
    sigma[sigma == 0] = 1.0
    Z = (X - mu) / sigma
    Y = (y[:, None] == classes[None, :]).astype(float)
    W = np.zeros((len(classes), X.shape[1]))
    b = np.zeros(len(classes))
    epochs, grad_norm = 0, float("inf")
    for epochs in range(1, max_epochs + 1):
        _, gW, gb = logistic_objective(W, b, Z, Y, l2)
        grad_norm = math.sqrt(float(np.sum(gW * gW) + np.sum(gb * gb)))
        if grad_norm < tol:
            break
        W -= lr * gW
        b -= lr * gb
    coefs = W / sigma
    intercepts = b - coefs @ mu
    info = {"epochs": int(epochs), "grad_norm": float(grad_norm), "l2": float(l2), "lr": float(lr)}
    return LogisticSurrogate(classes, intercepts, coefs, int(n_actions), info)


def logistic_predict(model: LogisticSurrogate, state) -> tuple[int, np.ndarray]:
    return model.predict(state)


# ---------------------------------------------------------------------------
# policy wrapper, bundle, exports
# ---------------------------------------------------------------------------


class SurrogatePolicy(Policy):
    kind = "surrogate"

    def __init__(self, model):
        n_features = model.n_features
        super().__init__(n_features, model.n_actions)
        self.model = model

    def act(self, state) -> int:
        s = self._check(state)
        if isinstance(self.model, LogisticSurrogate):
            return self.model.predict(s)[0]
        return self.model.predict(s)

    def action_probs(self, state) -> np.ndarray:
        s = self._check(state)
        if isinstance(self.model, LogisticSurrogate):
            return self.model.predict(s)[1]
        return one_hot(self.model.predict(s), self.n_actions)

    def act_batch(self, states) -> np.ndarray:
        return self.model.predict_batch(np.asarray(states, dtype=float).reshape(-1, self.n_features))


@dataclass
class SurrogateBundle:
    tree: DecisionTree
    linear: LinearSurrogate
    logistic: LogisticSurrogate
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = {(m.n_features, m.n_actions) for m in (self.tree, self.linear, self.logistic)}
        if len(dims) != 1:
            raise BundleError(f"surrogates disagree on (n_features, n_actions): {sorted(dims)}")

    @property
    def n_features(self) -> int:
        return self.tree.n_features

    @property
    def n_actions(self) -> int:
        return self.tree.n_actions

    def policies(self) -> dict[str, SurrogatePolicy]:
        return {"tree": SurrogatePolicy(self.tree), "linear": SurrogatePolicy(self.linear),
                "logistic": SurrogatePolicy(self.logistic)}

    def to_dict(self) -> dict:
        return {
            "version": BUNDLE_VERSION,
            "n_features": int(self.n_features),
            "n_actions": int(self.n_actions),
            "tree": self.tree.to_dict(),
            "linear": self.linear.to_dict(),
            "logistic": self.logistic.to_dict(),
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"


_num = {"type": "number"}
_int = {"type": "integer"}
BUNDLE_SCHEMA = {
    "type": "object",
    "required": ["version", "n_features", "n_actions", "tree", "linear", "logistic", "metadata"],
    "properties": {
        "version": {"const": BUNDLE_VERSION},
        "n_features": {"type": "integer", "minimum": 1},
        "n_actions": {"type": "integer", "minimum": 2},
        "tree": {
            "type": "object",
            "required": ["feature", "threshold", "left", "right", "value"],
            "properties": {
                "feature": {"type": "array", "items": _int, "minItems": 1},
                "threshold": {"type": "array", "items": _num, "minItems": 1},
                "left": {"type": "array", "items": _int, "minItems": 1},
                "right": {"type": "array", "items": _int, "minItems": 1},
                "value": {"type": "array", "items": _int, "minItems": 1},
                "params": {"type": "object"},
            },
        },
        "linear": {
            "type": "object",
            "required": ["intercept", "coeffs"],
            "properties": {"intercept": _num, "coeffs": {"type": "array", "items": _num}},
        },
        "logistic": {
            "type": "object",
            "required": ["classes", "intercepts", "coefs"],
            "properties": {
                "classes": {"type": "array", "items": _int, "minItems": 2},
                "intercepts": {"type": "array", "items": _num},
                "coefs": {"type": "array", "items": {"type": "array", "items": _num}},
                "info": {"type": "object"},
            },
        },
        "metadata": {"type": "object"},
    },
}


def bundle_from_dict(d) -> SurrogateBundle:
    if isinstance(d, dict) and "version" in d and d["version"] != BUNDLE_VERSION:
        raise BundleError(f"bundle version {d['version']!r} != supported {BUNDLE_VERSION}")
    try:
        jsonschema.validate(d, BUNDLE_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise BundleError(f"bundle schema violation at {where}: {exc.message}") from None
    n, k = d["n_features"], d["n_actions"]
    try:
        return SurrogateBundle(
            DecisionTree.from_dict(d["tree"], n, k),
            LinearSurrogate.from_dict(d["linear"], k),
            LogisticSurrogate.from_dict(d["logistic"], k),
            d["metadata"],
        )
    except (SurrogateError, ValueError) as exc:
        raise BundleError(f"bundle content invalid: {exc}") from None


def save_bundle(bundle: SurrogateBundle, path) -> None:
    Path(path).write_text(bundle.to_json(), encoding="utf-8")


def load_bundle(path) -> SurrogateBundle:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    return bundle_from_dict(d)


def _fmt(x: float) -> str:
    return repr(float(x))


def export_tree_dot(tree: DecisionTree) -> str:
    """Graphviz DOT text; split labels use 1-based feature names (``Feature_1`` is ``x[0]``)."""
    lines = ["digraph Tree {", 'node [shape=box, fontname="helvetica"] ;']
    for i in range(tree.n_nodes):
        if tree.is_leaf(i):
            lines.append(f'{i} [label="class = {int(tree.value[i])}"] ;')
        else:
            lines.append(f'{i} [label="Feature_{int(tree.feature[i]) + 1} ≤ {_fmt(tree.threshold[i])}"] ;')
    for i in range(tree.n_nodes):
        if not tree.is_leaf(i):
            lines.append(f'{i} -> {int(tree.left[i])} [label="True"] ;')
            lines.append(f'{i} -> {int(tree.right[i])} [label="False"] ;')
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_coeffs_csv(model) -> str:
    """``class,intercept,x_1..x_n``; the linear model is one row with class ``all``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if isinstance(model, LinearSurrogate):
        n = model.n_features
        writer.writerow(["class", "intercept"] + [f"x_{j + 1}" for j in range(n)])
        writer.writerow(["all", _fmt(model.intercept)] + [_fmt(c) for c in model.coeffs])
    elif isinstance(model, LogisticSurrogate):
        n = model.n_features
        writer.writerow(["class", "intercept"] + [f"x_{j + 1}" for j in range(n)])
        for c, b, row in zip(model.classes, model.intercepts, model.coefs):
            writer.writerow([int(c), _fmt(b)] + [_fmt(v) for v in row])
    else:
        raise SurrogateError(f"no coefficient table for {type(model).__name__}")
    return buf.getvalue()
