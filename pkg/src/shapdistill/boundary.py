"""Boundary points between action clusters, policy-labeled, and the end-to-end pipeline.

Pipeline: Shapley vectors per state -> k-means with one cluster per action ->
for each cluster pair the vector whose squared distances to the two centroids
are closest -> the state that vector came from -> the policy's own action at
that state -> surrogate fits on the resulting (state, action) pairs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .clustering import ClusterModel, as_matrix, kmeans
from .envs import StateDataset
from .shapley import ConditionalConfig, ShapVector, attribute_dataset
from .surrogate import SurrogateBundle, fit_linear, fit_logistic, fit_tree

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class BoundaryPoint:
    pair: tuple[int, int]
    shap_index: int
    state: np.ndarray
    label: int
    gap: float

    def to_dict(self) -> dict:
        return {"i": int(self.pair[0]), "j": int(self.pair[1]), "shap_index": int(self.shap_index),
                "state": [float(x) for x in self.state], "label": int(self.label), "gap": float(self.gap)}


@dataclass
class BoundaryDataset:
    points: list[BoundaryPoint]
    n_features: int
    n_actions: int

    def __len__(self) -> int:
        return len(self.points)

    @property
    def states(self) -> np.ndarray:
        return np.array([p.state for p in self.points], dtype=float).reshape(len(self.points), self.n_features)

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.points], dtype=np.int64)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(p.to_dict(), allow_nan=False) + "\n" for p in self.points)


def save_boundary(bd: BoundaryDataset, path) -> None:
    Path(path).write_text(bd.to_jsonl(), encoding="utf-8")


def load_boundary(path, n_features: int, n_actions: int) -> BoundaryDataset:
    points = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            points.append(BoundaryPoint((d["i"], d["j"]), d["shap_index"], np.asarray(d["state"], dtype=float),
                                        d["label"], d["gap"]))
    return BoundaryDataset(points, n_features, n_actions)


def boundary_points(vectors, model: ClusterModel, candidate_scope: str = "all") -> list[tuple[tuple[int, int], int, float]]:
    """For each centroid pair ``i < j``, the vector minimizing ``| |X-mu_i|^2 - |X-mu_j|^2 |``.

    ``candidate_scope="all"`` searches every vector; ``"pair"`` only members of
    clusters ``i`` and ``j`` (falling back to all vectors if both are empty).
    Ties go to the lowest vector index; one vector may serve several pairs.
    """
    if candidate_scope not in ("all", "pair"):
        raise ValueError(f"candidate_scope must be 'all' or 'pair', got {candidate_scope!r}")
    X = as_matrix(vectors)
    diff = X[:, None, :] - model.centroids[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    out = []
    for i, j in combinations(range(model.k), 2):
        gaps = np.abs(d2[:, i] - d2[:, j])
        if candidate_scope == "pair":
            members = (model.assignments == i) | (model.assignments == j)
            if members.any():
                gaps = np.where(members, gaps, np.inf)
        idx = int(np.argmin(gaps))
        out.append(((i, j), idx, float(gaps[idx])))
    return out


def inverse_map(vectors, shap_index: int, ds: StateDataset) -> np.ndarray:
    """State that produced ``vectors[shap_index]`` (stored back-reference, not a numerical inverse)."""
    if not 0 <= int(shap_index) < len(vectors):
        raise IndexError(f"shap_index {shap_index} outside [0, {len(vectors)})")
    state_index = vectors[int(shap_index)].state_index
    if not 0 <= state_index < len(ds):
        raise IndexError(f"state_index {state_index} outside dataset of {len(ds)} records")
    return ds.states[state_index].copy()


def rl_guided_label(policy, state) -> int:
    return int(policy.act(state))


# ---------------------------------------------------------------------------
# configuration and orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShapleySettings:
    mode: str = "det"
    method: str = "exact"
    cond_method: str = "knn"
    knn_k: int = 32
    permutations: int = 1000
    max_states: int | None = None
    exact_limit: int = 12
    target_action: int | None = None
    n_jobs: int = 1


@dataclass(frozen=True)
class KMeansSettings:
    seed: int = 0
    tol: float = 1e-6
    max_iters: int = 300
    candidate_scope: str = "all"


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 4
    min_leaf: int = 1


@dataclass(frozen=True)
class LogisticParams:
    l2: float = 1e-3
    lr: float = 0.1
    max_epochs: int = 5000
    tol: float = 1e-7


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    shapley: ShapleySettings = field(default_factory=ShapleySettings)
    kmeans: KMeansSettings = field(default_factory=KMeansSettings)
    tree: TreeParams = field(default_factory=TreeParams)
    logistic: LogisticParams = field(default_factory=LogisticParams)
    n_clusters: int | None = None  # defaults to the number of actions

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d or {})
        sections = {"shapley": ShapleySettings, "kmeans": KMeansSettings, "tree": TreeParams,
                    "logistic": LogisticParams}
        kwargs = {}
        for key, value in d.items():
            if key in sections:
                kwargs[key] = sections[key](**(value or {}))
            elif key in ("seed", "n_clusters"):
                kwargs[key] = value
            else:
                raise ValueError(f"unknown pipeline config key {key!r}")
        return cls(**kwargs)


@dataclass
class PipelineReport:
    data: dict
    timings: dict

    def to_json(self) -> str:
        """Deterministic report (wall-clock timings excluded)."""
        return json.dumps(self.data, sort_keys=True, indent=1, allow_nan=False) + "\n"


def dataset_fingerprint(ds: StateDataset) -> str:
    h = hashlib.sha256()
    for arr in (ds.states, ds.actions, ds.episode_ids, ds.t):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def build_boundary_dataset(vectors, model, ds: StateDataset, policy, candidate_scope="all") -> BoundaryDataset:
    points = []
    for pair, idx, gap in boundary_points(vectors, model, candidate_scope):
        state = inverse_map(vectors, idx, ds)
        points.append(BoundaryPoint(pair, idx, state, rl_guided_label(policy, state), gap))
    return BoundaryDataset(points, ds.n_features, ds.n_actions)


def geometric_labels(vectors, model: ClusterModel, ds: StateDataset, policy, bd: BoundaryDataset) -> list[int]:
    """Labels the purely geometric variant would assign (diagnostic only).

    Each cluster is named after the majority policy action of its members;
    a boundary point takes the name of whichever of its two clusters is nearer.
    """
    X = as_matrix(vectors)
    member_actions = policy.act_batch(ds.states[[v.state_index for v in vectors]])
    cluster_action = []
    for c in range(model.k):
        acts = member_actions[model.assignments == c]
        counts = np.bincount(acts, minlength=ds.n_actions) if len(acts) else np.zeros(ds.n_actions)
        cluster_action.append(int(np.argmax(counts)))
    out = []
    for p in bd.points:
        i, j = p.pair
        x = X[p.shap_index]
        di = np.sum((x - model.centroids[i]) ** 2)
        dj = np.sum((x - model.centroids[j]) ** 2)
        out.append(cluster_action[i] if di <= dj else cluster_action[j])
    return out


def run_pipeline(ds: StateDataset, policy, cfg: PipelineConfig | None = None, vectors: list[ShapVector] | None = None):
    """Attribution -> clustering -> boundary search -> inverse mapping -> labeling -> fits.

    Returns ``(BoundaryDataset, SurrogateBundle, PipelineReport)``. Pass
    precomputed ``vectors`` to skip the attribution stage. Any failure is
    re-raised as :class:`PipelineError` naming the stage.
    """
    cfg = cfg or PipelineConfig()
    timings = {}
    stage = "validate"

    def timed(name, fn):
        nonlocal stage
        stage = name
        t0 = time.perf_counter()
        try:
            return fn()
        except PipelineError:
            raise
        except Exception as exc:  # noqa: BLE001 - re-raised with the stage attached
            raise PipelineError(name, exc) from exc
        finally:
            timings[name] = time.perf_counter() - t0

    if policy.n_features != ds.n_features or policy.n_actions != ds.n_actions:
        raise PipelineError(stage, ValueError("policy and dataset dimensions differ"))
    s = cfg.shapley
    k = cfg.n_clusters or ds.n_actions
    cond = ConditionalConfig(method=s.cond_method, knn_k=min(s.knn_k, len(ds)) if len(ds) else s.knn_k)
    if vectors is None:
        vectors = timed("attribute", lambda: attribute_dataset(
            policy, ds, mode=s.mode, cfg=cond, method=s.method, permutations=s.permutations, seed=cfg.seed,
            max_states=s.max_states, exact_limit=s.exact_limit, target_action=s.target_action, n_jobs=s.n_jobs))
    km = cfg.kmeans
    model = timed("kmeans", lambda: kmeans(vectors, k, seed=km.seed, max_iters=km.max_iters, tol=km.tol))
    bd = timed("boundary", lambda: build_boundary_dataset(vectors, model, ds, policy, km.candidate_scope))
    X, y = bd.states, bd.labels
    tree = timed("fit_tree", lambda: fit_tree(X, y, ds.n_actions, cfg.tree.max_depth, cfg.tree.min_leaf))
    linear = timed("fit_linear", lambda: fit_linear(X, y, ds.n_actions))
    lp = cfg.logistic
    logistic = timed("fit_logistic", lambda: fit_logistic(X, y, ds.n_actions, l2=lp.l2, lr=lp.lr,
                                                          max_epochs=lp.max_epochs, tol=lp.tol))
    geo = timed("diagnostics", lambda: geometric_labels(vectors, model, ds, policy, bd))
    disagree = [idx for idx, (g, p) in enumerate(zip(geo, bd.points)) if g != p.label]

    provenance = {
        "dataset_sha256": dataset_fingerprint(ds),
        "n_states": len(ds),
        "n_vectors": len(vectors),
        "n_boundary": len(bd),
        "n_clusters": k,
        "config": cfg.to_dict(),
    }
    bundle = SurrogateBundle(tree, linear, logistic, metadata=provenance)
    report = {
        **provenance,
        "kmeans": {"inertia": model.inertia, "n_iter": model.n_iter, "history": model.history,
                   "cluster_sizes": np.bincount(model.assignments, minlength=k).tolist()},
        "pairs": [{"i": p.pair[0], "j": p.pair[1], "shap_index": p.shap_index,
                   "state_index": int(vectors[p.shap_index].state_index), "gap": p.gap, "label": p.label,
                   "geometric_label": g} for p, g in zip(bd.points, geo)],
        "label_counts": np.bincount(y, minlength=ds.n_actions).tolist(),
        "geometric_disagreements": len(disagree),
        "max_efficiency_residual": max((v.efficiency_residual for v in vectors), default=0.0),
    }
    for name, secs in timings.items():
        log.info("stage %s: %.3f s", name, secs)
    return bd, bundle, PipelineReport(report, timings)
