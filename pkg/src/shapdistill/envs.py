"""Desk-scale environments, rollouts and the line-delimited dataset format."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DATASET_VERSION = 1

ENV_KINDS = ("gridworld", "synthetic_tree", "synthetic_linear")


class DatasetError(ValueError):
    """Raised when a dataset file or dataset contents fail validation."""


@dataclass(frozen=True)
class EnvSpec:
    name: str
    n_features: int
    n_actions: int
    gamma: float = 0.99
    max_steps: int = 100

    def __post_init__(self):
        if int(self.n_features) < 1:
            raise ValueError(f"n_features must be >= 1, got {self.n_features}")
        if int(self.n_actions) < 2:
            raise ValueError(f"n_actions must be >= 2, got {self.n_actions}")
        if not 0.0 < float(self.gamma) < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if int(self.max_steps) < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_features": int(self.n_features),
            "n_actions": int(self.n_actions),
            "gamma": float(self.gamma),
            "max_steps": int(self.max_steps),
        }


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool

    def to_dict(self) -> dict:
        return {
            "state": [float(x) for x in self.state],
            "action": int(self.action),
            "reward": float(self.reward),
            "next_state": [float(x) for x in self.next_state],
            "done": bool(self.done),
        }


@dataclass
class Episode:
    transitions: list[Transition]
    seed: int

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def states(self) -> np.ndarray:
        return np.array([tr.state for tr in self.transitions])

    @property
    def actions(self) -> np.ndarray:
        return np.array([tr.action for tr in self.transitions], dtype=np.int64)

    def total_reward(self, clip: bool = False) -> float:
        if clip:
            return float(sum(clip_reward(tr.reward) for tr in self.transitions))
        return float(sum(tr.reward for tr in self.transitions))

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "transitions": [tr.to_dict() for tr in self.transitions]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def clip_reward(r: float) -> int:
    """Map a raw reward to its sign in {-1, 0, 1}."""
    r = float(r)
    if not math.isfinite(r):
        raise ValueError(f"cannot clip non-finite reward {r!r}")
    return (r > 0) - (r < 0)


def episode_seeds(seed: int, n: int) -> list[int]:
    """Derive ``n`` per-episode seeds from one master seed."""
    if n <= 0:
        return []
    return [int(s) for s in np.random.SeedSequence(int(seed)).generate_state(n, dtype=np.uint32)]


# ---------------------------------------------------------------------------
# environments
# ---------------------------------------------------------------------------


class Environment:
    """Base class: a seeded, single-owner environment.

    Subclasses implement ``_reset_state`` and ``_transition``. All features lie
    in ``[low, high]`` (used by the tabular quantizer).
    """

    kind = "base"

    def __init__(self, spec: EnvSpec, seed: int):
        self.spec = spec
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self._state: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        return self.spec.n_features

    @property
    def n_actions(self) -> int:
        return self.spec.n_actions

    @property
    def low(self) -> np.ndarray:
        return np.zeros(self.n_features)

    @property
    def high(self) -> np.ndarray:
        return np.ones(self.n_features)

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(int(seed))
        self._state = self._reset_state()
        return self._state.copy()

    def step(self, action: int) -> Transition:
        if self._state is None:
            raise RuntimeError("step() called before reset()")
        action = int(action)
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} outside [0, {self.n_actions})")
        state = self._state
        reward, next_state, done = self._transition(state, action)
        self._state = next_state
        return Transition(state.copy(), action, float(reward), next_state.copy(), bool(done))

    def describe(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, **self.spec.to_dict()}

    def _reset_state(self) -> np.ndarray:
        raise NotImplementedError

    def _transition(self, state, action):
        raise NotImplementedError


GRID_MOVES = {
    4: [(0, -1), (0, 1), (-1, 0), (1, 0)],
    5: [(0, -1), (0, 1), (-1, 0), (1, 0), (0, 0)],
    8: [(0, -1), (0, 1), (-1, 0), (1, 0), (-1, -1), (1, -1), (-1, 1), (1, 1)],
    9: [(0, -1), (0, 1), (-1, 0), (1, 0), (-1, -1), (1, -1), (-1, 1), (1, 1), (0, 0)],
}


class GridWorld(Environment):
    """Agent on a W x H grid, goal in the far corner and one seeded hazard cell.

    Features: normalized x, normalized y, normalized Manhattan distance to the
    goal, normalized Manhattan distance to the hazard. Raw rewards are +10 at
    the goal and -5 on the hazard (both terminal), 0 otherwise.
    """

    kind = "gridworld"
    goal_reward = 10.0
    hazard_reward = -5.0

    def __init__(self, spec: EnvSpec, seed: int, width: int = 5, height: int = 5):
        if spec.n_actions not in GRID_MOVES:
            raise ValueError(f"gridworld needs n_actions in {sorted(GRID_MOVES)}, got {spec.n_actions}")
        if spec.n_features != 4:
            raise ValueError(f"gridworld emits 4 features, spec says {spec.n_features}")
        if width < 2 or height < 2 or width * height < 4:
            raise ValueError("gridworld needs at least a 2x2 grid")
        super().__init__(spec, seed)
        self.width = int(width)
        self.height = int(height)
        self.goal = (self.width - 1, self.height - 1)
        cells = [c for c in itertools.product(range(self.width), range(self.height))
                 if c not in (self.goal, (0, 0))]
        self.hazard = cells[int(np.random.default_rng([self.seed, 1]).integers(len(cells)))]
        self._moves = GRID_MOVES[spec.n_actions]
        self._pos = (0, 0)

    def features(self, pos) -> np.ndarray:
        x, y = pos
        span = (self.width - 1) + (self.height - 1)
        return np.array([
            x / (self.width - 1),
            y / (self.height - 1),
            (abs(self.goal[0] - x) + abs(self.goal[1] - y)) / span,
            (abs(self.hazard[0] - x) + abs(self.hazard[1] - y)) / span,
        ])

    def _reset_state(self):
        free = [c for c in itertools.product(range(self.width), range(self.height))
                if c not in (self.goal, self.hazard)]
        self._pos = free[int(self._rng.integers(len(free)))]
        return self.features(self._pos)

    def _transition(self, state, action):
        dx, dy = self._moves[action]
        x = min(max(self._pos[0] + dx, 0), self.width - 1)
        y = min(max(self._pos[1] + dy, 0), self.height - 1)
        self._pos = (x, y)
        if self._pos == self.goal:
            return self.goal_reward, self.features(self._pos), True
        if self._pos == self.hazard:
            return self.hazard_reward, self.features(self._pos), True
        return 0.0, self.features(self._pos), False

    def describe(self) -> dict:
        return {**super().describe(), "width": self.width, "height": self.height,
                "goal": list(self.goal), "hazard": list(self.hazard)}


class _SyntheticBandit(Environment):
    """Shared machinery for the synthetic environments.

    Every step draws a fresh state uniformly from a grid with ``levels`` values
    per feature and ends the episode with probability ``end_prob``; both draws
    come from the environment stream, so the state sequence does not depend on
    the actions taken. Reward is 1 when the action equals the hidden optimal
    action for the current state and 0 otherwise.
    """

    def __init__(self, spec: EnvSpec, seed: int, levels: int = 5, end_prob: float = 0.05):
        super().__init__(spec, seed)
        if levels < 2:
            raise ValueError("levels must be >= 2")
        if not 0.0 <= end_prob < 1.0:
            raise ValueError("end_prob must lie in [0, 1)")
        self.levels = int(levels)
        self.end_prob = float(end_prob)
        self.grid_values = (np.arange(self.levels) + 0.5) / self.levels

    def _draw_state(self) -> np.ndarray:
        return self.grid_values[self._rng.integers(self.levels, size=self.n_features)]

    def _reset_state(self):
        return self._draw_state()

    def _transition(self, state, action):
        reward = self.query_reward(state, action)
        done = bool(self._rng.random() < self.end_prob)
        return reward, self._draw_state(), done

    def oracle_action(self, state) -> int:
        raise NotImplementedError

    def query_reward(self, state, action: int) -> float:
        return 1.0 if int(action) == self.oracle_action(state) else 0.0

    def grid_states(self) -> np.ndarray:
        """All ``levels ** n_features`` grid states in lexicographic order."""
        return np.array(list(itertools.product(self.grid_values, repeat=self.n_features)))

    def describe(self) -> dict:
        return {**super().describe(), "levels": self.levels, "end_prob": self.end_prob}


class SyntheticTree(_SyntheticBandit):
    """Bandit whose optimal action is given by a hidden axis-aligned tree.

    The hidden tree has exactly ``depth`` levels and ``min(n_actions, 2**depth)``
    leaves, each leaf carrying a distinct action, so every action that appears
    owns one box-shaped region. Thresholds sit halfway between grid values and
    no feature is reused along a root-to-leaf path.
    """

    kind = "synthetic_tree"

    def __init__(self, spec: EnvSpec, seed: int, depth: int = 2, levels: int = 5, end_prob: float = 0.05):
        super().__init__(spec, seed, levels=levels, end_prob=end_prob)
        if depth < 1:
            raise ValueError("depth must be >= 1")
        if depth > spec.n_features:
            raise ValueError(f"depth {depth} needs at least {depth} features")
        self.depth = int(depth)
        self._build_tree(np.random.default_rng([self.seed, 2]))

    def _build_tree(self, rng):
        n_leaves = min(self.n_actions, 2 ** self.depth)
        # node: [feature, threshold, left, right, action, depth, used_features]
        nodes = [[-1, 0.0, -1, -1, -1, 0, ()]]

        def split(i):
            used = nodes[i][6]
            free = [f for f in range(self.n_features) if f not in used]
            f = int(rng.choice(free))
            t = float(rng.integers(1, self.levels)) / self.levels
            d = nodes[i][5] + 1
            nodes[i][0], nodes[i][1] = f, t
            nodes[i][2] = len(nodes)
            nodes.append([-1, 0.0, -1, -1, -1, d, used + (f,)])
            nodes[i][3] = len(nodes)
            nodes.append([-1, 0.0, -1, -1, -1, d, used + (f,)])

        # a chain down to full depth first, then extra leaves where room remains
        cur = 0
        for _ in range(self.depth):
            split(cur)
            cur = nodes[cur][2 + int(rng.integers(2))]
        while sum(1 for nd in nodes if nd[2] == -1) < n_leaves:
            cand = [i for i, nd in enumerate(nodes) if nd[2] == -1 and nd[5] < self.depth]
            split(int(rng.choice(cand)))
        leaves = [i for i, nd in enumerate(nodes) if nd[2] == -1]
        actions = rng.permutation(self.n_actions)[: len(leaves)]
        for leaf, a in zip(leaves, actions):
            nodes[leaf][4] = int(a)
        self.tree_feature = np.array([nd[0] for nd in nodes])
        self.tree_threshold = np.array([nd[1] for nd in nodes])
        self.tree_left = np.array([nd[2] for nd in nodes])
        self.tree_right = np.array([nd[3] for nd in nodes])
        self.tree_action = np.array([nd[4] for nd in nodes])

    def oracle_action(self, state) -> int:
        i = 0
        while self.tree_left[i] != -1:
            if state[self.tree_feature[i]] <= self.tree_threshold[i]:
                i = self.tree_left[i]
            else:
                i = self.tree_right[i]
        return int(self.tree_action[i])

    def describe(self) -> dict:
        return {**super().describe(), "depth": self.depth}


class SyntheticLinear(_SyntheticBandit):
    """Bandit whose optimal action is the argmax of a hidden linear scorer."""

    kind = "synthetic_linear"

    def __init__(self, spec: EnvSpec, seed: int, levels: int = 5, end_prob: float = 0.05):
        super().__init__(spec, seed, levels=levels, end_prob=end_prob)
        rng = np.random.default_rng([self.seed, 3])
        self.weights = rng.normal(size=(self.n_actions, self.n_features))
        self.bias = rng.normal(scale=0.1, size=self.n_actions)

    def oracle_action(self, state) -> int:
        return int(np.argmax(self.weights @ np.asarray(state) + self.bias))


def make_env(spec: EnvSpec, kind: str, seed: int = 0, **options) -> Environment:
    """Build one of the desk-scale environments.

    ``options`` are kind-specific: ``width``/``height`` for the gridworld,
    ``depth``/``levels``/``end_prob`` for the synthetic bandits.
    """
    if kind == "gridworld":
        return GridWorld(spec, seed, **options)
    if kind == "synthetic_tree":
        return SyntheticTree(spec, seed, **options)
    if kind == "synthetic_linear":
        return SyntheticLinear(spec, seed, **options)
    raise ValueError(f"unknown environment kind {kind!r}; expected one of {ENV_KINDS}")


def _check_dims(env: Environment, policy) -> None:
    if policy.n_features != env.n_features or policy.n_actions != env.n_actions:
        raise ValueError(
            f"policy is ({policy.n_features} features, {policy.n_actions} actions) but "
            f"environment is ({env.n_features}, {env.n_actions})"
        )


def rollout(env: Environment, policy, max_steps: int | None = None, seed: int = 0,
            sample: bool = False) -> Episode:
    """Run one episode.

    With ``sample=True`` actions are drawn from ``policy.action_probs`` using a
    stream derived from ``seed``; otherwise ``policy.act`` is used.
    """
    _check_dims(env, policy)
    max_steps = env.spec.max_steps if max_steps is None else int(max_steps)
    state = env.reset(seed=seed)
    act_rng = np.random.default_rng([int(seed), 7]) if sample else None
    transitions = []
    for _ in range(max_steps):
        if sample:
            probs = policy.action_probs(state)
            action = int(act_rng.choice(len(probs), p=probs))
        else:
            action = int(policy.act(state))
        tr = env.step(action)
        transitions.append(tr)
        if tr.done:
            break
        state = tr.next_state
    return Episode(transitions, int(seed))


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateDataset:
    """Immutable, index-stable record of visited states.

    Record ``i`` is ``(episode_ids[i], t[i], states[i], actions[i], rewards[i])``.
    """

    episode_ids: np.ndarray
    t: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    n_features: int
    n_actions: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        m = len(self.actions)
        states = np.asarray(self.states, dtype=float).reshape(m, self.n_features)
        cols = {
            "episode_ids": np.asarray(self.episode_ids, dtype=np.int64).reshape(m),
            "t": np.asarray(self.t, dtype=np.int64).reshape(m),
            "states": states,
            "actions": np.asarray(self.actions, dtype=np.int64).reshape(m),
            "rewards": np.asarray(self.rewards, dtype=float).reshape(m),
        }
        for name, arr in cols.items():
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.all(np.isfinite(states)):
            raise DatasetError("dataset contains non-finite features")
        if m and (self.actions.min() < 0 or self.actions.max() >= self.n_actions):
            raise DatasetError(f"dataset actions must lie in [0, {self.n_actions})")

    def __len__(self) -> int:
        return len(self.actions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, StateDataset):
            return NotImplemented
        return (
            self.n_features == other.n_features
            and self.n_actions == other.n_actions
            and np.array_equal(self.episode_ids, other.episode_ids)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
        )

    def record(self, i: int) -> tuple:
        return (int(self.episode_ids[i]), int(self.t[i]), self.states[i], int(self.actions[i]),
                float(self.rewards[i]))

    def take(self, indices: Sequence[int]) -> "StateDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return StateDataset(self.episode_ids[idx], self.t[idx], self.states[idx], self.actions[idx],
                            self.rewards[idx], self.n_features, self.n_actions, dict(self.meta))

    @classmethod
    def from_records(cls, records: Iterable[tuple], n_features: int, n_actions: int) -> "StateDataset":
        records = list(records)
        if not records:
            return cls(np.zeros(0), np.zeros(0), np.zeros((0, n_features)), np.zeros(0), np.zeros(0),
                       n_features, n_actions)
        ep, t, s, a, r = zip(*records)
        return cls(np.array(ep), np.array(t), np.array(s, dtype=float), np.array(a), np.array(r),
                   n_features, n_actions)


def collect_dataset(env: Environment, policy, n_episodes: int, seed: int = 0,
                    sample: bool = False) -> StateDataset:
    """Roll out ``n_episodes`` seeded episodes and record every visited state.

    Rewards are sign-clipped at collection time.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    records = []
    for ep, ep_seed in enumerate(episode_seeds(seed, n_episodes)):
        episode = rollout(env, policy, seed=ep_seed, sample=sample)
        for t, tr in enumerate(episode.transitions):
            records.append((ep, t, tr.state, tr.action, float(clip_reward(tr.reward))))
    return StateDataset.from_records(records, env.n_features, env.n_actions)


def subsample(ds: StateDataset, max_states: int | None, seed: int = 0) -> tuple[StateDataset, np.ndarray]:
    """Seeded subsample without replacement; kept records stay in dataset order."""
    idx = select_indices(len(ds), max_states, seed)
    return ds.take(idx), idx


def select_indices(n: int, max_states: int | None, seed: int = 0) -> np.ndarray:
    if max_states is None or max_states >= n:
        return np.arange(n)
    if max_states < 1:
        raise ValueError("max_states must be >= 1")
    rng = np.random.default_rng([int(seed), 11])
    return np.sort(rng.choice(n, size=int(max_states), replace=False))


def _dumps(obj) -> str:
    return json.dumps(obj, allow_nan=False)


def save_dataset(ds: StateDataset, path) -> None:
    lines = [_dumps({"n_features": int(ds.n_features), "n_actions": int(ds.n_actions),
                     "version": DATASET_VERSION})]
    for i in range(len(ds)):
        lines.append(_dumps({
            "ep": int(ds.episode_ids[i]),
            "t": int(ds.t[i]),
            "state": [float(x) for x in ds.states[i]],
            "action": int(ds.actions[i]),
            "reward": float(ds.rewards[i]),
        }))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _is_uint(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def _is_real(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def load_dataset(path) -> StateDataset:
    """Parse and validate a dataset file; errors name the offending line."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty file, missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}:1: header is not valid JSON ({exc.msg})") from None
    if not isinstance(header, dict) or not all(k in header for k in ("n_features", "n_actions", "version")):
        raise DatasetError(f"{path}:1: header must carry n_features, n_actions and version")
    if header["version"] != DATASET_VERSION:
        raise DatasetError(f"{path}:1: unsupported dataset version {header['version']!r}")
    n, k = header["n_features"], header["n_actions"]
    if not (_is_uint(n) and n >= 1 and _is_uint(k) and k >= 2):
        raise DatasetError(f"{path}:1: invalid n_features/n_actions")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise DatasetError(f"{path}:{lineno}: record must be an object")
        missing = [key for key in ("ep", "t", "state", "action", "reward") if key not in rec]
        if missing:
            raise DatasetError(f"{path}:{lineno}: missing field(s) {missing}")
        if not _is_uint(rec["ep"]) or not _is_uint(rec["t"]):
            raise DatasetError(f"{path}:{lineno}: ep and t must be unsigned integers")
        state = rec["state"]
        if not isinstance(state, list) or len(state) != n:
            got = len(state) if isinstance(state, list) else type(state).__name__
            raise DatasetError(f"{path}:{lineno}: state has {got} features, expected {n}")
        if not all(_is_real(x) for x in state):
            raise DatasetError(f"{path}:{lineno}: state entries must be finite reals")
        if not _is_uint(rec["action"]) or rec["action"] >= k:
            raise DatasetError(f"{path}:{lineno}: action {rec['action']!r} outside [0, {k})")
        if not _is_real(rec["reward"]):
            raise DatasetError(f"{path}:{lineno}: reward must be a finite real")
        records.append((rec["ep"], rec["t"], [float(x) for x in state], rec["action"], float(rec["reward"])))
    return StateDataset.from_records(records, n, k)
