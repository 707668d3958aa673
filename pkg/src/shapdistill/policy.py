"""Policy handles, a tabular Q-learning trainer and the line-JSON policy bridge."""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from pathlib import Path

import numpy as np

from .envs import Environment, clip_reward, episode_seeds

PROB_TOL = 1e-9


class PolicyError(RuntimeError):
    pass


class RemotePolicyError(PolicyError):
    pass


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(a: int, k: int) -> np.ndarray:
    p = np.zeros(k)
    p[int(a)] = 1.0
    return p


class Policy:
    """Common surface: ``act`` and ``action_probs`` on a single state.

    ``act`` must equal the lowest-index argmax of ``action_probs``.
    """

    kind = "base"

    def __init__(self, n_features: int, n_actions: int):
        self.n_features = int(n_features)
        self.n_actions = int(n_actions)

    def _check(self, state) -> np.ndarray:
        s = np.asarray(state, dtype=float).reshape(-1)
        if s.shape[0] != self.n_features:
            raise ValueError(f"state has {s.shape[0]} features, policy expects {self.n_features}")
        return s

    def act(self, state) -> int:
        return int(np.argmax(self.action_probs(state)))

    def action_probs(self, state) -> np.ndarray:
        raise NotImplementedError

    def act_batch(self, states) -> np.ndarray:
        return np.array([self.act(s) for s in np.asarray(states, dtype=float)], dtype=np.int64)

    def probs_batch(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        if len(states) == 0:
            return np.zeros((0, self.n_actions))
        return np.array([self.action_probs(s) for s in states])


class Quantizer:
    """Uniform per-feature binning of a bounded box."""

    def __init__(self, low, high, bins: int = 10):
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        self.bins = int(bins)
        if self.bins < 1 or self.low.shape != self.high.shape or np.any(self.high <= self.low):
            raise ValueError("quantizer needs bins >= 1 and high > low per feature")

    def __call__(self, state) -> tuple:
        frac = (np.asarray(state, dtype=float) - self.low) / (self.high - self.low)
        idx = np.clip(np.floor(frac * self.bins).astype(np.int64), 0, self.bins - 1)
        return tuple(int(i) for i in idx)

    def to_dict(self) -> dict:
        return {"low": [float(x) for x in self.low], "high": [float(x) for x in self.high], "bins": self.bins}

    @classmethod
    def from_dict(cls, d) -> "Quantizer":
        return cls(d["low"], d["high"], d["bins"])


class TabularPolicy(Policy):
    """Greedy policy over a Q-table keyed by quantized state; unseen cells are all zero."""

    kind = "tabular"

    def __init__(self, quantizer: Quantizer, n_actions: int, values: dict | None = None):
        super().__init__(len(quantizer.low), n_actions)
        self.quantizer = quantizer
        self.values = {} if values is None else values

    def q(self, state) -> np.ndarray:
        key = self.quantizer(self._check(state))
        v = self.values.get(key)
        return np.zeros(self.n_actions) if v is None else v

    def act(self, state) -> int:
        return int(np.argmax(self.q(state)))

    def action_probs(self, state) -> np.ndarray:
        return one_hot(self.act(state), self.n_actions)

    def to_dict(self) -> dict:
        rows = [[list(key), [float(x) for x in val]] for key, val in sorted(self.values.items())]
        return {"kind": self.kind, "n_actions": self.n_actions, "quantizer": self.quantizer.to_dict(),
                "values": rows}

    @classmethod
    def from_dict(cls, d) -> "TabularPolicy":
        values = {tuple(key): np.asarray(val, dtype=float) for key, val in d["values"]}
        return cls(Quantizer.from_dict(d["quantizer"]), d["n_actions"], values)


class LinearSoftmaxPolicy(Policy):
    """Stochastic policy with logits ``weights @ s + bias``."""

    kind = "linear_softmax"

    def __init__(self, weights, bias=None):
        weights = np.asarray(weights, dtype=float)
        super().__init__(weights.shape[1], weights.shape[0])
        self.weights = weights
        self.bias = np.zeros(self.n_actions) if bias is None else np.asarray(bias, dtype=float)

    @classmethod
    def constant(cls, n_features: int, n_actions: int, action: int, margin: float = 50.0):
        """Policy that always acts ``action`` (its probabilities are one-hot to float precision)."""
        bias = np.zeros(n_actions)
        bias[action] = margin
        return cls(np.zeros((n_actions, n_features)), bias)

    @classmethod
    def uniform(cls, n_features: int, n_actions: int):
        return cls(np.zeros((n_actions, n_features)))

    def logits(self, state) -> np.ndarray:
        return self.weights @ self._check(state) + self.bias

    def act(self, state) -> int:
        return int(np.argmax(self.logits(state)))

    def action_probs(self, state) -> np.ndarray:
        return softmax(self.logits(state))

    def act_batch(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float).reshape(-1, self.n_features)
        return np.argmax(states @ self.weights.T + self.bias, axis=1).astype(np.int64)

    def probs_batch(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float).reshape(-1, self.n_features)
        return softmax(states @ self.weights.T + self.bias)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "weights": self.weights.tolist(), "bias": self.bias.tolist()}

    @classmethod
    def from_dict(cls, d) -> "LinearSoftmaxPolicy":
        return cls(d["weights"], d["bias"])


def save_policy(policy: Policy, path) -> None:
    if not hasattr(policy, "to_dict"):
        raise PolicyError(f"policy kind {policy.kind!r} cannot be saved")
    Path(path).write_text(json.dumps(policy.to_dict(), sort_keys=True) + "\n", encoding="utf-8")


def load_policy(path) -> Policy:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = d.get("kind")
    if kind == "tabular":
        return TabularPolicy.from_dict(d)
    if kind == "linear_softmax":
        return LinearSoftmaxPolicy.from_dict(d)
    raise PolicyError(f"{path}: unsupported policy kind {kind!r}")


def oracle_table_policy(env) -> TabularPolicy:
    """Greedy table over the true reward of every grid state of a synthetic env.

    Built only from ``grid_states`` and ``query_reward``, so it does not look
    at the hidden model directly.
    """
    quantizer = Quantizer(env.low, env.high, bins=env.levels)
    values = {}
    for s in env.grid_states():
        values[quantizer(s)] = np.array([env.query_reward(s, a) for a in range(env.n_actions)])
    return TabularPolicy(quantizer, env.n_actions, values)


def q_learn(env: Environment, episodes: int, alpha: float = 0.1,
            epsilon_schedule: tuple[float, float, float] = (1.0, 0.05, 0.995), seed: int = 0,
            bins: int = 10, q_bound: float = 1e6, gamma: float | None = None):
    """Epsilon-greedy tabular Q-learning on sign-clipped rewards.

    Returns ``(policy, episode_returns)`` where ``episode_returns`` holds the
    clipped return of every training episode.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    eps_start, eps_end, eps_decay = epsilon_schedule
    gamma = env.spec.gamma if gamma is None else float(gamma)
    k = env.n_actions
    quantizer = Quantizer(env.low, env.high, bins=bins)
    table: dict[tuple, np.ndarray] = {}
    rng = np.random.default_rng([int(seed), 5])
    returns = []

    def row(key):
        v = table.get(key)
        if v is None:
            v = table[key] = np.zeros(k)
        return v

    for ep, ep_seed in enumerate(episode_seeds(seed, episodes)):
        eps = max(eps_end, eps_start * eps_decay ** ep)
        state = env.reset(seed=ep_seed)
        key = quantizer(state)
        total = 0
        for _ in range(env.spec.max_steps):
            if rng.random() < eps:
                action = int(rng.integers(k))
            else:
                action = int(np.argmax(row(key)))
            tr = env.step(action)
            r = clip_reward(tr.reward)
            total += r
            next_key = quantizer(tr.next_state)
            target = r if tr.done else r + gamma * row(next_key).max()
            q = row(key)
            q[action] += alpha * (target - q[action])
            if abs(q[action]) > q_bound:
                raise PolicyError(f"Q-learning diverged: |Q| = {abs(q[action]):.3g} exceeds bound {q_bound:g}")
            if tr.done:
                break
            key = next_key
        returns.append(total)
    return TabularPolicy(quantizer, k, table), returns


# ---------------------------------------------------------------------------
# line-delimited JSON bridge
# ---------------------------------------------------------------------------


def _parse_endpoint(endpoint) -> tuple[str, int]:
    if isinstance(endpoint, tuple):
        return endpoint[0], int(endpoint[1])
    host, _, port = str(endpoint).rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {endpoint!r}")
    return host, int(port)


class RemotePolicy(Policy):
    """Client side of the bridge; one connection, requests serialized by a lock.

    Responses are matched by id; lines carrying any other id (late duplicates,
    unsolicited answers) are skipped.
    """

    kind = "external"

    def __init__(self, endpoint, n_features: int, n_actions: int, timeout: float = 5.0):
        super().__init__(n_features, n_actions)
        self.endpoint = _parse_endpoint(endpoint)
        self.timeout = float(timeout)
        self._lock = threading.Lock()
        self._next_id = 0
        self._pending: dict[int, dict] = {}
        try:
            self._sock = socket.create_connection(self.endpoint, timeout=self.timeout)
        except OSError as exc:
            raise RemotePolicyError(f"cannot connect to {endpoint}: {exc}") from exc
        self._sock.settimeout(self.timeout)
        self._file = self._sock.makefile("rwb")
        self._send({"hello": 1, "n_features": self.n_features, "n_actions": self.n_actions})
        reply = self._recv()
        if reply.get("ok") is not True:
            self.close()
            raise RemotePolicyError(f"handshake rejected: {reply.get('error', reply)}")

    def _send(self, obj) -> None:
        try:
            self._file.write(json.dumps(obj).encode() + b"\n")
            self._file.flush()
        except OSError as exc:
            raise RemotePolicyError(f"send failed: {exc}") from exc

    def _recv(self) -> dict:
        try:
            line = self._file.readline()
        except socket.timeout:
            raise RemotePolicyError(f"no response within {self.timeout} s") from None
        except OSError as exc:
            raise RemotePolicyError(f"receive failed: {exc}") from exc
        if not line:
            raise RemotePolicyError("connection closed by server")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            raise RemotePolicyError(f"malformed response {line[:80]!r}") from None
        if not isinstance(msg, dict):
            raise RemotePolicyError(f"malformed response {msg!r}")
        return msg

    def _request(self, state, want: str) -> dict:
        s = self._check(state)
        with self._lock:
            rid = self._next_id
            self._next_id += 1
            self._send({"id": rid, "state": [float(x) for x in s], "want": want})
            while rid not in self._pending:
                msg = self._recv()
                if "error" in msg:
                    raise RemotePolicyError(f"server error: {msg['error']}")
                mid = msg.get("id")
                if not isinstance(mid, int) or isinstance(mid, bool):
                    raise RemotePolicyError(f"response without integer id: {msg!r}")
                if mid == rid:
                    self._pending[mid] = msg
                # anything else answers a request that is no longer (or not yet) outstanding
            return self._pending.pop(rid)

    def act(self, state) -> int:
        msg = self._request(state, "action")
        a = msg.get("action")
        if not isinstance(a, int) or isinstance(a, bool) or not 0 <= a < self.n_actions:
            raise RemotePolicyError(f"action {a!r} outside [0, {self.n_actions})")
        return a

    def action_probs(self, state) -> np.ndarray:
        msg = self._request(state, "probs")
        p = msg.get("probs")
        if not isinstance(p, list) or len(p) != self.n_actions:
            raise RemotePolicyError(f"probs must be a list of {self.n_actions} numbers")
        try:
            p = np.asarray(p, dtype=float)
        except (TypeError, ValueError):
            raise RemotePolicyError("probs must be numeric") from None
        if not np.all(np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
            raise RemotePolicyError(f"probs {p.tolist()} are not a distribution (sum {p.sum():.12g})")
        return p

    def close(self) -> None:
        try:
            self._file.close()
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def remote_policy(endpoint, n_features: int, n_actions: int, timeout: float = 5.0) -> RemotePolicy:
    return RemotePolicy(endpoint, n_features, n_actions, timeout=timeout)


class _BridgeHandler(socketserver.StreamRequestHandler):
    def _write(self, obj):
        self.wfile.write(json.dumps(obj).encode() + b"\n")
        self.wfile.flush()

    def handle(self):
        policy = self.server.policy
        try:
            hello = json.loads(self.rfile.readline() or b"null")
        except json.JSONDecodeError:
            hello = None
        if not isinstance(hello, dict) or hello.get("hello") != 1:
            self._write({"ok": False, "error": "bad handshake"})
            return
        if hello.get("n_features") != policy.n_features or hello.get("n_actions") != policy.n_actions:
            self._write({"ok": False, "error": f"dimension mismatch: server policy is "
                                               f"({policy.n_features}, {policy.n_actions})"})
            return
        self._write({"ok": True})
        for line in self.rfile:
            try:
                req = json.loads(line)
                if req["want"] == "action":
                    self._write({"id": req["id"], "action": int(policy.act(req["state"]))})
                else:
                    probs = policy.action_probs(req["state"])
                    self._write({"id": req["id"], "probs": [float(x) for x in probs]})
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                self._write({"error": str(exc)})


class PolicyServer(socketserver.ThreadingTCPServer):
    """Serve a local policy over the bridge protocol (loopback harness, demos)."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, policy: Policy, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _BridgeHandler)
        self.policy = policy
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "PolicyServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
