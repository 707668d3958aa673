"""Fidelity between policies and seeded return evaluation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .envs import Environment, Episode, episode_seeds, rollout

Z95 = 1.96


@dataclass
class FidelityReport:
    score: float
    n_states: int
    confusion: np.ndarray  # rows: original action, columns: surrogate action

    def to_dict(self) -> dict:
        return {"score": self.score, "n_states": self.n_states, "per_action_confusion": self.confusion.tolist()}


@dataclass
class ReturnSummary:
    mean: float
    ci95_half_width: float
    per_episode: list[float]
    n_episodes: int
    seed: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "ci95_half_width": self.ci95_half_width, "per_episode": list(self.per_episode),
                "n_episodes": self.n_episodes, "seed": self.seed}


def summarize_returns(returns, seed: int) -> ReturnSummary:
    r = np.asarray(returns, dtype=float)
    n = len(r)
    half = Z95 * float(np.std(r, ddof=1)) / math.sqrt(n) if n >= 2 else float("nan")
    return ReturnSummary(float(np.mean(r)), half, [float(x) for x in r], n, int(seed))


def fidelity(interp, orig, states) -> FidelityReport:
    """Fraction of ``states`` on which both policies pick the same action."""
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or len(states) == 0:
        raise ValueError("fidelity needs a non-empty list of states")
    if interp.n_actions != orig.n_actions or interp.n_features != orig.n_features:
        raise ValueError("policies disagree on dimensions")
    if states.shape[1] != orig.n_features:
        raise ValueError(f"states have {states.shape[1]} features, policies expect {orig.n_features}")
    a_orig = orig.act_batch(states)
    a_interp = interp.act_batch(states)
    k = orig.n_actions
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (a_orig, a_interp), 1)
    return FidelityReport(float(np.trace(confusion)) / len(states), len(states), confusion)


def run_episodes(env: Environment, policy, n_episodes: int, seed: int) -> list[Episode]:
    return [rollout(env, policy, seed=s) for s in episode_seeds(seed, n_episodes)]


def evaluate_returns(env: Environment, policy, n_episodes: int = 100, seed: int = 0, clip: bool = True,
                     episodes: list[Episode] | None = None) -> ReturnSummary:
    """Mean return and normal-approximation 95% CI over seeded episodes."""
    if n_episodes < 2:
        raise ValueError("n_episodes must be >= 2 for a confidence interval")
    episodes = run_episodes(env, policy, n_episodes, seed) if episodes is None else episodes
    return summarize_returns([ep.total_reward(clip=clip) for ep in episodes], seed)


@dataclass
class ComparisonReport:
    original: ReturnSummary
    surrogates: dict[str, dict]
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "original": self.original.to_dict(),
            "surrogates": {
                name: {"returns": row["returns"].to_dict(), "fidelity": row["fidelity"].to_dict(),
                       "fidelity_per_episode": row["fidelity_per_episode"],
                       "fidelity_score": row["fidelity_score"]}
                for name, row in self.surrogates.items()
            },
            "settings": self.settings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["policy", "mean_return", "ci95_half_width", "n_episodes", "fidelity"])
        o = self.original
        w.writerow(["original", repr(o.mean), repr(o.ci95_half_width), o.n_episodes, repr(1.0)])
        for name, row in self.surrogates.items():
            r = row["returns"]
            w.writerow([name, repr(r.mean), repr(r.ci95_half_width), r.n_episodes, repr(row["fidelity_score"])])
        return buf.getvalue()


_SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["mean", "ci95_half_width", "per_episode", "n_episodes", "seed"],
    "properties": {
        "mean": {"type": "number"},
        "ci95_half_width": {"type": "number", "minimum": 0},
        "per_episode": {"type": "array", "items": {"type": "number"}},
        "n_episodes": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

COMPARISON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["original", "surrogates", "settings"],
    "properties": {
        "original": _SUMMARY_SCHEMA,
        "surrogates": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "required": ["returns", "fidelity", "fidelity_per_episode", "fidelity_score"],
                "properties": {
                    "returns": _SUMMARY_SCHEMA,
                    "fidelity": {
                        "type": "object",
                        "required": ["score", "n_states", "per_action_confusion"],
                        "properties": {
                            "score": {"type": "number", "minimum": 0, "maximum": 1},
                            "n_states": {"type": "integer", "minimum": 1},
                            "per_action_confusion": {"type": "array",
                                                     "items": {"type": "array", "items": {"type": "integer"}}},
                        },
                    },
                    "fidelity_per_episode": {"type": "array", "items": {"type": "number"}},
                    "fidelity_score": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
        "settings": {"type": "object"},
    },
    "additionalProperties": False,
}


def validate_comparison(doc: dict) -> None:
    jsonschema.validate(doc, COMPARISON_SCHEMA)


def compare(env: Environment, orig, bundle, n_episodes: int = 100, seed: int = 0, clip: bool = True,
            fidelity_states: str = "original", fidelity_average: str = "episode") -> ComparisonReport:
    """Returns for the original and every surrogate, plus each surrogate's fidelity.

    ``fidelity_states`` picks whose evaluation rollouts supply the states
    (``"original"`` or ``"surrogate"``); ``fidelity_average`` is ``"episode"``
    (mean of per-episode scores) or ``"pooled"`` (all states at once).
    """
    if fidelity_states not in ("original", "surrogate"):
        raise ValueError("fidelity_states must be 'original' or 'surrogate'")
    if fidelity_average not in ("episode", "pooled"):
        raise ValueError("fidelity_average must be 'episode' or 'pooled'")
    orig_eps = run_episodes(env, orig, n_episodes, seed)
    original = evaluate_returns(env, orig, n_episodes, seed, clip, episodes=orig_eps)
    rows = {}
    policies = bundle.policies() if hasattr(bundle, "policies") else dict(bundle)
    for name, pol in policies.items():
        eps = run_episodes(env, pol, n_episodes, seed)
        source = orig_eps if fidelity_states == "original" else eps
        states = np.concatenate([ep.states for ep in source])
        pooled = fidelity(pol, orig, states)
        per_ep = [fidelity(pol, orig, ep.states).score for ep in source]
        score = float(np.mean(per_ep)) if fidelity_average == "episode" else pooled.score
        rows[name] = {"returns": evaluate_returns(env, pol, n_episodes, seed, clip, episodes=eps),
                      "fidelity": pooled, "fidelity_per_episode": per_ep, "fidelity_score": score}
    settings = {"n_episodes": n_episodes, "seed": seed, "clip": clip, "fidelity_states": fidelity_states,
                "fidelity_average": fidelity_average}
    return ComparisonReport(original, rows, settings)
