"""Command-line front end: ``train``, ``collect``, ``shap``, ``silver``, ``eval``.

Configuration is one JSON file (see README for the schema); ``--out``,
``--seed`` and ``--max-states`` override the file. Diagnostics go to stderr,
artifacts only to files under the output directory.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import jsonschema

from .boundary import PipelineConfig, PipelineError, run_pipeline, save_boundary
from .envs import (
    EnvSpec,
    collect_dataset,
    load_dataset,
    make_env,
    save_dataset,
    subsample,
)
from .evaluation import compare, validate_comparison
from .policy import load_policy, oracle_table_policy, q_learn, remote_policy, save_policy
from .shapley import ConditionalConfig, ShapleyError, attribute_dataset, save_shap_vectors
from .surrogate import export_coeffs_csv, export_tree_dot, load_bundle, save_bundle

log = logging.getLogger("shapdistill")

SILVER_ARTIFACTS = ("bundle.json", "boundary.jsonl", "report.json", "tree.dot", "linear_coeffs.csv",
                    "logistic_coeffs.csv")

DEFAULTS = {
    "env": None,
    "policy": {"source": "load", "path": None, "endpoint": None, "timeout": 5.0},
    "train": {"episodes": 2000, "alpha": 0.1, "epsilon": [1.0, 0.05, 0.995], "bins": 10, "seed": 0},
    "collect": {"n_episodes": 100, "seed": 0, "max_states": None},
    "dataset": None,
    "bundle": None,
    "pipeline": {},
    "eval": {"n_episodes": 100, "seed": 0, "clip": True, "fidelity_states": "original",
             "fidelity_average": "episode"},
    "out": "out",
}


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _merge(base, override):
    if isinstance(base, dict) and isinstance(override, dict):
        out = dict(base)
        for key, val in override.items():
            out[key] = _merge(base.get(key), val) if key in base else val
        return out
    return override


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError("--config", f"file {path} does not exist")
        try:
            user = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(user, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        unknown = sorted(set(user) - set(DEFAULTS))
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration key")
        cfg = _merge(cfg, user)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key == "out":
            cfg["out"] = val
        elif key == "seed":
            for section in ("train", "collect", "eval"):
                cfg[section]["seed"] = val
            cfg["pipeline"] = {**cfg["pipeline"], "seed": val}
        elif key == "max_states":
            cfg["collect"]["max_states"] = val
            shap = dict(cfg["pipeline"].get("shapley") or {})
            shap["max_states"] = val
            cfg["pipeline"] = {**cfg["pipeline"], "shapley": shap}
    return cfg


def _env(cfg):
    e = cfg.get("env")
    if not isinstance(e, dict):
        raise ConfigError("env", "an environment section is required for this command")
    try:
        spec = EnvSpec(e.get("name", e.get("kind", "env")), e["n_features"], e["n_actions"],
                       e.get("gamma", 0.99), e.get("max_steps", 100))
        return make_env(spec, e["kind"], int(e["seed"]), **(e.get("options") or {}))
    except KeyError as exc:
        raise ConfigError(f"env.{exc.args[0]}", "missing required field") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError("env", str(exc)) from None


def _train(cfg, env):
    t = cfg["train"]
    try:
        eps = tuple(float(x) for x in t["epsilon"])
        return q_learn(env, int(t["episodes"]), alpha=float(t["alpha"]), epsilon_schedule=eps,
                       seed=int(t["seed"]), bins=int(t["bins"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError("train", str(exc)) from None


def _policy(cfg, n_features, n_actions, env=None):
    p = cfg["policy"]
    source = p.get("source")
    if source == "load":
        path = p.get("path") or str(Path(cfg["out"]) / "policy.json")
        if not Path(path).exists():
            raise ConfigError("policy.path", f"policy file {path} does not exist")
        policy = load_policy(path)
    elif source == "remote":
        if not p.get("endpoint"):
            raise ConfigError("policy.endpoint", "remote policy needs host:port")
        policy = remote_policy(p["endpoint"], n_features, n_actions, timeout=float(p.get("timeout", 5.0)))
    elif source == "oracle":
        if env is None or not hasattr(env, "grid_states"):
            raise ConfigError("policy.source", "oracle policy needs a synthetic env section")
        policy = oracle_table_policy(env)
    elif source == "train":
        if env is None:
            raise ConfigError("policy.source", "training needs an env section")
        policy, _ = _train(cfg, env)
    else:
        raise ConfigError("policy.source", f"unknown source {source!r} (load | oracle | train | remote)")
    if policy.n_features != n_features or policy.n_actions != n_actions:
        raise ConfigError("policy", f"policy dims ({policy.n_features}, {policy.n_actions}) != "
                                    f"data dims ({n_features}, {n_actions})")
    return policy


def _dataset(cfg):
    path = cfg.get("dataset") or str(Path(cfg["out"]) / "dataset.jsonl")
    if not Path(path).exists():
        raise ConfigError("dataset", f"dataset file {path} does not exist (run `collect` first)")
    return load_dataset(path)


def _pipeline_cfg(cfg) -> PipelineConfig:
    try:
        return PipelineConfig.from_dict(cfg.get("pipeline") or {})
    except (TypeError, ValueError) as exc:
        raise ConfigError("pipeline", str(exc)) from None


def _out(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _maybe_env(cfg):
    return _env(cfg) if isinstance(cfg.get("env"), dict) else None


def cmd_train(cfg) -> list[Path]:
    env = _env(cfg)
    policy, returns = _train(cfg, env)
    out = _out(cfg)
    save_policy(policy, out / "policy.json")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "return"])
    for i, r in enumerate(returns):
        w.writerow([i, r])
    (out / "training_curve.csv").write_text(buf.getvalue(), encoding="utf-8")
    return [out / "policy.json", out / "training_curve.csv"]


def cmd_collect(cfg) -> list[Path]:
    env = _env(cfg)
    policy = _policy(cfg, env.n_features, env.n_actions, env)
    c = cfg["collect"]
    ds = collect_dataset(env, policy, int(c["n_episodes"]), seed=int(c["seed"]))
    if c.get("max_states") is not None:
        ds, _ = subsample(ds, int(c["max_states"]), seed=int(c["seed"]))
    path = _out(cfg) / "dataset.jsonl"
    save_dataset(ds, path)
    return [path]


def cmd_shap(cfg) -> list[Path]:
    ds = _dataset(cfg)
    policy = _policy(cfg, ds.n_features, ds.n_actions, _maybe_env(cfg))
    pc = _pipeline_cfg(cfg)
    s = pc.shapley
    if s.method == "exact" and ds.n_features > s.exact_limit:
        raise ConfigError("pipeline.shapley.method",
                          f"{ds.n_features} features exceeds exact_limit={s.exact_limit}; select 'sampled'")
    cond = ConditionalConfig(method=s.cond_method, knn_k=min(s.knn_k, len(ds)))
    try:
        vectors = attribute_dataset(policy, ds, mode=s.mode, cfg=cond, method=s.method, permutations=s.permutations,
                                    seed=pc.seed, max_states=s.max_states, exact_limit=s.exact_limit,
                                    target_action=s.target_action, n_jobs=s.n_jobs)
    except ShapleyError as exc:
        raise StageError("attribute", str(exc)) from None
    path = _out(cfg) / "shap.jsonl"
    save_shap_vectors(vectors, path)
    return [path]


def cmd_silver(cfg) -> list[Path]:
    ds = _dataset(cfg)
    policy = _policy(cfg, ds.n_features, ds.n_actions, _maybe_env(cfg))
    try:
        bd, bundle, report = run_pipeline(ds, policy, _pipeline_cfg(cfg))
    except PipelineError as exc:
        raise StageError(exc.stage, str(exc.cause)) from None
    out = _out(cfg)
    save_bundle(bundle, out / "bundle.json")
    save_boundary(bd, out / "boundary.jsonl")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "tree.dot").write_text(export_tree_dot(bundle.tree), encoding="utf-8")
    (out / "linear_coeffs.csv").write_text(export_coeffs_csv(bundle.linear), encoding="utf-8")
    (out / "logistic_coeffs.csv").write_text(export_coeffs_csv(bundle.logistic), encoding="utf-8")
    for name, secs in report.timings.items():
        log.info("silver stage %s took %.3f s", name, secs)
    paths = [out / name for name in SILVER_ARTIFACTS]
    missing = [p for p in paths if not p.exists()]
    if missing:
        raise StageError("write", f"missing artifacts: {missing}")
    return paths


def cmd_eval(cfg) -> list[Path]:
    env = _env(cfg)
    policy = _policy(cfg, env.n_features, env.n_actions, env)
    bundle_path = cfg.get("bundle") or str(Path(cfg["out"]) / "bundle.json")
    if not Path(bundle_path).exists():
        raise ConfigError("bundle", f"bundle file {bundle_path} does not exist (run `silver` first)")
    bundle = load_bundle(bundle_path)
    e = cfg["eval"]
    report = compare(env, policy, bundle, n_episodes=int(e["n_episodes"]), seed=int(e["seed"]),
                     clip=bool(e["clip"]), fidelity_states=e["fidelity_states"],
                     fidelity_average=e["fidelity_average"])
    try:
        validate_comparison(json.loads(report.to_json()))
    except jsonschema.ValidationError as exc:
        raise StageError("validate", exc.message) from None
    out = _out(cfg)
    (out / "comparison.json").write_text(report.to_json(), encoding="utf-8")
    (out / "comparison.csv").write_text(report.to_csv(), encoding="utf-8")
    return [out / "comparison.json", out / "comparison.csv"]


COMMANDS = {"train": cmd_train, "collect": cmd_collect, "shap": cmd_shap, "silver": cmd_silver, "eval": cmd_eval}


def _common_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies use SUPPRESS so they never clobber flags given before the subcommand
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file", **kw)
    common.add_argument("--out", help="output directory (overrides config 'out')", **kw)
    common.add_argument("--seed", type=int, help="seed applied to every stage", **kw)
    common.add_argument("--max-states", type=int, dest="max_states", help="subsample size for collect/shap", **kw)
    common.add_argument("-v", "--verbose", action="store_true", help="log stage timings to stderr", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapdistill", parents=[_common_flags(False)],
                                     description="Distill interpretable surrogates from a discrete-action policy.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"train": "Q-learn a tabular policy", "collect": "roll out a policy and record states",
             "shap": "Shapley vectors for dataset states", "silver": "boundary dataset and surrogate fits",
             "eval": "returns and fidelity of the surrogates"}
    for name in COMMANDS:
        sub.add_parser(name, parents=[_common_flags(True)], help=helps[name])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    stage = "config"
    try:
        cfg = load_config(getattr(args, "config", None),
                          {"out": getattr(args, "out", None), "seed": getattr(args, "seed", None),
                           "max_states": getattr(args, "max_states", None)})
        stage = args.command
        paths = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error [config] {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error [{args.command}:{exc.stage}] {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported with the failing stage
        print(f"error [{stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        log.info("wrote %s", p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
