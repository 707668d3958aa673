import csv
import dataclasses
import json

import numpy as np
import pytest

from shapdistill import (
    DecisionTree,
    EnvSpec,
    LinearSoftmaxPolicy,
    collect_dataset,
    load_dataset,
    load_policy,
    make_env,
    oracle_table_policy,
    save_policy,
    validate_comparison,
)
from shapdistill.cli import SILVER_ARTIFACTS, main
from shapdistill.surrogate import load_bundle, save_bundle

TREE_ENV = {"kind": "synthetic_tree", "n_features": 4, "n_actions": 3, "gamma": 0.95, "max_steps": 50,
            "seed": 11, "options": {"depth": 2}}
GRID_ENV = {"kind": "gridworld", "n_features": 4, "n_actions": 4, "gamma": 0.95, "max_steps": 30, "seed": 0}


def write_cfg(path, **sections):
    path.write_text(json.dumps(sections), encoding="utf-8")
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def silver_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("silver")
    cfg = write_cfg(d / "cfg.json", env=TREE_ENV, policy={"source": "oracle"},
                    collect={"n_episodes": 30, "seed": 1}, pipeline={"seed": 0},
                    eval={"n_episodes": 20, "seed": 3}, out=str(d / "out"))
    assert run("--config", cfg, "collect") == 0
    assert run("--config", cfg, "silver") == 0
    return d, cfg


# ---------------------------------------------------------------- train


def test_train_gridworld(tmp_path):
    cfg = write_cfg(tmp_path / "cfg.json", env=GRID_ENV, train={"episodes": 60, "seed": 2})
    assert run("--config", cfg, "--out", tmp_path / "a", "train") == 0
    assert run("train", "--config", cfg, "--out", tmp_path / "b") == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "policy.json").read_bytes() == (b / "policy.json").read_bytes()
    assert (a / "training_curve.csv").read_bytes() == (b / "training_curve.csv").read_bytes()
    rows = list(csv.reader((a / "training_curve.csv").open()))
    assert rows[0] == ["episode", "return"] and len(rows) == 61
    policy = load_policy(a / "policy.json")
    assert (policy.n_features, policy.n_actions) == (4, 4)
    # the trained policy feeds collect directly
    assert run("--config", cfg, "--out", a, "collect") == 0
    assert len(load_dataset(a / "dataset.jsonl")) > 0


# ---------------------------------------------------------------- collect


def test_collect_line_count_and_reload(tmp_path):
    cfg = write_cfg(tmp_path / "cfg.json", env=TREE_ENV, policy={"source": "oracle"},
                    collect={"n_episodes": 10, "seed": 4}, out=str(tmp_path))
    assert run("--config", cfg, "collect") == 0
    env = make_env(EnvSpec("synthetic_tree", 4, 3, 0.95, 50), "synthetic_tree", seed=11, depth=2)
    ds = collect_dataset(env, oracle_table_policy(env), 10, seed=4)
    lines = (tmp_path / "dataset.jsonl").read_text().splitlines()
    assert len(lines) == 1 + len(ds)
    assert load_dataset(tmp_path / "dataset.jsonl") == ds


def test_collect_max_states(tmp_path):
    cfg = write_cfg(tmp_path / "cfg.json", env=TREE_ENV, policy={"source": "oracle"},
                    collect={"n_episodes": 10, "seed": 4})
    assert run("--config", cfg, "--out", tmp_path / "a", "--max-states", 25, "collect") == 0
    assert run("--config", cfg, "--out", tmp_path / "b", "collect", "--max-states", 25) == 0
    assert len(load_dataset(tmp_path / "a" / "dataset.jsonl")) == 25
    assert (tmp_path / "a" / "dataset.jsonl").read_bytes() == (tmp_path / "b" / "dataset.jsonl").read_bytes()


# ---------------------------------------------------------------- shap


def shap_lines(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_shap_constant_policy_zero(silver_dir, tmp_path):
    d, _ = silver_dir
    save_policy(LinearSoftmaxPolicy.constant(4, 3, 1), tmp_path / "const.json")
    cfg = write_cfg(tmp_path / "cfg.json", policy={"source": "load", "path": str(tmp_path / "const.json")},
                    dataset=str(d / "out" / "dataset.jsonl"), pipeline={"shapley": {"knn_k": 8}})
    assert run("--config", cfg, "--out", tmp_path, "--max-states", 15, "shap") == 0
    recs = shap_lines(tmp_path / "shap.jsonl")
    assert len(recs) == 15
    assert all(x == 0.0 for r in recs for x in r["phi"])


def test_shap_exact_vs_sampled(silver_dir, tmp_path):
    d, _ = silver_dir
    common = {"policy": {"source": "oracle"}, "env": TREE_ENV, "dataset": str(d / "out" / "dataset.jsonl")}
    exact = write_cfg(tmp_path / "e.json", **common, pipeline={"shapley": {"knn_k": 8, "max_states": 8}})
    sampled = write_cfg(tmp_path / "s.json", **common, pipeline={"shapley": {
        "knn_k": 8, "max_states": 8, "method": "sampled", "permutations": 2000}})
    assert run("--config", exact, "--out", tmp_path / "e", "shap") == 0
    assert run("--config", sampled, "--out", tmp_path / "s", "shap") == 0
    e, s = shap_lines(tmp_path / "e" / "shap.jsonl"), shap_lines(tmp_path / "s" / "shap.jsonl")
    assert [r["state_index"] for r in e] == [r["state_index"] for r in s]
    assert "se" not in e[0] and "se" in s[0]
    diff = np.abs(np.array([r["phi"] for r in e]) - np.array([r["phi"] for r in s]))
    se = np.array([r["se"] for r in s])
    # 32 comparisons at 3 SE: about one in ten runs has a single exceedance by chance
    assert np.sum(diff > 3 * se + 1e-9) <= 1
    assert np.all(diff <= 4 * se + 1e-9)


def test_shap_exact_limit(silver_dir, tmp_path, capsys):
    d, _ = silver_dir
    cfg = write_cfg(tmp_path / "cfg.json", env=TREE_ENV, policy={"source": "oracle"},
                    dataset=str(d / "out" / "dataset.jsonl"), pipeline={"shapley": {"exact_limit": 3}})
    assert run("--config", cfg, "--out", tmp_path, "shap") == 2
    err = capsys.readouterr().err
    assert "pipeline.shapley.method" in err and "sampled" in err
    assert not (tmp_path / "shap.jsonl").exists()


# ---------------------------------------------------------------- silver


def test_silver_artifacts(silver_dir):
    d, _ = silver_dir
    out = d / "out"
    for name in SILVER_ARTIFACTS:
        assert (out / name).stat().st_size > 0
    assert len((out / "boundary.jsonl").read_text().splitlines()) == 3
    assert (out / "tree.dot").read_text().startswith("digraph")
    load_bundle(out / "bundle.json")


def test_silver_rerun_identical(silver_dir, tmp_path):
    d, _ = silver_dir
    cfg = write_cfg(tmp_path / "cfg.json", policy={"source": "oracle"}, env=TREE_ENV, pipeline={"seed": 0},
                    dataset=str(d / "out" / "dataset.jsonl"))
    assert run("--config", cfg, "--out", tmp_path, "silver") == 0
    for name in SILVER_ARTIFACTS:
        assert (tmp_path / name).read_bytes() == (d / "out" / name).read_bytes(), name


def test_silver_stage_failure(silver_dir, tmp_path, capsys):
    d, _ = silver_dir
    save_policy(LinearSoftmaxPolicy.constant(4, 3, 0), tmp_path / "const.json")
    cfg = write_cfg(tmp_path / "cfg.json", policy={"source": "load", "path": str(tmp_path / "const.json")},
                    dataset=str(d / "out" / "dataset.jsonl"), pipeline={"shapley": {"knn_k": 8, "max_states": 60}})
    assert run("--config", cfg, "--out", tmp_path, "silver") == 1
    assert "error [silver:kmeans]" in capsys.readouterr().err
    assert not (tmp_path / "bundle.json").exists()


# ---------------------------------------------------------------- eval


def test_eval_report(silver_dir, tmp_path):
    d, cfg = silver_dir
    assert run("--config", cfg, "--out", tmp_path, "eval") == 2  # no bundle under tmp_path
    assert run("--config", cfg, "eval") == 0
    out = d / "out"
    rows = list(csv.reader((out / "comparison.csv").open()))
    assert len(rows) == 5 and [r[0] for r in rows[1:]] == ["original", "tree", "linear", "logistic"]
    validate_comparison(json.loads((out / "comparison.json").read_text()))


def test_eval_identity_surrogate(silver_dir, tmp_path):
    d, _ = silver_dir
    env = make_env(EnvSpec("synthetic_tree", 4, 3, 0.95, 50), "synthetic_tree", seed=11, depth=2)
    value = np.where(env.tree_feature == -1, env.tree_action, 0)
    tree = DecisionTree(env.tree_feature, env.tree_threshold, env.tree_left, env.tree_right, value, 4, 3)
    bundle = dataclasses.replace(load_bundle(d / "out" / "bundle.json"), tree=tree)
    save_bundle(bundle, tmp_path / "identity.json")
    cfg = write_cfg(tmp_path / "cfg.json", env=TREE_ENV, policy={"source": "oracle"},
                    bundle=str(tmp_path / "identity.json"), eval={"n_episodes": 10, "seed": 0})
    assert run("--config", cfg, "--out", tmp_path, "eval") == 0
    rows = {r["policy"]: r for r in csv.DictReader((tmp_path / "comparison.csv").open())}
    assert float(rows["tree"]["fidelity"]) == 1.0
    assert rows["tree"]["mean_return"] == rows["original"]["mean_return"]


# ---------------------------------------------------------------- config errors


def test_config_errors(tmp_path, capsys):
    bad = write_cfg(tmp_path / "bad.json", enviroment={})
    assert run("--config", bad, "collect") == 2
    assert "error [config] enviroment" in capsys.readouterr().err
    assert run("--config", tmp_path / "missing.json", "collect") == 2
    no_data = write_cfg(tmp_path / "nd.json", policy={"source": "oracle"}, out=str(tmp_path / "empty"))
    assert run("--config", no_data, "silver") == 2
    assert "dataset" in capsys.readouterr().err
    no_env = write_cfg(tmp_path / "ne.json")
    assert run("--config", no_env, "train") == 2
    with pytest.raises(SystemExit):
        run("frobnicate")


def test_seed_override(tmp_path):
    cfg = write_cfg(tmp_path / "cfg.json", env=TREE_ENV, policy={"source": "oracle"},
                    collect={"n_episodes": 5, "seed": 0}, out=str(tmp_path / "x"))
    assert run("--config", cfg, "--seed", 9, "--out", tmp_path / "a", "collect") == 0
    assert run("--config", cfg, "--out", tmp_path / "b", "collect") == 0
    cfg9 = write_cfg(tmp_path / "cfg9.json", env=TREE_ENV, policy={"source": "oracle"},
                     collect={"n_episodes": 5, "seed": 9})
    assert run("--config", cfg9, "--out", tmp_path / "c", "collect") == 0
    a, b, c = ((tmp_path / x / "dataset.jsonl").read_bytes() for x in "abc")
    assert a == c and a != b
