"""Train a tabular agent on a gridworld, then explain it with surrogates.

Unlike the synthetic bandits there is no hidden ground truth here: the learned
Q-table is the policy being explained. Only 6 boundary points come out of
k = 4 clusters, so the surrogates are coarse by construction.

    python3 demos/03_gridworld_train_and_explain.py
"""

import numpy as np

from shapdistill import (
    EnvSpec,
    LinearSoftmaxPolicy,
    PipelineError,
    PipelineConfig,
    collect_dataset,
    compare,
    evaluate_returns,
    make_env,
    q_learn,
    run_pipeline,
)
from shapdistill.boundary import ShapleySettings

env = make_env(EnvSpec("grid", 4, 4, gamma=0.95, max_steps=40), "gridworld", seed=0)
policy, curve = q_learn(env, 5000, seed=0)
print(f"training return, first 500 episodes {np.mean(curve[:500]):.2f}, last 500 {np.mean(curve[-500:]):.2f}")

uniform = evaluate_returns(env, LinearSoftmaxPolicy.uniform(4, 4), 100, seed=1)
learned = evaluate_returns(env, policy, 100, seed=1)
print(f"clipped return: learned {learned.mean:.2f} +- {learned.ci95_half_width:.2f}, "
      f"uniform-argmax {uniform.mean:.2f} +- {uniform.ci95_half_width:.2f}")

ds = collect_dataset(env, policy, 300, seed=2)
# the gridworld has few distinct states, so a small neighbourhood keeps conditioning local
cfg = PipelineConfig(seed=0, shapley=ShapleySettings(knn_k=8))
try:
    boundary, bundle, report = run_pipeline(ds, policy, cfg)
except PipelineError as exc:
    # a stage error aborts the run; with a near-constant policy k-means or the logistic fit can refuse
    raise SystemExit(f"pipeline stopped at {exc.stage}: {exc.cause}")

print(f"{len(boundary)} boundary points, labels {boundary.labels.tolist()}")
rep = compare(env, policy, bundle, n_episodes=100, seed=1)
for name, row in rep.surrogates.items():
    print(f"{name:<9} fidelity {row['fidelity_score']:.3f}  return {row['returns'].mean:.2f}")
