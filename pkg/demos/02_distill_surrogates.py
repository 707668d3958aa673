"""From Shapley vectors to three readable surrogates, end to end.

Cluster the vectors into one group per action, keep the state closest to each
pair of centroids' shared border, label those states with the original policy,
and fit a tree, a floored linear model and a softmax classifier on them.

    python3 demos/02_distill_surrogates.py
"""

import numpy as np

from shapdistill import (
    EnvSpec,
    PipelineConfig,
    collect_dataset,
    compare,
    export_coeffs_csv,
    export_tree_dot,
    make_env,
    oracle_table_policy,
    run_pipeline,
)

env = make_env(EnvSpec("tree", 4, 3, gamma=0.95, max_steps=50), "synthetic_tree", seed=11, depth=2)
policy = oracle_table_policy(env)
ds = collect_dataset(env, policy, 30, seed=1)

boundary, bundle, report = run_pipeline(ds, policy, PipelineConfig(seed=0))
print(f"k = {report.data['n_clusters']} clusters -> {len(boundary)} boundary points")
for p in boundary.points:
    print(f"  pair {p.pair}: state {np.round(p.state, 2)} label {p.label} (gap {p.gap:.4f})")

print("\ndecision tree:\n" + export_tree_dot(bundle.tree))
print("linear coefficients:\n" + export_coeffs_csv(bundle.linear))

# returns use the same 50 episode seeds for every policy; fidelity is measured on the original's states
rep = compare(env, policy, bundle, n_episodes=50, seed=3)
print(f"{'policy':<10}{'return':>10}{'ci95':>8}{'fidelity':>10}")
print(f"{'original':<10}{rep.original.mean:>10.2f}{rep.original.ci95_half_width:>8.2f}{1.0:>10.3f}")
for name, row in rep.surrogates.items():
    r = row["returns"]
    print(f"{name:<10}{r.mean:>10.2f}{r.ci95_half_width:>8.2f}{row['fidelity_score']:>10.3f}")
