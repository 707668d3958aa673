"""Shapley vectors for a few states of a known tree policy.

The synthetic_tree environment rewards the action chosen by a hidden depth-2
tree, so its oracle policy is known exactly. Features the tree splits on
should carry most of the attribution; the rest should sit near zero.

    python3 demos/01_attribute_states.py
"""

import numpy as np

from shapdistill import (
    ConditionalConfig,
    EnvSpec,
    attribute_dataset,
    collect_dataset,
    make_env,
    oracle_table_policy,
    shapley_sampled,
)

env = make_env(EnvSpec("tree", 4, 3, gamma=0.95, max_steps=50), "synthetic_tree", seed=11, depth=2)
policy = oracle_table_policy(env)
ds = collect_dataset(env, policy, 30, seed=1)
print(f"{len(ds)} states collected; hidden tree splits on features {sorted(set(env.tree_feature[env.tree_feature >= 0].tolist()))}")

# exact attribution over all 2^4 coalitions, deterministic mode (phi is in action-index units)
vectors = attribute_dataset(policy, ds, mode="det", cfg=ConditionalConfig(knn_k=32), max_states=200, seed=0)
phi = np.array([v.values for v in vectors])
print("mean |phi| per feature:", np.round(np.abs(phi).mean(axis=0), 3))

for v in vectors[:5]:
    s = ds.states[v.state_index]
    print(f"state {np.round(s, 2)}  action {policy.act(s)}  phi {np.round(v.values, 3)}  "
          f"sum {v.values.sum():+.3f} = v(N) - v(empty) {v.v_full - v.v_empty:+.3f}")

# the sampled estimator reports a standard error; exact values should fall inside a few of them
s = ds.states[vectors[0].state_index]
est = shapley_sampled(policy, ds, s, cfg=ConditionalConfig(knn_k=32), permutations=2000, seed=3)
print("sampled:", np.round(est.values, 3), "+-", np.round(est.se, 3))
print("exact:  ", np.round(vectors[0].values, 3))
