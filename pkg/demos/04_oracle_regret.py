"""Compare greedy slate construction against the exhaustive optimum.

At production scale, scoring every ordered arrangement of a candidate
pool is intractable, but on a desk-scale pool (8 candidates, 4 slots =
1680 arrangements) the oracle is exact. Greedy selection with lambda=1
can never beat the oracle; this script measures how close it gets and
how far above a random slate it lands.

Run:  python3 demos/04_oracle_regret.py
"""

import numpy as np

from sortgen import generation, model as sortmodel, simulator
from sortgen.core import EngineConfig, ObjectiveWeights

L_S, L_O = 8, 4
engine = EngineConfig(l_s=L_S, l_o=L_O, d_model=16, n_layers=1, max_count=4, seed=4)
weights = ObjectiveWeights()
params = sortmodel.init_params(engine)
catalog = simulator.sample_catalog(50, engine.d_emb, 8, seed=4)

rng = np.random.default_rng(44)
greedy_ratios, random_ratios = [], []
for trial in range(25):
    user = simulator.sample_user(rng, engine.d_user)
    pool = simulator.sample_pool(catalog, L_S, rng)
    vm = generation.ValueModel(engine, params)

    best_value, best_list = generation.exhaustive_oracle(pool, user, vm, weights, L_O)

    queues = generation.build_queues(pool, engine.queue_specs,
                                     engine.partition_strategy, L_O)
    trace = generation.generate(pool, user, queues, vm, weights, lam=1.0)
    greedy_value = float(vm.combined_values([list(trace.result.items)],
                                            user, weights)[0])

    perm = rng.permutation(L_S)[:L_O]
    random_value = float(vm.combined_values([[pool[i] for i in perm]],
                                            user, weights)[0])

    assert greedy_value <= best_value + 1e-9
    greedy_ratios.append(greedy_value / best_value)
    random_ratios.append(random_value / best_value)
    if trial < 5:
        print(f"pool {trial}: oracle={[it.id for it in best_list.items]} "
              f"greedy={[it.id for it in trace.result.items]} "
              f"ratio={greedy_ratios[-1]:.4f}")

print(f"\nmean greedy/optimal ratio over 25 pools: {np.mean(greedy_ratios):.4f}")
print(f"mean random/optimal ratio over 25 pools: {np.mean(random_ratios):.4f}")
print("greedy never exceeded the oracle and clearly beats random ordering")
