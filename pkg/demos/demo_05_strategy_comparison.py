"""Comparing the three negative-selection strategies on harder data.

With well-separated classes all strategies saturate, so this demo lowers the
separation until errors appear, then runs the same incremental plan with
in-dataset sampling (rand), greedy diversified subsets (div), and a fixed
external pool (ind). The external pool comes from a second, disjoint
synthetic dataset, standing in for generic image features.
"""

import numpy as np

from incshallow import BatchPlan, ExperimentConfig, generate_synthetic, run_protocol

CLASSES, DIM, BUDGET = 30, 16, 150

dataset, test_set = generate_synthetic(
    classes=CLASSES, dim=DIM, train_per_class=50, test_per_class=20,
    separation=2.0, seed=21, validation_per_class=10)

# an unrelated feature pool for `ind`: other classes, same feature space
pool_ds, _ = generate_synthetic(classes=CLASSES, dim=DIM, train_per_class=30,
                                test_per_class=1, separation=2.0, seed=99,
                                validation_per_class=0)
external_pool = np.vstack([cf.train for cf in pool_ds.classes])

plan = BatchPlan.consecutive(dataset.class_order, count=3, size=10)

per_state = {}
for strategy in ("rand", "div", "ind"):
    config = ExperimentConfig(memory_budget=BUDGET, strategy=strategy, seed=5,
                              c_grid=(1.0,), validation_per_class=10)
    _, reports, _ = run_protocol(
        dataset, plan, config, eval_set=test_set,
        external_pool=external_pool if strategy == "ind" else None)
    per_state[strategy] = reports

print(f"memory budget {BUDGET} vs {CLASSES * 50} train vectors total\n")
print(f"{'state':>5} {'classes':>8}", end="")
for strategy in per_state:
    print(f" {strategy + ' top5':>10}", end="")
print()
for s in range(len(plan.batches)):
    row = [per_state[st][s] for st in per_state]
    print(f"{s:>5} {row[0].known_class_count:>8}", end="")
    for r in row:
        print(f" {r.top5:>10.4f}", end="")
    print()

final = {st: reports[-1].top5 for st, reports in per_state.items()}
print("\nfinal top-5 per strategy:",
      {k: round(v, 4) for k, v in final.items()})
print("in-dataset vs external spread:",
      round(max(final.values()) - min(final.values()), 4))
