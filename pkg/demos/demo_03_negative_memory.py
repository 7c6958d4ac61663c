"""The bounded negative memory and its three selection strategies.

The memory holds at most `budget` vectors no matter how many classes exist.
`rand` samples each class uniformly, `div` picks each class's greedy-
diversified subset, `ind` freezes an external pool. A class never sees its
own vectors among the negatives used to train its classifier.
"""

import numpy as np

from incshallow import compute_quota, greedy_diversify, negatives_for_class
from incshallow.features import normalize_rows
from incshallow.memory import select_div, select_ind, select_rand

rng = np.random.default_rng(5)

# --- quota arithmetic: floor(K/y) per class, remainder to the lowest ids
quota = compute_quota([(0, 99), (1, 99), (2, 99)], budget=10)
print("budget 10 over 3 classes ->", quota.per_class)
quota_large = compute_quota([(cid, 1300) for cid in range(1000)], 20_000)
print("budget 20000 over 1000 classes ->",
      sorted(set(quota_large.per_class.values())), "per class")

# --- greedy diversification on points you can eyeball: the first pick is the
# item nearest the mean direction, later picks minimize mean similarity
items = normalize_rows(np.array([
    [1.0, 0.05], [0.95, 0.1], [1.0, -0.05],   # a tight bundle pointing right
    [0.0, 1.0],                               # straight up
    [-1.0, 0.1],                              # pointing left
]))
order = greedy_diversify(items, 3)
print("\ngreedy selection order over {right bundle, up, left}:", order.tolist())

# --- build one memory per strategy over two classes
train_views = {
    0: normalize_rows(rng.normal(loc=[+1, 0, 0, 0], scale=0.3, size=(30, 4))),
    1: normalize_rows(rng.normal(loc=[-1, 0, 0, 0], scale=0.3, size=(30, 4))),
}
budget = 12
quota = compute_quota([(0, 30), (1, 30)], budget)

mem_rand = select_rand(train_views, quota, seed=9)
mem_div = select_div(train_views, quota)
pool = normalize_rows(rng.normal(size=(100, 4)))
mem_ind = select_ind(pool, budget)

for name, mem in (("rand", mem_rand), ("div", mem_div), ("ind", mem_ind)):
    counts = {int(c): int((mem.provenance == c).sum())
              for c in np.unique(mem.provenance)}
    print(f"{name}: {len(mem)} vectors, provenance counts {counts}")

# own-class exclusion: training class 0 never sees class-0 vectors
negs = negatives_for_class(mem_rand, 0)
print("negatives for class 0 under rand:", negs.shape[0],
      "vectors, all from class 1:",
      bool((mem_rand.provenance[mem_rand.provenance != 0] == 1).all()))
print("negatives for class 0 under ind:",
      negatives_for_class(mem_ind, 0).shape[0], "(external pool, nothing excluded)")
