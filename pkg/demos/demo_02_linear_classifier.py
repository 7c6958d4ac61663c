"""One binary linear classifier: analytic sanity check, then a real instance.

The solver is dual coordinate descent on the hinge-loss objective
0.5*||w||^2 + C * sum(max(0, 1 - y*(w.x + b))), bias folded in as a
constant-1 feature. The stored dual coefficients give an exact optimality
certificate (primal minus dual objective).
"""

import numpy as np

from incshallow import SolverConfig, dual_gap, score, train_svm
from incshallow.svm import primal_objective

# --- the textbook 2-point problem: one positive at +2, one negative at -2.
# The max-margin separator is w = 0.5, b = 0, scoring the points at exactly +-1.
config = SolverConfig(c=1.0, tolerance=1e-8, max_epochs=10_000)
clf = train_svm([[2.0]], [[-2.0]], config)
print(f"2-point problem: w = {clf.weights[0]:.6f}, b = {clf.bias:.2e}")
print(f"  score(+2) = {score(clf, np.array([2.0])):+.6f}")
print(f"  score(-2) = {score(clf, np.array([-2.0])):+.6f}")
print(f"  duality gap = {dual_gap(clf, [[2.0]], [[-2.0]], config):.2e}")

# --- a noisy 2-d instance
rng = np.random.default_rng(3)
pos = rng.normal(loc=[+1.0, 0.5], scale=0.6, size=(40, 2))
neg = rng.normal(loc=[-1.0, -0.5], scale=0.6, size=(40, 2))

for c in (0.01, 1.0, 100.0):
    config = SolverConfig(c=c, seed=1, max_epochs=20_000)
    clf = train_svm(pos, neg, config)
    obj = primal_objective(clf, pos, neg, config)
    gap = dual_gap(clf, pos, neg, config)
    train_acc = ((pos @ clf.weights + clf.bias > 0).mean()
                 + (neg @ clf.weights + clf.bias < 0).mean()) / 2
    print(f"C={c:>6}: objective {obj:10.4f}  gap {gap:.2e}  "
          f"train accuracy {train_acc:.3f}")

# determinism: same inputs + config give the bit-identical classifier
again = train_svm(pos, neg, SolverConfig(c=1.0, seed=1, max_epochs=20_000))
ref = train_svm(pos, neg, SolverConfig(c=1.0, seed=1, max_epochs=20_000))
print("retrain bit-identical:", np.array_equal(again.weights, ref.weights))
