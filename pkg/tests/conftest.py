import numpy as np


def planted_instance(rng, n, d, flip=0.2):
    """Unit-norm rows labeled by a random hyperplane, with a fraction of labels
    flipped so the optimum carries real hinge loss at any C."""
    X = rng.normal(size=(n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    w = rng.normal(size=d)
    b = 0.3 * rng.normal()
    y = np.sign(X @ w + b)
    y[y == 0] = 1.0
    y[rng.random(n) < flip] *= -1.0
    return X, y


def split_by_label(X, y):
    return X[y > 0], X[y < 0]
