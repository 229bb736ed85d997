import itertools
import math
import sys

import numpy as np
import pytest

from pddshap.core import FeatureSubset

GRID = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])


def interaction(X):
    return X[:, 0] + 2 * X[:, 1] + 3 * X[:, 0] * X[:, 1]


def product_grid(d, levels=(0.0, 1.0)):
    return np.array(list(itertools.product(levels, repeat=d)), dtype=float)[:, ::-1].copy()


def permutation_shapley(val, d):
    """Independent oracle: average marginal contribution over all d! orderings."""
    phi = np.zeros(d)
    for order in itertools.permutations(range(d)):
        bits = 0
        for j in order:
            phi[j] += val(bits | 1 << j) - val(bits)
            bits |= 1 << j
    return phi / math.factorial(d)


def brute_interventional_game(f, x, Z):
    """val(bits) computed point by point, no batching."""
    d = len(x)

    def val(bits):
        u = FeatureSubset(bits, d)
        rows = [np.where(u.mask(), x, z) for z in Z]
        pd = np.mean([f(np.array([r]))[0] for r in rows])
        base = np.mean([f(np.array([z]))[0] for z in Z])
        return pd - base

    return val


def child_command(body):
    """Shell command running a Python protocol child."""
    return [sys.executable, "-c", body]


@pytest.fixture
def grid():
    return GRID.copy()
