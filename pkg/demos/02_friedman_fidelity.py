# %% [markdown]
# # How much does the truncation order matter?
#
# Friedman #1 has one pairwise interaction (`sin(pi*x0*x1)`) and otherwise
# additive terms. We compare order-1, 2 and 3 surrogates to the exact
# interventional Shapley values, and see what the samplers cost.

# %%
import time

import numpy as np

from pddshap import train_pdd
from pddshap.bench import agreement
from pddshap.models import friedman1
from pddshap.shapley import explain_batch, pdd_shapley_matrix

rng = np.random.default_rng(0)
bg = rng.uniform(size=(300, 5))
X = rng.uniform(size=(200, 5))
f = friedman1()

t0 = time.perf_counter()
ref, _, _ = explain_batch("exact", f, X, bg)
print(f"exact: {time.perf_counter() - t0:.2f} s")

# %%
for k in (1, 2, 3):
    t0 = time.perf_counter()
    s = train_pdd(f, bg, k)
    train = time.perf_counter() - t0
    t0 = time.perf_counter()
    phi = pdd_shapley_matrix(s, X)
    rep = agreement(ref, phi)
    print(f"k={k}  R2 {rep.r2:.4f}  spearman {rep.spearman:.4f}  "
          f"train {train:.2f} s  explain {1e3 * (time.perf_counter() - t0):.1f} ms")

# %% [markdown]
# The samplers need no training but pay model evaluations on every instance.

# %%
for method in ("subset", "antithetic"):
    for budget in (10, 100):
        t0 = time.perf_counter()
        phi, _, calls = explain_batch(method, f, X, bg, budget, seed=1)
        rep = agreement(ref, phi)
        print(f"{method:10s} budget {budget:4d}  R2 {rep.r2:.4f}  "
              f"{calls} evaluations  {time.perf_counter() - t0:.2f} s")
