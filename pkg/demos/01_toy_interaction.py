# %% [markdown]
# # Attributions on a two-feature toy
#
# `f(x) = x0 + 2*x1 + 3*x0*x1` on the four corners of the unit square. The
# background is the grid itself, so every quantity can be checked by hand.

# %%
import numpy as np

from pddshap import exact_shapley, pdd_shapley, train_pdd
from pddshap.models import interaction2
from pddshap.pdd import component_variances

grid = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
f = interaction2(1, 2, 3)
print(f.evaluate(grid))  # 0, 1, 2, 6

# %% [markdown]
# Train an order-2 surrogate. The lookup regressor memorises each component's
# targets, so the decomposition is exact on the grid.

# %%
s = train_pdd(f, grid, k=2, regressor="lookup")
print("f_empty", s.f_empty)
for u, part in s.component_predictions(grid).items():
    print(tuple(u), part)

# %% [markdown]
# Each component's value is split equally among its features. At (1, 1):
# 1.25 + 0.75/2 for x0 and 1.75 + 0.75/2 for x1.

# %%
for a in pdd_shapley(s, grid):
    print(a.phi, a.phi.sum() + a.baseline)

# %%
print(exact_shapley(f, grid[3], grid).phi)

# %% [markdown]
# Global view: component variances and the Shapley effects built from them.

# %%
rep = component_variances(s, grid)
print({tuple(u): v for u, v in rep.per_subset.items()}, rep.total)
print(rep.shapley_effects(2))
