# %% [markdown]
# # Explaining a model that lives in another process
#
# Any program that speaks the line protocol can be explained: it reads a
# header `B <rows> <cols>`, then the rows, and prints one number per row.
# `pddshap.protocol.serve` implements the child side for Python callables.

# %%
import sys
import tempfile
from pathlib import Path

import numpy as np

from pddshap import load_surrogate, save_surrogate, subprocess_model, train_pdd
from pddshap.shapley import pdd_shapley_matrix

child = """
import numpy as np
from pddshap.protocol import serve
serve(lambda X: np.exp(-X[:, 0] ** 2) * X[:, 1] + X[:, 2])
"""

rng = np.random.default_rng(3)
bg = rng.normal(size=(60, 3))

with subprocess_model([sys.executable, "-c", child]) as model:
    s = train_pdd(model, bg, k=2)
print(s.info["model_evaluations"], "evaluations,", f"{s.info['train_time']:.2f} s")

# %% [markdown]
# The surrogate is a self-contained JSON file. Explaining from it never
# touches the child process again.

# %%
path = Path(tempfile.mkdtemp()) / "surrogate.json"
save_surrogate(s, path)
back = load_surrogate(path)
X = rng.normal(size=(5, 3))
print(np.array_equal(pdd_shapley_matrix(s, X), pdd_shapley_matrix(back, X)))
print(pdd_shapley_matrix(back, X).round(3))
