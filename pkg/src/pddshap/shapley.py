"""Shapley value estimators.

* :func:`shapley_from_game` - brute force over all ``2**d`` coalitions.
* :func:`shapley_from_decomposition` - closed form for games that are sums
  of subset terms, each term split equally among its members.
* :func:`pdd_shapley` - the closed form applied to a trained surrogate; no
  model calls.
* :func:`exact_shapley` - brute force on the interventional game of one
  instance against a background sample.
* :func:`subset_sampling_shapley`, :func:`antithetic_sampling_shapley` -
  Monte-Carlo baselines.

Randomness is derived from ``(seed, instance_id)``, so explaining a batch
gives the same per-row result regardless of order or batch composition.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from math import comb
from typing import Mapping, Optional

import numpy as np

from .core import (
    Attribution,
    FeatureSubset,
    InputError,
    as_instance,
    as_matrix,
    evaluate,
)
from .pdd import PDDSurrogate

MAX_EXACT_FEATURES = 20

# rows per model call for the brute-force game
_EXACT_BATCH_ROWS = 1 << 20


def _popcount(masks: np.ndarray) -> np.ndarray:
    out = np.zeros_like(masks)
    m = masks.copy()
    while m.any():
        out += m & 1
        m >>= 1
    return out


@dataclass(frozen=True)
class GameValues:
    """Coalition values ``val(u)`` for all ``2**d`` subsets, indexed by bitmask.

    Values are shifted on construction so that ``val(empty) == 0``.
    """

    d: int
    values: np.ndarray

    def __post_init__(self):
        if not 1 <= self.d <= MAX_EXACT_FEATURES:
            raise InputError(
                f"brute-force games support 1 <= d <= {MAX_EXACT_FEATURES}, got d={self.d}"
            )
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.shape[0] != 1 << self.d:
            raise InputError(f"game over {self.d} players needs {1 << self.d} values, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise InputError("game values must be finite")
        v = v - v[0]
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_mapping(cls, values: Mapping[FeatureSubset, float], d: int) -> "GameValues":
        arr = np.full(1 << d, np.nan)
        for u, val in values.items():
            if u.d != d:
                raise InputError(f"subset {u} is over {u.d} players, game has {d}")
            arr[u.bits] = val
        if u_missing := int(np.isnan(arr[1:]).sum()):
            raise InputError(f"incomplete game: {u_missing} nonempty coalitions have no value")
        if np.isnan(arr[0]):
            arr[0] = 0.0
        return cls(d, arr)

    def __call__(self, u: FeatureSubset) -> float:
        return float(self.values[u.bits])


@dataclass(frozen=True)
class SubsetFunctionals:
    """A real number ``g(u)`` per nonempty subset; missing subsets count as 0."""

    d: int
    g: Mapping[FeatureSubset, float]

    def __post_init__(self):
        for u, val in self.g.items():
            if u.d != self.d or u.bits == 0:
                raise InputError(f"bad subset {u} for d={self.d}")
            if not np.isfinite(val):
                raise InputError(f"g({u}) is not finite")

    def induced_game(self) -> GameValues:
        """``val(u) = sum of g(v) over v subset of u``."""
        v = np.zeros(1 << self.d)
        for u, val in self.g.items():
            v[u.bits] += val
        # subset-sum (zeta) transform
        masks = np.arange(1 << self.d)
        for j in range(self.d):
            has = (masks >> j) & 1 == 1
            v[masks[has]] += v[masks[has] ^ (1 << j)]
        return GameValues(self.d, v)


def _shapley_weights(d: int) -> np.ndarray:
    return np.array([1.0 / (d * comb(d - 1, s)) for s in range(d)])


def shapley_matrix(values: np.ndarray, d: int) -> np.ndarray:
    """Shapley values for a stack of games, ``values`` of shape ``(M, 2**d)``."""
    values = np.atleast_2d(values)
    masks = np.arange(1 << d, dtype=np.int64)
    size = _popcount(masks)
    w = _shapley_weights(d)
    phi = np.empty((values.shape[0], d))
    for j in range(d):
        without = masks[(masks >> j) & 1 == 0]
        gain = values[:, without | (1 << j)] - values[:, without]
        phi[:, j] = gain @ w[size[without]]
    return phi


def shapley_from_game(game: GameValues) -> Attribution:
    return Attribution(shapley_matrix(game.values, game.d)[0], baseline=0.0)


def shapley_from_decomposition(g: SubsetFunctionals) -> Attribution:
    phi = np.zeros(g.d)
    for u, val in g.g.items():
        share = val / u.cardinality()
        for j in u:
            phi[j] += share
    return Attribution(phi, baseline=0.0)


def pdd_shapley_matrix(s: PDDSurrogate, X) -> np.ndarray:
    """``(M, d)`` attributions; each component is split equally among its features."""
    X = as_matrix(X, s.d)
    phi = np.zeros(X.shape)
    for u, reg in s.components.items():
        cols = list(u)
        phi[:, cols] += (reg.predict(X[:, cols]) / len(cols))[:, None]
    return phi


def pdd_shapley(s: PDDSurrogate, X) -> list[Attribution]:
    phi = pdd_shapley_matrix(s, X)
    meta = {"method": "pdd", "k": s.k, "n_model_calls": 0}
    return [Attribution(row, s.f_empty, meta) for row in phi]


def _check_exact_dim(d: int) -> None:
    if d > MAX_EXACT_FEATURES:
        raise InputError(
            f"exact Shapley values need 2**d coalitions; d={d} exceeds the limit of "
            f"{MAX_EXACT_FEATURES}. Use subset or antithetic sampling instead."
        )


def coalition_values(f, x, X_bg) -> tuple[np.ndarray, float]:
    """Background-averaged model output for every coalition of ``x``.

    Returns ``(val, mean)`` where ``val[bits]`` is the partial dependence on
    the coalition minus the background mean, so ``val[0] == 0``.
    """
    Z = as_matrix(X_bg, allow_empty=False)
    n, d = Z.shape
    _check_exact_dim(d)
    x = as_instance(x, d)
    masks = np.arange(1 << d, dtype=np.int64)
    member = ((masks[:, None] >> np.arange(d)) & 1).astype(bool)
    pd = np.empty(1 << d)
    per_call = max(1, _EXACT_BATCH_ROWS // n)
    for start in range(0, 1 << d, per_call):
        stop = min(1 << d, start + per_call)
        block = np.where(member[start:stop, None, :], x, Z[None, :, :])
        y = evaluate(f, block.reshape(-1, d))
        pd[start:stop] = y.reshape(stop - start, n).mean(axis=1)
    mean = float(pd[0])
    return pd - mean, mean


def exact_shapley(f, x, X_bg) -> Attribution:
    """Brute-force Shapley values of the interventional game; ``2**d * N`` evaluations."""
    t0 = time.perf_counter()
    val, mean = coalition_values(f, x, X_bg)
    d = as_matrix(X_bg).shape[1]
    phi = shapley_matrix(val, d)[0]
    n = as_matrix(X_bg).shape[0]
    meta = {
        "method": "exact",
        "n_model_calls": (1 << d) * n,
        "wall_time_ms": 1e3 * (time.perf_counter() - t0),
    }
    return Attribution(phi, mean, meta)


def instance_rng(seed: Optional[int], instance_id: int = 0) -> np.random.Generator:
    """Independent stream per ``(seed, instance_id)``."""
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(instance_id),)))


def balanced_draws(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    """``count`` row indices from ``range(n)``: back-to-back random permutations.

    Each draw is marginally uniform, but every full block of ``n`` draws
    visits each row once, which removes most of the background noise.
    """
    blocks = -(-count // n)
    return np.concatenate([rng.permutation(n) for _ in range(blocks)])[:count]


def _baseline(f, Z: np.ndarray, baseline: Optional[float]) -> tuple[float, int]:
    if baseline is not None:
        return float(baseline), 0
    return float(np.mean(evaluate(f, Z))), Z.shape[0]


def subset_sampling_shapley(
    f,
    x,
    X_bg,
    n_samples: int,
    seed: Optional[int] = None,
    instance_id: int = 0,
    baseline: Optional[float] = None,
) -> Attribution:
    """Permutation-sampling estimate with ``n_samples`` marginal contributions per feature.

    For each feature ``j`` and sample, the coalition is the set of features
    ahead of ``j`` in a uniformly random ordering; the contribution
    ``f(x_{u+j}:z) - f(x_u:z)`` uses one background row ``z``. Costs
    ``2 * n_samples * d`` evaluations, plus ``N`` for the baseline unless
    ``baseline`` is supplied.
    """
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    t0 = time.perf_counter()
    Z = as_matrix(X_bg, allow_empty=False)
    n, d = Z.shape
    x = as_instance(x, d)
    rng = instance_rng(seed, instance_id)
    with_j, without_j, zrows = [], [], []
    for j in range(d):
        keys = rng.random((n_samples, d))
        before = keys < keys[:, j : j + 1]
        with_ = before.copy()
        with_[:, j] = True
        with_j.append(with_)
        without_j.append(before)
        zrows.append(Z[balanced_draws(rng, n, n_samples)])
    zs = np.concatenate(zrows)
    a = np.where(np.concatenate(with_j), x, zs)
    b = np.where(np.concatenate(without_j), x, zs)
    y = evaluate(f, np.concatenate([a, b]))
    m = n_samples * d
    gains = (y[:m] - y[m:]).reshape(d, n_samples)
    phi = gains.mean(axis=1)
    base, extra = _baseline(f, Z, baseline)
    meta = {
        "method": "subset",
        "n_samples": n_samples,
        "seed": seed,
        "n_model_calls": 2 * m + extra,
        "stderr": gains.std(axis=1, ddof=1) / np.sqrt(n_samples) if n_samples > 1 else None,
        "wall_time_ms": 1e3 * (time.perf_counter() - t0),
    }
    return Attribution(phi, base, meta)


def antithetic_sampling_shapley(
    f,
    x,
    X_bg,
    n_permutations: int,
    seed: Optional[int] = None,
    instance_id: int = 0,
    baseline: Optional[float] = None,
) -> Attribution:
    """Permutation walks in antithetic pairs.

    Each sampled ordering is walked forwards and backwards. A walk starts at
    a background row ``z`` and switches features to ``x`` one at a time,
    crediting each step's change in output to the feature switched, so the
    credits of one walk sum to ``f(x) - f(z)``. Every walk draws its own
    ``z``. Costs ``2 * n_permutations * (d + 1)`` evaluations, plus ``N``
    for the baseline unless ``baseline`` is supplied.
    """
    if n_permutations < 1:
        raise InputError("n_permutations must be >= 1")
    t0 = time.perf_counter()
    Z = as_matrix(X_bg, allow_empty=False)
    n, d = Z.shape
    x = as_instance(x, d)
    rng = instance_rng(seed, instance_id)
    perms = np.argsort(rng.random((n_permutations, d)), axis=1)
    walks = np.empty((2 * n_permutations, d), dtype=np.int64)
    walks[0::2] = perms
    walks[1::2] = perms[:, ::-1]
    w = walks.shape[0]
    rank = np.empty_like(walks)
    np.put_along_axis(rank, walks, np.arange(d)[None, :].repeat(w, axis=0), axis=1)
    # step t has the first t features of the walk switched to x
    switched = rank[:, None, :] < np.arange(d + 1)[None, :, None]
    zs = Z[balanced_draws(rng, n, w)]
    rows = np.where(switched, x, zs[:, None, :])
    y = evaluate(f, rows.reshape(-1, d)).reshape(w, d + 1)
    steps = np.diff(y, axis=1)
    credit = np.zeros((w, d))
    np.put_along_axis(credit, walks, steps, axis=1)
    phi = credit.mean(axis=0)
    base, extra = _baseline(f, Z, baseline)
    meta = {
        "method": "antithetic",
        "n_permutations": n_permutations,
        "seed": seed,
        "n_model_calls": w * (d + 1) + extra,
        "walk_totals": y[:, -1] - y[:, 0],
        "wall_time_ms": 1e3 * (time.perf_counter() - t0),
    }
    return Attribution(phi, base, meta)


SAMPLERS = {
    "subset": subset_sampling_shapley,
    "antithetic": antithetic_sampling_shapley,
}


def explain_batch(method: str, f, X, X_bg, budget: Optional[int] = None, seed: Optional[int] = None):
    """Explain every row of ``X`` with ``exact``, ``subset`` or ``antithetic``.

    Returns ``(phi, baselines, n_model_calls)``. Row ``i`` uses instance id
    ``i`` for its random stream.
    """
    Z = as_matrix(X_bg, allow_empty=False)
    X = as_matrix(X, Z.shape[1])
    phi = np.zeros(X.shape)
    calls = 0
    if method == "exact":
        _check_exact_dim(Z.shape[1])
        base = np.empty(X.shape[0])
        for i, x in enumerate(X):
            a = exact_shapley(f, x, Z)
            phi[i], base[i] = a.phi, a.baseline
            calls += a.meta["n_model_calls"]
        return phi, base, calls
    if method not in SAMPLERS:
        raise InputError(f"unknown method {method!r}; choose exact, subset or antithetic")
    if budget is None or budget < 1:
        raise InputError(f"{method} sampling needs a budget >= 1")
    mean = float(np.mean(evaluate(f, Z)))
    calls += Z.shape[0]
    for i, x in enumerate(X):
        a = SAMPLERS[method](f, x, Z, budget, seed=seed, instance_id=i, baseline=mean)
        phi[i] = a.phi
        calls += a.meta["n_model_calls"]
    return phi, np.full(X.shape[0], mean), calls
