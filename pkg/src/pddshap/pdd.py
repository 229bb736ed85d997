"""Truncated partial dependence decomposition of a black-box model.

The surrogate is ``f_empty + sum_u fhat_u(x_u)`` over every nonempty subset
``u`` with ``|u| <= k``. Each ``fhat_u`` is fit on the background sample to
the partial dependence on ``u`` minus the constant and all lower-order
components already trained.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core import (
    FeatureSubset,
    InputError,
    PddShapError,
    as_instance,
    as_matrix,
    compose_background,
    empirical_mean,
    enumerate_subsets,
    evaluate,
)
from .regressors import make_regressor, regressor_from_dict

logger = logging.getLogger(__name__)

FORMAT_NAME = "pddshap-surrogate"
FORMAT_VERSION = 1

# upper bound on rows per model call while training
DEFAULT_BATCH_ROWS = 1 << 18


class SurrogateLoadError(PddShapError):
    """A surrogate file could not be read; ``section`` names the failing part."""

    def __init__(self, section: str, message: str):
        super().__init__(f"{section}: {message}")
        self.section = section


def fingerprint(X) -> str:
    X = np.ascontiguousarray(as_matrix(X), dtype=np.float64)
    h = hashlib.sha256()
    h.update(np.asarray(X.shape, dtype=np.int64).tobytes())
    h.update((X + 0.0).tobytes())
    return h.hexdigest()


@dataclass
class PDDSurrogate:
    f_empty: float
    components: dict  # FeatureSubset -> fitted regressor, in training order
    k: int
    d: int
    background_fingerprint: str = ""
    feature_names: Optional[tuple[str, ...]] = None
    info: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for u in self.components:
            if u.d != self.d:
                raise InputError(f"component {u} is over {u.d} features, surrogate has {self.d}")
            if not 1 <= u.cardinality() <= self.k:
                raise InputError(f"component {u} violates 1 <= |u| <= k={self.k}")
            for v in u.proper_subsets():
                if v not in self.components:
                    raise InputError(f"component {u} present without its subset {v}")

    def component_predictions(self, X) -> dict:
        X = as_matrix(X, self.d)
        return {u: reg.predict(X[:, list(u)]) for u, reg in self.components.items()}

    def predict(self, X) -> np.ndarray:
        X = as_matrix(X, self.d)
        out = np.full(X.shape[0], self.f_empty)
        for u, reg in self.components.items():
            out += reg.predict(X[:, list(u)])
        return out

    def interactions(self) -> list[FeatureSubset]:
        return [u for u in self.components if u.cardinality() > 1]


def partial_dependence(f, u: FeatureSubset, x, X_bg) -> float:
    """Background average of ``f`` with the features in ``u`` pinned to ``x``."""
    X_bg = as_matrix(X_bg, allow_empty=False)
    x = as_instance(x, X_bg.shape[1])
    if u.cardinality() == 0:
        raise InputError("partial dependence needs a nonempty subset")
    return float(np.mean(evaluate(f, compose_background(x, u, X_bg))))


def _pd_on_background(f, u: FeatureSubset, X: np.ndarray, Z: np.ndarray, batch_rows: int) -> np.ndarray:
    """Partial dependence on ``u`` at every row of ``X``, averaging over rows of ``Z``."""
    n, m = X.shape[0], Z.shape[0]
    cols = list(u)
    per_call = max(1, batch_rows // m)
    out = np.empty(n)
    for start in range(0, n, per_call):
        stop = min(n, start + per_call)
        block = np.broadcast_to(Z, (stop - start,) + Z.shape).copy()
        block[:, :, cols] = X[start:stop, None, cols]
        y = evaluate(f, block.reshape(-1, Z.shape[1]))
        out[start:stop] = y.reshape(stop - start, m).mean(axis=1)
    return out


def train_pdd(
    f,
    X_bg,
    k: int,
    regressor: str = "tree",
    regressor_params: Optional[dict] = None,
    inner_sample: Optional[int] = None,
    seed: Optional[int] = None,
    n_jobs: int = 1,
    batch_rows: int = DEFAULT_BATCH_ROWS,
) -> PDDSurrogate:
    """Fit the order-``k`` decomposition surrogate of ``f`` on ``X_bg``.

    Every subset of size ``<= k`` is trained, smallest first, since each
    component's targets subtract the components of all its proper subsets.
    Costs ``N + N**2 * (number of subsets)`` model evaluations, or
    ``N + N * inner_sample * (number of subsets)`` when the inner average is
    subsampled.

    ``n_jobs > 1`` trains the subsets of one size concurrently, unless the
    model declares itself serial.
    """
    names = X_bg.feature_names() if hasattr(X_bg, "feature_names") else None
    X = as_matrix(X_bg, allow_empty=False)
    n, d = X.shape
    subsets = enumerate_subsets(d, k)
    params = dict(regressor_params or {})
    make_regressor(regressor, **params)  # fail early on bad settings

    Z = X
    if inner_sample is not None:
        if not 1 <= inner_sample <= n:
            raise InputError(f"inner_sample must be in [1, {n}], got {inner_sample}")
        rng = np.random.default_rng(seed)
        Z = X[np.sort(rng.choice(n, size=inner_sample, replace=False))]

    t0 = time.perf_counter()
    f_empty = empirical_mean(f, X)
    components: dict = {}
    fitted_on_bg: dict = {}
    targets_by_subset: dict = {}

    def fit_one(u: FeatureSubset):
        pd = _pd_on_background(f, u, X, Z, batch_rows)
        y = pd - f_empty
        for v in u.proper_subsets():
            y = y - fitted_on_bg[v]
        reg = make_regressor(regressor, **params).fit(X[:, list(u)], y)
        return u, reg, y

    serial = n_jobs <= 1 or getattr(f, "serial", True)
    with ThreadPoolExecutor(max_workers=1 if serial else n_jobs) as pool:
        for size in range(1, k + 1):
            level = [u for u in subsets if u.cardinality() == size]
            for u, reg, y in pool.map(fit_one, level):
                components[u] = reg
                targets_by_subset[u] = y
            for u in level:
                fitted_on_bg[u] = components[u].predict(X[:, list(u)])
            logger.debug("trained %d components of size %d", len(level), size)

    info = {
        "train_time": time.perf_counter() - t0,
        "model_evaluations": n + n * Z.shape[0] * len(subsets),
        "regressor": regressor,
        "regressor_params": params,
        "n_background": n,
        "targets": targets_by_subset,
    }
    return PDDSurrogate(
        f_empty=f_empty,
        components=components,
        k=k,
        d=d,
        background_fingerprint=fingerprint(X),
        feature_names=names,
        info=info,
    )


def surrogate_predict(s: PDDSurrogate, X) -> np.ndarray:
    return s.predict(X)


@dataclass(frozen=True)
class VarianceReport:
    per_subset: dict  # FeatureSubset -> mean squared component value
    total: float

    def __post_init__(self):
        if self.total < 0 or any(v < 0 for v in self.per_subset.values()):
            raise InputError("variances must be nonnegative")

    def explained(self) -> float:
        return float(sum(self.per_subset.values()))

    def shapley_effects(self, d: int) -> np.ndarray:
        """Split each component's variance equally among its features."""
        phi = np.zeros(d)
        for u, var in self.per_subset.items():
            for j in u:
                phi[j] += var / u.cardinality()
        return phi


def component_variances(s: PDDSurrogate, X_eval) -> VarianceReport:
    X = as_matrix(X_eval, s.d, allow_empty=False)
    preds = s.component_predictions(X)
    per = {u: float(np.mean(p * p)) for u, p in preds.items()}
    total = float(np.var(s.f_empty + sum(preds.values(), np.zeros(X.shape[0]))))
    return VarianceReport(per, total)


def surrogate_to_dict(s: PDDSurrogate) -> dict:
    return {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "d": s.d,
        "k": s.k,
        "f_empty": float(s.f_empty),
        "background_fingerprint": s.background_fingerprint,
        "feature_names": list(s.feature_names) if s.feature_names else None,
        "components": [
            {"subset": list(u), "regressor": reg.to_dict()} for u, reg in s.components.items()
        ],
    }


def surrogate_from_dict(doc) -> PDDSurrogate:
    if not isinstance(doc, dict):
        raise SurrogateLoadError("document", "top level is not an object")
    if doc.get("format") != FORMAT_NAME:
        raise SurrogateLoadError("format", f"not a surrogate file (format={doc.get('format')!r})")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise SurrogateLoadError(
            "format_version", f"unsupported version {version!r}, this build reads {FORMAT_VERSION}"
        )
    try:
        d, k = int(doc["d"]), int(doc["k"])
        f_empty = float(doc["f_empty"])
        fp = str(doc.get("background_fingerprint", ""))
        names = doc.get("feature_names")
        names = tuple(names) if names else None
    except (KeyError, TypeError, ValueError) as exc:
        raise SurrogateLoadError("header", f"missing or invalid field: {exc}") from None
    entries = doc.get("components")
    if not isinstance(entries, list):
        raise SurrogateLoadError("components", "missing component list")
    components = {}
    for i, entry in enumerate(entries):
        try:
            u = FeatureSubset.from_indices(entry["subset"], d)
        except (KeyError, TypeError, ValueError) as exc:
            raise SurrogateLoadError(f"components[{i}].subset", str(exc)) from None
        try:
            reg = regressor_from_dict(entry["regressor"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SurrogateLoadError(f"components[{i}].regressor", f"{type(exc).__name__}: {exc}") from None
        if reg.n_features != u.cardinality():
            raise SurrogateLoadError(f"components[{i}].regressor", "input width does not match subset")
        components[u] = reg
    try:
        return PDDSurrogate(f_empty, components, k, d, fp, names)
    except InputError as exc:
        raise SurrogateLoadError("components", str(exc)) from None


def save_surrogate(s: PDDSurrogate, path: Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(surrogate_to_dict(s), fh, indent=1, allow_nan=False)
        fh.write("\n")


def load_surrogate(path: Union[str, os.PathLike]) -> PDDSurrogate:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise SurrogateLoadError("file", str(exc)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SurrogateLoadError("document", f"corrupt or truncated file ({exc})") from None
    return surrogate_from_dict(doc)
