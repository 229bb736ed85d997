"""Basic data types shared by every estimator.

Instances are plain float64 numpy arrays. A background or evaluation set is
an ``(N, d)`` array, optionally wrapped in :class:`SampleMatrix` when column
names need to travel with it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterator, Optional, Protocol, Sequence, Union, runtime_checkable

import numpy as np

logger = logging.getLogger(__name__)

MAX_FEATURES = 64


class PddShapError(Exception):
    """Base class for all errors raised by this package."""


class InputError(PddShapError, ValueError):
    """Rejected input: wrong shape, out-of-range parameter, empty data."""


class ModelError(PddShapError, RuntimeError):
    """The black-box model broke its evaluation contract."""

    def __init__(self, message: str, payload: object = None):
        super().__init__(message)
        self.payload = payload


@dataclass(frozen=True, order=True)
class FeatureSubset:
    """A subset of ``range(d)`` stored as a bitmask."""

    bits: int
    d: int

    def __post_init__(self):
        if not 0 <= self.d <= MAX_FEATURES:
            raise InputError(f"d must be in [0, {MAX_FEATURES}], got {self.d}")
        if self.bits < 0 or self.bits >> self.d:
            raise InputError(f"bitmask {self.bits:#x} has members outside range({self.d})")

    @classmethod
    def from_indices(cls, indices: Sequence[int], d: int) -> "FeatureSubset":
        bits = 0
        for i in indices:
            i = int(i)
            if not 0 <= i < d:
                raise InputError(f"feature index {i} out of range for d={d}")
            bits |= 1 << i
        return cls(bits, d)

    @classmethod
    def empty(cls, d: int) -> "FeatureSubset":
        return cls(0, d)

    @classmethod
    def full(cls, d: int) -> "FeatureSubset":
        return cls((1 << d) - 1, d)

    def __iter__(self) -> Iterator[int]:
        bits = self.bits
        while bits:
            low = bits & -bits
            yield low.bit_length() - 1
            bits ^= low

    def __len__(self) -> int:
        return self.cardinality()

    def __contains__(self, j: int) -> bool:
        return 0 <= j < self.d and bool(self.bits >> j & 1)

    def cardinality(self) -> int:
        return bin(self.bits).count("1")

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(self)

    def complement(self) -> "FeatureSubset":
        return FeatureSubset(((1 << self.d) - 1) ^ self.bits, self.d)

    def add(self, j: int) -> "FeatureSubset":
        if not 0 <= j < self.d:
            raise InputError(f"feature index {j} out of range for d={self.d}")
        return FeatureSubset(self.bits | 1 << j, self.d)

    def remove(self, j: int) -> "FeatureSubset":
        return FeatureSubset(self.bits & ~(1 << j), self.d)

    def issubset(self, other: "FeatureSubset") -> bool:
        return self.bits & ~other.bits == 0

    def mask(self) -> np.ndarray:
        """Boolean column mask of length d."""
        return np.array([self.bits >> j & 1 for j in range(self.d)], dtype=bool)

    def proper_subsets(self) -> Iterator["FeatureSubset"]:
        """Nonempty proper subsets, in no particular order."""
        sub = (self.bits - 1) & self.bits
        while sub:
            yield FeatureSubset(sub, self.d)
            sub = (sub - 1) & self.bits

    def __repr__(self) -> str:
        return "{" + ",".join(map(str, self)) + "}"


@dataclass(frozen=True)
class SampleMatrix:
    """A finite ``(N, d)`` float matrix with optional column names."""

    values: np.ndarray
    column_names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise InputError(f"sample matrix must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InputError("sample matrix contains NaN or infinite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.column_names is not None:
            names = tuple(str(c) for c in self.column_names)
            if len(names) != values.shape[1]:
                raise InputError(f"{len(names)} column names for {values.shape[1]} columns")
            object.__setattr__(self, "column_names", names)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def feature_names(self) -> tuple[str, ...]:
        if self.column_names is not None:
            return self.column_names
        return tuple(f"x{j}" for j in range(self.cols))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self) -> int:
        return self.rows


MatrixLike = Union[SampleMatrix, np.ndarray, Sequence[Sequence[float]]]


def as_matrix(X: MatrixLike, d: Optional[int] = None, *, allow_empty: bool = True) -> np.ndarray:
    """Coerce to a finite float64 ``(N, d)`` array."""
    if isinstance(X, SampleMatrix):
        arr = X.values
    else:
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 1 and d is not None and arr.size == 0:
            arr = arr.reshape(0, d)
        if arr.ndim != 2:
            raise InputError(f"expected a 2-D matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InputError("matrix contains NaN or infinite entries")
    if d is not None and arr.shape[1] != d:
        raise InputError(f"expected {d} columns, got {arr.shape[1]}")
    if not allow_empty and arr.shape[0] == 0:
        raise InputError("matrix has no rows")
    return arr


def as_instance(x, d: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"an instance must be 1-D, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise InputError(f"instance has {arr.shape[0]} features, expected {d}")
    if not np.all(np.isfinite(arr)):
        raise InputError("instance contains NaN or infinite entries")
    return arr


@runtime_checkable
class BlackBoxModel(Protocol):
    """Anything with a deterministic batch ``evaluate``.

    ``serial`` tells callers whether concurrent ``evaluate`` calls are safe.
    """

    serial: bool

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        ...


class FunctionModel:
    """Adapts a vectorized ``f(X) -> y`` callable to :class:`BlackBoxModel`."""

    serial = False

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], name: str = "function"):
        self.fn = fn
        self.name = name

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(self.fn(X), dtype=np.float64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ModelError(f"model returned {y.shape[0]} outputs for {X.shape[0]} rows", y)
        return y

    def __repr__(self) -> str:
        return f"FunctionModel({self.name})"


class CountingModel:
    """Wraps a model and counts batches and evaluated rows."""

    def __init__(self, model):
        self.model = as_model(model)
        self.serial = getattr(self.model, "serial", True)
        self.calls = 0
        self.rows = 0

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        self.calls += 1
        self.rows += len(X)
        return self.model.evaluate(X)

    def reset(self) -> None:
        self.calls = 0
        self.rows = 0


def as_model(f) -> BlackBoxModel:
    if hasattr(f, "evaluate"):
        return f
    if callable(f):
        return FunctionModel(f, getattr(f, "__name__", "function"))
    raise InputError(f"cannot use {type(f).__name__} as a model")


def evaluate(f, X: np.ndarray) -> np.ndarray:
    """Evaluate ``f`` on a batch and check the output length."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(as_model(f).evaluate(X), dtype=np.float64).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise ModelError(f"model returned {y.shape[0]} outputs for {X.shape[0]} rows", y)
    return y


@dataclass(frozen=True)
class Attribution:
    """Per-instance Shapley values plus the baseline they are measured from."""

    phi: np.ndarray
    baseline: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        phi = np.array(self.phi, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(phi)):
            raise InputError("attribution contains non-finite values")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "baseline", float(self.baseline))

    @property
    def d(self) -> int:
        return self.phi.shape[0]

    def total(self) -> float:
        return float(self.phi.sum())


def compose(x, u: FeatureSubset, z) -> np.ndarray:
    """Point with coordinates from ``x`` on ``u`` and from ``z`` elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape[-1] != z.shape[-1]:
        raise InputError(f"dimension mismatch: x has {x.shape[-1]} features, z has {z.shape[-1]}")
    if u.d != x.shape[-1]:
        raise InputError(f"subset is over {u.d} features, points have {x.shape[-1]}")
    return np.where(u.mask(), x, z)


def compose_background(x, u: FeatureSubset, Z: np.ndarray) -> np.ndarray:
    """``compose(x, u, z)`` for every row ``z`` of ``Z``, as one batch."""
    out = np.array(Z, dtype=np.float64, copy=True)
    idx = list(u)
    if idx:
        out[:, idx] = np.asarray(x, dtype=np.float64)[idx]
    return out


def enumerate_subsets(d: int, k: int) -> list[FeatureSubset]:
    """All nonempty subsets of size <= k, by size then by bitmask value."""
    if not 1 <= d <= MAX_FEATURES:
        raise InputError(f"d must be in [1, {MAX_FEATURES}], got {d}")
    if not 1 <= k <= d:
        raise InputError(f"order k must be in [1, d={d}], got {k}")
    out = []
    for size in range(1, k + 1):
        level = [FeatureSubset(sum(1 << i for i in c), d) for c in combinations(range(d), size)]
        level.sort(key=lambda s: s.bits)
        out.extend(level)
    return out


def empirical_mean(f, X: MatrixLike) -> float:
    X = as_matrix(X)
    if X.shape[0] == 0:
        raise InputError("cannot average a model over an empty sample")
    return float(np.mean(evaluate(f, X)))
