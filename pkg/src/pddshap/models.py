"""Analytic test functions usable as black boxes without an external model."""
from __future__ import annotations

import shlex
import time

import numpy as np

from .core import FunctionModel, InputError, as_model
from .protocol import SubprocessModel

BUILTIN_NAMES = ("linear", "interaction2", "friedman1")


def _floats(spec: str) -> list[float]:
    try:
        return [float(v) for v in spec.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"bad coefficient list {spec!r}") from None


def linear(coefs) -> FunctionModel:
    a = np.asarray(coefs, dtype=np.float64)

    def f(X):
        if X.shape[1] != a.shape[0]:
            raise InputError(f"linear model has {a.shape[0]} coefficients, got {X.shape[1]} features")
        return X @ a

    return FunctionModel(f, "linear:" + ",".join(map(repr, a.tolist())))


def interaction2(a: float = 1.0, b: float = 2.0, c: float = 3.0) -> FunctionModel:
    """``a*x0 + b*x1 + c*x0*x1``; extra columns are ignored."""

    def f(X):
        return a * X[:, 0] + b * X[:, 1] + c * X[:, 0] * X[:, 1]

    return FunctionModel(f, f"interaction2:{a!r},{b!r},{c!r}")


def friedman1() -> FunctionModel:
    """Friedman #1 regression surface; needs at least 5 columns, the rest are dummies."""

    def f(X):
        if X.shape[1] < 5:
            raise InputError("friedman1 needs at least 5 features")
        return (
            10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
            + 20.0 * (X[:, 2] - 0.5) ** 2
            + 10.0 * X[:, 3]
            + 5.0 * X[:, 4]
        )

    return FunctionModel(f, "friedman1")


def builtin_model(spec: str) -> FunctionModel:
    """Parse ``linear:a1,...,ad``, ``interaction2:a,b,c`` or ``friedman1``."""
    name, _, args = spec.partition(":")
    name = name.strip()
    if name == "linear":
        coefs = _floats(args)
        if not coefs:
            raise InputError("linear model needs at least one coefficient")
        return linear(coefs)
    if name == "interaction2":
        coefs = _floats(args) if args else [1.0, 2.0, 3.0]
        if len(coefs) != 3:
            raise InputError("interaction2 takes exactly three coefficients a,b,c")
        return interaction2(*coefs)
    if name == "friedman1":
        return friedman1()
    raise InputError(f"unknown builtin model {spec!r}; choose from {', '.join(BUILTIN_NAMES)}")


def is_builtin_spec(spec: str) -> bool:
    return spec.partition(":")[0].strip() in BUILTIN_NAMES


def resolve_model(spec, timeout: float = 60.0):
    """Builtin spec string, shell command string, or ``{"builtin"|"command": ...}`` mapping."""
    if isinstance(spec, dict):
        if "builtin" in spec:
            return builtin_model(spec["builtin"])
        if "command" in spec:
            return SubprocessModel(spec["command"], timeout=spec.get("timeout", timeout))
        raise InputError(f"model spec needs 'builtin' or 'command', got {sorted(spec)}")
    if isinstance(spec, str):
        if is_builtin_spec(spec):
            return builtin_model(spec)
        if not shlex.split(spec):
            raise InputError("empty model specification")
        return SubprocessModel(spec, timeout=timeout)
    return as_model(spec)


class SleepyModel:
    """Delays each batch by ``seconds_per_row * rows``; used to emulate costly models."""

    def __init__(self, model, seconds_per_row: float = 1e-3):
        self.model = as_model(model)
        self.serial = getattr(self.model, "serial", True)
        self.seconds_per_row = seconds_per_row

    def evaluate(self, X):
        if self.seconds_per_row > 0:
            time.sleep(self.seconds_per_row * len(X))
        return self.model.evaluate(X)
