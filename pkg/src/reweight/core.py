"""Shared domain types, deterministic randomness, and gradient checking.

Everything downstream consumes these types: a `Dataset` of responses with
optional covariates, a `WeightVector` of per-observation weights, a
`ModelParameters` bundle of named constrained blocks, and `LogDensityFn`,
the (value, gradient) contract that optimizers and samplers operate on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NonFiniteValue, ShapeError, SupportError

__all__ = [
    "Dataset",
    "WeightVector",
    "BlockSpec",
    "ModelParameters",
    "LogDensityFn",
    "make_rng",
    "finite_diff_gradient",
]

# Constraint tags a parameter block may carry.
CONSTRAINTS = ("positive", "unit-interval", "simplex", "unconstrained")


@dataclass(frozen=True)
class Dataset:
    """Observations for one study instance.

    responses: length-N vector of real or count values.
    covariates: optional N x D matrix.
    """

    responses: np.ndarray
    covariates: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.asarray(self.responses, dtype=float)
        object.__setattr__(self, "responses", y)
        if y.ndim != 1:
            raise ShapeError("responses must be a 1-D vector")
        if self.covariates is not None:
            x = np.atleast_2d(np.asarray(self.covariates, dtype=float))
            if x.shape[0] != y.shape[0]:
                raise ShapeError(
                    f"covariates have {x.shape[0]} rows, expected {y.shape[0]}"
                )
            object.__setattr__(self, "covariates", x)

    @property
    def n_obs(self) -> int:
        return self.responses.shape[0]

    def require_counts(self):
        y = self.responses
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise SupportError("count-valued family needs nonnegative integers")


@dataclass(frozen=True)
class WeightVector:
    """Positive per-observation weights.

    Support restrictions beyond positivity (w < 1 under a Beta bank,
    sum w = N under the scaled Dirichlet) are enforced by the prior that
    consumes the vector, not here.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1:
            raise ShapeError("weights must be a 1-D vector")
        if np.any(w <= 0):
            raise SupportError("all weights must be strictly positive")

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @staticmethod
    def ones(n: int) -> "WeightVector":
        return WeightVector(np.ones(n))


@dataclass(frozen=True)
class BlockSpec:
    """Shape and constraint tag of one parameter block."""

    name: str
    shape: tuple
    constraint: str = "unconstrained"

    def __post_init__(self):
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint tag {self.constraint!r}")

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


class ModelParameters:
    """Ordered map from block name to a constrained value array."""

    def __init__(self, blocks: dict[str, np.ndarray], specs: list[BlockSpec]):
        self._specs = {s.name: s for s in specs}
        self._order = [s.name for s in specs]
        self._blocks = {}
        for spec in specs:
            if spec.name not in blocks:
                raise ShapeError(f"missing block {spec.name!r}")
            value = np.asarray(blocks[spec.name], dtype=float).reshape(spec.shape)
            _check_constraint(spec, value)
            self._blocks[spec.name] = value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._blocks[name]

    def __contains__(self, name: str) -> bool:
        return name in self._blocks

    @property
    def specs(self) -> list[BlockSpec]:
        return [self._specs[n] for n in self._order]

    def block_names(self) -> list[str]:
        return list(self._order)

    def replace(self, name: str, value: np.ndarray) -> "ModelParameters":
        blocks = dict(self._blocks)
        blocks[name] = value
        return ModelParameters(blocks, self.specs)

    def __repr__(self):
        parts = ", ".join(f"{n}={self._blocks[n]!r}" for n in self._order)
        return f"ModelParameters({parts})"


def _check_constraint(spec: BlockSpec, value: np.ndarray):
    if not np.all(np.isfinite(value)):
        raise SupportError(f"block {spec.name!r} contains non-finite values")
    if spec.constraint == "positive" and np.any(value <= 0):
        raise SupportError(f"block {spec.name!r} must be strictly positive")
    if spec.constraint == "unit-interval" and (
        np.any(value <= 0) or np.any(value >= 1)
    ):
        raise SupportError(f"block {spec.name!r} must lie in (0, 1)")
    if spec.constraint == "simplex":
        if np.any(value <= 0) or abs(value.sum() - 1.0) > 1e-10:
            raise SupportError(f"block {spec.name!r} must lie on the open simplex")


@dataclass(frozen=True)
class LogDensityFn:
    """Unconstrained log density with gradient.

    eval maps an unconstrained vector of length `dimension` to
    (log density, gradient).
    """

    dimension: int
    eval: Callable[[np.ndarray], tuple[float, np.ndarray]]

    def value(self, z: np.ndarray) -> float:
        return self.eval(np.asarray(z, dtype=float))[0]

    def grad(self, z: np.ndarray) -> np.ndarray:
        return self.eval(np.asarray(z, dtype=float))[1]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; (seed, stream) pairs give independent streams.

    Philox keys the stream directly, so replications can draw in parallel
    with stable per-replication randomness.
    """

    bits = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=bits))


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient, the oracle every analytic gradient is
    checked against."""

    x = np.asarray(x, dtype=float)
    if h <= 0:
        raise ValueError("h must be positive")
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        hi = f(x + e)
        lo = f(x - e)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteValue(f"non-finite probe at coordinate {i}")
        g[i] = (hi - lo) / (2.0 * h)
    return g
