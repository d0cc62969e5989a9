"""Bijections between constrained and unconstrained space.

One optimizer/sampler serves every model because each constrained block is
mapped through one of four bijections: exp/log for positive values, the
logistic sigmoid for (0, 1), an anchored softmax (last logit fixed at zero)
for simplexes, and the identity. `from_unconstrained_with_logjac` returns
the log |det J| of the inverse map, to be added to densities written in
constrained space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit as _logit

from .core import BlockSpec, ModelParameters
from .errors import DomainError

__all__ = [
    "Transform",
    "transform_for",
    "to_unconstrained",
    "from_unconstrained_with_logjac",
    "ParameterTransform",
]


@dataclass(frozen=True)
class Transform:
    kind: str  # log-positive | logit-unit-interval | centered-softmax-simplex | identity
    dim_constrained: int

    @property
    def dim_unconstrained(self) -> int:
        if self.kind == "centered-softmax-simplex":
            return self.dim_constrained - 1
        return self.dim_constrained


def transform_for(constraint: str, dim: int) -> Transform:
    kinds = {
        "positive": "log-positive",
        "unit-interval": "logit-unit-interval",
        "simplex": "centered-softmax-simplex",
        "unconstrained": "identity",
    }
    return Transform(kinds[constraint], dim)


def to_unconstrained(t: Transform, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if t.kind == "identity":
        return x.copy()
    if t.kind == "log-positive":
        if np.any(x <= 0):
            raise DomainError("log-positive transform needs x > 0")
        return np.log(x)
    if t.kind == "logit-unit-interval":
        if np.any(x <= 0) or np.any(x >= 1):
            raise DomainError("logit transform needs x in (0, 1)")
        return _logit(x)
    if t.kind == "centered-softmax-simplex":
        if np.any(x <= 0):
            raise DomainError("simplex point must be strictly interior")
        return np.log(x[:-1]) - np.log(x[-1])
    raise ValueError(t.kind)


def from_unconstrained_with_logjac(t: Transform, z: np.ndarray):
    """Constrained value plus log |det J| of the inverse map."""

    z = np.asarray(z, dtype=float).ravel()
    if t.kind == "identity":
        return z.copy(), 0.0
    if t.kind == "log-positive":
        x = np.exp(z)
        return x, float(z.sum())
    if t.kind == "logit-unit-interval":
        x = expit(z)
        # log sigma'(z) = log x + log(1-x), computed stably from z
        logjac = float(np.sum(-np.logaddexp(0.0, z) - np.logaddexp(0.0, -z)))
        return x, logjac
    if t.kind == "centered-softmax-simplex":
        full = np.append(z, 0.0)
        full -= full.max()
        p = np.exp(full)
        p /= p.sum()
        # det J over the free K-1 coordinates is (prod_{k<K} p_k) * p_K
        logjac = float(np.sum(np.log(p)))
        return p, logjac
    raise ValueError(t.kind)


def _push_gradient(t: Transform, z, x, grad_x):
    """Map d/dx of a constrained-space density to d/dz, adding dlogjac/dz."""

    grad_x = np.asarray(grad_x, dtype=float).ravel()
    if t.kind == "identity":
        return grad_x.copy()
    if t.kind == "log-positive":
        return x * grad_x + 1.0
    if t.kind == "logit-unit-interval":
        return x * (1.0 - x) * grad_x + (1.0 - 2.0 * x)
    if t.kind == "centered-softmax-simplex":
        k = t.dim_constrained
        inner = float(np.dot(grad_x, x))
        g = x * (grad_x - inner)  # softmax chain rule, full K coordinates
        return g[:-1] + (1.0 - k * x[:-1])
    raise ValueError(t.kind)


class ParameterTransform:
    """Concatenated block transforms: ModelParameters <-> one flat vector."""

    def __init__(self, specs: list[BlockSpec]):
        self.specs = list(specs)
        self.transforms = [transform_for(s.constraint, s.size) for s in specs]
        self._offsets = []
        off = 0
        for t in self.transforms:
            self._offsets.append(off)
            off += t.dim_unconstrained
        self.dimension = off

    def to_unconstrained(self, params: ModelParameters) -> np.ndarray:
        parts = [
            to_unconstrained(t, params[s.name].ravel())
            for s, t in zip(self.specs, self.transforms)
        ]
        return np.concatenate(parts) if parts else np.empty(0)

    def from_unconstrained(self, z: np.ndarray):
        """Returns (ModelParameters, total log |det J|)."""

        blocks, logjac = {}, 0.0
        for s, t, off in zip(self.specs, self.transforms, self._offsets):
            x, lj = from_unconstrained_with_logjac(t, z[off : off + t.dim_unconstrained])
            blocks[s.name] = x.reshape(s.shape)
            logjac += lj
        return ModelParameters(blocks, self.specs), logjac

    def push_gradient(self, z: np.ndarray, block_grads: dict) -> np.ndarray:
        """Constrained-space block gradients -> unconstrained gradient,
        including the log-Jacobian terms."""

        out = np.empty(self.dimension)
        for s, t, off in zip(self.specs, self.transforms, self._offsets):
            zi = z[off : off + t.dim_unconstrained]
            x, _ = from_unconstrained_with_logjac(t, zi)
            gx = np.asarray(block_grads[s.name], dtype=float).ravel()
            out[off : off + t.dim_unconstrained] = _push_gradient(t, zi, x, gx)
        return out

    def slice_for(self, name: str):
        for s, t, off in zip(self.specs, self.transforms, self._offsets):
            if s.name == name:
                return slice(off, off + t.dim_unconstrained)
        raise KeyError(name)
