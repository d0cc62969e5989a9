"""The three weight-prior families and their induced weight functions.

Each prior assigns a density to the per-observation weight vector: a bank
of independent Beta(a, b) priors on (0, 1), a scaled Dirichlet that pins
the weight sum to N, or a bank of independent Gamma(a, b) priors on
(0, inf). For the bank priors with a > 1, setting the per-weight partial
derivative of the log joint to zero yields a stationary weight that is an
increasing function of the observation's log likelihood; the Gamma case is
closed-form, the Beta case is solved by bisection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import betaln, gammaln

from .core import WeightVector
from .errors import DomainError, SupportError, UnsupportedPrior

__all__ = [
    "BetaBank",
    "ScaledDirichlet",
    "GammaBank",
    "WeightPriorSpec",
    "parse_weight_prior",
    "format_weight_prior",
    "log_density",
    "grad_log_density",
    "map_weight_gamma",
    "induced_weight_function",
    "conditional_weight_mean",
    "check_influence_conditions",
]

_CLIP = 1e-12  # Beta weights are clipped to [eps, 1-eps] before evaluation


@dataclass(frozen=True)
class BetaBank:
    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise DomainError("Beta hyperparameters must be positive")


@dataclass(frozen=True)
class ScaledDirichlet:
    a: float

    def __post_init__(self):
        if self.a <= 0:
            raise DomainError("Dirichlet concentration must be positive")


@dataclass(frozen=True)
class GammaBank:
    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise DomainError("Gamma hyperparameters must be positive")


WeightPriorSpec = Union[BetaBank, ScaledDirichlet, GammaBank]


def parse_weight_prior(text: str) -> WeightPriorSpec:
    """CLI flag syntax: beta:0.1,0.01 | dirichlet:1.0 | gamma:2.0,1.0"""

    try:
        name, args = text.split(":", 1)
        vals = [float(v) for v in args.split(",")]
    except ValueError as exc:
        raise DomainError(f"cannot parse weight prior {text!r}") from exc
    if name == "beta" and len(vals) == 2:
        return BetaBank(*vals)
    if name == "dirichlet" and len(vals) == 1:
        return ScaledDirichlet(vals[0])
    if name == "gamma" and len(vals) == 2:
        return GammaBank(*vals)
    raise DomainError(f"cannot parse weight prior {text!r}")


def format_weight_prior(spec: WeightPriorSpec) -> str:
    if isinstance(spec, BetaBank):
        return f"beta:{spec.a:g},{spec.b:g}"
    if isinstance(spec, ScaledDirichlet):
        return f"dirichlet:{spec.a:g}"
    return f"gamma:{spec.a:g},{spec.b:g}"


def _beta_clip(w: np.ndarray) -> np.ndarray:
    return np.clip(w, _CLIP, 1.0 - _CLIP)


def log_density(spec: WeightPriorSpec, w: WeightVector) -> float:
    """log p_w(w) under the given prior variant."""

    x = w.weights
    n = w.n
    if isinstance(spec, BetaBank):
        if np.any(x >= 1.0):
            raise SupportError("Beta-bank weights must satisfy w < 1")
        x = _beta_clip(x)
        return float(
            np.sum((spec.a - 1) * np.log(x) + (spec.b - 1) * np.log1p(-x))
            - n * betaln(spec.a, spec.b)
        )
    if isinstance(spec, GammaBank):
        a, b = spec.a, spec.b
        return float(
            np.sum((a - 1) * np.log(x) - b * x) + n * (a * np.log(b) - gammaln(a))
        )
    if isinstance(spec, ScaledDirichlet):
        if abs(x.sum() - n) > 1e-8:
            raise SupportError("scaled-Dirichlet weights must sum to N")
        v = x / n
        a = spec.a
        log_dir = gammaln(n * a) - n * gammaln(a) + float(np.sum((a - 1) * np.log(v)))
        # change of variables w = N v over the (N-1)-dimensional simplex
        return log_dir - (n - 1) * np.log(n)
    raise TypeError(spec)


def grad_log_density(spec: WeightPriorSpec, w: WeightVector) -> np.ndarray:
    """d log p_w / dw_n per coordinate.

    For the scaled Dirichlet the gradient is reported in the N-dimensional
    w space, before any simplex projection.
    """

    x = w.weights
    if isinstance(spec, BetaBank):
        if np.any(x >= 1.0):
            raise SupportError("Beta-bank weights must satisfy w < 1")
        x = _beta_clip(x)
        return (spec.a - 1) / x - (spec.b - 1) / (1.0 - x)
    if isinstance(spec, GammaBank):
        return (spec.a - 1) / x - spec.b
    if isinstance(spec, ScaledDirichlet):
        if abs(x.sum() - w.n) > 1e-8:
            raise SupportError("scaled-Dirichlet weights must sum to N")
        return (spec.a - 1) / x
    raise TypeError(spec)


def map_weight_gamma(a: float, b: float, loglik: float) -> float:
    """Closed-form stationary weight under a Gamma(a, b) bank:
    (a - 1) / (b - loglik). Strictly increasing in loglik."""

    if a <= 1:
        raise DomainError("closed-form weight needs a > 1")
    denom = b - loglik
    if denom <= 0:
        raise DomainError("denominator b - loglik must be positive")
    return (a - 1) / denom


def _beta_stationary(a: float, b: float, loglik: float) -> float:
    """Root of (a-1)/w - (b-1)/(1-w) + loglik on (0, 1), a > 1.

    When the derivative never changes sign the optimum sits on a boundary;
    the returned value is clipped just inside the interval.
    """

    lo, hi = _CLIP, 1.0 - _CLIP

    def h_prime(w):
        return (a - 1) / w - (b - 1) / (1.0 - w) + loglik

    # scan for a sign change; h'(lo) is +inf-like for a > 1
    grid = np.concatenate(
        [np.logspace(np.log10(lo), -1, 40), np.linspace(0.1, hi, 60)]
    )
    vals = np.array([h_prime(g) for g in grid])
    idx = np.where(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    if idx.size == 0:
        # derivative one-signed: boundary optimum
        return hi if vals[-1] > 0 else lo

    def objective(w):
        return (a - 1) * np.log(w) + (b - 1) * np.log1p(-w) + loglik * w

    roots = []
    for i in idx:
        x0, x1 = grid[i], grid[i + 1]
        for _ in range(100):
            mid = 0.5 * (x0 + x1)
            if x1 - x0 < 1e-12:
                break
            if np.sign(h_prime(mid)) == np.sign(h_prime(x0)):
                x0 = mid
            else:
                x1 = mid
        roots.append(0.5 * (x0 + x1))
    return max(roots, key=objective)


def induced_weight_function(spec: WeightPriorSpec, loglik: float) -> float:
    """The single-weight stationary solution of
    d/dw log p_w(w) + loglik = 0, as a function of the log likelihood."""

    if not np.isfinite(loglik):
        raise DomainError("loglik must be finite")
    if isinstance(spec, GammaBank):
        if spec.a <= 1:
            raise UnsupportedPrior("Gamma bank needs a > 1 for a stationary weight")
        return map_weight_gamma(spec.a, spec.b, loglik)
    if isinstance(spec, BetaBank):
        if spec.a <= 1:
            raise UnsupportedPrior("Beta bank needs a > 1 for a stationary weight")
        return _beta_stationary(spec.a, spec.b, loglik)
    raise UnsupportedPrior(
        "scaled-Dirichlet weights are coupled; no per-weight stationary function"
    )


def conditional_weight_mean(spec: WeightPriorSpec, loglik) -> np.ndarray:
    """Posterior mean of a single weight given its observation's log
    likelihood, with the model parameters held fixed.

    The conditional density is proportional to p_w(w) exp(w * loglik). For
    a Beta bank the normalizer is the confluent hypergeometric function
    1F1(a; a+b; loglik) and the mean is the ratio
    (a/(a+b)) 1F1(a+1; a+b+1; loglik) / 1F1(a; a+b; loglik); for a Gamma
    bank the conditional is Gamma(a, b - loglik) with mean a/(b - loglik),
    defined for loglik < b. Dirichlet weights are coupled across
    observations and have no per-weight conditional.
    """

    from scipy.special import hyp1f1

    ll = np.asarray(loglik, dtype=float)
    if not np.all(np.isfinite(ll)):
        raise DomainError("loglik must be finite")
    if isinstance(spec, BetaBank):
        a, b = spec.a, spec.b
        num = hyp1f1(a + 1, a + b + 1, ll)
        den = hyp1f1(a, a + b, ll)
        if not (np.all(np.isfinite(num)) and np.all(np.isfinite(den))):
            raise DomainError("hypergeometric moment overflowed")
        return np.clip((a / (a + b)) * num / den, _CLIP, 1.0 - _CLIP)
    if isinstance(spec, GammaBank):
        denom = spec.b - ll
        if np.any(denom <= 0):
            raise DomainError("Gamma conditional needs loglik < b")
        return spec.a / denom
    raise UnsupportedPrior(
        "scaled-Dirichlet weights are coupled; no per-weight conditional mean"
    )


def check_influence_conditions(spec: WeightPriorSpec) -> dict:
    """Numeric check of the two tail conditions that make the influence of
    an arbitrarily unlikely observation vanish: w(l) -> 0 and l*w(l) bounded
    as the log likelihood l -> -inf."""

    logliks = [-(10.0**k) for k in range(1, 13)]
    w_vals = np.array([induced_weight_function(spec, ll) for ll in logliks])
    lw = np.array([ll * wv for ll, wv in zip(logliks, w_vals)])
    w_limit_zero = bool(w_vals[-1] < 1e-8)
    ref = abs(lw[5])  # value at loglik = -1e6
    a_times_w_bounded = bool(np.max(np.abs(lw[6:])) < 10.0 * ref)
    return {"w_limit_zero": w_limit_zero, "a_times_w_bounded": a_times_w_bounded}
