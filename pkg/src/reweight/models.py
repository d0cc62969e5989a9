"""Likelihood families, their priors, and the reweighted log joint.

Five families are supported: a single Poisson rate, logistic regression,
linear regression with unknown noise variance, a finite diagonal-covariance
Gaussian mixture, and Poisson matrix factorization over a sparse user-item
matrix. Each family exposes per-observation log-likelihood terms (per-user
terms for factorization), a log prior, and analytic gradients; the
reweighted joint multiplies each term by its latent weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import expit, gammaln, logsumexp

from .core import BlockSpec, Dataset, LogDensityFn, ModelParameters, WeightVector
from .errors import DomainError, ShapeError, SupportError
from .transforms import ParameterTransform, transform_for
from . import weight_priors as wp

__all__ = [
    "PoissonRate",
    "LogisticRegression",
    "LinearRegression",
    "FiniteGMM",
    "PoissonFactorization",
    "ModelSpec",
    "PFDataset",
    "param_specs",
    "init_params",
    "loglik_terms",
    "loglik_grads",
    "log_prior",
    "grad_log_prior",
    "log_joint_rpm",
    "grad_log_joint_unconstrained",
    "weight_block_specs",
    "weights_from_block",
    "build_model_density",
    "build_rpm_density",
    "spec_to_json",
    "spec_from_json",
]

LOG_2PI = np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Model specs


@dataclass(frozen=True)
class PoissonRate:
    gamma_a: float = 2.0
    gamma_b: float = 0.5


@dataclass(frozen=True)
class LogisticRegression:
    prior_sd: float = 10.0
    with_intercept: bool = False


@dataclass(frozen=True)
class LinearRegression:
    prior_sd: float = 10.0
    noise_a: float = 1.0
    noise_b: float = 1.0
    design: tuple = (0,)  # covariate column indices
    with_intercept: bool = True


@dataclass(frozen=True)
class FiniteGMM:
    k: int = 30
    dim: int = 2
    mean_prior_sd: float = 10.0
    scale_prior_logsd: float = 10.0  # lognormal(0, this) on each scale
    mix_conc: float = 1.0
    # conjugate Normal-Gamma hyperparameters used by the variational fit:
    # mean | precision ~ N(0, 1/(mean_coupling * precision)),
    # precision ~ Gamma(prec_shape, prec_rate) per coordinate
    mean_coupling: float = 0.01
    prec_shape: float = 1.0
    prec_rate: float = 32.0


@dataclass(frozen=True)
class PoissonFactorization:
    k: int = 20
    gamma_shape: float = 1.0
    gamma_rate: float = 0.001


ModelSpec = Union[
    PoissonRate, LogisticRegression, LinearRegression, FiniteGMM, PoissonFactorization
]


@dataclass(frozen=True)
class PFDataset:
    """Sparse nonnegative-integer user-item matrix."""

    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.users, dtype=np.int64)
        i = np.asarray(self.items, dtype=np.int64)
        x = np.asarray(self.counts, dtype=np.int64)
        if not (u.shape == i.shape == x.shape):
            raise ShapeError("users, items, counts must have equal length")
        if u.size and (u.min() < 0 or u.max() >= self.n_users):
            raise ShapeError("user index out of range")
        if i.size and (i.min() < 0 or i.max() >= self.n_items):
            raise ShapeError("item index out of range")
        if np.any(x < 0):
            raise SupportError("counts must be nonnegative")
        keys = u * self.n_items + i
        if np.unique(keys).size != keys.size:
            raise ShapeError("duplicate (user, item) pair")
        object.__setattr__(self, "users", u)
        object.__setattr__(self, "items", i)
        object.__setattr__(self, "counts", x)

    @property
    def n_entries(self) -> int:
        return self.users.size


# ---------------------------------------------------------------------------
# Parameter schemas and initialization


def _design_matrix(spec, data: Dataset) -> np.ndarray:
    if isinstance(spec, LogisticRegression):
        if data.covariates is None:
            raise ShapeError("logistic regression needs covariates")
        x = data.covariates
        if spec.with_intercept:
            x = np.column_stack([np.ones(data.n_obs), x])
        return x
    if isinstance(spec, LinearRegression):
        if data.covariates is None:
            raise ShapeError("linear regression needs covariates")
        cols = list(spec.design)
        if any(c >= data.covariates.shape[1] for c in cols):
            raise ShapeError("design column index out of range")
        x = data.covariates[:, cols]
        if spec.with_intercept:
            x = np.column_stack([np.ones(data.n_obs), x])
        return x
    raise TypeError(spec)


def param_specs(spec: ModelSpec, data) -> list[BlockSpec]:
    if isinstance(spec, PoissonRate):
        return [BlockSpec("rate", (), "positive")]
    if isinstance(spec, LogisticRegression):
        p = _design_matrix(spec, data).shape[1]
        return [BlockSpec("coef", (p,), "unconstrained")]
    if isinstance(spec, LinearRegression):
        p = _design_matrix(spec, data).shape[1]
        return [
            BlockSpec("coef", (p,), "unconstrained"),
            BlockSpec("noise_var", (), "positive"),
        ]
    if isinstance(spec, FiniteGMM):
        return [
            BlockSpec("means", (spec.k, spec.dim), "unconstrained"),
            BlockSpec("scales", (spec.k, spec.dim), "positive"),
            BlockSpec("mix", (spec.k,), "simplex"),
        ]
    if isinstance(spec, PoissonFactorization):
        return [
            BlockSpec("user_factors", (data.n_users, spec.k), "positive"),
            BlockSpec("item_factors", (data.n_items, spec.k), "positive"),
        ]
    raise TypeError(spec)


def init_params(spec: ModelSpec, data, rng: Optional[np.random.Generator] = None):
    """Default starting point: prior means for Gaussian blocks, 1.0 for
    positive blocks, uniform simplexes. GMM means are seeded at random data
    points when an rng is supplied (used by the restart loop)."""

    specs = param_specs(spec, data)
    blocks = {}
    for s in specs:
        if s.constraint == "simplex":
            blocks[s.name] = np.full(s.shape, 1.0 / s.shape[0])
        elif s.constraint == "positive":
            blocks[s.name] = np.ones(s.shape)
        else:
            blocks[s.name] = np.zeros(s.shape)
    if isinstance(spec, FiniteGMM):
        pts = data.covariates
        if rng is not None:
            idx = rng.choice(pts.shape[0], size=spec.k, replace=False)
            blocks["means"] = pts[idx].copy()
        else:
            blocks["means"] = np.tile(pts.mean(axis=0), (spec.k, 1)) + 1e-3 * (
                np.arange(spec.k)[:, None] - spec.k / 2
            )
        blocks["scales"] = np.tile(pts.std(axis=0), (spec.k, 1))
    if isinstance(spec, PoissonFactorization) and rng is not None:
        blocks["user_factors"] = rng.gamma(1.0, 1.0, size=(data.n_users, spec.k)) + 0.1
        blocks["item_factors"] = rng.gamma(1.0, 1.0, size=(data.n_items, spec.k)) + 0.1
    return ModelParameters(blocks, specs)


# ---------------------------------------------------------------------------
# Per-observation log likelihood terms


def loglik_terms(spec: ModelSpec, params: ModelParameters, data) -> np.ndarray:
    if isinstance(spec, PoissonRate):
        data.require_counts()
        rate = float(params["rate"])
        if rate <= 0:
            raise DomainError("Poisson rate must be positive")
        y = data.responses
        return y * np.log(rate) - rate - gammaln(y + 1.0)
    if isinstance(spec, LogisticRegression):
        x = _design_matrix(spec, data)
        y = data.responses
        s = x @ params["coef"]
        # y*log(sigmoid) + (1-y)*log(1-sigmoid), stable in s
        return -(np.logaddexp(0.0, -s) * y + np.logaddexp(0.0, s) * (1.0 - y))
    if isinstance(spec, LinearRegression):
        x = _design_matrix(spec, data)
        var = float(params["noise_var"])
        r = data.responses - x @ params["coef"]
        return -0.5 * (LOG_2PI + np.log(var)) - r * r / (2.0 * var)
    if isinstance(spec, FiniteGMM):
        t = _gmm_component_logliks(spec, params, data)
        return logsumexp(t, axis=1)
    if isinstance(spec, PoissonFactorization):
        return _pf_user_terms(spec, params, data)
    raise TypeError(spec)


def _gmm_component_logliks(spec: FiniteGMM, params, data) -> np.ndarray:
    """N x K matrix of log(pi_k) + log N(x_n; mu_k, diag sigma_k^2)."""

    pts = data.covariates
    mu = params["means"]
    sc = params["scales"]
    pi = params["mix"]
    diff = pts[:, None, :] - mu[None, :, :]
    comp = -0.5 * (LOG_2PI + 2.0 * np.log(sc)[None]) - diff * diff / (
        2.0 * sc[None] ** 2
    )
    return comp.sum(axis=2) + np.log(pi)[None, :]


def _pf_user_terms(spec: PoissonFactorization, params, data: PFDataset) -> np.ndarray:
    theta = params["user_factors"]
    beta = params["item_factors"]
    lam = np.einsum("ek,ek->e", theta[data.users], beta[data.items])
    if np.any(lam <= 0):
        raise DomainError("Poisson factorization rate must be positive")
    x = data.counts.astype(float)
    entry = x * np.log(lam) - gammaln(x + 1.0)
    out = np.zeros(data.n_users)
    np.add.at(out, data.users, entry)
    # zero entries contribute only through the total rate theta_u . sum_i beta_i
    out -= theta @ beta.sum(axis=0)
    return out


def loglik_grads(spec: ModelSpec, params, data, obs_weights: np.ndarray) -> dict:
    """Gradients of sum_n obs_weights[n] * loglik_n with respect to each
    parameter block, in constrained space."""

    m = np.asarray(obs_weights, dtype=float)
    if isinstance(spec, PoissonRate):
        rate = float(params["rate"])
        y = data.responses
        return {"rate": np.asarray(np.sum(m * (y / rate - 1.0)))}
    if isinstance(spec, LogisticRegression):
        x = _design_matrix(spec, data)
        resid = data.responses - expit(x @ params["coef"])
        return {"coef": x.T @ (m * resid)}
    if isinstance(spec, LinearRegression):
        x = _design_matrix(spec, data)
        var = float(params["noise_var"])
        r = data.responses - x @ params["coef"]
        g_coef = x.T @ (m * r) / var
        g_var = np.sum(m * (-0.5 / var + r * r / (2.0 * var * var)))
        return {"coef": g_coef, "noise_var": np.asarray(g_var)}
    if isinstance(spec, FiniteGMM):
        return _gmm_loglik_grads(spec, params, data, m)
    if isinstance(spec, PoissonFactorization):
        return _pf_loglik_grads(spec, params, data, m)
    raise TypeError(spec)


def _gmm_loglik_grads(spec, params, data, m):
    pts = data.covariates
    mu = params["means"]
    sc = params["scales"]
    pi = params["mix"]
    t = _gmm_component_logliks(spec, params, data)
    resp = np.exp(t - logsumexp(t, axis=1, keepdims=True))  # N x K
    wr = resp * m[:, None]
    diff = pts[:, None, :] - mu[None, :, :]
    inv_var = 1.0 / (sc * sc)
    g_mu = np.einsum("nk,nkd->kd", wr, diff) * inv_var
    g_sc = np.einsum("nk,nkd->kd", wr, diff * diff) / sc**3 - wr.sum(axis=0)[
        :, None
    ] / sc
    g_pi = wr.sum(axis=0) / pi
    return {"means": g_mu, "scales": g_sc, "mix": g_pi}


def _pf_loglik_grads(spec, params, data: PFDataset, m):
    theta = params["user_factors"]
    beta = params["item_factors"]
    lam = np.einsum("ek,ek->e", theta[data.users], beta[data.items])
    ratio = m[data.users] * data.counts / lam
    g_theta = np.zeros_like(theta)
    np.add.at(g_theta, data.users, ratio[:, None] * beta[data.items])
    g_theta -= m[:, None] * beta.sum(axis=0)[None, :]
    g_beta = np.zeros_like(beta)
    np.add.at(g_beta, data.items, ratio[:, None] * theta[data.users])
    g_beta -= (m @ theta)[None, :]
    return {"user_factors": g_theta, "item_factors": g_beta}


# ---------------------------------------------------------------------------
# Priors


def log_prior(spec: ModelSpec, params: ModelParameters) -> float:
    if isinstance(spec, PoissonRate):
        rate = float(params["rate"])
        if rate <= 0:
            raise SupportError("rate out of support")
        a, b = spec.gamma_a, spec.gamma_b
        return a * np.log(b) - gammaln(a) + (a - 1) * np.log(rate) - b * rate
    if isinstance(spec, LogisticRegression):
        return float(_normal_logpdf(params["coef"], spec.prior_sd).sum())
    if isinstance(spec, LinearRegression):
        var = float(params["noise_var"])
        if var <= 0:
            raise SupportError("noise variance out of support")
        a, b = spec.noise_a, spec.noise_b
        lp = a * np.log(b) - gammaln(a) + (a - 1) * np.log(var) - b * var
        return lp + float(_normal_logpdf(params["coef"], spec.prior_sd).sum())
    if isinstance(spec, FiniteGMM):
        mu = params["means"]
        sc = params["scales"]
        pi = params["mix"]
        lp = float(_normal_logpdf(mu, spec.mean_prior_sd).sum())
        s = spec.scale_prior_logsd
        lp += float(
            np.sum(
                -np.log(sc)
                - np.log(s)
                - 0.5 * LOG_2PI
                - np.log(sc) ** 2 / (2.0 * s * s)
            )
        )
        a = spec.mix_conc
        lp += gammaln(spec.k * a) - spec.k * gammaln(a) + float(
            np.sum((a - 1) * np.log(pi))
        )
        return lp
    if isinstance(spec, PoissonFactorization):
        a, b = spec.gamma_shape, spec.gamma_rate
        lp = 0.0
        for name in ("user_factors", "item_factors"):
            v = params[name]
            lp += float(
                np.sum(a * np.log(b) - gammaln(a) + (a - 1) * np.log(v) - b * v)
            )
        return lp
    raise TypeError(spec)


def _normal_logpdf(x, sd):
    return -0.5 * LOG_2PI - np.log(sd) - x * x / (2.0 * sd * sd)


def grad_log_prior(spec: ModelSpec, params: ModelParameters) -> dict:
    if isinstance(spec, PoissonRate):
        rate = float(params["rate"])
        return {"rate": np.asarray((spec.gamma_a - 1) / rate - spec.gamma_b)}
    if isinstance(spec, LogisticRegression):
        return {"coef": -params["coef"] / spec.prior_sd**2}
    if isinstance(spec, LinearRegression):
        var = float(params["noise_var"])
        return {
            "coef": -params["coef"] / spec.prior_sd**2,
            "noise_var": np.asarray((spec.noise_a - 1) / var - spec.noise_b),
        }
    if isinstance(spec, FiniteGMM):
        sc = params["scales"]
        s = spec.scale_prior_logsd
        return {
            "means": -params["means"] / spec.mean_prior_sd**2,
            "scales": -1.0 / sc - np.log(sc) / (s * s * sc),
            "mix": (spec.mix_conc - 1) / params["mix"],
        }
    if isinstance(spec, PoissonFactorization):
        a, b = spec.gamma_shape, spec.gamma_rate
        return {
            "user_factors": (a - 1) / params["user_factors"] - b,
            "item_factors": (a - 1) / params["item_factors"] - b,
        }
    raise TypeError(spec)


# ---------------------------------------------------------------------------
# Reweighted joint


def log_joint_rpm(
    spec: ModelSpec,
    prior_w: wp.WeightPriorSpec,
    params: ModelParameters,
    w: WeightVector,
    data,
) -> float:
    """log p_beta(beta) + log p_w(w) + sum_n w_n loglik_n, up to the global
    normalizing constant of the reweighted joint (dropped throughout)."""

    terms = loglik_terms(spec, params, data)
    if terms.shape[0] != w.n:
        raise ShapeError("weight vector length does not match term count")
    return (
        log_prior(spec, params)
        + wp.log_density(prior_w, w)
        + float(np.dot(w.weights, terms))
    )


def weight_block_specs(prior_w: wp.WeightPriorSpec, n: int) -> list[BlockSpec]:
    """Unconstrained representation of the weight block for each prior."""

    if isinstance(prior_w, wp.BetaBank):
        return [BlockSpec("w", (n,), "unit-interval")]
    if isinstance(prior_w, wp.GammaBank):
        return [BlockSpec("w", (n,), "positive")]
    if isinstance(prior_w, wp.ScaledDirichlet):
        return [BlockSpec("w", (n,), "simplex")]  # stored as v, w = N v
    raise TypeError(prior_w)


def weights_from_block(prior_w, block: np.ndarray) -> WeightVector:
    if isinstance(prior_w, wp.ScaledDirichlet):
        return WeightVector(block * block.size)
    if isinstance(prior_w, wp.BetaBank):
        # optimizer iterates may touch the boundary through the logit map
        return WeightVector(np.clip(block, 1e-12, 1.0 - 1e-12))
    return WeightVector(np.clip(block, 1e-300, None))


def _weight_space_grad(prior_w, block, terms):
    """Gradient of log p_w + sum w_n l_n in the stored block's space
    (w for the banks, the simplex point v for the scaled Dirichlet)."""

    n = block.size
    if isinstance(prior_w, wp.BetaBank):
        x = np.clip(block, 1e-12, 1 - 1e-12)
        return (prior_w.a - 1) / x - (prior_w.b - 1) / (1.0 - x) + terms
    if isinstance(prior_w, wp.GammaBank):
        return (prior_w.a - 1) / block - prior_w.b + terms
    if isinstance(prior_w, wp.ScaledDirichlet):
        return (prior_w.a - 1) / block + n * terms
    raise TypeError(prior_w)


def _weight_space_logp(prior_w, block, terms):
    w = weights_from_block(prior_w, block)
    return wp.log_density(prior_w, w) + float(np.dot(w.weights, terms))


def build_model_density(
    spec: ModelSpec, data, obs_weights: Optional[np.ndarray] = None
) -> tuple[LogDensityFn, ParameterTransform]:
    """Unconstrained log density of the original (unweighted) model, with
    optional fixed per-observation multiplicities."""

    pt = ParameterTransform(param_specs(spec, data))

    def evaluate(z):
        params, logjac = pt.from_unconstrained(z)
        terms = loglik_terms(spec, params, data)
        m = np.ones_like(terms) if obs_weights is None else obs_weights
        value = log_prior(spec, params) + float(np.dot(m, terms)) + logjac
        grads = loglik_grads(spec, params, data, m)
        prior_grads = grad_log_prior(spec, params)
        total = {k: grads[k] + prior_grads[k] for k in grads}
        return value, pt.push_gradient(z, total)

    return LogDensityFn(pt.dimension, evaluate), pt


def build_rpm_density(
    spec: ModelSpec,
    prior_w: wp.WeightPriorSpec,
    data,
    obs_weights: Optional[np.ndarray] = None,
):
    """Unconstrained log density of the reweighted joint over
    [parameter block, weight block].

    Returns (LogDensityFn, parameter transform, weight transform); the
    weight block sits after the parameter block in the flat vector.
    obs_weights are fixed observation multiplicities (contamination support),
    multiplying each weighted term.
    """

    n_terms = data.n_users if isinstance(data, PFDataset) else data.n_obs
    pt = ParameterTransform(param_specs(spec, data))
    wt = ParameterTransform(weight_block_specs(prior_w, n_terms))
    d_p, d_w = pt.dimension, wt.dimension

    def evaluate(z):
        zp, zw = z[:d_p], z[d_p:]
        params, logjac_p = pt.from_unconstrained(zp)
        wblock, logjac_w = wt.from_unconstrained(zw)
        block = wblock["w"]
        w = weights_from_block(prior_w, block)
        terms = loglik_terms(spec, params, data)
        m = np.ones_like(terms) if obs_weights is None else obs_weights
        eff = m * w.weights
        value = (
            log_prior(spec, params)
            + _weight_space_logp(prior_w, block, m * terms)
            + logjac_p
            + logjac_w
        )
        grads = loglik_grads(spec, params, data, eff)
        prior_grads = grad_log_prior(spec, params)
        total = {k: grads[k] + prior_grads[k] for k in grads}
        g_params = pt.push_gradient(zp, total)
        g_w_space = _weight_space_grad(prior_w, block, m * terms)
        g_weights = wt.push_gradient(zw, {"w": g_w_space})
        return value, np.concatenate([g_params, g_weights])

    full = LogDensityFn(d_p + d_w, evaluate)
    return full, pt, wt


def grad_log_joint_unconstrained(
    spec: ModelSpec,
    prior_w: wp.WeightPriorSpec,
    z_params: np.ndarray,
    z_weights: np.ndarray,
    data,
):
    """Value and gradient of the reweighted joint in unconstrained space,
    split over (parameter coordinates, weight coordinates)."""

    f, pt, wt = build_rpm_density(spec, prior_w, data)
    z = np.concatenate([np.atleast_1d(z_params), np.atleast_1d(z_weights)])
    value, grad = f.eval(z)
    return value, grad


# ---------------------------------------------------------------------------
# JSON (de)serialization of model specs


def spec_to_json(spec: ModelSpec) -> dict:
    name = type(spec).__name__
    body = {k: getattr(spec, k) for k in spec.__dataclass_fields__}
    if "design" in body:
        body["design"] = list(body["design"])
    return {"family": name, **body}


def spec_from_json(obj: dict) -> ModelSpec:
    families = {
        "PoissonRate": PoissonRate,
        "LogisticRegression": LogisticRegression,
        "LinearRegression": LinearRegression,
        "FiniteGMM": FiniteGMM,
        "PoissonFactorization": PoissonFactorization,
    }
    body = dict(obj)
    name = body.pop("family")
    if "design" in body:
        body["design"] = tuple(body["design"])
    return families[name](**body)
