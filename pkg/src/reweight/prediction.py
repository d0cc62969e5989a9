"""Posterior-predictive likelihoods for the original, localized, and
reweighted models.

The reweighted predictive raises each likelihood to a fresh weight drawn
from the prior's single-weight marginal and divides by the power-likelihood
normalizer C(beta, w) = integral of l(y|beta)^w over the observation space,
so that predictives remain comparable across models. Bernoulli and Gaussian
normalizers are closed-form; the Poisson normalizer is a truncated sum.
Mixture and factorization families have no tractable normalizer and fall
back to the unit-weight plug-in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, logsumexp

from .core import Dataset, make_rng
from .errors import DomainError, EmptyChain, UnsupportedFamily
from . import models as md
from . import weight_priors as wp
from .inference import Posterior
from .localization import LocalizedSpec

__all__ = [
    "PredictiveEstimate",
    "power_likelihood_normalizer",
    "predictive_original",
    "predictive_localized",
    "predictive_rpm",
]

LOG_2PI = np.log(2.0 * np.pi)

DEFAULT_WEIGHT_DRAWS = 50
MAX_PARAM_DRAWS = 100  # chains are thinned to at most this many draws


@dataclass
class PredictiveEstimate:
    mean_log_predictive: float
    per_point_log_predictive: np.ndarray
    mc_draws_used: int


def _poisson_normalizer(lam: float, w: float) -> float:
    """sum_y (e^-lam lam^y / y!)^w, truncated when a term falls below
    1e-16 of the running sum (summing past the mode first)."""

    total = 0.0
    y = 0
    while True:
        term = np.exp(w * (y * np.log(lam) - lam - gammaln(y + 1.0)))
        total += term
        if y > lam and term < 1e-16 * total:
            break
        y += 1
        if y > 100000:
            break
    return float(total)


def power_likelihood_normalizer(spec, params, w: float, covariate_row=None) -> float:
    """C(beta, w) = integral of l(y|beta)^w over y. The logistic case needs
    the test point's covariate row, since the success probability does."""

    if w <= 0:
        raise DomainError("power must be positive")
    if isinstance(spec, md.PoissonRate):
        return _poisson_normalizer(float(params["rate"]), w)
    if isinstance(spec, md.LogisticRegression):
        if covariate_row is None:
            raise DomainError("logistic normalizer needs a covariate row")
        row = np.asarray(covariate_row, dtype=float).ravel()
        if spec.with_intercept:
            row = np.concatenate([[1.0], row])
        p = float(expit(row @ params["coef"]))
        return p**w + (1.0 - p) ** w
    if isinstance(spec, md.LinearRegression):
        var = float(params["noise_var"])
        return float((2.0 * np.pi * var) ** ((1.0 - w) / 2.0) / np.sqrt(w))
    raise UnsupportedFamily(
        "no tractable power-likelihood normalizer for this family"
    )


def _param_draws(post: Posterior, max_draws: int = MAX_PARAM_DRAWS):
    """Decoded parameter draws from the first (model-parameter) segment."""

    pt, off = post.segments[0]
    if post.chain is not None:
        draws = post.chain.draws
        if draws.shape[0] == 0:
            raise EmptyChain("chain has no draws")
        if draws.shape[0] > max_draws:
            idx = np.linspace(0, draws.shape[0] - 1, max_draws).astype(int)
            draws = draws[idx]
        return [pt.from_unconstrained(z[off : off + pt.dimension])[0] for z in draws]
    if post.map_result is None:
        raise EmptyChain("posterior holds neither a MAP point nor draws")
    z = post.map_result.point
    return [pt.from_unconstrained(z[off : off + pt.dimension])[0]]


def predictive_original(post: Posterior, spec, y_new) -> PredictiveEstimate:
    """Per test point, log of the Monte Carlo average of l(y|beta) over
    posterior draws; MAP posteriors use the plug-in value."""

    params_list = _param_draws(post)
    mat = np.stack(
        [md.loglik_terms(spec, p, y_new) for p in params_list]
    )  # S x N
    per_point = logsumexp(mat, axis=0) - np.log(mat.shape[0])
    return PredictiveEstimate(
        float(per_point.mean()), per_point, len(params_list)
    )


def predictive_localized(
    post: Posterior,
    spec_localized: LocalizedSpec,
    y_new: Dataset,
    m_inner: int = 10,
    seed: int = 0,
) -> PredictiveEstimate:
    """For each posterior draw of the top-level (center, spread), sample
    m_inner fresh per-point parameter copies and average the likelihood."""

    rng = make_rng(seed, 101)
    tops = _param_draws(post)
    base = spec_localized.base
    n = y_new.n_obs
    logs = []
    for top in tops:
        for _ in range(m_inner):
            if isinstance(base, md.PoissonRate):
                theta = float(top["top_rate"])
                sd = np.sqrt(float(top["local_var"]))
                rate = theta + sd * rng.standard_normal()
                if rate <= 0:
                    # zero likelihood mass outside the Poisson support
                    logs.append(np.full(n, -np.inf))
                    continue
                p = md.init_params(base, y_new).replace("rate", np.asarray(rate))
                logs.append(md.loglik_terms(base, p, y_new))
            else:
                center = top["top_coef"]
                if isinstance(base, md.LogisticRegression):
                    sd = np.sqrt(float(top["local_var"]))
                    coef = center + sd * rng.standard_normal(center.size)
                    p = md.init_params(base, y_new).replace("coef", coef)
                else:
                    sds = np.sqrt(np.atleast_1d(top["local_vars"]))
                    coef = center + sds * rng.standard_normal(center.size)
                    p = md.init_params(base, y_new)
                    p = p.replace("coef", coef)
                    p = p.replace("noise_var", np.asarray(float(top["noise_var"])))
                logs.append(md.loglik_terms(base, p, y_new))
    mat = np.stack(logs)
    per_point = logsumexp(mat, axis=0) - np.log(mat.shape[0])
    return PredictiveEstimate(float(per_point.mean()), per_point, mat.shape[0])


def _draw_marginal_weights(prior_w, n_train: int, m: int, rng) -> np.ndarray:
    if isinstance(prior_w, wp.BetaBank):
        w = rng.beta(prior_w.a, prior_w.b, size=m)
        return np.clip(w, 1e-12, 1.0 - 1e-12)
    if isinstance(prior_w, wp.GammaBank):
        return np.clip(rng.gamma(prior_w.a, 1.0 / prior_w.b, size=m), 1e-12, None)
    if isinstance(prior_w, wp.ScaledDirichlet):
        # one coordinate of a symmetric Dirichlet, scaled by N
        a = prior_w.a
        v = rng.beta(a, (n_train - 1) * a, size=m)
        return np.clip(n_train * v, 1e-12, None)
    raise TypeError(prior_w)


def predictive_rpm(
    post: Posterior,
    spec,
    prior_w,
    y_new,
    m_weight_draws: int = DEFAULT_WEIGHT_DRAWS,
    seed: int = 0,
) -> PredictiveEstimate:
    """Log-mean-exp over parameter draws and fresh prior weights of
    l(y|beta)^w / C(beta, w). Families without a tractable normalizer
    (mixture, factorization) use the unit-weight plug-in instead."""

    params_list = _param_draws(post)
    if isinstance(spec, (md.FiniteGMM, md.PoissonFactorization)):
        return predictive_original(post, spec, y_new)

    n_train = post.segments[-1][0].specs[0].shape[0] if len(post.segments) > 1 else 1
    rng = make_rng(seed, 202)
    w_draws = _draw_marginal_weights(prior_w, n_train, m_weight_draws, rng)

    logs = []
    for p in params_list:
        terms = md.loglik_terms(spec, p, y_new)  # N
        if isinstance(spec, md.LogisticRegression):
            for w in w_draws:
                log_c = np.log(
                    [
                        power_likelihood_normalizer(spec, p, w, row)
                        for row in y_new.covariates
                    ]
                )
                logs.append(w * terms - log_c)
        else:
            for w in w_draws:
                log_c = np.log(power_likelihood_normalizer(spec, p, w))
                logs.append(w * terms - log_c)
    mat = np.stack(logs)
    per_point = logsumexp(mat, axis=0) - np.log(mat.shape[0])
    return PredictiveEstimate(float(per_point.mean()), per_point, mat.shape[0])
