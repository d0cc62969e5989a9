"""MAP optimization, coordinate ascent with closed-form weight updates,
MCMC, and posterior summaries.

All routines operate on `LogDensityFn` in unconstrained space, so one
optimizer and one sampler serve every model/weight-prior combination.
MAP estimation is delegated to L-BFGS with analytic gradients; convergence
is judged by the max-norm of the gradient at the returned point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .core import LogDensityFn, ModelParameters, WeightVector, make_rng
from .errors import (
    DivergentChain,
    EmptyChain,
    NonFiniteValue,
    NotConverged,
    ReweightError,
    UnsupportedFamily,
    UnsupportedPrior,
)
from .transforms import ParameterTransform
from . import models as md
from . import weight_priors as wp

__all__ = [
    "MapResult",
    "SampleChain",
    "Posterior",
    "map_estimate",
    "coordinate_map",
    "sample_posterior",
    "laplace_covariance",
    "posterior_summary",
    "fit_original_map",
    "fit_rpm_map",
    "fit_rpm_mcmc",
    "fit_rpm_exact_grid",
    "MixtureVariationalFit",
    "fit_gmm_cavi",
]

DEFAULT_GRAD_TOL = 1e-6
DEFAULT_VALUE_TOL = 1e-9
DEFAULT_MAX_ITER = 5000


@dataclass
class MapResult:
    point: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool


@dataclass
class SampleChain:
    draws: np.ndarray  # S x dim, unconstrained
    accept_rate: float
    warmup_discarded: int


@dataclass
class Posterior:
    """MAP point (with optional Laplace covariance) or a sample chain,
    plus the transforms needed to read blocks in constrained space."""

    segments: list  # list of (ParameterTransform, offset into the flat vector)
    map_result: Optional[MapResult] = None
    laplace_cov: Optional[np.ndarray] = None
    chain: Optional[SampleChain] = None
    block_scale: dict = field(default_factory=dict)  # linear rescale on read

    def decode(self, z: np.ndarray) -> dict:
        out = {}
        for pt, off in self.segments:
            params, _ = pt.from_unconstrained(z[off : off + pt.dimension])
            for name in params.block_names():
                val = params[name]
                out[name] = val * self.block_scale.get(name, 1.0)
        return out

    def point_estimate(self) -> dict:
        if self.map_result is not None:
            return self.decode(self.map_result.point)
        if self.chain is not None:
            return self.decode(self.chain.draws.mean(axis=0))
        raise EmptyChain("posterior holds neither a MAP point nor draws")


def map_estimate(f: LogDensityFn, init, cfg: Optional[dict] = None) -> MapResult:
    """Maximize an unconstrained log density.

    Converged means the max-norm of the gradient fell below grad_tol
    (default 1e-6) before max_iter (default 5000) iterations.
    """

    cfg = cfg or {}
    grad_tol = cfg.get("grad_tol", DEFAULT_GRAD_TOL)
    max_iter = cfg.get("max_iter", DEFAULT_MAX_ITER)
    init = np.asarray(init, dtype=float)
    v0, _ = f.eval(init)
    if not np.isfinite(v0):
        raise NonFiniteValue("log density non-finite at the starting point")

    def neg(z):
        # line-search probes can leave the support entirely (exp overflow,
        # boundary hits); steer them back without propagating NaN
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                value, grad = f.eval(z)
        except (ReweightError, FloatingPointError, ValueError):
            return 1e100, np.zeros_like(z)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return 1e100, np.zeros_like(z)
        return -value, -grad

    res = minimize(
        neg,
        init,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": grad_tol, "ftol": 1e-14},
    )
    value, grad = f.eval(res.x)
    grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
    out = MapResult(
        point=np.asarray(res.x),
        value=float(value),
        grad_norm=grad_norm,
        iterations=int(res.nit),
        converged=bool(grad_norm < grad_tol),
    )
    if cfg.get("require_convergence") and not out.converged:
        raise NotConverged("gradient tolerance not reached", result=out)
    return out


def _supports_closed_weight_step(prior_w) -> bool:
    return (
        isinstance(prior_w, (wp.GammaBank, wp.BetaBank)) and prior_w.a > 1
    )


def coordinate_map(
    spec, prior_w, data, cfg: Optional[dict] = None
) -> MapResult:
    """Alternate exact per-weight stationary updates with a parameter-block
    MAP step. Falls back to joint optimization for priors without a
    per-weight stationary function (coupled or a <= 1)."""

    cfg = cfg or {}
    value_tol = cfg.get("value_tol", DEFAULT_VALUE_TOL)
    max_sweeps = cfg.get("max_sweeps", 100)

    full, pt, wt = md.build_rpm_density(spec, prior_w, data)
    if not _supports_closed_weight_step(prior_w):
        init = _rpm_init(spec, prior_w, data, pt, wt)
        return map_estimate(full, init, cfg)

    params = md.init_params(spec, data)
    z_params = pt.to_unconstrained(params)
    n_terms = data.n_users if isinstance(data, md.PFDataset) else data.n_obs
    w = np.full(n_terms, 0.5 if isinstance(prior_w, wp.BetaBank) else 1.0)

    last = -np.inf
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        # exact weight step
        terms = md.loglik_terms(spec, params, data)
        w = np.array([wp.induced_weight_function(prior_w, t) for t in terms])
        # parameter step at fixed weights
        fixed_w, _ = md.build_model_density(spec, data, obs_weights=w)
        step = map_estimate(fixed_w, z_params, cfg)
        if step.value >= fixed_w.value(z_params):
            z_params = step.point
        params, _ = pt.from_unconstrained(z_params)
        # monitor the objective both steps ascend: the fixed-weight density
        # (which carries the parameter-transform Jacobian) plus the weight
        # prior; log_joint_rpm alone is not monotone along this path
        value = fixed_w.value(z_params) + wp.log_density(
            prior_w, WeightVector(w)
        )
        if value - last < value_tol:
            last = max(value, last)
            break
        last = value

    z_w = wt.to_unconstrained(
        ModelParameters({"w": _block_from_weights(prior_w, w)}, wt.specs)
    )
    point = np.concatenate([z_params, z_w])
    value, grad = full.eval(point)
    grad_norm = float(np.max(np.abs(grad)))
    return MapResult(
        point=point,
        value=float(value),
        grad_norm=grad_norm,
        iterations=sweeps,
        converged=True,
    )


def _block_from_weights(prior_w, w: np.ndarray) -> np.ndarray:
    if isinstance(prior_w, wp.ScaledDirichlet):
        return w / w.size
    if isinstance(prior_w, wp.BetaBank):
        return np.clip(w, 1e-12, 1 - 1e-12)
    return w


def _rpm_init(spec, prior_w, data, pt, wt) -> np.ndarray:
    params = md.init_params(spec, data)
    n_terms = data.n_users if isinstance(data, md.PFDataset) else data.n_obs
    if isinstance(prior_w, wp.BetaBank):
        w = np.full(n_terms, 0.5)
    else:
        w = np.ones(n_terms)
    zp = pt.to_unconstrained(params)
    zw = wt.to_unconstrained(
        ModelParameters({"w": _block_from_weights(prior_w, w)}, wt.specs)
    )
    return np.concatenate([zp, zw])


def sample_posterior(
    f: LogDensityFn, init, cfg: Optional[dict] = None
) -> SampleChain:
    """Adaptive random-walk Metropolis or fixed-length leapfrog sampling.

    rw-metropolis adapts a global proposal scale during warmup toward an
    acceptance rate in [0.2, 0.5]; gradient-leapfrog runs 16 leapfrog steps
    per proposal with step-size adaptation toward 0.75 acceptance.
    """

    cfg = cfg or {}
    method = cfg.get("method", "rw-metropolis")
    n_warmup = int(cfg.get("n_warmup", 1000))
    n_draws = int(cfg.get("n_draws", 1000))
    seed = int(cfg.get("seed", 0))
    stream = int(cfg.get("stream", 0))
    rng = make_rng(seed, stream)

    z = np.asarray(init, dtype=float).copy()
    value, grad = f.eval(z)
    if not np.isfinite(value):
        raise NonFiniteValue("log density non-finite at the starting point")

    if method == "rw-metropolis":
        return _rw_metropolis(f, z, value, n_warmup, n_draws, rng)
    if method == "gradient-leapfrog":
        return _leapfrog(f, z, value, grad, n_warmup, n_draws, rng)
    raise ValueError(f"unknown sampler {method!r}")


def _safe_eval(f, z):
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            value, grad = f.eval(z)
    except (ReweightError, FloatingPointError, ValueError):
        return -np.inf, None
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        return -np.inf, None
    return value, grad


def _rw_metropolis(f, z, value, n_warmup, n_draws, rng):
    dim = z.size
    scale = 2.38 / np.sqrt(dim)
    draws = np.empty((n_draws, dim))
    accepted = 0
    window_acc = 0
    window = 50
    bad = 0
    total = n_warmup + n_draws
    for it in range(total):
        prop = z + scale * rng.standard_normal(dim)
        v_prop, _ = _safe_eval(f, prop)
        ok = np.isfinite(v_prop)
        if it >= n_warmup and not ok:
            bad += 1
        if ok and np.log(rng.uniform()) < v_prop - value:
            z, value = prop, v_prop
            if it >= n_warmup:
                accepted += 1
            window_acc += 1
        if it < n_warmup and (it + 1) % window == 0:
            rate = window_acc / window
            if rate < 0.2:
                scale *= 0.7
            elif rate > 0.5:
                scale *= 1.3
            window_acc = 0
        if it >= n_warmup:
            draws[it - n_warmup] = z
    if bad > 0.5 * max(n_draws, 1):
        raise DivergentChain("more than half of post-warmup proposals non-finite")
    return SampleChain(draws, accepted / max(n_draws, 1), n_warmup)


def _leapfrog(f, z, value, grad, n_warmup, n_draws, rng, n_steps: int = 16):
    dim = z.size
    log_eps = np.log(0.1 / dim**0.25)
    target = 0.75
    draws = np.empty((n_draws, dim))
    accepted = 0
    bad = 0
    total = n_warmup + n_draws
    for it in range(total):
        eps = np.exp(log_eps)
        p0 = rng.standard_normal(dim)
        q, p, g = z.copy(), p0.copy(), grad.copy()
        v_q = value
        diverged = False
        p = p + 0.5 * eps * g
        for step in range(n_steps):
            q = q + eps * p
            v_q, g = _safe_eval(f, q)
            if g is None:
                diverged = True
                break
            p = p + (eps if step < n_steps - 1 else 0.5 * eps) * g
        if diverged:
            accept_prob = 0.0
            if it >= n_warmup:
                bad += 1
        else:
            h0 = value - 0.5 * np.dot(p0, p0)
            h1 = v_q - 0.5 * np.dot(p, p)
            accept_prob = min(1.0, np.exp(min(0.0, h1 - h0)))
            if rng.uniform() < accept_prob:
                z, value = q, v_q
                grad = g
                if it >= n_warmup:
                    accepted += 1
        if it < n_warmup:
            log_eps += 0.05 * (accept_prob - target)
        else:
            draws[it - n_warmup] = z
    if bad > 0.5 * max(n_draws, 1):
        raise DivergentChain("more than half of post-warmup proposals non-finite")
    return SampleChain(draws, accepted / max(n_draws, 1), n_warmup)


def laplace_covariance(f: LogDensityFn, point: np.ndarray, h: float = 1e-5):
    """Covariance of the Laplace approximation: inverse negative Hessian,
    with the Hessian taken by central differences of the analytic gradient."""

    point = np.asarray(point, dtype=float)
    dim = point.size
    hess = np.empty((dim, dim))
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = h
        hess[i] = (f.grad(point + e) - f.grad(point - e)) / (2.0 * h)
    hess = 0.5 * (hess + hess.T)
    neg = -hess
    try:
        cov = np.linalg.inv(neg)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(neg)
    return 0.5 * (cov + cov.T)


def posterior_summary(post: Posterior, block: str) -> dict:
    """Mean and central 95% interval of one block in constrained space."""

    scale = post.block_scale.get(block, 1.0)
    seg = _find_segment(post, block)
    if post.chain is not None:
        if post.chain.draws.shape[0] == 0:
            raise EmptyChain("chain has no draws")
        vals = np.array(
            [_decode_block(seg, z, block) for z in post.chain.draws]
        )
        return {
            "mean": vals.mean(axis=0) * scale,
            "ci_low": np.percentile(vals, 2.5, axis=0) * scale,
            "ci_high": np.percentile(vals, 97.5, axis=0) * scale,
        }
    if post.map_result is None:
        raise EmptyChain("posterior holds neither a MAP point nor draws")
    pt, off = seg
    z = post.map_result.point
    mean = _decode_block(seg, z, block) * scale
    if post.laplace_cov is None:
        return {"mean": mean, "ci_low": mean.copy(), "ci_high": mean.copy()}
    sl = pt.slice_for(block)
    lo_z, hi_z = sl.start + off, sl.stop + off
    sd = np.sqrt(np.clip(np.diag(post.laplace_cov)[lo_z:hi_z], 0.0, None))
    z_lo = z.copy()
    z_hi = z.copy()
    z_lo[lo_z:hi_z] -= 1.96 * sd
    z_hi[lo_z:hi_z] += 1.96 * sd
    lo = _decode_block(seg, z_lo, block) * scale
    hi = _decode_block(seg, z_hi, block) * scale
    return {
        "mean": mean,
        "ci_low": np.minimum(lo, hi),
        "ci_high": np.maximum(lo, hi),
    }


def _find_segment(post: Posterior, block: str):
    for pt, off in post.segments:
        if any(s.name == block for s in pt.specs):
            return pt, off
    raise KeyError(block)


def _decode_block(seg, z, block):
    pt, off = seg
    params, _ = pt.from_unconstrained(z[off : off + pt.dimension])
    return np.atleast_1d(np.asarray(params[block], dtype=float)).ravel()


# ---------------------------------------------------------------------------
# Fit helpers used by the studies


def fit_original_map(spec, data, cfg=None, with_laplace=True) -> Posterior:
    f, pt = md.build_model_density(spec, data)
    init = pt.to_unconstrained(md.init_params(spec, data))
    res = map_estimate(f, init, cfg)
    cov = laplace_covariance(f, res.point) if with_laplace else None
    return Posterior(segments=[(pt, 0)], map_result=res, laplace_cov=cov)


def fit_rpm_map(spec, prior_w, data, cfg=None, with_laplace=True) -> Posterior:
    full, pt, wt = md.build_rpm_density(spec, prior_w, data)
    init = _rpm_init(spec, prior_w, data, pt, wt)
    res = map_estimate(full, init, cfg)
    cov = laplace_covariance(full, res.point) if with_laplace else None
    post = Posterior(
        segments=[(pt, 0), (wt, pt.dimension)],
        map_result=res,
        laplace_cov=cov,
    )
    if isinstance(prior_w, wp.ScaledDirichlet):
        n = data.n_users if isinstance(data, md.PFDataset) else data.n_obs
        post.block_scale["w"] = float(n)
    return post


def fit_rpm_mcmc(spec, prior_w, data, cfg=None) -> Posterior:
    cfg = dict(cfg or {})
    full, pt, wt = md.build_rpm_density(spec, prior_w, data)
    init = _rpm_init(spec, prior_w, data, pt, wt)
    map_iters = cfg.get("map_init_iters", 0)
    if map_iters:
        # optional warm start near the mode
        init = map_estimate(full, init, {"max_iter": map_iters}).point
    n_chains = int(cfg.get("n_chains", 1))
    chains = []
    for c in range(n_chains):
        ccfg = dict(cfg)
        ccfg["stream"] = int(cfg.get("stream", 0)) + 37 * c
        chains.append(sample_posterior(full, init, ccfg))
    chain = SampleChain(
        draws=np.vstack([c.draws for c in chains]),
        accept_rate=float(np.mean([c.accept_rate for c in chains])),
        warmup_discarded=sum(c.warmup_discarded for c in chains),
    )
    post = Posterior(segments=[(pt, 0), (wt, pt.dimension)], chain=chain)
    if isinstance(prior_w, wp.ScaledDirichlet):
        n = data.n_users if isinstance(data, md.PFDataset) else data.n_obs
        post.block_scale["w"] = float(n)
    return post


def fit_rpm_exact_grid(spec, prior_w, data, cfg=None) -> Posterior:
    """Deterministic reweighted fit for one-dimensional-parameter models
    under a Beta weight bank.

    Each weight integrates out in closed form through the Beta moment
    generating function 1F1(a; a+b; l_n), leaving a one-dimensional
    marginal over the parameter that is evaluated on an adaptive grid.
    The returned chain holds equal-mass quantile draws of the parameter,
    with every weight coordinate at its conditional posterior mean, so
    summaries and predictives read it like any sampled posterior. Useful
    where the joint posterior's heavy parameter tail makes optimization
    and finite chains unreliable.
    """

    from scipy.special import hyp1f1

    cfg = dict(cfg or {})
    if not isinstance(prior_w, wp.BetaBank):
        raise UnsupportedPrior("closed-form weight marginal needs a Beta bank")
    full, pt, wt = md.build_rpm_density(spec, prior_w, data)
    if pt.dimension != 1:
        raise UnsupportedFamily(
            "grid fit applies to one-dimensional parameter spaces only"
        )
    a, b = prior_w.a, prior_w.b
    n = data.n_obs
    # prior + transform Jacobian alone: likelihood switched off
    prior_only, _ = md.build_model_density(spec, data, obs_weights=np.zeros(n))

    def marginal_logpost(zs):
        ll = np.stack(
            [
                md.loglik_terms(spec, pt.from_unconstrained(np.array([z]))[0], data)
                for z in zs
            ]
        )
        mgf = hyp1f1(a, a + b, ll)
        if not np.all(np.isfinite(mgf)) or np.any(mgf <= 0):
            raise NonFiniteValue("weight marginal is not positive and finite")
        lp = np.array([prior_only.eval(np.array([z]))[0] for z in zs])
        return lp + np.log(mgf).sum(axis=1), ll

    half_width = float(cfg.get("half_width", 40.0))
    coarse = np.linspace(-half_width, half_width, 801)
    lp_coarse, _ = marginal_logpost(coarse)
    keep = np.where(lp_coarse > lp_coarse.max() - 30.0)[0]
    pad = coarse[1] - coarse[0]
    lo, hi = coarse[keep[0]] - pad, coarse[keep[-1]] + pad

    grid = np.linspace(lo, hi, int(cfg.get("grid_points", 2001)))
    lp, _ = marginal_logpost(grid)
    p = np.exp(lp - lp.max())
    p /= p.sum()
    cdf = np.cumsum(p)

    n_draws = int(cfg.get("n_draws", 1000))
    probs = (np.arange(n_draws) + 0.5) / n_draws
    z_draws = np.interp(probs, cdf, grid)

    _, ll_draws = marginal_logpost(z_draws)
    w_mean = wp.conditional_weight_mean(prior_w, ll_draws)
    zw = np.stack(
        [
            wt.to_unconstrained(
                ModelParameters({"w": _block_from_weights(prior_w, w)}, wt.specs)
            )
            for w in w_mean
        ]
    )
    draws = np.column_stack([z_draws, zw])
    chain = SampleChain(draws=draws, accept_rate=1.0, warmup_discarded=0)
    return Posterior(segments=[(pt, 0), (wt, pt.dimension)], chain=chain)


@dataclass
class MixtureVariationalFit:
    """Converged mean-field posterior for a diagonal Gaussian mixture.

    mix holds the posterior mean mixing proportions; means, mean_coupling,
    prec_shape and prec_rate are the per-component Normal-Gamma factor
    parameters (mean center, precision multiplier on the mean, and Gamma
    shape/rate on each coordinate precision). weights is None for the
    unweighted fit, otherwise the conditional posterior-mean observation
    weights the fit converged to.
    """

    mix: np.ndarray
    means: np.ndarray
    mean_coupling: np.ndarray
    prec_shape: np.ndarray
    prec_rate: np.ndarray
    resp: np.ndarray
    elbo: float
    weights: Optional[np.ndarray] = None

    def effective_clusters(self, threshold: float) -> int:
        return int(np.sum(self.mix > threshold))


def fit_gmm_cavi(spec, data, prior_w=None, cfg=None) -> MixtureVariationalFit:
    """Coordinate-ascent variational fit of a diagonal Gaussian mixture,
    with optional observation reweighting.

    The variational family is mean-field: a Dirichlet factor on the mixing
    proportions (symmetric concentration mix_conc/k, so the total
    concentration is spread across components), independent Normal-Gamma
    factors on each component's (mean, precision) pair, and categorical
    assignment factors. Coordinate ascent alone cannot empty a component
    that was seeded on stray data, so converged fits are refined by merge
    moves: zero one component's responsibility column into another's,
    re-run coordinate ascent, and keep the merge whenever the evidence
    bound improves.

    With a weight prior, weights enter as fractional observation
    multiplicities fixed at their conditional posterior means given the
    current mixture density, and the fit alternates variational updates
    with weight refreshes until the weights stop moving.

    cfg keys (all optional): seed, stream (restart seeding), iters,
    merge_iters, outer_rounds.
    """

    from scipy.special import digamma, gammaln, logsumexp

    if not isinstance(spec, md.FiniteGMM):
        raise UnsupportedFamily("variational mixture fit needs a FiniteGMM spec")
    cfg = dict(cfg or {})
    x = data.covariates
    if x is None:
        raise NonFiniteValue("mixture fit needs covariate rows")
    n, dim = x.shape
    k = spec.k
    alpha0 = spec.mix_conc / k
    beta0 = spec.mean_coupling
    m0 = 0.0
    a0 = spec.prec_shape
    b0 = np.full(dim, spec.prec_rate)
    iters = int(cfg.get("iters", 300))
    merge_iters = int(cfg.get("merge_iters", 150))
    outer_rounds = int(cfg.get("outer_rounds", 8))
    live_threshold = 2.0 / n

    def mstep(resp, mult):
        cr = mult[:, None] * resp
        nk = cr.sum(axis=0) + 1e-12
        xbar = (cr.T @ x) / nk[:, None]
        scat = np.einsum("nk,nkd->kd", cr, (x[:, None, :] - xbar[None]) ** 2)
        scat /= nk[:, None]
        alpha = alpha0 + nk
        beta = beta0 + nk
        m = (beta0 * m0 + nk[:, None] * xbar) / beta[:, None]
        ak = a0 + 0.5 * nk[:, None] * np.ones((k, dim))
        bk = b0[None, :] + 0.5 * (
            nk[:, None] * scat
            + (beta0 * nk / (beta0 + nk))[:, None] * (xbar - m0) ** 2
        )
        return nk, alpha, beta, m, ak, bk

    def estep(alpha, beta, m, ak, bk):
        elogpi = digamma(alpha) - digamma(alpha.sum())
        eloglam = digamma(ak) - np.log(bk)
        elam = ak / bk
        quad = np.einsum("nkd,kd->nk", (x[:, None, :] - m[None]) ** 2, elam)
        eloglik = 0.5 * (
            eloglam.sum(axis=1)[None]
            - dim / beta[None]
            - quad
            - dim * np.log(2.0 * np.pi)
        )
        lj = elogpi[None] + eloglik
        resp = np.exp(lj - logsumexp(lj, axis=1)[:, None])
        return resp, elogpi, eloglam, elam, eloglik

    def bound(resp, mult, alpha, beta, m, ak, bk, elogpi, eloglam, elam, eloglik):
        cr = mult[:, None] * resp
        with np.errstate(divide="ignore"):
            lr = np.where(resp > 1e-300, np.log(np.maximum(resp, 1e-300)), 0.0)
        out = (cr * eloglik).sum() + (cr * elogpi[None]).sum() - (cr * lr).sum()
        out += gammaln(k * alpha0) - k * gammaln(alpha0) + (alpha0 - 1) * elogpi.sum()
        out -= (
            gammaln(alpha.sum())
            - gammaln(alpha).sum()
            + ((alpha - 1) * elogpi).sum()
        )
        out += 0.5 * (
            np.log(beta0)
            - np.log(2.0 * np.pi)
            + eloglam
            - beta0 * (elam * (m - m0) ** 2 + 1.0 / beta[:, None])
        ).sum()
        out += (
            a0 * np.log(b0)[None, :]
            - gammaln(a0)
            + (a0 - 1) * eloglam
            - b0[None, :] * elam
        ).sum()
        out -= 0.5 * (
            np.log(beta[:, None]) - np.log(2.0 * np.pi) + eloglam - 1.0
        ).sum()
        out -= (
            -gammaln(ak) + (ak - 1) * digamma(ak) + np.log(bk) - ak
        ).sum()
        return float(out)

    def ascend(resp, mult, n_iter):
        for _ in range(n_iter):
            _, alpha, beta, m, ak, bk = mstep(resp, mult)
            resp, *_ = estep(alpha, beta, m, ak, bk)
        _, alpha, beta, m, ak, bk = mstep(resp, mult)
        resp2, elogpi, eloglam, elam, eloglik = estep(alpha, beta, m, ak, bk)
        elbo = bound(
            resp2, mult, alpha, beta, m, ak, bk, elogpi, eloglam, elam, eloglik
        )
        return resp2, elbo, alpha, beta, m, ak, bk

    def refreshed_weights(alpha, m, ak, bk):
        epi = alpha / alpha.sum()
        quad = np.einsum("nkd,kd->nk", (x[:, None, :] - m[None]) ** 2, ak / bk)
        logdens = 0.5 * (
            -np.log(bk / ak).sum(axis=1)[None] - quad - dim * np.log(2.0 * np.pi)
        )
        ll_mix = logsumexp(np.log(np.maximum(epi, 1e-300))[None] + logdens, axis=1)
        return wp.conditional_weight_mean(prior_w, ll_mix)

    def merge_pass(state, mult):
        resp, elbo, alpha, beta, m, ak, bk = state
        improved = True
        while improved:
            improved = False
            live = np.where(alpha / alpha.sum() > live_threshold)[0]
            nk = alpha - alpha0
            order = live[np.argsort(-nk[live])]
            for ip in range(len(order)):
                for jp in range(ip + 1, len(order)):
                    i, j = order[ip], order[jp]
                    merged = resp.copy()
                    merged[:, i] += merged[:, j]
                    merged[:, j] = 0.0
                    cand = ascend(merged, mult, merge_iters)
                    if cand[1] > elbo + 1e-6:
                        resp, elbo, alpha, beta, m, ak, bk = cand
                        improved = True
                        break
                if improved:
                    break
        return resp, elbo, alpha, beta, m, ak, bk

    rng = make_rng(int(cfg.get("seed", 0)), int(cfg.get("stream", 0)))
    seeds = rng.choice(n, k, replace=False)
    d2 = ((x[:, None, :] - x[seeds][None]) ** 2).sum(axis=2)
    resp = np.exp(-(d2 - d2.min(axis=1, keepdims=True)) / (2.0 * x.var()))
    resp /= resp.sum(axis=1, keepdims=True)
    mult = np.ones(n)

    state = merge_pass(ascend(resp, mult, iters), mult)
    if prior_w is not None:
        for _ in range(outer_rounds):
            _, _, alpha, _, m, ak, bk = state
            fresh = refreshed_weights(alpha, m, ak, bk)
            if np.max(np.abs(fresh - mult)) < 1e-6:
                break
            mult = fresh
            state = merge_pass(ascend(state[0], mult, iters), mult)
    resp, elbo, alpha, beta, m, ak, bk = state
    order = np.argsort(-alpha)
    return MixtureVariationalFit(
        mix=(alpha / alpha.sum())[order],
        means=m[order],
        mean_coupling=beta[order],
        prec_shape=ak[order],
        prec_rate=bk[order],
        resp=resp[:, order],
        elbo=elbo,
        weights=None if prior_w is None else mult,
    )
