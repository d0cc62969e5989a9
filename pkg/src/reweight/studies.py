"""Experiment harness: runs each robustness study across mismatch levels
and replications, fits the original / localized / reweighted variants, and
aggregates the comparison tables.

Per (level, replication) cell the harness generates fresh data under its
own rng stream, fits every model variant defined for the study, and appends
one row per variant. Failures inside a cell become error rows instead of
aborting the grid. Output layout:
out/<study>/<timestamp>/{config.json, rows.csv, tables/*.csv}.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .core import Dataset, WeightVector, make_rng
from .errors import ConfigError, MissingRows
from . import datagen as dg
from . import inference as inf
from . import localization as lz
from . import models as md
from . import prediction as pr
from . import robustness as rb
from . import weight_priors as wp

__all__ = [
    "StudyConfig",
    "StudyResult",
    "run_study",
    "emit_table",
    "scale_prior_helper",
    "STUDIES",
    "ROW_FIELDS",
]

STUDIES = (
    "poisson-outliers",
    "missing-group",
    "linreg-misspec",
    "gmm-skew",
    "movielens-pf",
)

TABLES = ("fig3b", "table1", "table2", "table3", "fig5", "weights")

ROW_FIELDS = [
    "study",
    "level",
    "rep",
    "model",
    "status",
    "message",
    "mean",
    "ci_low",
    "ci_high",
    "abs_dev_beta1",
    "pred_clean_mean",
    "pred_clean_total",
    "pred_corrupt_mean",
    "pred_corrupt_total",
    "n_test",
    "weight_median_corrupted",
    "weight_median_clean",
    "mode_count",
    "frac_below",
    "bimodal",
    "eff_clusters",
    "heldout_ll_per_entry",
]

DEFAULT_GRIDS = {
    "poisson-outliers": [0.0, 0.25],
    "missing-group": [0.0, 0.1, 0.2, 0.3, 0.4],
    "linreg-misspec": list(dg.LINREG_VARIANTS),
    "gmm-skew": ["skew"],
    "movielens-pf": [0.1, 0.5, 1.0],
}

# study-specific weight priors used when the config leaves the field empty;
# the GLM studies share one heavy-tailed bank, the mixture uses a flat bank
# with mass pushed toward 1, factorization ties user weights near 1.
DEFAULT_PRIORS = {
    "poisson-outliers": "beta:0.1,0.01",
    "missing-group": "beta:0.1,0.01",
    "linreg-misspec": "beta:0.1,0.01",
    "gmm-skew": "beta:1.0,0.05",
    "movielens-pf": "beta:100,1",
}


@dataclass
class StudyConfig:
    study: str
    grid: Optional[list] = None
    n_obs: Optional[int] = None  # None = per-study default
    n_reps: int = 50
    weight_prior: str = ""
    inference: dict = field(default_factory=dict)
    seed: int = 0
    out_dir: str = "out"
    data_path: Optional[str] = None
    n_users: int = 500
    n_items: int = 500
    pf_k: int = 20
    gmm_restarts: int = 5
    models: Optional[list] = None  # subset of variants to fit; None = all

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}")
        if self.grid is None:
            self.grid = list(DEFAULT_GRIDS[self.study])
        if self.n_obs is None:
            self.n_obs = 2000 if self.study == "gmm-skew" else 100
        if self.n_reps < 1:
            raise ConfigError("n_reps must be at least 1")
        if not self.weight_prior:
            self.weight_prior = DEFAULT_PRIORS[self.study]
        try:
            wp.parse_weight_prior(self.weight_prior)  # validate early
        except Exception as exc:
            raise ConfigError(str(exc)) from exc
        for level in self.grid:
            self._check_level(level)

    def _check_level(self, level):
        if self.study == "linreg-misspec":
            if level not in dg.LINREG_VARIANTS:
                raise ConfigError(f"unknown variant {level!r}")
        elif self.study == "gmm-skew":
            pass
        elif self.study == "movielens-pf":
            if not 0 < float(level) <= 1:
                raise ConfigError("replacement ratio must lie in (0, 1]")
        else:
            if not 0 <= float(level) < 1:
                raise ConfigError("mismatch fraction must lie in [0, 1)")


@dataclass
class StudyResult:
    rows: list
    provenance: dict
    out_path: Optional[str] = None


def scale_prior_helper(n: int) -> wp.BetaBank:
    """Beta weight prior scaled so n/a stays near 1000, preserving the
    10:1 a-to-b ratio of Beta(0.1, 0.01) at n=100."""

    if n < 1:
        raise ConfigError("n must be at least 1")
    a = n / 1000.0
    return wp.BetaBank(a, 0.1 * a)


# ---------------------------------------------------------------------------
# Row helpers


def _blank_row(study, level, rep, model):
    row = {k: "" for k in ROW_FIELDS}
    row.update(study=study, level=level, rep=rep, model=model, status="ok")
    return row


def _error_row(study, level, rep, model, exc):
    row = _blank_row(study, level, rep, model)
    row["status"] = "error"
    row["message"] = f"{type(exc).__name__}: {exc}"
    return row


def _put_summary(row, summary, index=0):
    row["mean"] = float(np.atleast_1d(summary["mean"])[index])
    row["ci_low"] = float(np.atleast_1d(summary["ci_low"])[index])
    row["ci_high"] = float(np.atleast_1d(summary["ci_high"])[index])


def _put_predictives(row, est_clean, est_corrupt):
    row["pred_clean_mean"] = est_clean.mean_log_predictive
    row["pred_clean_total"] = float(est_clean.per_point_log_predictive.sum())
    row["pred_corrupt_mean"] = est_corrupt.mean_log_predictive
    row["pred_corrupt_total"] = float(est_corrupt.per_point_log_predictive.sum())
    row["n_test"] = est_clean.per_point_log_predictive.size


def _put_weight_diag(row, weights, mask):
    w = WeightVector(np.clip(weights, 1e-12, None))
    diag = rb.weight_bimodality(w)
    row["mode_count"] = diag.kde_mode_count
    row["frac_below"] = diag.frac_below
    row["bimodal"] = int(diag.bimodal_flag)
    if mask is not None and mask.any():
        row["weight_median_corrupted"] = float(np.median(weights[mask]))
    if mask is not None and (~mask).any():
        row["weight_median_clean"] = float(np.median(weights[~mask]))


def _rpm_weights(post):
    return np.atleast_1d(inf.posterior_summary(post, "w")["mean"])


# ---------------------------------------------------------------------------
# Per-study cells: each returns a list of rows for one (level, rep)


def _cell_glm(cfg, study, level, rep):
    """Shared cell for the Poisson-outlier, missing-group, and linear
    regression studies: original, localized, and RPM variants."""

    f = float(level) if study != "linreg-misspec" else level
    rng = make_rng(cfg.seed, _stream(cfg, level, rep))

    if study == "poisson-outliers":
        gen = lambda r: dg.gen_poisson_outliers(cfg.n_obs, f, r)
        gen_clean = lambda r: dg.gen_poisson_outliers(cfg.n_obs, 0.0, r)
        spec = md.PoissonRate()
        loc_spec = lz.LocalizedSpec(spec)
        focal = 0
    elif study == "missing-group":
        gen = lambda r: dg.gen_missing_group(cfg.n_obs, f, r)
        gen_clean = lambda r: dg.gen_missing_group(cfg.n_obs, 0.0, r)
        spec = md.LogisticRegression(prior_sd=float(np.sqrt(10.0)))
        loc_spec = lz.LocalizedSpec(spec)
        focal = 0
    else:
        gen = lambda r: dg.gen_linreg_misspec(cfg.n_obs, level, r)
        gen_clean = None
        spec = None  # depends on the variant's covariate count
        focal = 1  # slope of x1, after the intercept

    labeled = gen(rng)
    if study == "linreg-misspec":
        p = labeled.data.covariates.shape[1]
        spec = md.LinearRegression(design=tuple(range(p)))
        loc_spec = lz.LocalizedSpec(spec)
        true_b1 = float(labeled.truth["beta"][1])
    data = labeled.data
    prior_w = wp.parse_weight_prior(cfg.weight_prior)

    # test sets for the predictive comparison
    rng_test = make_rng(cfg.seed, _stream(cfg, level, rep) + 500_000)
    if study == "linreg-misspec":
        test_corrupt = gen(rng_test).data
        clean_truth = labeled.truth["beta"].copy()
        test_clean = _linreg_clean_test(cfg.n_obs, level, clean_truth, rng_test)
    else:
        test_corrupt = gen(rng_test).data
        test_clean = gen_clean(rng_test).data

    rows = []
    wanted = cfg.models or ["original", "localized", "rpm"]
    param_name = "rate" if study == "poisson-outliers" else "coef"

    if "original" in wanted:
        row = _blank_row(study, level, rep, "original")
        try:
            post = inf.fit_original_map(spec, data)
            _put_summary(row, inf.posterior_summary(post, param_name), focal)
            _put_predictives(
                row,
                pr.predictive_original(post, spec, test_clean),
                pr.predictive_original(post, spec, test_corrupt),
            )
            if study == "linreg-misspec":
                row["abs_dev_beta1"] = abs(row["mean"] - true_b1)
        except Exception as exc:  # error rows, never abort the grid
            row = _error_row(study, level, rep, "original", exc)
        rows.append(row)

    if "localized" in wanted:
        row = _blank_row(study, level, rep, "localized")
        try:
            post_loc = _fit_localized(cfg, loc_spec, data, level, rep)
            name = "top_rate" if study == "poisson-outliers" else "top_coef"
            _put_summary(row, inf.posterior_summary(post_loc, name), focal)
            _put_predictives(
                row,
                pr.predictive_localized(
                    post_loc, loc_spec, test_clean, seed=cfg.seed + rep
                ),
                pr.predictive_localized(
                    post_loc, loc_spec, test_corrupt, seed=cfg.seed + rep
                ),
            )
            if study == "linreg-misspec":
                row["abs_dev_beta1"] = abs(row["mean"] - true_b1)
        except Exception as exc:
            row = _error_row(study, level, rep, "localized", exc)
        rows.append(row)

    if "rpm" in wanted:
        row = _blank_row(study, level, rep, "rpm")
        try:
            post_rpm = _fit_rpm(cfg, spec, prior_w, data, level, rep)
            _put_summary(row, inf.posterior_summary(post_rpm, param_name), focal)
            _put_predictives(
                row,
                pr.predictive_rpm(
                    post_rpm, spec, prior_w, test_clean, seed=cfg.seed + rep
                ),
                pr.predictive_rpm(
                    post_rpm, spec, prior_w, test_corrupt, seed=cfg.seed + rep
                ),
            )
            _put_weight_diag(row, _rpm_weights(post_rpm), labeled.corrupted_mask)
            if study == "linreg-misspec":
                row["abs_dev_beta1"] = abs(row["mean"] - true_b1)
        except Exception as exc:
            row = _error_row(study, level, rep, "rpm", exc)
        rows.append(row)
    return rows


def _fit_localized(cfg, loc_spec, data, level, rep):
    """Localized models are sampled, not optimized: their joint MAP rides
    the hierarchical funnel (local spread -> 0 with all copies equal), so
    point optimization collapses onto a degenerate mode."""

    floc, ptloc = lz.build_localized_density(loc_spec, data)
    init = ptloc.to_unconstrained(lz.localized_init_params(loc_spec, data))
    chain = inf.sample_posterior(
        floc,
        init,
        {
            "method": "gradient-leapfrog",
            "n_warmup": cfg.inference.get("loc_warmup", 300),
            "n_draws": cfg.inference.get("loc_draws", 300),
            "seed": cfg.seed,
            "stream": _stream(cfg, level, rep) + 800_000,
        },
    )
    return inf.Posterior(segments=[(ptloc, 0)], chain=chain)


def _linreg_clean_test(n, variant, beta, rng):
    """Test rows from the generating structure with the unmodeled term
    switched off, so the 'clean' condition matches the fitted model."""

    b = beta.copy()
    b[3] = 0.0
    if variant == "missing-covariate":
        b[2] = 0.0  # the fitted model never sees x2
    x1 = rng.normal(10.0, 5.0, n)
    x2 = rng.normal(0.0, 10.0, n)
    eps = rng.standard_normal(n)
    y = b[0] + b[1] * x1 + b[2] * x2 + eps
    cov = x1[:, None] if variant == "missing-covariate" else np.column_stack([x1, x2])
    return Dataset(y, cov)


def _fit_rpm(cfg, spec, prior_w, data, level, rep):
    # the one-parameter logistic study defaults to the deterministic grid
    # fit: its reweighted posterior has a heavy slope tail that defeats
    # both optimization and short chains
    default = "exact" if cfg.study == "missing-group" else "map"
    method = cfg.inference.get("method", default)
    if method == "exact":
        return inf.fit_rpm_exact_grid(spec, prior_w, data, cfg.inference)
    if method == "mcmc":
        mc = dict(cfg.inference)
        # 'method' selects map vs mcmc here; the sampler itself comes from
        # the 'sampler' key
        mc["method"] = cfg.inference.get("sampler", "gradient-leapfrog")
        mc.pop("sampler", None)
        mc.setdefault("seed", cfg.seed)
        mc["stream"] = _stream(cfg, level, rep) + 900_000
        return inf.fit_rpm_mcmc(spec, prior_w, data, mc)
    return inf.fit_rpm_map(spec, prior_w, data)


def _cell_gmm(cfg, level, rep):
    rng = make_rng(cfg.seed, _stream(cfg, level, rep))
    labeled = dg.gen_skewnormal_mixture(rng, n=cfg.n_obs)
    data = labeled.data
    spec = md.FiniteGMM(k=30, dim=2)
    prior_w = wp.parse_weight_prior(cfg.weight_prior)
    thresh = 2.0 / data.n_obs
    rows = []
    wanted = cfg.models or ["original", "rpm"]

    if "original" in wanted:
        row = _blank_row("gmm-skew", level, rep, "original")
        try:
            best = _gmm_restarts(cfg, spec, data, None, rep)
            row["eff_clusters"] = best.effective_clusters(thresh)
            row["mean"] = float(np.max(best.mix))
        except Exception as exc:
            row = _error_row("gmm-skew", level, rep, "original", exc)
        rows.append(row)

    if "rpm" in wanted:
        row = _blank_row("gmm-skew", level, rep, "rpm")
        try:
            best = _gmm_restarts(cfg, spec, data, prior_w, rep)
            row["eff_clusters"] = best.effective_clusters(thresh)
            row["mean"] = float(np.max(best.mix))
            _put_weight_diag(row, best.weights, None)
        except Exception as exc:
            row = _error_row("gmm-skew", level, rep, "rpm", exc)
        rows.append(row)
    return rows


def _gmm_restarts(cfg, spec, data, prior_w, rep):
    """Best-of-restarts variational fit with data-point-seeded
    responsibilities; the evidence bound picks the winner."""

    best = None
    for r in range(cfg.gmm_restarts):
        fit = inf.fit_gmm_cavi(
            spec,
            data,
            prior_w,
            {"seed": cfg.seed, "stream": 700_000 + 1000 * rep + r},
        )
        if best is None or fit.elbo > best.elbo:
            best = fit
    return best


def _cell_pf(cfg, level, rep):
    ratio = float(level)
    rng = make_rng(cfg.seed, _stream(cfg, level, rep))
    if cfg.data_path:
        base = dg.load_movielens(cfg.data_path)
        base = _densest_subset(base, cfg.n_users, cfg.n_items)
    else:
        base = dg.gen_pf_synthetic(cfg.n_users, cfg.n_items, rng).data
    labeled = dg.corrupt_users(base, 0.01, ratio, rng)
    data = labeled.data
    spec = md.PoissonFactorization(k=cfg.pf_k)
    prior_w = wp.parse_weight_prior(cfg.weight_prior)

    # held-out users: 20%, scored on half their entries with per-user
    # factors refit on the other half
    heldout = rng.choice(
        data.n_users, size=max(1, round(0.2 * data.n_users)), replace=False
    )
    train, test_fit, test_score = _pf_user_split(data, heldout, rng)

    rows = []
    wanted = cfg.models or ["original", "rpm"]

    if "original" in wanted:
        row = _blank_row("movielens-pf", level, rep, "original")
        try:
            f, pt = md.build_model_density(spec, train)
            init = pt.to_unconstrained(md.init_params(spec, train, rng=rng))
            res = inf.map_estimate(f, init, {"max_iter": 800})
            params, _ = pt.from_unconstrained(res.point)
            row["heldout_ll_per_entry"] = _pf_heldout_ll(
                spec, params, test_fit, test_score, rng
            )
        except Exception as exc:
            row = _error_row("movielens-pf", level, rep, "original", exc)
        rows.append(row)

    if "rpm" not in wanted:
        return rows
    row = _blank_row("movielens-pf", level, rep, "rpm")
    try:
        post = inf.fit_rpm_map(spec, prior_w, train, {"max_iter": 800}, with_laplace=False)
        pt0, _ = post.segments[0]
        map_params, _ = pt0.from_unconstrained(post.map_result.point[: pt0.dimension])
        # report conditional posterior-mean weights: the joint-MAP weights
        # saturate at the prior boundary, which flattens the user ranking
        weights = wp.conditional_weight_mean(
            prior_w, md.loglik_terms(spec, map_params, train)
        )
        mask = labeled.corrupted_mask[_pf_user_index(train)]
        _put_weight_diag(row, weights, mask)
        row["heldout_ll_per_entry"] = _pf_heldout_ll(
            spec, map_params, test_fit, test_score, rng
        )
    except Exception as exc:
        row = _error_row("movielens-pf", level, rep, "rpm", exc)
    rows.append(row)
    return rows


def _densest_subset(data: md.PFDataset, n_users: int, n_items: int) -> md.PFDataset:
    """Keep the most active users and most popular items, then re-densify."""

    ucount = np.bincount(data.users, minlength=data.n_users)
    icount = np.bincount(data.items, minlength=data.n_items)
    keep_u = np.sort(np.argsort(-ucount)[:n_users])
    keep_i = np.sort(np.argsort(-icount)[:n_items])
    umap = -np.ones(data.n_users, np.int64)
    imap = -np.ones(data.n_items, np.int64)
    umap[keep_u] = np.arange(keep_u.size)
    imap[keep_i] = np.arange(keep_i.size)
    sel = (umap[data.users] >= 0) & (imap[data.items] >= 0)
    return md.PFDataset(
        keep_u.size,
        keep_i.size,
        umap[data.users[sel]],
        imap[data.items[sel]],
        data.counts[sel],
    )


def _pf_user_index(data: md.PFDataset) -> np.ndarray:
    """Original user id of each user row in a remapped training subset."""

    return getattr(data, "orig_user_ids", np.arange(data.n_users))


def _pf_user_split(data: md.PFDataset, heldout: np.ndarray, rng):
    """Training data without held-out users, plus the held-out users'
    entries split in half (fit half, score half), all re-densified."""

    is_held = np.zeros(data.n_users, bool)
    is_held[heldout] = True
    train_sel = ~is_held[data.users]

    def subset(sel, user_pool):
        umap = -np.ones(data.n_users, np.int64)
        umap[user_pool] = np.arange(user_pool.size)
        out = md.PFDataset(
            user_pool.size,
            data.n_items,
            umap[data.users[sel]],
            data.items[sel],
            data.counts[sel],
        )
        object.__setattr__(out, "orig_user_ids", user_pool)
        return out

    train_users = np.where(~is_held)[0]
    train = subset(train_sel, train_users)

    held_entries = np.where(is_held[data.users])[0]
    half = rng.permutation(held_entries.size) < held_entries.size // 2
    fit_sel = np.zeros(data.n_entries, bool)
    fit_sel[held_entries[half]] = True
    score_sel = np.zeros(data.n_entries, bool)
    score_sel[held_entries[~half]] = True
    test_fit = subset(fit_sel, heldout)
    test_score = subset(score_sel, heldout)
    return train, test_fit, test_score


def _pf_heldout_ll(spec, trained_params, test_fit, test_score, rng):
    """Refit per-user factors on half the held-out entries with item
    factors frozen, then score the other half per entry."""

    beta = trained_params["item_factors"]
    k = beta.shape[1]
    n_u = test_fit.n_users
    theta = np.full((n_u, k), 0.1)
    beta_sum = beta.sum(axis=0)
    # multiplicative fixed-point updates of the Gamma-Poisson MAP for theta
    a, b = spec.gamma_shape, spec.gamma_rate
    for _ in range(50):
        lam = np.einsum("ek,ek->e", theta[test_fit.users], beta[test_fit.items])
        ratio = test_fit.counts / np.clip(lam, 1e-12, None)
        num = np.zeros_like(theta)
        np.add.at(num, test_fit.users, ratio[:, None] * beta[test_fit.items])
        theta = (np.maximum(a - 1.0, 0.0) + theta * num) / (b + beta_sum[None, :])
        theta = np.clip(theta, 1e-8, None)
    # score the other half per entry
    from scipy.special import gammaln

    lam = np.einsum("ek,ek->e", theta[test_score.users], beta[test_score.items])
    lam = np.clip(lam, 1e-12, None)
    x = test_score.counts.astype(float)
    ll = x * np.log(lam) - lam - gammaln(x + 1.0)
    return float(ll.mean())


def _stream(cfg, level, rep) -> int:
    idx = cfg.grid.index(level)
    return idx * 10_000 + rep


# ---------------------------------------------------------------------------
# Driver


def run_study(cfg: StudyConfig) -> StudyResult:
    rows = []
    for level in cfg.grid:
        for rep in range(cfg.n_reps):
            if cfg.study in ("poisson-outliers", "missing-group", "linreg-misspec"):
                rows.extend(_cell_glm(cfg, cfg.study, level, rep))
            elif cfg.study == "gmm-skew":
                rows.extend(_cell_gmm(cfg, level, rep))
            else:
                rows.extend(_cell_pf(cfg, level, rep))

    csv_text = _rows_to_csv(rows)
    cfg_json = json.dumps(asdict(cfg), sort_keys=True, default=str)
    digest = _digest(json.loads(cfg_json), csv_text)
    provenance = {"config": json.loads(cfg_json), "hash": digest}

    stamp = time.strftime("%Y%m%dT%H%M%S") + f"-{digest[:8]}"
    out_path = os.path.join(cfg.out_dir, cfg.study, stamp)
    os.makedirs(os.path.join(out_path, "tables"), exist_ok=True)
    _atomic_write(os.path.join(out_path, "config.json"), cfg_json + "\n")
    _atomic_write(os.path.join(out_path, "rows.csv"), csv_text)
    return StudyResult(rows=rows, provenance=provenance, out_path=out_path)


def _digest(config: dict, csv_text: str) -> str:
    # out_dir is a matter of where the run landed, not what was computed;
    # keep it out of the hash so identical runs hash identically
    hashed = {k: v for k, v in config.items() if k != "out_dir"}
    payload = json.dumps(hashed, sort_keys=True, default=str) + csv_text
    return hashlib.sha256(payload.encode()).hexdigest()


def _rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=ROW_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k, "")) for k in ROW_FIELDS})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return v


def _atomic_write(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def load_result(out_path: str) -> StudyResult:
    """Rebuild a StudyResult from a run directory's config.json/rows.csv,
    coercing numeric fields back from their CSV form."""

    with open(os.path.join(out_path, "config.json")) as fh:
        config = json.load(fh)
    rows = []
    with open(os.path.join(out_path, "rows.csv")) as fh:
        for raw in csv.DictReader(fh):
            row = dict(raw)
            row["rep"] = int(row["rep"])
            if config["study"] not in ("linreg-misspec", "gmm-skew"):
                row["level"] = float(row["level"])
            for key in ROW_FIELDS[6:]:
                if row.get(key, "") != "":
                    row[key] = float(row[key])
            rows.append(row)
    csv_text = _rows_to_csv(rows)
    digest = _digest(config, csv_text)
    return StudyResult(
        rows=rows, provenance={"config": config, "hash": digest}, out_path=out_path
    )


# ---------------------------------------------------------------------------
# Tables


def emit_table(result: StudyResult, table: str) -> str:
    if table not in TABLES:
        raise ConfigError(f"unknown table {table!r}")
    ok = [r for r in result.rows if r["status"] == "ok"]
    skipped = len(result.rows) - len(ok)
    out_dir = os.path.join(result.out_path or ".", "tables")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{table}.csv")

    if table in ("fig3b", "fig5"):
        # per-replication posterior means and credible bounds, each averaged
        # across replications
        lines = ["F,model,mean,ci_low,ci_high"]
        for level, model, sub in _groups(ok, result):
            lines.append(
                f"{level},{model},{_avg(sub,'mean')},{_avg(sub,'ci_low')},{_avg(sub,'ci_high')}"
            )
    elif table == "table1":
        lines = ["variant,model,mean_abs_dev,std_abs_dev"]
        for level, model, sub in _groups(ok, result):
            devs = _col(sub, "abs_dev_beta1")
            lines.append(f"{level},{model},{devs.mean():.10g},{devs.std():.10g}")
    elif table == "table2":
        lines = ["study,condition,model,mean_log_pred,total_log_pred"]
        for level, model, sub in _groups(ok, result, need="pred_clean_mean"):
            study = sub[0]["study"]
            for cond, pre in (("clean", "pred_clean"), ("corrupted", "pred_corrupt")):
                lines.append(
                    f"{study},{cond},{model},{_avg(sub, pre+'_mean')},{_avg(sub, pre+'_total')}"
                )
    elif table == "table3":
        lines = ["R,model,heldout_ll_per_entry"]
        for level, model, sub in _groups(ok, result, need="heldout_ll_per_entry"):
            lines.append(f"{level},{model},{_avg(sub,'heldout_ll_per_entry')}")
    else:  # weights
        lines = ["level,median_weight_corrupted,median_weight_clean,frac_bimodal"]
        for level in result.provenance["config"]["grid"]:
            sub = [
                r
                for r in ok
                if r["level"] == level and r["model"] == "rpm" and r["bimodal"] != ""
            ]
            if not sub:
                raise MissingRows(f"no weight rows for level {level!r}")
            mc = [
                float(r["weight_median_corrupted"])
                for r in sub
                if r["weight_median_corrupted"] != ""
            ]
            mcl = [
                float(r["weight_median_clean"])
                for r in sub
                if r["weight_median_clean"] != ""
            ]
            fb = np.mean([float(r["bimodal"]) for r in sub])
            lines.append(
                f"{level},{np.mean(mc) if mc else ''},{np.mean(mcl) if mcl else ''},{fb:.10g}"
            )
    text = "\n".join(lines) + f"\n# skipped_error_rows,{skipped}\n"
    _atomic_write(path, text)
    return path


def _groups(ok_rows, result, need=None):
    if not ok_rows:
        raise MissingRows("no usable rows to tabulate")
    grid = result.provenance["config"]["grid"]
    models = sorted({r["model"] for r in ok_rows})
    for level in grid:
        for model in models:
            sub = [r for r in ok_rows if r["level"] == level and r["model"] == model]
            if need is not None:
                sub = [r for r in sub if r.get(need, "") != ""]
            if not sub:
                raise MissingRows(f"no rows for level={level!r} model={model!r}")
            yield level, model, sub


def _col(rows, key):
    return np.array([float(r[key]) for r in rows])


def _avg(rows, key):
    return f"{_col(rows, key).mean():.10g}"
