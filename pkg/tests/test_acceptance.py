"""End-to-end acceptance checks.

Each study is run once at its reference scale through the experiment
harness and shared across the assertions below via module-scoped
fixtures. These runs are deliberately heavier than the unit tests (tens
of replications each); the whole file targets the published robustness
claims: outlier resistance of the reweighted Poisson model, weight
separation between clean and corrupted observations, the closed-form
weight update, bounded-influence behavior, the localized-GLM identity,
minority-group recovery under logistic mismatch, regression error
orderings, predictive orderings on corrupted test data, mixture
cluster-count recovery, and factorization corruption detection.
"""

import time

import numpy as np
import pytest

from reweight.core import Dataset, LogDensityFn, WeightVector, make_rng
from reweight import datagen as dg
from reweight import inference as inf
from reweight import localization as lz
from reweight import models as md
from reweight import robustness as rb
from reweight import studies as st
from reweight import weight_priors as wp


def _rows(result, level, model, field):
    vals = [
        float(r[field])
        for r in result.rows
        if r["status"] == "ok"
        and r["level"] == level
        and r["model"] == model
        and r[field] != ""
    ]
    assert vals, f"no usable rows for level={level} model={model} field={field}"
    return np.array(vals)


def _no_errors(result):
    bad = [r for r in result.rows if r["status"] != "ok"]
    assert not bad, f"{len(bad)} error rows, first: {bad[0]['message']!r}"


# ---------------------------------------------------------------------------
# Shared study runs


@pytest.fixture(scope="module")
def poisson_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("poisson"))
    cfg = st.StudyConfig(
        study="poisson-outliers", grid=[0.0, 0.25], n_reps=50, out_dir=out
    )
    start = time.monotonic()
    result = st.run_study(cfg)
    return result, time.monotonic() - start


@pytest.fixture(scope="module")
def missing_group_run(tmp_path_factory):
    # criterion runs: the five-level interval sweep with the two fast models
    out = str(tmp_path_factory.mktemp("missgrp"))
    cfg = st.StudyConfig(
        study="missing-group",
        grid=[0.0, 0.1, 0.2, 0.3, 0.4],
        n_reps=50,
        models=["original", "rpm"],
        out_dir=out,
    )
    return st.run_study(cfg)


@pytest.fixture(scope="module")
def missing_group_full_run(tmp_path_factory):
    # all three model variants at the two reference mismatch levels, for
    # the predictive ordering and the weight-bimodality flags
    out = str(tmp_path_factory.mktemp("missgrp_full"))
    cfg = st.StudyConfig(
        study="missing-group", grid=[0.0, 0.25], n_reps=10, out_dir=out
    )
    return st.run_study(cfg)


@pytest.fixture(scope="module")
def linreg_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("linreg"))
    cfg = st.StudyConfig(
        study="linreg-misspec",
        n_reps=50,
        models=["original", "rpm"],
        out_dir=out,
    )
    return st.run_study(cfg)


@pytest.fixture(scope="module")
def linreg_full_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("linreg_full"))
    cfg = st.StudyConfig(
        study="linreg-misspec",
        grid=["interaction"],
        n_reps=20,
        out_dir=out,
    )
    return st.run_study(cfg)


# ---------------------------------------------------------------------------
# 1. Poisson outlier recovery


class TestPoissonOutlierStudy:
    def test_runtime_and_no_errors(self, poisson_run):
        result, elapsed = poisson_run
        _no_errors(result)
        assert elapsed < 300.0

    def test_corrupted_level_means(self, poisson_run):
        result, _ = poisson_run
        rpm = _rows(result, 0.25, "rpm", "mean").mean()
        orig = _rows(result, 0.25, "original", "mean").mean()
        assert 4.0 <= rpm <= 6.0
        assert 14.0 <= orig <= 19.0

    def test_clean_level_all_models_agree(self, poisson_run):
        result, _ = poisson_run
        for model in ("original", "localized", "rpm"):
            mean = _rows(result, 0.0, model, "mean").mean()
            assert 4.3 <= mean <= 5.8, f"{model}: {mean}"


# ---------------------------------------------------------------------------
# 2. Weight separation between corrupted and clean observations


class TestWeightSeparation:
    def test_dirichlet_weights_split(self):
        labeled = dg.gen_poisson_outliers(100, 0.25, make_rng(0, 0))
        post = inf.fit_rpm_mcmc(
            md.PoissonRate(),
            wp.ScaledDirichlet(1.0),
            labeled.data,
            {
                "method": "gradient-leapfrog",
                "n_warmup": 1500,
                "n_draws": 1500,
                "seed": 0,
                "stream": 0,
                "n_chains": 2,
            },
        )
        w = np.atleast_1d(inf.posterior_summary(post, "w")["mean"])
        mask = labeled.corrupted_mask
        assert np.all(w[mask] < 0.1)
        assert np.mean(w[~mask] > 0.2) >= 0.9


# ---------------------------------------------------------------------------
# 3. Closed-form weight update and its agreement with the joint optimum


class TestClosedFormWeightStep:
    @pytest.fixture(scope="class")
    def setup(self):
        data = dg.gen_poisson_outliers(100, 0.25, make_rng(0, 0)).data
        prior = wp.GammaBank(2.0, 1.0)
        spec = md.PoissonRate()
        res = inf.coordinate_map(
            spec, prior, data, {"value_tol": 1e-12, "max_sweeps": 200}
        )
        _, pt, wt = md.build_rpm_density(spec, prior, data)
        params, _ = pt.from_unconstrained(res.point[: pt.dimension])
        wparams, _ = wt.from_unconstrained(res.point[pt.dimension :])
        return spec, prior, data, pt, params, np.asarray(wparams["w"])

    def test_w_step_is_the_closed_form(self, setup):
        spec, prior, data, _, params, w = setup
        terms = md.loglik_terms(spec, params, data)
        # the per-weight update rule is the closed-form expression, exactly
        for t in terms:
            assert wp.induced_weight_function(prior, float(t)) == (
                wp.map_weight_gamma(prior.a, prior.b, float(t))
            )
        # and the converged weights sit on it at the converged parameters
        expected = np.array(
            [wp.map_weight_gamma(prior.a, prior.b, float(t)) for t in terms]
        )
        assert np.max(np.abs(w - expected)) < 1e-6

    def test_joint_optimizer_recovers_the_same_weights(self, setup):
        spec, prior, data, pt, _, w_coord = setup
        n = data.n_obs

        # joint objective over (parameters, weights) with weights in a log
        # chart; its weight-block stationary points are the closed-form
        # update, so the joint optimum must reproduce the coordinate path
        def eval_joint(z):
            z_p = z[: pt.dimension]
            w = np.exp(z[pt.dimension :])
            fixed_w, _ = md.build_model_density(spec, data, obs_weights=w)
            val_p, grad_p = fixed_w.eval(z_p)
            wv = WeightVector(w)
            val = val_p + wp.log_density(prior, wv)
            params, _ = pt.from_unconstrained(z_p)
            terms = md.loglik_terms(spec, params, data)
            grad_u = w * (terms + wp.grad_log_density(prior, wv))
            return val, np.concatenate([grad_p, grad_u])

        joint = LogDensityFn(dimension=pt.dimension + n, eval=eval_joint)
        init = np.concatenate(
            [pt.to_unconstrained(md.init_params(spec, data)), np.zeros(n)]
        )
        res = inf.map_estimate(joint, init, {"max_iter": 2000})
        assert res.converged
        w_joint = np.exp(res.point[pt.dimension :])
        assert np.max(np.abs(w_joint - w_coord)) < 1e-4


# ---------------------------------------------------------------------------
# 4. Bounded influence of the reweighted estimator


class TestInfluenceDecay:
    def test_reweighted_passes_unweighted_fails(self):
        rng = make_rng(0, 0)
        base = Dataset(rng.poisson(5.0, 100).astype(float))
        grid = [16.0, 40.0, 1e4, 1e8]

        out = rb.influence_decay_check(
            md.PoissonRate(), wp.GammaBank(2.0, 1.0), base, grid
        )
        assert out["pass"]
        curve = out["curve"]
        # influence falls monotonically as the contamination point moves
        # into the tail, and a deep-tail outlier (log-likelihood far below
        # -50) exerts less than a tenth of the influence of a mild one
        # whose log-likelihood is near -10
        mild = np.argmin(np.abs(curve.loglik_at_z - (-10.0)))
        assert -13.0 < curve.loglik_at_z[mild] < -7.0
        abs_if = np.abs(curve.if_values)
        assert np.all(np.diff(abs_if) <= 0)
        deepest = np.argmin(curve.loglik_at_z)
        assert curve.loglik_at_z[deepest] < -50.0
        assert abs_if[deepest] < 0.1 * abs_if[mild]

        out_un = rb.influence_decay_check(md.PoissonRate(), None, base, grid)
        assert not out_un["pass"]


# ---------------------------------------------------------------------------
# 5. Localized-GLM / weighted-least-squares identity


class TestGlmEquivalence:
    def test_fifty_random_configs(self):
        rng = make_rng(0, 0)
        worst = 0.0
        for _ in range(50):
            x = rng.normal(rng.uniform(-5, 5), rng.uniform(0.5, 3), 40)
            lam_sq = float(rng.uniform(0.1, 10.0))
            sig_sq = float(rng.uniform(0.1, 10.0))
            intercept, slope = rng.uniform(-3, 3, 2)
            noise_sd = np.sqrt((x - x.mean()) ** 2 * lam_sq + sig_sq)
            y = intercept + slope * x + noise_sd * rng.standard_normal(x.size)
            res = lz.verify_glm_equivalence(Dataset(y, x[:, None]), lam_sq, sig_sq)
            worst = max(worst, res["max_abs_diff"])
        assert worst < 1e-8


# ---------------------------------------------------------------------------
# 6. Minority-group recovery under logistic mismatch


class TestMissingGroupStudy:
    def test_no_errors(self, missing_group_run):
        _no_errors(missing_group_run)

    def test_rpm_interval_covers_truth_everywhere(self, missing_group_run):
        for level in (0.0, 0.1, 0.2, 0.3, 0.4):
            lo = _rows(missing_group_run, level, "rpm", "ci_low").mean()
            hi = _rows(missing_group_run, level, "rpm", "ci_high").mean()
            assert lo < 0.5 < hi, f"F={level}: [{lo}, {hi}]"

    def test_original_interval_excludes_truth_at_high_mismatch(
        self, missing_group_run
    ):
        for level in (0.2, 0.3, 0.4):
            lo = _rows(missing_group_run, level, "original", "ci_low").mean()
            hi = _rows(missing_group_run, level, "original", "ci_high").mean()
            assert hi < 0.5 or lo > 0.5, f"F={level}: [{lo}, {hi}]"

    def test_weight_bimodality_flags(self, missing_group_full_run):
        flag_clean = _rows(missing_group_full_run, 0.0, "rpm", "bimodal")[0]
        flag_corrupt = _rows(missing_group_full_run, 0.25, "rpm", "bimodal")[0]
        assert flag_clean == 0
        assert flag_corrupt == 1


# ---------------------------------------------------------------------------
# 7. Regression error orderings across misspecification variants


class TestLinregOrderings:
    def test_no_errors(self, linreg_run):
        _no_errors(linreg_run)

    @pytest.mark.parametrize("variant", ["interaction", "quadratic"])
    def test_rpm_beats_original(self, linreg_run, variant):
        rpm = _rows(linreg_run, variant, "rpm", "abs_dev_beta1").mean()
        orig = _rows(linreg_run, variant, "original", "abs_dev_beta1").mean()
        assert rpm < orig

    def test_missing_covariate_is_a_tie(self, linreg_run):
        rpm = _rows(linreg_run, "missing-covariate", "rpm", "abs_dev_beta1").mean()
        orig = _rows(
            linreg_run, "missing-covariate", "original", "abs_dev_beta1"
        ).mean()
        assert abs(rpm - orig) < 0.2


# ---------------------------------------------------------------------------
# 8. Predictive ordering on corrupted test data


class TestPredictiveOrderings:
    def _assert_rpm_wins(self, result, level):
        rpm = _rows(result, level, "rpm", "pred_corrupt_mean").mean()
        orig = _rows(result, level, "original", "pred_corrupt_mean").mean()
        loc = _rows(result, level, "localized", "pred_corrupt_mean").mean()
        assert rpm > orig
        assert rpm > loc

    def test_poisson_outliers(self, poisson_run):
        self._assert_rpm_wins(poisson_run[0], 0.25)

    def test_missing_group(self, missing_group_full_run):
        self._assert_rpm_wins(missing_group_full_run, 0.25)

    def test_linear_regression(self, linreg_full_run):
        _no_errors(linreg_full_run)
        self._assert_rpm_wins(linreg_full_run, "interaction")


# ---------------------------------------------------------------------------
# 9. Mixture cluster-count recovery under skewed components


class TestMixtureClusterCounts:
    def test_skew_study(self, tmp_path_factory):
        out = str(tmp_path_factory.mktemp("gmm"))
        cfg = st.StudyConfig(study="gmm-skew", n_reps=1, out_dir=out)
        start = time.monotonic()
        result = st.run_study(cfg)
        elapsed = time.monotonic() - start
        _no_errors(result)
        assert elapsed < 600.0
        rpm = _rows(result, "skew", "rpm", "eff_clusters")[0]
        orig = _rows(result, "skew", "original", "eff_clusters")[0]
        assert rpm == 3
        assert orig >= 4


# ---------------------------------------------------------------------------
# 10. Factorization corruption detection


class TestFactorizationCorruption:
    @pytest.fixture(scope="class")
    def pf_run(self, tmp_path_factory):
        out = str(tmp_path_factory.mktemp("pf"))
        cfg = st.StudyConfig(study="movielens-pf", n_reps=20, out_dir=out)
        return st.run_study(cfg)

    def test_no_errors(self, pf_run):
        _no_errors(pf_run)

    def test_corrupted_below_clean_and_monotone(self, pf_run):
        corrupted = []
        for level in (0.1, 0.5, 1.0):
            mc = _rows(pf_run, level, "rpm", "weight_median_corrupted").mean()
            mcl = _rows(pf_run, level, "rpm", "weight_median_clean").mean()
            assert mc < mcl, f"R={level}: corrupted {mc} vs clean {mcl}"
            corrupted.append(mc)
        assert corrupted[0] > corrupted[1] > corrupted[2]

    def test_reweighted_heldout_at_least_original(self, pf_run):
        for level in (0.1, 0.5, 1.0):
            rpm = _rows(pf_run, level, "rpm", "heldout_ll_per_entry").mean()
            orig = _rows(pf_run, level, "original", "heldout_ll_per_entry").mean()
            assert rpm >= orig, f"R={level}: {rpm} < {orig}"


# ---------------------------------------------------------------------------
# 11. Property suite pointers: gradients, normalizers, determinism
#
# The gradient-vs-finite-difference checks live with their modules
# (tests/test_models.py, tests/test_weight_priors.py,
# tests/test_localization.py, all at 1e-4 relative), the normalizer
# integrates-to-one checks in tests/test_prediction.py (1e-6), and CSV
# byte-determinism in tests/test_studies.py. The spot checks below keep
# this file self-contained as a gate.


class TestPropertySpotChecks:
    def test_density_gradient_matches_finite_differences(self):
        rng = make_rng(9, 0)
        data = Dataset(rng.poisson(5.0, 30).astype(float))
        f, pt = md.build_rpm_density(
            md.PoissonRate(), wp.BetaBank(0.1, 0.01), data
        )[0:2]
        z = rng.normal(0.1, 0.3, f.dimension)
        from reweight.core import finite_diff_gradient

        numeric = finite_diff_gradient(f.value, z)
        analytic = f.grad(z)
        scale = max(1.0, float(np.max(np.abs(numeric))))
        assert np.max(np.abs(analytic - numeric)) / scale < 1e-4

    def test_power_normalizer_integrates_to_one(self):
        from reweight import prediction as pr
        from scipy.stats import poisson

        params = md.init_params(
            md.PoissonRate(), Dataset(np.array([1.0]))
        ).replace("rate", np.asarray(5.5))
        w = 0.7
        c = pr.power_likelihood_normalizer(md.PoissonRate(), params, w)
        total = np.exp(w * poisson(5.5).logpmf(np.arange(0, 600))).sum()
        assert abs(total / c - 1.0) < 1e-6

    def test_study_reruns_hash_identically(self, tmp_path):
        def run(sub):
            cfg = st.StudyConfig(
                study="poisson-outliers",
                grid=[0.25],
                n_obs=30,
                n_reps=1,
                models=["original", "rpm"],
                out_dir=str(tmp_path / sub),
            )
            return st.run_study(cfg)

        a, b = run("a"), run("b")
        assert a.provenance["hash"] == b.provenance["hash"]
