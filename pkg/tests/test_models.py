import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from reweight.core import Dataset, WeightVector, finite_diff_gradient, make_rng
from reweight.errors import DomainError, ShapeError, SupportError
from reweight import models as md
from reweight import weight_priors as wp

REL_TOL = 1e-4  # relative gradient agreement required of every family


def _rel_err(analytic, numeric):
    scale = max(1.0, float(np.max(np.abs(numeric))))
    return float(np.max(np.abs(analytic - numeric))) / scale


def _check_block_grad(f, params, name, grad, rng, simplex=False, h=1e-6):
    """Full-coordinate block gradients vs central differences; simplex
    blocks are probed along zero-sum directions to stay on the constraint."""

    x0 = params[name].ravel().copy()
    g = np.asarray(grad).ravel()
    shape = params[name].shape
    if not simplex:
        numeric = finite_diff_gradient(
            lambda flat: f(params.replace(name, flat.reshape(shape))), x0
        )
        assert _rel_err(g, numeric) < REL_TOL, name
        return
    for _ in range(4):
        d = rng.normal(size=x0.size)
        d -= d.mean()
        hi = f(params.replace(name, (x0 + h * d).reshape(shape)))
        lo = f(params.replace(name, (x0 - h * d).reshape(shape)))
        numeric = (hi - lo) / (2 * h)
        scale = max(1.0, abs(numeric))
        assert abs(float(g @ d) - numeric) / scale < REL_TOL, name


def _small_pf(rng):
    theta = rng.gamma(2.0, 0.5, size=(6, 2))
    beta = rng.gamma(2.0, 0.5, size=(5, 2))
    counts = rng.poisson(theta @ beta.T)
    users, items = np.nonzero(counts + 1)  # keep the matrix fully observed
    return md.PFDataset(6, 5, users, items, counts[users, items])


@pytest.fixture
def rng():
    return make_rng(21, 0)


@pytest.fixture
def gmm_data(rng):
    pts = np.vstack(
        [rng.normal(0.0, 1.0, (20, 2)), rng.normal(5.0, 1.0, (15, 2))]
    )
    return Dataset(np.zeros(35), pts)


class TestPFDataset:
    def test_validation(self, rng):
        data = _small_pf(rng)
        assert data.n_entries == data.users.size
        with pytest.raises(ShapeError):
            md.PFDataset(2, 2, [0, 1], [0], [1, 1])
        with pytest.raises(ShapeError):
            md.PFDataset(2, 2, [0, 5], [0, 1], [1, 1])
        with pytest.raises(ShapeError):
            md.PFDataset(2, 2, [0, 0], [1, 1], [1, 1])  # duplicate pair
        with pytest.raises(SupportError):
            md.PFDataset(2, 2, [0, 1], [0, 1], [1, -1])


class TestLoglikOracles:
    """Per-observation terms checked against scipy.stats."""

    def test_poisson(self, rng):
        data = Dataset(rng.poisson(4.0, 30).astype(float))
        params = md.init_params(md.PoissonRate(), data).replace(
            "rate", np.asarray(3.2)
        )
        got = md.loglik_terms(md.PoissonRate(), params, data)
        expected = stats.poisson(3.2).logpmf(data.responses.astype(int))
        assert np.allclose(got, expected, atol=1e-10)

    def test_logistic(self, rng):
        x = rng.normal(size=(25, 2))
        y = (rng.uniform(size=25) < 0.5).astype(float)
        data = Dataset(y, x)
        spec = md.LogisticRegression(with_intercept=True)
        coef = np.array([0.3, -1.2, 0.7])
        params = md.init_params(spec, data).replace("coef", coef)
        got = md.loglik_terms(spec, params, data)
        p = 1.0 / (1.0 + np.exp(-(coef[0] + x @ coef[1:])))
        expected = stats.bernoulli(p).logpmf(y.astype(int))
        assert np.allclose(got, expected, atol=1e-10)

    def test_linear(self, rng):
        x = rng.normal(size=20)
        y = rng.normal(size=20)
        data = Dataset(y, x[:, None])
        spec = md.LinearRegression()
        params = (
            md.init_params(spec, data)
            .replace("coef", np.array([0.5, -0.3]))
            .replace("noise_var", np.asarray(2.0))
        )
        got = md.loglik_terms(spec, params, data)
        mu = 0.5 - 0.3 * x
        expected = stats.norm(mu, np.sqrt(2.0)).logpdf(y)
        assert np.allclose(got, expected, atol=1e-10)

    def test_gmm(self, rng, gmm_data):
        spec = md.FiniteGMM(k=3, dim=2)
        mix = np.array([0.5, 0.3, 0.2])
        means = rng.normal(size=(3, 2))
        scales = rng.uniform(0.5, 2.0, (3, 2))
        params = (
            md.init_params(spec, gmm_data)
            .replace("mix", mix)
            .replace("means", means)
            .replace("scales", scales)
        )
        got = md.loglik_terms(spec, params, gmm_data)
        pts = gmm_data.covariates
        comp = np.stack(
            [
                np.log(mix[k])
                + stats.norm(means[k], scales[k]).logpdf(pts).sum(axis=1)
                for k in range(3)
            ],
            axis=1,
        )
        assert np.allclose(got, logsumexp(comp, axis=1), atol=1e-10)

    def test_pf_user_terms(self, rng):
        data = _small_pf(rng)
        spec = md.PoissonFactorization(k=2)
        params = md.init_params(spec, data, rng=rng)
        got = md.loglik_terms(spec, params, data)
        # oracle: densify and sum full-row Poisson log pmfs per user
        lam = params["user_factors"] @ params["item_factors"].T
        x = np.zeros_like(lam)
        x[data.users, data.items] = data.counts
        expected = stats.poisson(lam).logpmf(x.astype(int)).sum(axis=1)
        assert np.allclose(got, expected, atol=1e-8)

    def test_domain_errors(self):
        data = Dataset(np.array([1.0, 2.0]))
        bad = md.init_params(md.PoissonRate(), data)
        with pytest.raises(ShapeError):
            md.loglik_terms(md.LogisticRegression(), bad, data)


class TestLoglikGradients:
    """Analytic weighted-score gradients vs central differences, block by
    block in constrained space (part of the gradient property suite)."""

    def _check(self, spec, params, data, m):
        grads = md.loglik_grads(spec, params, data, m)
        rng = make_rng(99, 0)
        for name, s in zip(params.block_names(), params.specs):
            _check_block_grad(
                lambda p: float(np.dot(m, md.loglik_terms(spec, p, data))),
                params,
                name,
                grads[name],
                rng,
                simplex=s.constraint == "simplex",
            )

    def test_poisson(self, rng):
        data = Dataset(rng.poisson(4.0, 20).astype(float))
        params = md.init_params(md.PoissonRate(), data).replace(
            "rate", np.asarray(3.0)
        )
        self._check(md.PoissonRate(), params, data, rng.uniform(0.2, 1.0, 20))

    def test_logistic(self, rng):
        x = rng.normal(size=(15, 2))
        y = (rng.uniform(size=15) < 0.5).astype(float)
        data = Dataset(y, x)
        spec = md.LogisticRegression(with_intercept=True)
        params = md.init_params(spec, data).replace(
            "coef", np.array([0.2, -0.8, 0.5])
        )
        self._check(spec, params, data, rng.uniform(0.2, 1.0, 15))

    def test_linear(self, rng):
        x = rng.normal(size=15)
        data = Dataset(rng.normal(size=15), x[:, None])
        spec = md.LinearRegression()
        params = (
            md.init_params(spec, data)
            .replace("coef", np.array([0.4, 1.1]))
            .replace("noise_var", np.asarray(1.7))
        )
        self._check(spec, params, data, rng.uniform(0.2, 1.0, 15))

    def test_gmm(self, rng, gmm_data):
        spec = md.FiniteGMM(k=3, dim=2)
        mix = np.array([0.5, 0.3, 0.2])
        params = (
            md.init_params(spec, gmm_data)
            .replace("mix", mix)
            .replace("means", rng.normal(size=(3, 2)))
            .replace("scales", rng.uniform(0.8, 2.0, (3, 2)))
        )
        self._check(spec, params, gmm_data, rng.uniform(0.2, 1.0, 35))

    def test_pf(self, rng):
        data = _small_pf(rng)
        spec = md.PoissonFactorization(k=2)
        params = md.init_params(spec, data, rng=rng)
        self._check(spec, params, data, rng.uniform(0.2, 1.0, data.n_users))


class TestPriors:
    def test_log_prior_oracles(self, rng, gmm_data):
        # Poisson rate: Gamma prior
        data = Dataset(rng.poisson(4.0, 10).astype(float))
        p = md.init_params(md.PoissonRate(), data).replace("rate", np.asarray(2.5))
        expected = stats.gamma(2.0, scale=1 / 0.5).logpdf(2.5)
        assert np.isclose(md.log_prior(md.PoissonRate(), p), expected)
        # GMM: Normal means, lognormal scales, Dirichlet mixing
        spec = md.FiniteGMM(k=3, dim=2)
        mix = np.array([0.5, 0.3, 0.2])
        means = rng.normal(size=(3, 2))
        scales = rng.uniform(0.5, 2.0, (3, 2))
        params = (
            md.init_params(spec, gmm_data)
            .replace("mix", mix)
            .replace("means", means)
            .replace("scales", scales)
        )
        expected = (
            stats.norm(0, 10.0).logpdf(means).sum()
            + stats.lognorm(10.0).logpdf(scales).sum()
            + stats.dirichlet(np.ones(3)).logpdf(mix)
        )
        assert np.isclose(md.log_prior(spec, params), expected, atol=1e-8)

    def test_grad_log_prior_matches_finite_differences(self, rng, gmm_data):
        cases = []
        data = Dataset(rng.poisson(4.0, 10).astype(float))
        cases.append(
            (
                md.PoissonRate(),
                md.init_params(md.PoissonRate(), data).replace(
                    "rate", np.asarray(2.5)
                ),
            )
        )
        spec = md.FiniteGMM(k=3, dim=2)
        cases.append(
            (
                spec,
                md.init_params(spec, gmm_data)
                .replace("mix", np.array([0.5, 0.3, 0.2]))
                .replace("means", rng.normal(size=(3, 2)))
                .replace("scales", rng.uniform(0.8, 2.0, (3, 2))),
            )
        )
        lin = md.LinearRegression()
        lin_data = Dataset(rng.normal(size=8), rng.normal(size=(8, 1)))
        cases.append(
            (
                lin,
                md.init_params(lin, lin_data)
                .replace("coef", np.array([0.3, -0.4]))
                .replace("noise_var", np.asarray(1.3)),
            )
        )
        probe = make_rng(98, 0)
        for spec_i, params in cases:
            grads = md.grad_log_prior(spec_i, params)
            for name, s in zip(params.block_names(), params.specs):
                _check_block_grad(
                    lambda p: md.log_prior(spec_i, p),
                    params,
                    name,
                    grads[name],
                    probe,
                    simplex=s.constraint == "simplex",
                )


class TestReweightedJoint:
    def test_composition(self, rng):
        data = Dataset(rng.poisson(4.0, 12).astype(float))
        spec = md.PoissonRate()
        prior = wp.BetaBank(0.5, 0.5)
        params = md.init_params(spec, data).replace("rate", np.asarray(3.5))
        w = WeightVector(rng.uniform(0.1, 0.9, 12))
        got = md.log_joint_rpm(spec, prior, params, w, data)
        expected = (
            md.log_prior(spec, params)
            + wp.log_density(prior, w)
            + float(w.weights @ md.loglik_terms(spec, params, data))
        )
        assert np.isclose(got, expected, atol=1e-12)

    def test_shape_error(self, rng):
        data = Dataset(rng.poisson(4.0, 12).astype(float))
        spec = md.PoissonRate()
        params = md.init_params(spec, data)
        with pytest.raises(ShapeError):
            md.log_joint_rpm(
                spec, wp.BetaBank(1, 1), params, WeightVector(np.ones(5) / 2), data
            )

    def test_weight_blocks(self):
        assert md.weight_block_specs(wp.BetaBank(1, 1), 7)[0].constraint == (
            "unit-interval"
        )
        assert md.weight_block_specs(wp.GammaBank(2, 1), 7)[0].constraint == (
            "positive"
        )
        assert md.weight_block_specs(wp.ScaledDirichlet(1.0), 7)[0].constraint == (
            "simplex"
        )
        v = np.full(4, 0.25)
        assert np.allclose(
            md.weights_from_block(wp.ScaledDirichlet(1.0), v).weights, 1.0
        )


class TestUnconstrainedDensities:
    """build_model_density / build_rpm_density gradients vs central
    differences in the full unconstrained space (gradient property suite)."""

    def _families(self, rng, gmm_data):
        poisson = Dataset(rng.poisson(4.0, 15).astype(float))
        logistic = Dataset(
            (rng.uniform(size=12) < 0.5).astype(float), rng.normal(size=(12, 2))
        )
        linear = Dataset(rng.normal(size=12), rng.normal(size=(12, 1)))
        return [
            (md.PoissonRate(), poisson),
            (md.LogisticRegression(with_intercept=True), logistic),
            (md.LinearRegression(), linear),
            (md.FiniteGMM(k=3, dim=2), gmm_data),
            (md.PoissonFactorization(k=2), _small_pf(rng)),
        ]

    def test_model_density_gradients(self, rng, gmm_data):
        for spec, data in self._families(rng, gmm_data):
            f, pt = md.build_model_density(spec, data)
            z = pt.to_unconstrained(md.init_params(spec, data)) + 0.05
            numeric = finite_diff_gradient(f.value, z)
            assert _rel_err(f.grad(z), numeric) < REL_TOL, type(spec).__name__

    @pytest.mark.parametrize(
        "prior",
        [wp.BetaBank(0.5, 0.5), wp.GammaBank(2.0, 1.0), wp.ScaledDirichlet(1.5)],
    )
    def test_rpm_density_gradients(self, prior, rng):
        data = Dataset(rng.poisson(4.0, 10).astype(float))
        spec = md.PoissonRate()
        full, pt, wt = md.build_rpm_density(spec, prior, data)
        z = rng.normal(0.0, 0.3, full.dimension)
        numeric = finite_diff_gradient(full.value, z)
        assert _rel_err(full.grad(z), numeric) < REL_TOL

    def test_rpm_density_with_multiplicities(self, rng):
        data = Dataset(rng.poisson(4.0, 8).astype(float))
        mult = rng.uniform(0.5, 1.5, 8)
        full, pt, wt = md.build_rpm_density(
            md.PoissonRate(), wp.GammaBank(2.0, 1.0), data, obs_weights=mult
        )
        z = rng.normal(0.0, 0.3, full.dimension)
        numeric = finite_diff_gradient(full.value, z)
        assert _rel_err(full.grad(z), numeric) < REL_TOL

    def test_grad_log_joint_unconstrained_split(self, rng):
        data = Dataset(rng.poisson(4.0, 6).astype(float))
        spec = md.PoissonRate()
        prior = wp.GammaBank(2.0, 1.0)
        full, pt, wt = md.build_rpm_density(spec, prior, data)
        zp = np.array([0.5])
        zw = rng.normal(0.0, 0.2, 6)
        value, grad = md.grad_log_joint_unconstrained(spec, prior, zp, zw, data)
        v2, g2 = full.eval(np.concatenate([zp, zw]))
        assert value == v2
        assert np.array_equal(grad, g2)


class TestSpecJson:
    @pytest.mark.parametrize(
        "spec",
        [
            md.PoissonRate(3.0, 0.7),
            md.LogisticRegression(prior_sd=2.0, with_intercept=True),
            md.LinearRegression(design=(0, 2), with_intercept=False),
            md.FiniteGMM(k=10, dim=3, prec_rate=16.0),
            md.PoissonFactorization(k=7),
        ],
    )
    def test_round_trip(self, spec):
        obj = md.spec_to_json(spec)
        assert obj["family"] == type(spec).__name__
        assert md.spec_from_json(obj) == spec
