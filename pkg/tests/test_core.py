import numpy as np
import pytest

from reweight.core import (
    BlockSpec,
    Dataset,
    LogDensityFn,
    ModelParameters,
    WeightVector,
    finite_diff_gradient,
    make_rng,
)
from reweight.errors import NonFiniteValue, ShapeError, SupportError


class TestDataset:
    def test_coerces_to_float_arrays(self):
        d = Dataset([1, 2, 3], [[1.0], [2.0], [3.0]])
        assert d.responses.dtype == float
        assert d.covariates.shape == (3, 1)
        assert d.n_obs == 3

    def test_covariates_optional(self):
        assert Dataset(np.zeros(4)).covariates is None

    def test_rejects_2d_responses(self):
        with pytest.raises(ShapeError):
            Dataset(np.zeros((3, 2)))

    def test_rejects_row_mismatch(self):
        with pytest.raises(ShapeError):
            Dataset(np.zeros(3), np.zeros((4, 1)))

    def test_require_counts(self):
        Dataset(np.array([0.0, 3.0, 1.0])).require_counts()
        with pytest.raises(SupportError):
            Dataset(np.array([0.0, -1.0])).require_counts()
        with pytest.raises(SupportError):
            Dataset(np.array([0.5, 1.0])).require_counts()


class TestWeightVector:
    def test_basic(self):
        w = WeightVector(np.array([0.5, 1.0, 2.0]))
        assert w.n == 3

    def test_ones(self):
        assert np.array_equal(WeightVector.ones(4).weights, np.ones(4))

    def test_rejects_nonpositive(self):
        with pytest.raises(SupportError):
            WeightVector(np.array([1.0, 0.0]))
        with pytest.raises(SupportError):
            WeightVector(np.array([-0.1, 1.0]))

    def test_rejects_matrix(self):
        with pytest.raises(ShapeError):
            WeightVector(np.ones((2, 2)))


class TestBlockSpec:
    def test_size(self):
        assert BlockSpec("a", ()).size == 1
        assert BlockSpec("b", (3,)).size == 3
        assert BlockSpec("c", (2, 4), "positive").size == 8

    def test_rejects_unknown_constraint(self):
        with pytest.raises(ValueError):
            BlockSpec("a", (), "bounded")


class TestModelParameters:
    def make(self):
        specs = [
            BlockSpec("coef", (2,), "unconstrained"),
            BlockSpec("var", (), "positive"),
        ]
        return (
            ModelParameters({"coef": np.array([1.0, -2.0]), "var": 0.5}, specs),
            specs,
        )

    def test_access_and_order(self):
        params, _ = self.make()
        assert "coef" in params
        assert "missing" not in params
        assert params.block_names() == ["coef", "var"]
        assert float(params["var"]) == 0.5

    def test_missing_block(self):
        specs = [BlockSpec("a", ())]
        with pytest.raises(ShapeError):
            ModelParameters({}, specs)

    def test_constraint_enforced(self):
        specs = [BlockSpec("var", (), "positive")]
        with pytest.raises(SupportError):
            ModelParameters({"var": -1.0}, specs)
        simplex = [BlockSpec("p", (3,), "simplex")]
        with pytest.raises(SupportError):
            ModelParameters({"p": np.array([0.5, 0.4, 0.2])}, simplex)
        with pytest.raises(SupportError):
            ModelParameters({"p": np.array([np.nan, 0.5, 0.5])}, simplex)
        unit = [BlockSpec("w", (2,), "unit-interval")]
        with pytest.raises(SupportError):
            ModelParameters({"w": np.array([0.5, 1.0])}, unit)

    def test_replace_returns_new_object(self):
        params, _ = self.make()
        other = params.replace("var", np.asarray(2.0))
        assert float(other["var"]) == 2.0
        assert float(params["var"]) == 0.5


class TestLogDensityFn:
    def test_value_and_grad(self):
        f = LogDensityFn(2, lambda z: (-float(z @ z), -2.0 * z))
        z = np.array([1.0, 2.0])
        assert f.value(z) == -5.0
        assert np.allclose(f.grad(z), [-2.0, -4.0])


class TestMakeRng:
    def test_same_key_same_stream(self):
        a = make_rng(3, 7).standard_normal(10)
        b = make_rng(3, 7).standard_normal(10)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = make_rng(3, 7).standard_normal(10)
        b = make_rng(3, 8).standard_normal(10)
        c = make_rng(4, 7).standard_normal(10)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestFiniteDiffGradient:
    def test_matches_analytic_quadratic(self):
        A = np.array([[2.0, 0.3], [0.3, 1.0]])

        def f(x):
            return 0.5 * float(x @ A @ x)

        x = np.array([0.7, -1.2])
        g = finite_diff_gradient(f, x)
        assert np.allclose(g, A @ x, atol=1e-7)

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff_gradient(lambda x: 0.0, np.zeros(1), h=0.0)

    def test_nonfinite_probe(self):
        with pytest.raises(NonFiniteValue), np.errstate(invalid="ignore"):
            finite_diff_gradient(
                lambda x: float(np.log(x[0])), np.array([1e-8]), h=1e-6
            )
