"""Robust Bayesian inference via per-observation likelihood reweighting.

The package wraps any factorized-likelihood model with latent observation
weights, infers the weights jointly with the model parameters, and ships
the robustness studies, influence diagnostics, and predictive comparisons
built on top of that machinery.

Typical use:

    from reweight import models, weight_priors, inference, datagen, make_rng

    lab = datagen.gen_poisson_outliers(100, 0.25, make_rng(0))
    spec = models.PoissonRate()
    prior_w = weight_priors.BetaBank(0.1, 0.01)
    post = inference.fit_rpm_mcmc(spec, prior_w, lab.data)
    inference.posterior_summary(post, "rate")
"""

from . import core
from . import datagen
from . import errors
from . import inference
from . import localization
from . import models
from . import prediction
from . import robustness
from . import studies
from . import transforms
from . import weight_priors

from .core import Dataset, WeightVector, make_rng
from .errors import ReweightError
from .inference import (
    Posterior,
    coordinate_map,
    fit_gmm_cavi,
    fit_original_map,
    fit_rpm_exact_grid,
    fit_rpm_map,
    fit_rpm_mcmc,
    map_estimate,
    posterior_summary,
    sample_posterior,
)
from .localization import LocalizedSpec, verify_glm_equivalence
from .models import (
    FiniteGMM,
    LinearRegression,
    LogisticRegression,
    PFDataset,
    PoissonFactorization,
    PoissonRate,
)
from .prediction import (
    predictive_localized,
    predictive_original,
    predictive_rpm,
)
from .robustness import (
    empirical_influence,
    influence_decay_check,
    rank_downweighted,
    weight_bimodality,
)
from .studies import StudyConfig, StudyResult, emit_table, run_study
from .weight_priors import (
    BetaBank,
    GammaBank,
    ScaledDirichlet,
    parse_weight_prior,
)

__version__ = "0.1.0"

__all__ = [
    "core",
    "datagen",
    "errors",
    "inference",
    "localization",
    "models",
    "prediction",
    "robustness",
    "studies",
    "transforms",
    "weight_priors",
    "Dataset",
    "WeightVector",
    "make_rng",
    "ReweightError",
    "Posterior",
    "coordinate_map",
    "fit_gmm_cavi",
    "fit_original_map",
    "fit_rpm_exact_grid",
    "fit_rpm_map",
    "fit_rpm_mcmc",
    "map_estimate",
    "posterior_summary",
    "sample_posterior",
    "LocalizedSpec",
    "verify_glm_equivalence",
    "FiniteGMM",
    "LinearRegression",
    "LogisticRegression",
    "PFDataset",
    "PoissonFactorization",
    "PoissonRate",
    "predictive_localized",
    "predictive_original",
    "predictive_rpm",
    "empirical_influence",
    "influence_decay_check",
    "rank_downweighted",
    "weight_bimodality",
    "StudyConfig",
    "StudyResult",
    "emit_table",
    "run_study",
    "BetaBank",
    "GammaBank",
    "ScaledDirichlet",
    "parse_weight_prior",
    "__version__",
]
