"""Sparse high-dimensional regression with nuisance parameters.

Spike-and-slab posteriors over ``(support, theta, eta)`` for grouped
Gaussian models ``y_i = X_i theta + xi_eta,i + eps_i``, with exact
enumeration oracles, a reversible-jump sampler, a support-mixture Gaussian
approximation and a simulation harness.
"""
from .errors import (BudgetExceededError, ConfigError, CovarianceNotSPDError, EmptyGroupError,
                     NuisregError, NumericalFailure, ParameterRangeError, QuadratureError,
                     RankError, ShapeError)
from .model import (GroupedDataset, NuisanceState, SparseVector, log_likelihood,
                    log_likelihood_ratio, whiten)
from .families import (FAMILIES, Graphical, HeteroSpline, LinearGaussian, MeasurementError,
                       MissingResponse, MixedEffects, ParamCorrelation, PartialLinear,
                       family_from_dict, simulate)
from .priors import SpikeSlabSpec, default_nuisance_prior, joint_log_prior
from .splines import SplineBasis, basis_eval, spline_design
from .divergences import avg_renyi, gaussian_kl, gaussian_kl_variation
from .diagnostics import diagnose, phi1, phi2
from .posterior import (SupportPosterior, enumerate_posterior_laplace_slab,
                        enumerate_posterior_normal_slab, rjmcmc_sample, support_marginals)
from .bvm import SupportMixture, build_bvm, tv_support_mixture
from .harness import ExperimentConfig, ResultsTable, run_experiment

__version__ = "0.1.0"
