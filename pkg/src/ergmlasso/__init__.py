"""L1-penalized variable ranking and selection for exponential random graph models."""

__version__ = "0.1.0"

from .errors import (CapacityError, CollinearityError, DegeneracyError, DegenerateMLEError,
                     ErgmLassoError, InputError, NonConvergenceError, NumericalError, SpecError,
                     UsageError)
from .estimator import FitResult, Fitter, SgdConfig, fit_lasso, fit_mle
from .network import AttributeTable, Network, load_network, read_attributes, read_edgelist
from .oracle import ExactModel, activation_lambda
from .sampler import ChainPool, SamplerConfig, sample, sample_er
from .selector import (FitReport, InferenceConfig, LambdaGrid, PathResult, compute_path,
                       estimate_loglik, importance_scores, rank, refit_inference,
                       select_threshold)
from .statistics import (Edges, Gwdegree, Gwesp, Gwnsp, ModelSpec, NodeCov, NodeFactor,
                         NodeMatch, change_stats, compute_stats, parse_spec, standardize)

__all__ = [
    "__version__", "CapacityError", "CollinearityError", "DegeneracyError",
    "DegenerateMLEError", "ErgmLassoError", "InputError", "NonConvergenceError",
    "NumericalError", "SpecError", "UsageError", "FitResult", "Fitter", "SgdConfig",
    "fit_lasso", "fit_mle", "AttributeTable", "Network", "load_network", "read_attributes",
    "read_edgelist", "ExactModel", "activation_lambda", "ChainPool", "SamplerConfig",
    "sample", "sample_er", "FitReport", "InferenceConfig", "LambdaGrid", "PathResult",
    "compute_path", "estimate_loglik", "importance_scores", "rank", "refit_inference",
    "select_threshold", "Edges", "Gwdegree", "Gwesp", "Gwnsp", "ModelSpec", "NodeCov",
    "NodeFactor", "NodeMatch", "change_stats", "compute_stats", "parse_spec", "standardize",
]
