"""Discrete bridge benchmark toolkit.

Construct benchmark pairs with analytically known bridge couplings, train
four solvers on them, verify the construction against brute-force oracles,
and score solvers with distribution-fidelity metrics.
"""

from .benchmark import (BenchmarkPair, PairSampler, SourceSpec, generate_pair,
                        generate_test_set, load_pair, load_test_set, save_pair,
                        save_test_set)
from .cpfield import (CPScalarField, conditional_log_prob, log_normalizer,
                      log_v, sample_conditional)
from .metrics import MetricsReport, conditional_scores, shape_score, trend_score
from .refproc import (ReferenceProcess, bridge_step_distribution, build_gaussian,
                      build_uniform, matrix_power, sample_bridge,
                      uniform_power_closed_form)
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "BenchmarkPair", "CPScalarField", "MetricsReport", "PairSampler",
    "ReferenceProcess", "RngStream", "SourceSpec", "bridge_step_distribution",
    "build_gaussian", "build_uniform", "conditional_log_prob",
    "conditional_scores", "generate_pair", "generate_test_set", "load_pair",
    "load_test_set", "log_normalizer", "log_v", "matrix_power", "sample_bridge",
    "sample_conditional", "save_pair", "save_test_set", "shape_score",
    "trend_score", "uniform_power_closed_form", "__version__",
]
