"""Asymmetric U-statistics laboratory.

Streaming evaluation of U_n over increasing index tuples, exact Hoeffding
projections, the Gaussian functional limit and its simulators, renewal-style
threshold stopping with overshoot laws, and a seeded Monte-Carlo harness
that verifies the limit theorems at desk scale.
"""

__version__ = "0.1.0"

from .errors import BudgetError, ConfigError, DegenerateError, EnumerationError
from .kernels import (
    Kernel,
    make_antisym_sign_kernel,
    make_antisym_sine_kernel,
    make_block_count_kernel,
    make_const_one_kernel,
    make_identity_kernel,
    make_pattern_kernel,
    make_perm_pattern_kernel,
    parse_kernel,
)
from .limitlaw import (
    LimitLaw,
    StoppedLimitLaw,
    centering_and_scaling,
    limit_covariance,
    limit_variance,
    projection_weight,
    stopped_limit_variance,
)
from .sources import (
    FiniteSource,
    GeometricSource,
    GoldenBlockSource,
    SampleSource,
    Uniform01Source,
    Uniform2PiSource,
    conditioned_block_sequence,
    parse_source,
    splitmix64,
    stream_seed,
    substream,
)
from .ucore import (
    GenericStream,
    ProjectionModel,
    SeparableStream,
    hoeffding_projections,
    u_oracle,
    u_prefix_oracle,
)

__all__ = [
    "__version__",
    "BudgetError",
    "ConfigError",
    "DegenerateError",
    "EnumerationError",
    "Kernel",
    "LimitLaw",
    "StoppedLimitLaw",
    "ProjectionModel",
    "SampleSource",
    "FiniteSource",
    "GeometricSource",
    "GoldenBlockSource",
    "Uniform01Source",
    "Uniform2PiSource",
    "GenericStream",
    "SeparableStream",
    "centering_and_scaling",
    "conditioned_block_sequence",
    "hoeffding_projections",
    "limit_covariance",
    "limit_variance",
    "make_antisym_sign_kernel",
    "make_antisym_sine_kernel",
    "make_block_count_kernel",
    "make_const_one_kernel",
    "make_identity_kernel",
    "make_pattern_kernel",
    "make_perm_pattern_kernel",
    "parse_kernel",
    "parse_source",
    "projection_weight",
    "splitmix64",
    "stopped_limit_variance",
    "stream_seed",
    "substream",
    "u_oracle",
    "u_prefix_oracle",
]
