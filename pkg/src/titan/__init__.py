"""Inertial block majorization-minimization for nonsmooth nonconvex problems."""
from ._backend import BACKEND
from .blocks import (BlockVector, FunctionalProblem, ObservationMask, Problem, block_axpy,
                     objective_value)
from .errors import (ConfigError, DataError, InnerSolverError, NumericalError, ShapeError,
                     TitanError)
from .extrapolation import (ExtrapolationConfig, MuSchedule, StepConstants, beta_bound,
                            bregman_linesearch_tau, build_inertia, mu_next, step_constants)
from .numerics import (PowerIterOptions, exponential_penalty, grad_check,
                       hard_threshold_columns, prox_exponential, soft_threshold_weighted,
                       spectral_norm_gram)
from .solver import (RunLog, Schedule, SolverOptions, nsdp_check, telescoping_check,
                     titan_block_step, titan_run)
from .surrogates import (Bregman, Composite, LipschitzGradient, Proximal, Quadratic,
                         QuadraticKernel, QuarticKernel, SquaredNormKernel,
                         check_majorization, composite_linearization, surrogate_modulus,
                         surrogate_value)

__version__ = "0.1.0"
