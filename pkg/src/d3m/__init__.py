"""Deep domain decomposition: overlapping-Schwarz training of local PDE nets."""

from .autodiff import (Dual, NonFiniteValue, Tape, check_gradients,
                       forward_tangent, record_and_backward)
from .boundary import (BoundaryFunction, InterfaceTrace, RankDeficient,
                       fit_trace, shifted_field)
from .config import ConfigError, RunConfig, parse_config
from .estimator import D3MSolver
from .geometry import (OverlapTooLarge, PointOutside, Rect, SubdomainSpec,
                       decompose, distance_to_edge_set, merge_weights)
from .loss import (LossBreakdown, ProblemSpec, energy_diagnostic,
                   loss_gradient, poisson_loss, schrodinger_loss)
from .network import Network, new_network, parameter_count
from .optimizer import Lbfgs, LbfgsState, gd_step, minimize
from .reference import (GridField, WELL_ENERGY, ZeroReference,
                        exact_schrodinger, fd_poisson, fd_schwarz,
                        relative_error)
from .sampler import (NoSuchEdges, SampleBatch, rng_for, sample_boundary,
                      sample_interior, schedule)
from .schwarz import (GlobalSolution, RunResult, TrainSettings, epsilon,
                      evaluate_global, run_d3m, train_subdomain)

__version__ = "0.1.0"
