"""Horizontal diffusions for time-dependent metrics.

Simulation of L(t) = 1/2 Delta^t + Z(t) diffusions on closed-form Riemannian
models, parallel and damped transport along their paths, horizontal families
built by parallel coupling, and exact optimal-transport contraction checks.
"""
from .errors import (ConfigError, CutLocusError, DomainError, HorizontalDiffusionError, InvalidStart,
                     MissingGridPoint, SchemaError, SizeMismatch, StepTooLarge)
from .geometry import (BackwardRicciSphere, ChartManifold, Euclidean, HyperbolicPlane, ManifoldModel,
                       Sphere, TangentVector, build_manifold)
from .sde import NoisePath, TimeGrid, Trajectory, sample_noise, sample_noise_batch, simulate
from .transport import TransportOperator, damped_transport_path, parallel_transport_path
from .coupling import CurveC1, HorizontalFamily, build_family, deformed_derivative, derivative_fd, simulate_coupled
from .ot import CostProfile, EmpiricalMeasure, TransportPlan, contraction_experiment, solve_exact, wasserstein_p

__version__ = "0.1.0"
