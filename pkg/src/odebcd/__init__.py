"""ODE parameter estimation by block coordinate descent on collocation residuals."""

from .algorithms import (ALGORITHMS, CSV_COLUMNS, EpochRow, MinibatchConfig, TrainConfig,
                         TrainRecord, check_alg0_recovery, run_alg0, run_alg1, run_alg2,
                         run_alg3, run_training)
from .collocation import (Collocation, MultiplierState, ResidualConfig, auglag_value_and_grads,
                          collocation_trajectory, grad_theta_F, grad_x_F, loss_F, residual)
from .cucker_smale import CSParams, CuckerSmale, SwarmState, cs_jac_params, cs_jac_state, cs_rhs
from .errors import (ConfigError, DivergenceError, EvaluationError, InstabilityError,
                     NonFiniteGradientError, OdeBcdError, SensitivityInstabilityError,
                     SingularPairError, SolverError, StiffnessError, UndefinedMetricError)
from .metrics import MetricReport, rsse, rsse_on_ode, sse
from .ode_solver import SolverConfig, TimeGrid, Trajectory, dopri5_step, integrate, solve
from .optimizers import SGD, Adam, AdamState, SgdState, adam_step, make_optimizer, sgd_step
from .sensitivity import SensitivityTensor, loss_grad_theta, solve_with_sensitivity
from .vector_field import (ExponentialGrowth, LinearField, LinearObservation, LogParameterized,
                           ObservationMap, VectorFieldSpec, ZeroField, constant_acceleration,
                           fd_check_jacobians, harmonic_oscillator)

__version__ = "0.1.0"
