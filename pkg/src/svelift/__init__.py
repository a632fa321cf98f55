"""Simulation of stochastic Volterra equations through their Markovian lift."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AssumptionViolation,
    BalanceFailure,
    CertificationError,
    ConfigError,
    ScheduleSearchError,
    SimulationAbort,
    SveliftError,
)
from .kernel import INF, Kernel, RegularityWeight, check_balance, compute_eps_m, compute_R_m  # noqa: E402
from .lift_grid import LiftGrid, discretize, kernel_error  # noqa: E402
from .coefficients import CoefficientPair, ModulusSpec, make_pair, mollify  # noqa: E402
from .see_sim import PathEnsemble, SimulationConfig, simulate  # noqa: E402
from .volterra_sim import simulate_direct  # noqa: E402
from .cnr import CouplingConfig, CouplingParams, build_schedule, simulate_coupled  # noqa: E402
