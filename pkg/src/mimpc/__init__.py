"""Mixed-integer model predictive control by partial outer convexification and sum-up rounding."""
from .analysis import BoundsReport, estimate_constants, gap_metrics, max_step_width
from .config import ExperimentConfig, build_problem, load_config
from .convexification import ControlSet, CostVariant, project_simplex, stage_cost
from .dynamics import GridSpec, OdeModel, convexified_map, get_model, make_model, register_model, simulate_oversampled, vanderpol
from .errors import (
    ConfigError,
    ContractError,
    IntegrationOverflowError,
    MpcError,
    SimplexInfeasibleError,
    SolverInfeasibleError,
    StabilizabilityError,
)
from .mpc import ClosedLoopLog, MpcController, run_closed_loop, warm_start_shift
from .nlp import OcpSolution, SolverSettings, solve_ocp
from .ocp import OcpProblem, TerminalIngredients, build_terminal, solve_dare
from .rounding import RoundingResult, integral_gap, round_control, simple_rounding, sum_up_rounding, theoretical_bounds

__version__ = "0.1.0"
