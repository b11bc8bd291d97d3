"""Policy improvement for discounted exit-time control of diffusions on a rectangle."""

from .grid import Grid2D, PolicyField, ScalarField, build_grid, central_gradient, sup_norm_diff
from .problem import ControlProblem, QuadraticReward, greedy_policy, make_example_problem
from .fdm_solver import assemble_stencil, check_diagonal_dominance, iterative_solve
from .pia import PiaConfig, PiaResult, policy_update, run_pia, solve_linear_baseline
from .mc_oracle import McConfig, estimate_value

__all__ = [
    "Grid2D", "PolicyField", "ScalarField", "build_grid", "central_gradient", "sup_norm_diff",
    "ControlProblem", "QuadraticReward", "greedy_policy", "make_example_problem",
    "assemble_stencil", "check_diagonal_dominance", "iterative_solve",
    "PiaConfig", "PiaResult", "policy_update", "run_pia", "solve_linear_baseline",
    "McConfig", "estimate_value",
]
