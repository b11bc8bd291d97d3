"""
Policy improvement: alternate a frozen-policy linear solve with a greedy update.

Starting from ``V = 0`` and ``pi = 0``, step ``i`` solves for ``V^{pi_i}``
(warm-started from the previous solution), forms ``pi_{i+1}`` from central
differences of it, and stops once ``max |pi_{i+1} - pi_i| < tol2``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .fdm_solver import (
    SCHEMES,
    SolveStats,
    assemble_stencil,
    check_diagonal_dominance,
    iterative_solve,
)
from .grid import Grid2D, PolicyField, ScalarField, central_gradient
from .problem import ControlProblem, greedy_policy

log = logging.getLogger(__name__)


class PiaError(RuntimeError):
    def __init__(self, message, step=None, partial=None):
        super().__init__(message)
        self.step = step
        self.partial = partial


@dataclass(frozen=True)
class PiaConfig:
    tol1: float = 1e-5
    tol2: float = 1e-3
    max_pia_steps: int = 50
    scheme: str = "gauss_seidel"
    max_sweeps: int = 1_000_000

    def __post_init__(self):
        if not self.tol1 > 0:
            raise ValueError("tol1 must be positive")
        if not self.tol2 > 0:
            raise ValueError("tol2 must be positive")
        if self.max_pia_steps < 1:
            raise ValueError("max_pia_steps must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")


@dataclass(frozen=True)
class IterationRecord:
    """One row of the convergence table.

    ``max_dv`` is ``None`` on step 0: there is no earlier value function to
    compare with.
    """

    step: int
    max_dpi: float
    max_dv: Optional[float]
    point_updates: int
    wall_time: float
    sweeps: int = 0
    dominance_holds: bool = True
    dominance_margin: float = float("nan")


@dataclass
class PiaResult:
    V: ScalarField
    policy: PolicyField
    records: List[IterationRecord]
    w_fields: List[ScalarField]
    values: List[ScalarField] = field(default_factory=list)
    policies: List[PolicyField] = field(default_factory=list)
    converged: bool = True

    @property
    def total_point_updates(self) -> int:
        return sum(r.point_updates for r in self.records)

    @property
    def evaluated_policy(self) -> PolicyField:
        """The policy whose value is ``V``; ``policy`` is the greedy update computed from ``V``."""
        return self.policies[len(self.values) - 1]

    @property
    def w_norms(self) -> List[float]:
        return [float(np.max(np.abs(w.values))) for w in self.w_fields]


def policy_update(problem: ControlProblem, V: ScalarField, grid: Optional[Grid2D] = None) -> PolicyField:
    """Greedy policy from central differences of ``V`` at every interior node."""
    grid = grid or V.grid
    gx, gy = central_gradient(V)
    X, Y = grid.interior_mesh()
    return PolicyField(grid, greedy_policy(problem, gx, gy, X, Y))


def boundary_field(problem: ControlProblem, grid: Grid2D) -> ScalarField:
    """Dirichlet data ``g`` on the boundary nodes, zero inside."""
    X, Y = grid.mesh()
    values = np.where(grid.boundary_mask(), problem.boundary_payoff(X, Y), 0.0)
    return ScalarField(grid, values)


def evaluate_policy(
    problem: ControlProblem,
    grid: Grid2D,
    policy: PolicyField,
    tol1: float,
    V0: Optional[ScalarField] = None,
    scheme: str = "gauss_seidel",
    max_sweeps: int = 1_000_000,
) -> Tuple[ScalarField, SolveStats]:
    """Solve the linear equation for ``V^pi`` with the policy frozen."""
    system = assemble_stencil(problem, grid, policy)
    bc = boundary_field(problem, grid)
    return iterative_solve(system, bc, V0 if V0 is not None else bc, tol1, scheme, max_sweeps)


def run_pia(problem: ControlProblem, grid: Grid2D, config: PiaConfig = PiaConfig()) -> PiaResult:
    """Policy improvement until the policy moves by less than ``config.tol2``.

    Raises
    ------
    PiaError
        If an inner solve fails to converge, or if ``max_pia_steps`` steps
        pass without meeting ``tol2``. ``exc.partial`` holds the result so far.
    """
    bc = boundary_field(problem, grid)
    policy = PolicyField.constant(grid, np.zeros(problem.action_dim))
    V_prev: Optional[ScalarField] = None
    V_start = bc
    records: List[IterationRecord] = []
    w_fields: List[ScalarField] = []
    values: List[ScalarField] = []
    policies: List[PolicyField] = [policy]

    def partial(converged):
        return PiaResult(V_start, policy, records, w_fields, values, policies, converged)

    for step in range(config.max_pia_steps):
        t0 = time.perf_counter()
        system = assemble_stencil(problem, grid, policy)
        dom = check_diagonal_dominance(system)
        if dom.holds:
            log.info("step %d: diagonal dominance holds (margin %.4g)", step, dom.worst_margin)
        else:
            log.warning("step %d: diagonal dominance fails at node %s (margin %.4g)",
                        step, dom.worst_node, dom.worst_margin)
        V, stats = iterative_solve(system, bc, V_start, config.tol1, config.scheme, config.max_sweeps)
        if not stats.converged:
            raise PiaError(f"inner solver did not converge at PIA step {step}",
                           step=step, partial=partial(False))
        new_policy = policy_update(problem, V, grid)
        max_dpi = float(np.max(np.abs(new_policy.values - policy.values)))
        max_dv = None
        if V_prev is not None:
            W = ScalarField(grid, V.values - V_prev.values)
            w_fields.append(W)
            max_dv = float(np.max(np.abs(W.values)))
        records.append(IterationRecord(
            step=step,
            max_dpi=max_dpi,
            max_dv=max_dv,
            point_updates=stats.point_updates,
            wall_time=time.perf_counter() - t0,
            sweeps=stats.sweeps,
            dominance_holds=dom.holds,
            dominance_margin=dom.worst_margin,
        ))
        values.append(V)
        policies.append(new_policy)
        log.info("step %d: max_dpi=%.8f max_dv=%s updates=%d", step, max_dpi,
                 "-" if max_dv is None else f"{max_dv:.8f}", stats.point_updates)
        V_prev = V_start = V
        policy = new_policy
        if max_dpi < config.tol2:
            return PiaResult(V, policy, records, w_fields, values, policies, True)

    raise PiaError(f"max-pia-steps-exceeded: {config.max_pia_steps} steps without reaching tol2",
                   step=config.max_pia_steps, partial=partial(False))


def solve_linear_baseline(
    problem: ControlProblem,
    grid: Grid2D,
    tol1: float,
    scheme: str = "gauss_seidel",
    max_sweeps: int = 1_000_000,
) -> Tuple[ScalarField, SolveStats]:
    """The zero-policy solve, identical to the first inner solve of :func:`run_pia`."""
    zero = PolicyField.constant(grid, np.zeros(problem.action_dim))
    return evaluate_policy(problem, grid, zero, tol1, None, scheme, max_sweeps)
