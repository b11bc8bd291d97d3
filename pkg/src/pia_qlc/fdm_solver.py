"""
Five-point finite differences for the frozen-policy linear equation

    a_x V_xx + a_y V_yy + mu_x V_x + mu_y V_y - alpha V + f = 0,

with Dirichlet data, and stationary sweeps (Gauss-Seidel or Jacobi) to solve it.

Sweep order is fixed: ``j`` in the outer loop, ``k`` in the inner loop, both
increasing (numpy C order of ``values[j, k]``). Gauss-Seidel results depend on
this order.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numba
import numpy as np

from .grid import Grid2D, PolicyField, ScalarField
from .problem import ControlProblem

log = logging.getLogger(__name__)

SCHEMES = ("gauss_seidel", "jacobi")


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class StencilSystem:
    """Coefficients at interior nodes; each array has shape ``(n-2, n-2)``.

    ``east``/``west`` couple to ``(j+1, k)``/``(j-1, k)``, ``north``/``south``
    to ``(j, k+1)``/``(j, k-1)``. The discrete equation at an interior node is
    ``center V + east V_E + west V_W + north V_N + south V_S + q = 0``.
    """

    grid: Grid2D
    east: np.ndarray
    west: np.ndarray
    north: np.ndarray
    south: np.ndarray
    center: np.ndarray
    q: np.ndarray

    def neighbour_abs_sum(self) -> np.ndarray:
        return np.abs(self.east) + np.abs(self.west) + np.abs(self.north) + np.abs(self.south)

    def residual(self, V: np.ndarray) -> np.ndarray:
        """Left-hand side of the discrete equation at interior nodes."""
        return (
            self.center * V[1:-1, 1:-1]
            + self.east * V[2:, 1:-1]
            + self.west * V[:-2, 1:-1]
            + self.north * V[1:-1, 2:]
            + self.south * V[1:-1, :-2]
            + self.q
        )

    def scaled(self, factor: float) -> "StencilSystem":
        """Same operator, source multiplied by ``factor``."""
        return StencilSystem(
            self.grid, self.east, self.west, self.north, self.south, self.center, factor * self.q
        )


@dataclass(frozen=True)
class SolveStats:
    sweeps: int
    point_updates: int
    final_diff: float
    final_residual: float
    converged: bool
    history: np.ndarray = None  # max |V^{l+1} - V^l| per sweep


@dataclass(frozen=True)
class DominanceReport:
    holds: bool
    worst_node: Tuple[int, int]
    worst_margin: float


def assemble_stencil(
    problem: ControlProblem,
    grid: Grid2D,
    policy: PolicyField,
    source: Optional[np.ndarray] = None,
) -> StencilSystem:
    """Central-difference coefficients for the policy-frozen equation.

    With ``a = s^2 / 2`` per axis and ``mu = M pi + b``::

        east  = a_x/dx^2 + mu_x/(2dx)     west  = a_x/dx^2 - mu_x/(2dx)
        north = a_y/dy^2 + mu_y/(2dy)     south = a_y/dy^2 - mu_y/(2dy)
        center = -(2a_x/dx^2 + 2a_y/dy^2 + alpha),   q = f(z, pi)

    ``source`` replaces the running reward as ``q`` when given.
    """
    if policy.grid != grid:
        raise ValueError("policy lives on a different grid")
    X, Y = grid.interior_mesh()
    pi = policy.values
    s = problem.diffusion(X, Y)
    ax = 0.5 * s[..., 0] ** 2
    ay = 0.5 * s[..., 1] ** 2
    mu = problem.drift(X, Y, pi)
    dx2, dy2 = grid.dx**2, grid.dy**2
    east = ax / dx2 + mu[..., 0] / (2 * grid.dx)
    west = ax / dx2 - mu[..., 0] / (2 * grid.dx)
    north = ay / dy2 + mu[..., 1] / (2 * grid.dy)
    south = ay / dy2 - mu[..., 1] / (2 * grid.dy)
    center = -(2 * ax / dx2 + 2 * ay / dy2 + problem.discount)
    if source is None:
        q = problem.running_reward(X, Y, pi)
    else:
        q = np.broadcast_to(np.asarray(source, dtype=float), X.shape)
    return StencilSystem(grid, east, west, north, south, center, np.array(q, dtype=float))


def check_diagonal_dominance(s: StencilSystem) -> DominanceReport:
    """Strict row dominance ``|center| > sum |neighbours|`` at every interior node.

    ``worst_node`` is reported in full-grid indices ``(j, k)``.
    """
    margin = np.abs(s.center) - s.neighbour_abs_sum()
    idx = np.unravel_index(int(np.argmin(margin)), margin.shape)
    worst = float(margin[idx])
    return DominanceReport(bool(worst > 0), (int(idx[0]) + 1, int(idx[1]) + 1), worst)


@numba.njit(cache=True)
def _sweep_loop(V, east, west, north, south, center, q, tol, max_sweeps, gauss_seidel, diffs):
    n = V.shape[0]
    old = V.copy()
    sweeps = 0
    while sweeps < max_sweeps:
        if not gauss_seidel:
            for j in range(n):
                for k in range(n):
                    old[j, k] = V[j, k]
        src = V if gauss_seidel else old
        dmax = 0.0
        for j in range(1, n - 1):
            for k in range(1, n - 1):
                a = j - 1
                b = k - 1
                new = -(
                    east[a, b] * src[j + 1, k]
                    + west[a, b] * src[j - 1, k]
                    + north[a, b] * src[j, k + 1]
                    + south[a, b] * src[j, k - 1]
                    + q[a, b]
                ) / center[a, b]
                d = abs(new - V[j, k])
                if d > dmax:
                    dmax = d
                V[j, k] = new
        diffs[sweeps] = dmax
        sweeps += 1
        if dmax < tol:
            break
    return sweeps


def iterative_solve(
    s: StencilSystem,
    boundary: ScalarField,
    V0: ScalarField,
    tol1: float,
    scheme: str = "gauss_seidel",
    max_sweeps: int = 1_000_000,
    trace_path=None,
) -> Tuple[ScalarField, SolveStats]:
    """Sweep the update formula until successive iterates differ by less than ``tol1``.

    The update at an interior node is
    ``V(j,k) = -(east V_E + west V_W + north V_N + south V_S + q) / center``.
    ``gauss_seidel`` reads neighbours already updated in the current sweep;
    ``jacobi`` reads only the previous sweep. Boundary nodes keep the values
    of ``boundary`` throughout.

    Running out of sweeps is not an error: the last iterate is returned with
    ``stats.converged`` false.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if not tol1 > 0:
        raise ValueError("tol1 must be positive")
    if np.any(s.center == 0):
        raise SolverError("zero-center-coefficient")
    grid = s.grid
    if boundary.grid != grid or V0.grid != grid:
        raise ValueError("grid-mismatch between stencil, boundary data and initial guess")

    V = np.array(V0.values, dtype=float)
    mask = grid.boundary_mask()
    V[mask] = boundary.values[mask]
    diffs = np.empty(max_sweeps)
    sweeps = _sweep_loop(
        V, s.east, s.west, s.north, s.south, s.center, s.q,
        float(tol1), int(max_sweeps), scheme == "gauss_seidel", diffs,
    )
    diffs = diffs[:sweeps]
    converged = bool(sweeps > 0 and diffs[-1] < tol1)
    if not converged:
        log.warning("iterative_solve: no convergence after %d sweeps (last diff %.3e)",
                    sweeps, diffs[-1] if sweeps else float("nan"))
    if trace_path is not None:
        write_trace(trace_path, diffs)
    stats = SolveStats(
        sweeps=sweeps,
        point_updates=sweeps * grid.n_interior,
        final_diff=float(diffs[-1]) if sweeps else float("nan"),
        final_residual=float(np.max(np.abs(s.residual(V)))),
        converged=converged,
        history=diffs.copy(),
    )
    return ScalarField(grid, V), stats


def write_trace(path, diffs) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sweep", "max_diff"])
        for i, d in enumerate(diffs, start=1):
            w.writerow([i, f"{d:.8e}"])
