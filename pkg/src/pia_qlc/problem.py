"""
Controlled diffusions with action-affine drift and quadratic running reward.

State ``z = (x, y)`` in a rectangle, action ``pi`` in ``R^d``::

    dZ = (M(z) pi + b(z)) dt + diag(s1(z), s2(z)) dW,
    f(z, pi) = c(z) + r(z).pi - 1/2 pi.Q(z).pi

All coefficient callables are vectorised: they take coordinate arrays ``X, Y``
of a common shape ``S`` and return arrays of shape ``S + trailing``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .grid import Grid2D, build_grid

Bounds = Tuple[float, float, float, float]


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class QuadraticReward:
    """``f(z, pi) = c(z) + r(z).pi - 1/2 pi.Q(z).pi``.

    ``c -> S``, ``r -> S + (d,)``, ``Q -> S + (d, d)`` symmetric positive definite.
    """

    c: Callable
    r: Callable
    Q: Callable

    def __call__(self, X, Y, pi) -> np.ndarray:
        pi = np.asarray(pi, dtype=float)
        Q = self.Q(X, Y)
        quad = np.einsum("...i,...ij,...j->...", pi, Q, pi)
        return self.c(X, Y) + np.einsum("...i,...i->...", self.r(X, Y), pi) - 0.5 * quad

    def gradient(self, X, Y, pi) -> np.ndarray:
        """Action gradient ``r - Q pi``."""
        return self.r(X, Y) - np.einsum("...ij,...j->...i", self.Q(X, Y), pi)


@dataclass(frozen=True)
class ControlProblem:
    """Data of the discounted exit-time control problem.

    ``drift_matrix -> S + (2, d)``, ``drift_offset -> S + (2,)``,
    ``diffusion -> S + (2,)`` (the diagonal of the 2x2 volatility matrix),
    ``boundary_payoff -> S``. The diffusion never depends on the action.
    """

    drift_matrix: Callable
    drift_offset: Callable
    diffusion: Callable
    reward: QuadraticReward
    discount: float
    boundary_payoff: Callable
    bounds: Bounds
    action_dim: int = 1

    def __post_init__(self):
        if not self.discount > 0:
            raise ProblemError(f"nonpositive-parameter: α must be positive, got {self.discount}")
        x0, x1, y0, y1 = self.bounds
        if not (x0 < x1 and y0 < y1):
            raise ProblemError(f"invalid-bounds: {self.bounds}")
        if self.action_dim < 1:
            raise ProblemError("action_dim must be >= 1")

    def drift(self, X, Y, pi) -> np.ndarray:
        """``M(z) pi + b(z)``, shape ``S + (2,)``."""
        M = self.drift_matrix(X, Y)
        return np.einsum("...ij,...j->...i", M, pi) + self.drift_offset(X, Y)

    def running_reward(self, X, Y, pi) -> np.ndarray:
        return self.reward(X, Y, pi)

    def hamiltonian(self, X, Y, pi, gx, gy) -> np.ndarray:
        """Action-dependent part ``mu_pi . grad V + f^pi`` of the HJB operator."""
        mu = self.drift(X, Y, pi)
        return mu[..., 0] * gx + mu[..., 1] * gy + self.reward(X, Y, pi)

    def grid(self, n: int) -> Grid2D:
        return build_grid(*self.bounds, n)


def make_example_problem(
    sigma: float = 2.0,
    eta: float = 0.2,
    alpha: float = 0.03,
    bounds: Bounds = (0.5, 2.0, 0.5, 2.0),
) -> ControlProblem:
    """Drift ``(pi x, pi y)``, volatility ``diag(sigma x, eta y)``, reward ``1 - pi^2/2``, ``g = 0``.

    The defaults are the reference parameters.
    """
    for name, v in (("σ", sigma), ("η", eta), ("α", alpha)):
        if not v > 0:
            raise ProblemError(f"nonpositive-parameter: {name} must be positive, got {v}")
    x0, x1, y0, y1 = bounds
    if x0 <= 0 or y0 <= 0:
        # the volatility vanishes on the axes
        raise ProblemError(f"invalid-bounds: domain must exclude x=0 and y=0, got {bounds}")

    def drift_matrix(X, Y):
        return np.stack(np.broadcast_arrays(X, Y), axis=-1)[..., None]

    def drift_offset(X, Y):
        return np.zeros(np.broadcast(X, Y).shape + (2,))

    def diffusion(X, Y):
        X, Y = np.broadcast_arrays(np.asarray(X, dtype=float), np.asarray(Y, dtype=float))
        return np.stack([sigma * X, eta * Y], axis=-1)

    def shape(X, Y):
        return np.broadcast(X, Y).shape

    reward = QuadraticReward(
        c=lambda X, Y: np.ones(shape(X, Y)),
        r=lambda X, Y: np.zeros(shape(X, Y) + (1,)),
        Q=lambda X, Y: np.ones(shape(X, Y) + (1, 1)),
    )
    return ControlProblem(
        drift_matrix=drift_matrix,
        drift_offset=drift_offset,
        diffusion=diffusion,
        reward=reward,
        discount=float(alpha),
        boundary_payoff=lambda X, Y: np.zeros(shape(X, Y)),
        bounds=tuple(float(b) for b in bounds),
        action_dim=1,
    )


def greedy_policy(problem: ControlProblem, gx, gy, X, Y) -> np.ndarray:
    """Maximiser of ``pi -> mu_pi . grad V + f^pi``.

    Setting the action gradient to zero gives ``Q pi = M^T grad V + r``.

    Parameters
    ----------
    gx, gy : array_like
        Components of ``grad V`` at the states ``(X, Y)``.

    Returns
    -------
    ndarray of shape ``S + (d,)``
    """
    gx, gy, X, Y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (gx, gy, X, Y)))
    M = problem.drift_matrix(X, Y)
    rhs = M[..., 0, :] * gx[..., None] + M[..., 1, :] * gy[..., None] + problem.reward.r(X, Y)
    Q = problem.reward.Q(X, Y)
    if problem.action_dim == 1:
        q = Q[..., 0, 0]
        if np.any(q == 0):
            raise ProblemError("singular-Q: reward curvature vanishes")
        return rhs / q[..., None]
    try:
        return np.linalg.solve(Q, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise ProblemError("singular-Q: reward curvature matrix is singular") from exc


def _sample_grid(problem: ControlProblem, grid: Optional[Grid2D]) -> Grid2D:
    return grid if grid is not None else problem.grid(201)


def ellipticity_bounds(problem: ControlProblem, grid: Optional[Grid2D] = None) -> Tuple[float, float]:
    """Extreme eigenvalues of ``a = 1/2 sigma sigma^T`` over the closed domain.

    The extremes are taken over the nodes of ``grid`` (default: 201 nodes per
    axis), which include the rectangle's edges and corners.
    """
    X, Y = _sample_grid(problem, grid).mesh()
    a = 0.5 * problem.diffusion(X, Y) ** 2
    a_min, a_max = float(a.min()), float(a.max())
    if a_min <= 0:
        raise ProblemError(f"degenerate-diffusion: smallest eigenvalue {a_min} is not positive")
    return a_min, a_max


def concavity_bound(problem: ControlProblem, grid: Optional[Grid2D] = None) -> float:
    """Smallest eigenvalue of ``Q`` over the nodes of ``grid``; the uniform concavity constant."""
    X, Y = _sample_grid(problem, grid).mesh()
    return float(np.linalg.eigvalsh(problem.reward.Q(X, Y)).min())
