"""
Numerical checks of quadratic local convergence for policy improvement.

With ``W_i = V^{pi_{i+1}} - V^{pi_i}`` the claim is ``|W_i| <= C |W_{i-1}|^2``.
``W_i`` vanishes on the boundary and solves the frozen-policy equation for
``pi_{i+1}`` with source ``R_i = 1/2 (M^T grad W_{i-1}) . Q^{-1} (M^T grad W_{i-1})``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .fdm_solver import assemble_stencil
from .grid import PolicyField, ScalarField, central_gradient, second_differences
from .problem import ControlProblem, concavity_bound, ellipticity_bounds

NORM_KINDS = ("sup", "grad", "hess")


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class QlcEntry:
    step: int
    w_norm: float
    ratio: Optional[float]
    flagged: bool


@dataclass
class QlcReport:
    """Ratios ``C_i = w_i / w_{i-1}^2`` of a difference-norm sequence.

    ``entries[0]`` carries ``w_0`` and no ratio. A ratio is flagged when its
    denominator ``w_{i-1}`` is already below the noise floor: the quadratic
    prediction ``C w_{i-1}^2`` is then far under the inner-solver tolerance and
    ``w_i`` measures solver noise, not contraction.
    """

    entries: List[QlcEntry]
    noise_floor: float
    norm_kind: str = "sup"
    ellipticity: Optional[tuple] = None
    concavity: Optional[float] = None

    @property
    def ratios(self) -> List[float]:
        return [e.ratio for e in self.entries if e.ratio is not None]

    @property
    def unflagged_ratios(self) -> List[float]:
        return [e.ratio for e in self.entries if e.ratio is not None and not e.flagged]

    @property
    def empirical_C(self) -> Optional[float]:
        r = self.unflagged_ratios
        return max(r) if r else None


@dataclass(frozen=True)
class DoublingReport:
    """Per-step verdicts of ``w_i <= (C w_0)^(2^i) / C`` for ``i >= 1``."""

    holds: List[bool]
    bounds: List[float]
    in_contraction_region: bool


@dataclass(frozen=True)
class ResidualReport:
    max_abs_R: float
    max_w_pde_residual: float


def qlc_ratios(w_norms: Sequence[float], noise_floor: float, norm_kind: str = "sup") -> QlcReport:
    w = [float(v) for v in w_norms]
    if len(w) < 2:
        raise AnalysisError("sequence-too-short: need at least two difference norms")
    if any(v < 0 for v in w):
        raise AnalysisError("difference norms must be non-negative")
    entries = [QlcEntry(0, w[0], None, w[0] < noise_floor)]
    for i in range(1, len(w)):
        prev = w[i - 1]
        if prev > 0:
            entries.append(QlcEntry(i, w[i], w[i] / prev**2, prev < noise_floor))
        else:
            entries.append(QlcEntry(i, w[i], None, True))
    return QlcReport(entries, noise_floor, norm_kind)


def doubling_check(w_norms: Sequence[float], C: float, rtol: float = 1e-12) -> DoublingReport:
    """Iterated bound from ``w_0``: ``w_i <= (C w_0)^(2^i) / C``.

    ``rtol`` absorbs round-off when ``C`` is itself the largest observed ratio,
    which makes the ``i = 1`` bound hold with equality.
    """
    if not C > 0:
        raise AnalysisError("C must be positive")
    w = [float(v) for v in w_norms]
    base = C * w[0]
    bounds, holds = [], []
    for i in range(1, len(w)):
        b = base ** (2**i) / C
        bounds.append(b)
        holds.append(w[i] <= b * (1 + rtol))
    return DoublingReport(holds, bounds, bool(base < 1))


def difference_norms(W: ScalarField) -> Dict[str, float]:
    """Discrete stand-ins for the C^{2,beta} norm: ``sup|W|``, ``sup|grad W|``, ``sup`` of second differences."""
    gx, gy = central_gradient(W)
    wxx, wyy = second_differences(W)
    return {
        "sup": float(np.max(np.abs(W.values))),
        "grad": float(np.max(np.hypot(gx, gy))) if gx.size else 0.0,
        "hess": float(max(np.max(np.abs(wxx)), np.max(np.abs(wyy)))) if wxx.size else 0.0,
    }


def qlc_reports(problem: ControlProblem, w_fields: Sequence[ScalarField], noise_floor: float) -> Dict[str, QlcReport]:
    """One report per norm kind. Only the sup norm is comparable with the noise floor,
    so the flags of all kinds follow the sup-norm sequence."""
    norms = [difference_norms(W) for W in w_fields]
    sup_report = qlc_ratios([n["sup"] for n in norms], noise_floor, "sup")
    grid = w_fields[0].grid
    ell = ellipticity_bounds(problem, grid)
    lam = concavity_bound(problem, grid)
    out = {}
    for kind in NORM_KINDS:
        rep = qlc_ratios([n[kind] for n in norms], noise_floor, kind)
        rep.entries = [
            QlcEntry(e.step, e.w_norm, e.ratio, s.flagged)
            for e, s in zip(rep.entries, sup_report.entries)
        ]
        rep.ellipticity, rep.concavity = ell, lam
        out[kind] = rep
    return out


def residual_field(problem: ControlProblem, W_prev: ScalarField) -> ScalarField:
    """Second-order remainder ``R = 1/2 (M^T grad W) . Q^{-1} (M^T grad W)``, zero on the boundary."""
    grid = W_prev.grid
    gx, gy = central_gradient(W_prev)
    X, Y = grid.interior_mesh()
    M = problem.drift_matrix(X, Y)
    v = M[..., 0, :] * gx[..., None] + M[..., 1, :] * gy[..., None]
    Q = problem.reward.Q(X, Y)
    sol = np.linalg.solve(Q, v[..., None])[..., 0]
    R = np.zeros(grid.shape)
    R[1:-1, 1:-1] = 0.5 * np.einsum("...i,...i->...", v, sol)
    return ScalarField(grid, R)


def verify_w_pde(
    problem: ControlProblem,
    W: ScalarField,
    next_policy: PolicyField,
    R: ScalarField,
) -> float:
    """Largest interior residual of ``L^{pi_{i+1}} W_i - alpha W_i + R_i`` on the solver's own stencil."""
    grid = W.grid
    if next_policy.grid != grid or R.grid != grid:
        raise AnalysisError("grid-mismatch between W, policy and R")
    system = assemble_stencil(problem, grid, next_policy, source=R.interior())
    return float(np.max(np.abs(system.residual(W.values))))


def semilinear_residual(problem: ControlProblem, V: ScalarField) -> float:
    """Largest interior residual of the HJB equation with the maximised Hamiltonian.

    For the quadratic reward class the maximum over actions is
    ``c + 1/2 (M^T grad V + r) . Q^{-1} (M^T grad V + r)``; for the worked
    example this is ``1 + 1/2 (x V_x + y V_y)^2``.
    """
    grid = V.grid
    X, Y = grid.interior_mesh()
    gx, gy = central_gradient(V)
    vxx, vyy = second_differences(V)
    s = problem.diffusion(X, Y)
    b = problem.drift_offset(X, Y)
    M = problem.drift_matrix(X, Y)
    v = M[..., 0, :] * gx[..., None] + M[..., 1, :] * gy[..., None] + problem.reward.r(X, Y)
    sol = np.linalg.solve(problem.reward.Q(X, Y), v[..., None])[..., 0]
    ham = problem.reward.c(X, Y) + 0.5 * np.einsum("...i,...i->...", v, sol)
    res = (
        0.5 * s[..., 0] ** 2 * vxx
        + 0.5 * s[..., 1] ** 2 * vyy
        + b[..., 0] * gx
        + b[..., 1] * gy
        - problem.discount * V.interior()
        + ham
    )
    return float(np.max(np.abs(res)))


def residual_report(problem: ControlProblem, result) -> List[ResidualReport]:
    """``R_i`` and the ``W_i`` equation residual for every step ``i >= 1`` of a PIA run."""
    out = []
    W = result.w_fields
    for i in range(1, len(W)):
        R = residual_field(problem, W[i - 1])
        res = verify_w_pde(problem, W[i], result.policies[i + 1], R)
        out.append(ResidualReport(float(np.max(R.values)), res))
    return out


def write_qlc_csv(path, reports: Dict[str, QlcReport]) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "norm_kind", "w_norm", "ratio", "flagged"])
        for kind in NORM_KINDS:
            if kind not in reports:
                continue
            for e in reports[kind].entries:
                w.writerow([
                    e.step, kind, f"{e.w_norm:.8e}",
                    "" if e.ratio is None else f"{e.ratio:.8f}",
                    int(e.flagged),
                ])
