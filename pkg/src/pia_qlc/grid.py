"""
Uniform rectangular grids and node-indexed fields.

Node ``(j, k)`` sits at ``(x_min + j*dx, y_min + k*dy)``. Field values are
stored as ``(n, n)`` arrays indexed ``[j, k]``; flattening is numpy C order,
so ``j`` is the slow index and ``k`` the fast one. Every sweep, CSV dump and
serialisation in the package uses this order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple

import numpy as np


class GridError(ValueError):
    """Invalid grid construction or mismatched fields."""


@dataclass(frozen=True)
class Grid2D:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    n: int
    dx: float = field(init=False)
    dy: float = field(init=False)

    def __post_init__(self):
        if self.n < 3:
            raise GridError(f"n-too-small: need n >= 3 nodes per axis, got {self.n}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise GridError(
                f"invalid-bounds: [{self.x_min}, {self.x_max}] x [{self.y_min}, {self.y_max}]"
            )
        object.__setattr__(self, "dx", (self.x_max - self.x_min) / (self.n - 1))
        object.__setattr__(self, "dy", (self.y_max - self.y_min) / (self.n - 1))

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    @property
    def y(self) -> np.ndarray:
        return self.y_min + self.dy * np.arange(self.n)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n, self.n)

    @property
    def n_interior(self) -> int:
        return (self.n - 2) ** 2

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        """Full-grid coordinate arrays ``X[j, k], Y[j, k]``."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    def interior_mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        X, Y = self.mesh()
        return X[1:-1, 1:-1], Y[1:-1, 1:-1]

    def boundary_mask(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        mask[1:-1, 1:-1] = False
        return mask

    def contains(self, x: float, y: float) -> bool:
        """True for points of the closed rectangle."""
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def on_boundary(self, x: float, y: float) -> bool:
        return self.contains(x, y) and (
            x in (self.x_min, self.x_max) or y in (self.y_min, self.y_max)
        )


def build_grid(x_min: float, x_max: float, y_min: float, y_max: float, n: int) -> Grid2D:
    return Grid2D(float(x_min), float(x_max), float(y_min), float(y_max), int(n))


@dataclass(frozen=True)
class ScalarField:
    """Real values at every node of ``grid``; ``values[j, k]``."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise GridError(f"field shape {values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise GridError("field contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid2D, func) -> "ScalarField":
        X, Y = grid.mesh()
        return cls(grid, np.broadcast_to(func(X, Y), grid.shape))

    def interior(self) -> np.ndarray:
        return self.values[1:-1, 1:-1]

    def interpolate(self, x: float, y: float) -> float:
        """Bilinear interpolation at a point of the closed rectangle."""
        g = self.grid
        return float(bilinear(self.values, g.x_min, g.y_min, g.dx, g.dy, [x], [y])[0])

    def to_csv(self, path) -> None:
        write_field_csv(path, self.grid, self.values)


@dataclass(frozen=True)
class PolicyField:
    """Actions at interior nodes, ``values[j-1, k-1, :]`` for node ``(j, k)``.

    Boundary nodes carry no action: under Dirichlet data the stencil never
    reads them.
    """

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        m = self.grid.n - 2
        if values.shape == (m, m):
            values = values[..., None]
        if values.ndim != 3 or values.shape[:2] != (m, m):
            raise GridError(f"policy shape {values.shape} incompatible with {m}x{m} interior")
        if not np.all(np.isfinite(values)):
            raise GridError("policy contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def action_dim(self) -> int:
        return self.values.shape[2]

    @classmethod
    def constant(cls, grid: Grid2D, action=0.0) -> "PolicyField":
        action = np.atleast_1d(np.asarray(action, dtype=float))
        m = grid.n - 2
        return cls(grid, np.broadcast_to(action, (m, m, action.size)))

    def to_csv(self, path) -> None:
        """Interior nodes only; one ``value`` column per action component."""
        X, Y = self.grid.interior_mesh()
        d = self.action_dim
        header = ["x", "y"] + (["value"] if d == 1 else [f"value{i}" for i in range(d)])
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for x, y, a in zip(X.ravel(), Y.ravel(), self.values.reshape(-1, d)):
                w.writerow([_g9(x), _g9(y)] + [_g9(v) for v in a])


def _g9(v: float) -> str:
    return f"{v:.9g}"


def write_field_csv(path, grid: Grid2D, values: np.ndarray) -> None:
    """Header ``x,y,value``; one row per node in C order, 9 significant digits."""
    X, Y = grid.mesh()
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for x, y, v in zip(X.ravel(), Y.ravel(), np.asarray(values).ravel()):
            w.writerow([_g9(x), _g9(y), _g9(v)])


def read_field_csv(path, grid: Grid2D) -> ScalarField:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != grid.n * grid.n:
        raise GridError(f"{path}: expected {grid.n * grid.n} rows, got {data.shape[0]}")
    return ScalarField(grid, data[:, 2].reshape(grid.shape))


def _check_same_grid(a: ScalarField, b: ScalarField) -> None:
    if a.grid != b.grid:
        raise GridError("grid-mismatch: fields live on different grids")


def central_gradient(f: ScalarField) -> Tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient at interior nodes.

    Returns
    -------
    fx, fy : ndarray of shape (n-2, n-2)
        ``fx[j-1, k-1] = (f[j+1, k] - f[j-1, k]) / (2 dx)``, likewise ``fy``.
    """
    v = f.values
    g = f.grid
    fx = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2.0 * g.dx)
    fy = (v[1:-1, 2:] - v[1:-1, :-2]) / (2.0 * g.dy)
    return fx, fy


def second_differences(f: ScalarField) -> Tuple[np.ndarray, np.ndarray]:
    """Centred second differences ``(f_xx, f_yy)`` at interior nodes."""
    v = f.values
    g = f.grid
    fxx = (v[2:, 1:-1] - 2.0 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / g.dx**2
    fyy = (v[1:-1, 2:] - 2.0 * v[1:-1, 1:-1] + v[1:-1, :-2]) / g.dy**2
    return fxx, fyy


def sup_norm_diff(a: ScalarField, b: ScalarField) -> float:
    _check_same_grid(a, b)
    return float(np.max(np.abs(a.values - b.values)))


def bilinear(values: np.ndarray, x0: float, y0: float, dx: float, dy: float, xs, ys) -> np.ndarray:
    """Bilinear interpolation of lattice data ``values[j, k, ...]`` at ``(xs, ys)``.

    The lattice has origin ``(x0, y0)`` and spacings ``dx, dy``. Points off the
    lattice are clamped onto it. Trailing axes of ``values`` are carried
    through.
    """
    nx, ny = values.shape[:2]
    tx = np.clip((np.asarray(xs, dtype=float) - x0) / dx, 0.0, nx - 1)
    ty = np.clip((np.asarray(ys, dtype=float) - y0) / dy, 0.0, ny - 1)
    j = np.minimum(tx.astype(np.int64), max(nx - 2, 0))
    k = np.minimum(ty.astype(np.int64), max(ny - 2, 0))
    j1 = np.minimum(j + 1, nx - 1)
    k1 = np.minimum(k + 1, ny - 1)
    extra = (None,) * (values.ndim - 2)
    s = (tx - j)[(...,) + extra]
    t = (ty - k)[(...,) + extra]
    return (
        (1 - s) * (1 - t) * values[j, k]
        + s * (1 - t) * values[j1, k]
        + (1 - s) * t * values[j, k1]
        + s * t * values[j1, k1]
    )
