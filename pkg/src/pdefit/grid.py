"""Uniform periodic grids on the unit cube, and fields living on them.

The spatial domain is [0, 1]^dim discretized with n points per axis, spacing
c_x = 1/n, periodic in every axis. Arrays are float64, C order, with axis 0
the slowest-varying spatial axis; that layout is also the on-disk byte layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, ValidationError

SUPPORTED_DIMS = (1, 2, 3)


@dataclass(frozen=True)
class Grid:
    """Discretization of [0, 1]^dim x [0, T] for the explicit stepper.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 to 3.
    n : int
        Points per axis; spacing is c_x = 1/n.
    c_t : float
        Time step of a single Euler update.
    t_slices : int
        Number of stored time slices after the initial one.
    steps_per_slice : int
        Euler steps taken between consecutive stored slices.
    """

    dim: int
    n: int
    c_t: float
    t_slices: int = 1
    steps_per_slice: int = 1

    def __post_init__(self):
        if self.dim not in SUPPORTED_DIMS:
            raise ValidationError(f"dim must be one of {SUPPORTED_DIMS}, got {self.dim}")
        if not isinstance(self.n, int) or self.n < 2:
            raise ValidationError(f"n must be an integer >= 2, got {self.n!r}")
        if not (isinstance(self.c_t, (int, float)) and math.isfinite(self.c_t) and self.c_t > 0):
            raise ValidationError(f"c_t must be a positive finite number, got {self.c_t!r}")
        if not isinstance(self.t_slices, int) or self.t_slices < 1:
            raise ValidationError(f"t_slices must be an integer >= 1, got {self.t_slices!r}")
        if not isinstance(self.steps_per_slice, int) or self.steps_per_slice < 1:
            raise ValidationError(
                f"steps_per_slice must be an integer >= 1, got {self.steps_per_slice!r}")

    @property
    def c_x(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def num_points(self) -> int:
        return self.n ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.c_x ** self.dim

    @property
    def total_steps(self) -> int:
        return self.t_slices * self.steps_per_slice

    def coords(self) -> tuple[np.ndarray, ...]:
        """Per-axis coordinate arrays broadcastable to ``shape`` (cell corners k/n)."""
        axes = []
        for ax in range(self.dim):
            x = np.arange(self.n, dtype=np.float64) / self.n
            shape = [1] * self.dim
            shape[ax] = self.n
            axes.append(x.reshape(shape))
        return tuple(axes)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "n": self.n, "c_t": self.c_t,
                "t_slices": self.t_slices, "steps_per_slice": self.steps_per_slice}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        try:
            return cls(dim=int(d["dim"]), n=int(d["n"]), c_t=float(d["c_t"]),
                       t_slices=int(d["t_slices"]),
                       steps_per_slice=int(d["steps_per_slice"]))
        except KeyError as exc:
            raise ValidationError(f"grid dict missing key {exc}") from exc


def _as_field_array(values, grid: Grid) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != grid.shape:
        raise ValidationError(
            f"field values have shape {arr.shape}, expected {grid.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("field values must be finite")
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Field:
    """A scalar field sampled on a grid. The value array is read-only."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_field_array(self.values, self.grid))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, value, dtype=np.float64))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        """Evaluate ``fn(*coords)`` on the grid; fn must broadcast."""
        vals = np.broadcast_to(np.asarray(fn(*grid.coords()), dtype=np.float64),
                               grid.shape)
        return cls(grid, np.array(vals))

    def __eq__(self, other):
        if not isinstance(other, Field):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class Trajectory:
    """Stored time slices of one solve: slice 0 is the initial state.

    Holds t_slices + 1 fields, all on the same grid.
    """

    grid: Grid
    slices: tuple[Field, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "slices", tuple(self.slices))
        expected = self.grid.t_slices + 1
        if len(self.slices) != expected:
            raise ValidationError(
                f"trajectory needs {expected} slices for this grid, got {len(self.slices)}")
        for i, s in enumerate(self.slices):
            if not isinstance(s, Field):
                raise ValidationError(f"slice {i} is not a Field")
            if s.grid != self.grid:
                raise GridMismatchError(f"slice {i} lives on a different grid")

    def stacked(self) -> np.ndarray:
        """All slices as one (t_slices + 1, *shape) array."""
        return np.stack([s.values for s in self.slices])

    @classmethod
    def from_stacked(cls, grid: Grid, arr: np.ndarray) -> "Trajectory":
        arr = np.asarray(arr, dtype=np.float64)
        expected = (grid.t_slices + 1,) + grid.shape
        if arr.shape != expected:
            raise ValidationError(f"stacked array has shape {arr.shape}, expected {expected}")
        return cls(grid, tuple(Field(grid, arr[k]) for k in range(arr.shape[0])))


def check_same_grid(a, b) -> None:
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")


def grid_norm(u: Field) -> float:
    """Grid-scaled L2 norm, ||u|| = c_x^(dim/2) * ||u.values||_2.

    The scaling makes the norm of a constant field independent of resolution
    (a field of ones has norm 1 on every grid), so losses and errors computed
    at different resolutions are comparable.
    """
    v = u.values
    return float(np.sqrt(np.sum(v * v) * u.grid.cell_volume))


def reduce_sum(u: Field) -> float:
    """Sum of all entries in C order; deterministic for a fixed shape."""
    return float(np.sum(u.values))


_ELEMENTWISE_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(u: Field, v: Field, op: str) -> Field:
    """Pointwise add/sub/mul of two fields on the same grid."""
    if op not in _ELEMENTWISE_OPS:
        raise ValidationError(f"unknown op {op!r}, expected one of {sorted(_ELEMENTWISE_OPS)}")
    check_same_grid(u, v)
    return Field(u.grid, _ELEMENTWISE_OPS[op](u.values, v.values))
