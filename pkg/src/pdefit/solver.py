"""Explicit forward-Euler stepping of the scalar PDE family.

The update from step k to k+1 is

    U_{k+1} = U_k + c_t * ( a0 + a1*U_k + sum_ax a2_ax * D_ax U_k
                            + a3 * L U_k + b1*U_k*(1 - U_k)
                            + b2 * U_{k-1} * sum_ax D_ax U_k )

with L the periodic Laplacian, D_ax the per-point upwind difference along one
axis, and U_{-1} := U_0. The transport velocity of the burgers term is the
previous state, which keeps each update affine in the current one.

State arrays may carry leading batch axes; the trailing grid.dim axes are
spatial. Every step is NaN-guarded: a non-finite update raises
InstabilityError naming the offending term, step, and batch sample.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .coeffs import KINDS, CoeffSet, fields_per_kind, static_load
from .errors import GridMismatchError, InstabilityError, ValidationError
from .grid import Field, Grid, Trajectory
from .stencils import (laplacian_array, upwind_diff_array, upwind_diff_transpose)


def _sum_over_batch(arr: np.ndarray, dim: int) -> np.ndarray:
    """Collapse leading batch axes so the result matches the spatial shape."""
    if arr.ndim == dim:
        return arr
    return arr.sum(axis=tuple(range(arr.ndim - dim)))


def _coerce_realized(realized: Mapping, grid: Grid) -> dict[str, tuple[np.ndarray, ...]]:
    out: dict[str, tuple[np.ndarray, ...]] = {}
    for kind, arrays in realized.items():
        if kind not in KINDS:
            raise ValidationError(f"unknown term kind {kind!r}")
        if isinstance(arrays, (Field, np.ndarray, float, int)):
            arrays = (arrays,)
        expected = fields_per_kind(kind, grid.dim)
        if len(arrays) != expected:
            raise ValidationError(f"{kind}: expected {expected} coefficient fields, "
                                  f"got {len(arrays)}")
        coerced = []
        for a in arrays:
            arr = np.asarray(a.values if isinstance(a, Field) else a, dtype=np.float64)
            try:
                np.broadcast_shapes(arr.shape, grid.shape)
            except ValueError as exc:
                raise ValidationError(
                    f"{kind}: coefficient shape {arr.shape} does not broadcast "
                    f"to grid shape {grid.shape}") from exc
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{kind}: coefficients must be finite")
            coerced.append(arr)
        out[kind] = tuple(coerced)
    return out


class StepKernel:
    """One grid plus realized coefficients, ready to step states explicitly.

    Advection upwind masks depend only on the (fixed) coefficient signs and
    are precomputed; the burgers mask follows the sign of its velocity
    b2 * U_{k-1} and is rebuilt each step.
    """

    def __init__(self, grid: Grid, realized: Mapping, nan_check: bool = True):
        self.grid = grid
        self.c_t = grid.c_t
        self.c_x = grid.c_x
        self.dim = grid.dim
        self.nan_check = nan_check
        self.realized = _coerce_realized(realized, grid)
        self.adv_masks = None
        if "advection" in self.realized:
            # ties at zero take the forward branch
            self.adv_masks = tuple(a >= 0.0 for a in self.realized["advection"])

    def rhs_terms(self, u: np.ndarray, u_prev: np.ndarray) -> dict[str, np.ndarray]:
        """Per-term contributions to du/dt (used for instability attribution)."""
        r = self.realized
        out: dict[str, np.ndarray] = {}
        if "source" in r:
            out["source"] = np.broadcast_to(r["source"][0], u.shape)
        if "linear" in r:
            out["linear"] = r["linear"][0] * u
        if "advection" in r:
            acc = np.zeros_like(u)
            for ax, (a2, mask) in enumerate(zip(r["advection"], self.adv_masks)):
                acc += a2 * upwind_diff_array(u, ax, self.c_x, self.dim, mask)
            out["advection"] = acc
        if "diffusion" in r:
            out["diffusion"] = r["diffusion"][0] * laplacian_array(u, self.c_x, self.dim)
        if "reaction" in r:
            out["reaction"] = r["reaction"][0] * (u - u * u)
        if "burgers" in r:
            v = r["burgers"][0] * u_prev
            mask = v >= 0.0
            grad_sum = np.zeros_like(u)
            for ax in range(self.dim):
                grad_sum += upwind_diff_array(u, ax, self.c_x, self.dim, mask)
            out["burgers"] = v * grad_sum
        return out

    def _rhs(self, u: np.ndarray, u_prev: np.ndarray) -> np.ndarray:
        r = self.realized
        acc = np.zeros_like(u)
        if "source" in r:
            acc += r["source"][0]
        if "linear" in r:
            acc += r["linear"][0] * u
        if "advection" in r:
            for ax, (a2, mask) in enumerate(zip(r["advection"], self.adv_masks)):
                acc += a2 * upwind_diff_array(u, ax, self.c_x, self.dim, mask)
        if "diffusion" in r:
            acc += r["diffusion"][0] * laplacian_array(u, self.c_x, self.dim)
        if "reaction" in r:
            acc += r["reaction"][0] * (u - u * u)
        if "burgers" in r:
            v = r["burgers"][0] * u_prev
            mask = v >= 0.0
            grad_sum = upwind_diff_array(u, 0, self.c_x, self.dim, mask)
            for ax in range(1, self.dim):
                grad_sum += upwind_diff_array(u, ax, self.c_x, self.dim, mask)
            acc += v * grad_sum
        return acc

    def step(self, u: np.ndarray, u_prev: np.ndarray, step_index: int = 0) -> np.ndarray:
        # overflow is detected by the guard below, not by numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            out = u + self.c_t * self._rhs(u, u_prev)
            # a single full reduction poisons on any NaN/Inf, so one check suffices
            if self.nan_check and not np.isfinite(np.sum(out)):
                self._raise_instability(u, u_prev, step_index)
        return out

    def _raise_instability(self, u, u_prev, step_index):
        term = "update"
        sample = None
        for kind, contrib in self.rhs_terms(u, u_prev).items():
            bad = ~np.isfinite(contrib)
            if bad.any():
                term = kind
                if contrib.ndim > self.dim:
                    per_sample = bad.reshape(bad.shape[:bad.ndim - self.dim] + (-1,)).any(axis=-1)
                    sample = int(np.argmax(per_sample.reshape(-1)))
                break
        else:
            # contributions finite but the sum overflowed
            total = u + self.c_t * self._rhs(u, u_prev)
            bad = ~np.isfinite(total)
            if total.ndim > self.dim and bad.any():
                per_sample = bad.reshape(bad.shape[:bad.ndim - self.dim] + (-1,)).any(axis=-1)
                sample = int(np.argmax(per_sample.reshape(-1)))
        where = f" (batch sample {sample})" if sample is not None else ""
        raise InstabilityError(
            f"non-finite state after step {step_index}, {term} term{where}; "
            "the realized coefficients violate the step's stability budget",
            step=step_index, term=term, sample=sample)

    def step_vjp(self, lam: np.ndarray, u: np.ndarray, u_prev: np.ndarray,
                 grads: dict[str, list[np.ndarray]]) -> tuple[np.ndarray, np.ndarray | None]:
        """Adjoint of one step.

        Given lam = dL/dU_{k+1}, accumulates dL/d(realized coefficient) into
        ``grads`` and returns this step's contributions (dL/dU_k, dL/dU_{k-1});
        the second is None unless the burgers term is active. Upwind masks are
        treated as locally constant, which is the almost-everywhere derivative.
        """
        r = self.realized
        q = self.c_t * lam
        adj_u = lam.copy()
        adj_uprev = None
        if "source" in r:
            grads["source"][0] += _sum_over_batch(q, self.dim)
        if "linear" in r:
            grads["linear"][0] += _sum_over_batch(q * u, self.dim)
            adj_u += r["linear"][0] * q
        if "advection" in r:
            for ax, (a2, mask) in enumerate(zip(r["advection"], self.adv_masks)):
                du = upwind_diff_array(u, ax, self.c_x, self.dim, mask)
                grads["advection"][ax] += _sum_over_batch(q * du, self.dim)
                adj_u += upwind_diff_transpose(a2 * q, ax, self.c_x, self.dim, mask)
        if "diffusion" in r:
            lap_u = laplacian_array(u, self.c_x, self.dim)
            grads["diffusion"][0] += _sum_over_batch(q * lap_u, self.dim)
            adj_u += laplacian_array(r["diffusion"][0] * q, self.c_x, self.dim)
        if "reaction" in r:
            grads["reaction"][0] += _sum_over_batch(q * (u - u * u), self.dim)
            adj_u += r["reaction"][0] * q * (1.0 - 2.0 * u)
        if "burgers" in r:
            b2 = r["burgers"][0]
            v = b2 * u_prev
            mask = v >= 0.0
            grad_sum = upwind_diff_array(u, 0, self.c_x, self.dim, mask)
            for ax in range(1, self.dim):
                grad_sum += upwind_diff_array(u, ax, self.c_x, self.dim, mask)
            grads["burgers"][0] += _sum_over_batch(q * u_prev * grad_sum, self.dim)
            adj_uprev = b2 * q * grad_sum
            vq = v * q
            for ax in range(self.dim):
                adj_u += upwind_diff_transpose(vq, ax, self.c_x, self.dim, mask)
        return adj_u, adj_uprev

    def zero_grads(self) -> dict[str, list[np.ndarray]]:
        """Realized-space gradient accumulators matching the coefficient layout."""
        return {kind: [np.zeros(self.grid.shape) for _ in arrays]
                for kind, arrays in self.realized.items()}


def rollout_slices(kernel: StepKernel, u0: np.ndarray) -> np.ndarray:
    """Run the stepper, returning the stored slices stacked on a new axis 0."""
    grid = kernel.grid
    u_prev = u0
    u = u0
    stored = [u0]
    k = 0
    for _ in range(grid.t_slices):
        for _ in range(grid.steps_per_slice):
            u_next = kernel.step(u, u_prev, step_index=k)
            u_prev, u = u, u_next
            k += 1
        stored.append(u)
    return np.stack(stored)


def euler_step(u: Field, coeffs: CoeffSet, u_prev: Field | None = None) -> Field:
    """One explicit step; u_prev defaults to u (the first-step convention)."""
    if u.grid != coeffs.grid:
        raise GridMismatchError("state and coefficients live on different grids")
    if u_prev is not None and u_prev.grid != u.grid:
        raise GridMismatchError("u_prev lives on a different grid")
    kernel = StepKernel(coeffs.grid, coeffs.realized())
    prev = u.values if u_prev is None else u_prev.values
    return Field(u.grid, kernel.step(u.values, prev))


def solve(u0: Field, coeffs: CoeffSet) -> Trajectory:
    """Roll the stepper over the grid's full time range from one initial state."""
    if u0.grid != coeffs.grid:
        raise GridMismatchError("initial state and coefficients live on different grids")
    kernel = StepKernel(coeffs.grid, coeffs.realized())
    return Trajectory.from_stacked(coeffs.grid, rollout_slices(kernel, u0.values))


def solve_realized(u0: Field, realized: Mapping, grid: Grid,
                   validate_load: bool = True) -> Trajectory:
    """Solve with explicitly given coefficient fields (no parameterization).

    Used for ground-truth solves during data generation. When validate_load
    is set, the state-independent part of the update load must be <= 1
    everywhere; the burgers part is only guarded at runtime.
    """
    if u0.grid != grid:
        raise GridMismatchError("initial state lives on a different grid")
    coerced = _coerce_realized(realized, grid)
    if validate_load:
        load = float(np.max(static_load(grid, coerced)))
        if load > 1.0 + 1e-9:
            raise ValidationError(
                f"explicit-update load {load:.6g} exceeds 1 on this grid; "
                "refine the time step")
    kernel = StepKernel(grid, coerced)
    return Trajectory.from_stacked(grid, rollout_slices(kernel, u0.values))
