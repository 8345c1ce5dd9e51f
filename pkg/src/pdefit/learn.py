"""Trajectory loss and hand-written reverse-mode gradients.

The forward pass records a tape of checkpointed states; the reverse pass
replays each segment with the same stepper (so recomputed states are bitwise
identical to the forward ones) and pulls the loss adjoint back step by step
with the kernel's per-step vector-Jacobian products. Gradients come out in
realized-coefficient space and are chained through the sigmoid bounding to
the raw parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import expit

from .coeffs import CoeffSet
from .errors import GridMismatchError, ValidationError
from .grid import Field, Grid, Trajectory, check_same_grid, grid_norm
from .solver import StepKernel


def traj_loss(pred: Trajectory, target: Trajectory) -> float:
    """Mean squared grid-norm error over stored slices 1..T.

    Slice 0 is excluded: it is the shared initial state, not a prediction.
    """
    check_same_grid(pred, target)
    n_t = pred.grid.t_slices
    total = 0.0
    for k in range(1, n_t + 1):
        diff = pred.slices[k].values - target.slices[k].values
        total += grid_norm(Field(pred.grid, diff)) ** 2
    return total / n_t


@dataclass
class Tape:
    """Checkpointed forward states of one rollout.

    checkpoints holds (step k, U_k, U_{k-1}) every ``stride`` steps starting
    at 0; slice_preds stacks the states stored at slice boundaries (axis 0,
    including slice 0). Backward replays each inter-checkpoint segment with
    the same kernel, so the recomputed states match the forward pass bitwise.
    """

    stride: int
    total_steps: int
    checkpoints: list[tuple[int, np.ndarray, np.ndarray]]
    slice_preds: np.ndarray


def record_rollout(kernel: StepKernel, u0: np.ndarray, stride: int = 1) -> Tape:
    """Run the stepper, keeping checkpoints and slice predictions."""
    if stride < 1:
        raise ValidationError(f"checkpoint stride must be >= 1, got {stride}")
    grid = kernel.grid
    total = grid.total_steps
    checkpoints = [(0, u0, u0)]
    stored = [u0]
    u_prev = u0
    u = u0
    for k in range(total):
        u_next = kernel.step(u, u_prev, step_index=k)
        u_prev, u = u, u_next
        if (k + 1) % stride == 0 and (k + 1) < total:
            checkpoints.append((k + 1, u, u_prev))
        if (k + 1) % grid.steps_per_slice == 0:
            stored.append(u)
    return Tape(stride=stride, total_steps=total, checkpoints=checkpoints,
                slice_preds=np.stack(stored))


def _replay_segment(kernel: StepKernel, start: tuple[int, np.ndarray, np.ndarray],
                    upto: int) -> dict[int, np.ndarray]:
    """Recompute states U_k for k in [start, upto] from one checkpoint."""
    k0, u, u_prev = start
    states = {k0 - 1: u_prev, k0: u}
    for k in range(k0, upto):
        u_next = kernel.step(states[k], states[k - 1], step_index=k)
        states[k + 1] = u_next
    return states


def backward_from_tape(kernel: StepKernel, tape: Tape,
                       adj_at_step: Mapping[int, np.ndarray]) -> dict[str, list[np.ndarray]]:
    """Pull loss adjoints back through the rollout.

    adj_at_step maps step indices to dL/dU_k seeds (the loss touches only
    stored slices). Returns accumulated gradients in realized-coefficient
    space, laid out like kernel.zero_grads().
    """
    grads = kernel.zero_grads()
    adj: dict[int, np.ndarray] = {k: v.copy() for k, v in adj_at_step.items()}
    checkpoints = tape.checkpoints
    upper = tape.total_steps
    for ci in range(len(checkpoints) - 1, -1, -1):
        k0 = checkpoints[ci][0]
        # transitions k0..upper-1 need states up to upper-1 only
        states = _replay_segment(kernel, checkpoints[ci], upper - 1)
        for k in range(upper - 1, k0 - 1, -1):
            lam = adj.pop(k + 1, None)
            if lam is None:
                continue
            adj_u, adj_uprev = kernel.step_vjp(lam, states[k], states[max(k - 1, 0)],
                                               grads)
            if k in adj:
                adj[k] += adj_u
            else:
                adj[k] = adj_u
            if adj_uprev is not None and k >= 1:
                if k - 1 in adj:
                    adj[k - 1] += adj_uprev
                else:
                    adj[k - 1] = adj_uprev
        upper = k0
    return grads


def _sigmoid_chain(coeffs: CoeffSet,
                   grads_realized: Mapping[str, list[np.ndarray]]) -> dict[str, tuple[np.ndarray, ...]]:
    """Convert realized-space gradients to raw-parameter gradients."""
    out: dict[str, tuple[np.ndarray, ...]] = {}
    for kind in coeffs.active_kinds():
        spec = coeffs.specs[kind]
        width = spec.hi - spec.lo
        arrays = []
        for theta, g in zip(coeffs.theta[kind], grads_realized[kind]):
            s = expit(theta)
            arrays.append(g * width * s * (1.0 - s))
        out[kind] = tuple(arrays)
    return out


def loss_and_grad_arrays(coeffs: CoeffSet, u0: np.ndarray, targets: np.ndarray,
                         stride: int = 1) -> tuple[float, dict[str, tuple[np.ndarray, ...]]]:
    """Loss and raw-parameter gradient for a batch of trajectories.

    u0 has shape (batch, *spatial) or (*spatial); targets holds the stored
    slices 1..T with shape (batch, T, *spatial) or (T, *spatial). The loss is
    the squared grid-norm error averaged over slices and batch.
    """
    grid = coeffs.grid
    dim = grid.dim
    if u0.ndim == dim:
        u0 = u0[np.newaxis]
        targets = targets[np.newaxis]
    n_t = grid.t_slices
    batch = u0.shape[0]
    if targets.shape != (batch, n_t) + grid.shape:
        raise ValidationError(
            f"targets have shape {targets.shape}, expected {(batch, n_t) + grid.shape}")
    kernel = StepKernel(grid, coeffs.realized())
    tape = record_rollout(kernel, u0, stride=stride)
    # slice_preds: (n_t + 1, batch, *spatial); targets: (batch, n_t, ...)
    diffs = tape.slice_preds[1:] - np.moveaxis(targets, 0, 1)
    weight = grid.cell_volume / (batch * n_t)
    loss = float(np.sum(diffs * diffs) * weight)
    seeds = {}
    for s in range(1, n_t + 1):
        seeds[s * grid.steps_per_slice] = (2.0 * weight) * diffs[s - 1]
    grads_realized = backward_from_tape(kernel, tape, seeds)
    return loss, _sigmoid_chain(coeffs, grads_realized)


def grad_theta(coeffs: CoeffSet, u0: Field, target: Trajectory,
               stride: int = 1) -> tuple[float, dict[str, tuple[Field, ...]]]:
    """Loss and gradient for a single trajectory, as fields.

    ``target`` supplies slices 1..T; its slice 0 is ignored in the loss (the
    solve starts from ``u0``).
    """
    grid = coeffs.grid
    if u0.grid != grid:
        raise GridMismatchError("initial state lives on a different grid")
    if target.grid != grid:
        raise GridMismatchError("target lives on a different grid")
    targets = np.stack([s.values for s in target.slices[1:]])
    loss, grads = loss_and_grad_arrays(coeffs, u0.values, targets, stride=stride)
    fields = {kind: tuple(Field(grid, g) for g in arrays)
              for kind, arrays in grads.items()}
    return loss, fields
