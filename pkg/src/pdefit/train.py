"""Adam training of coefficient parameters against trajectory data.

Datasets are split 75/12.5/12.5 into train/validation/test with a seeded
permutation. Training stops at the epoch cap, when the epoch's training loss
drops below a threshold, or when the validation loss has not improved for
``patience`` epochs. All randomness (split, init, batch order) derives from
the config seed, so a run is reproducible bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .coeffs import CoeffSet, TermSpec, init_theta
from .errors import InstabilityError, ValidationError
from .learn import loss_and_grad_arrays
from .solver import StepKernel, rollout_slices

# Adam moment decay rates; the usual defaults.
BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8

SPLIT_FRACTIONS = (0.75, 0.125, 0.125)


@dataclass
class OptState:
    """Adam first/second moment accumulators, laid out like the parameters."""

    t: int
    m: dict[str, list[np.ndarray]]
    v: dict[str, list[np.ndarray]]

    @classmethod
    def for_coeffs(cls, coeffs: CoeffSet) -> "OptState":
        zeros = lambda: {k: [np.zeros_like(a) for a in arrays]
                         for k, arrays in coeffs.theta.items()}
        return cls(t=0, m=zeros(), v=zeros())


def adam_update(theta: Mapping[str, tuple[np.ndarray, ...]],
                grads: Mapping[str, tuple[np.ndarray, ...]],
                state: OptState, lr: float,
                beta1: float = BETA1, beta2: float = BETA2,
                eps: float = EPS) -> dict[str, tuple[np.ndarray, ...]]:
    """One bias-corrected Adam step; mutates the moments, returns new parameters."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    out: dict[str, tuple[np.ndarray, ...]] = {}
    for kind, arrays in theta.items():
        new_arrays = []
        for i, th in enumerate(arrays):
            g = grads[kind][i]
            m = state.m[kind][i]
            v = state.v[kind][i]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            new_arrays.append(th - lr * (m / bc1) / (np.sqrt(v / bc2) + eps))
        out[kind] = tuple(new_arrays)
    return out


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the training loop."""

    seed: int
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-2
    patience: int = 20
    min_improve: float = 5e-4
    loss_threshold: float | None = None
    checkpoint_stride: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ValidationError("lr must be positive")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if self.checkpoint_stride < 1:
            raise ValidationError("checkpoint_stride must be >= 1")

    def to_dict(self) -> dict:
        return {"seed": self.seed, "epochs": self.epochs, "batch_size": self.batch_size,
                "lr": self.lr, "patience": self.patience, "min_improve": self.min_improve,
                "loss_threshold": self.loss_threshold,
                "checkpoint_stride": self.checkpoint_stride}


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainResult:
    coeffs: CoeffSet
    history: list[HistoryRow]
    split: dict[str, list[int]]
    stop_reason: str

    def epochs_to_threshold(self, threshold: float) -> int | None:
        """First epoch whose training loss is below threshold, if any."""
        for row in self.history:
            if row.train_loss < threshold:
                return row.epoch
        return None


def split_indices(num_samples: int, seed: int) -> dict[str, list[int]]:
    """Seeded 75/12.5/12.5 train/val/test split."""
    if num_samples < 8:
        raise ValidationError(
            f"need at least 8 samples for a 75/12.5/12.5 split, got {num_samples}")
    rng = np.random.default_rng([seed, 101])
    perm = rng.permutation(num_samples)
    n_train = int(num_samples * SPLIT_FRACTIONS[0])
    n_val = int(num_samples * SPLIT_FRACTIONS[1])
    n_val = max(n_val, 1)
    return {"train": [int(i) for i in perm[:n_train]],
            "val": [int(i) for i in perm[n_train:n_train + n_val]],
            "test": [int(i) for i in perm[n_train + n_val:]]}


def dataset_loss(coeffs: CoeffSet, u0s: np.ndarray, targets: np.ndarray,
                 batch_size: int = 32) -> float:
    """Forward-only mean trajectory loss over a stack of samples."""
    grid = coeffs.grid
    kernel = StepKernel(grid, coeffs.realized())
    n_t = grid.t_slices
    total = 0.0
    count = u0s.shape[0]
    for lo in range(0, count, batch_size):
        chunk = slice(lo, min(lo + batch_size, count))
        preds = rollout_slices(kernel, u0s[chunk])  # (n_t+1, b, *spatial)
        diffs = preds[1:] - np.moveaxis(targets[chunk], 0, 1)
        total += float(np.sum(diffs * diffs)) * grid.cell_volume / n_t
    return total / count


def train(dataset, specs: Mapping[str, TermSpec], config: TrainConfig) -> TrainResult:
    """Fit coefficient parameters to a dataset's trajectories.

    ``dataset`` is a datagen.Dataset (manifest plus trajectories). Raises
    InstabilityError annotated with the epoch and dataset sample if a batch
    blows up mid-training.
    """
    grid = dataset.manifest.grid
    trajs = dataset.trajectories
    data = np.stack([t.stacked() for t in trajs])  # (m, n_t+1, *spatial)
    u0s = data[:, 0]
    targets = data[:, 1:]
    split = split_indices(len(trajs), config.seed)
    train_idx = np.asarray(split["train"], dtype=np.intp)
    val_idx = np.asarray(split["val"], dtype=np.intp)

    coeffs = init_theta(grid, specs, [config.seed, 202])
    opt = OptState.for_coeffs(coeffs)
    shuffle_rng = np.random.default_rng([config.seed, 303])

    history: list[HistoryRow] = []
    best_val = np.inf
    stale = 0
    stop_reason = "epoch_cap"
    for epoch in range(1, config.epochs + 1):
        tic = time.perf_counter()
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        loss_sum = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            try:
                loss, grads = loss_and_grad_arrays(
                    coeffs, u0s[batch], targets[batch], stride=config.checkpoint_stride)
            except InstabilityError as err:
                sample = int(batch[err.sample]) if err.sample is not None else None
                raise InstabilityError(
                    f"epoch {epoch}: {err}" + (f" [dataset sample {sample}]" if sample is not None else ""),
                    step=err.step, term=err.term, sample=sample) from err
            theta = adam_update(coeffs.theta, grads, opt, lr=config.lr)
            coeffs = coeffs.with_theta(theta)
            loss_sum += loss * len(batch)
        train_loss = loss_sum / len(order)
        val_loss = dataset_loss(coeffs, u0s[val_idx], targets[val_idx],
                                batch_size=config.batch_size)
        history.append(HistoryRow(epoch=epoch, train_loss=train_loss,
                                  val_loss=val_loss,
                                  seconds=time.perf_counter() - tic))
        if config.loss_threshold is not None and train_loss < config.loss_threshold:
            stop_reason = "train_threshold"
            break
        if val_loss < best_val - config.min_improve:
            best_val = val_loss
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                stop_reason = "early_stop"
                break
    return TrainResult(coeffs=coeffs, history=history, split=split,
                       stop_reason=stop_reason)
