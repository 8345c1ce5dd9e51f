"""Evaluation metrics: trajectory errors, distribution-shift sweeps, recovery.

NMSE of one trajectory is residual energy over target energy, summed across
stored slices 1..T (slice 0 is the shared input); set-level numbers average
the per-trajectory ratios. The distribution-shift sweep generates fresh test
sets from tilted spectra placed at requested squared Hellinger distances and
reports the model's relative error at each level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .coeffs import CoeffSet
from .datagen import (CoeffFieldSpec, Dataset, DatasetManifest, build_dataset,
                      gen_coeff_field, hellinger2, solve_shift_scale, spectrum_tilt)
from .errors import DegenerateInputError, GridMismatchError, ValidationError
from .grid import Field, Trajectory, check_same_grid, grid_norm
from .solver import StepKernel, rollout_slices
from .train import TrainConfig, train


def _traj_energies(pred: Trajectory, target: Trajectory,
                   final_only: bool) -> tuple[float, float]:
    check_same_grid(pred, target)
    n_t = pred.grid.t_slices
    ks = [n_t] if final_only else list(range(1, n_t + 1))
    vol = pred.grid.cell_volume
    num = 0.0
    den = 0.0
    for k in ks:
        d = pred.slices[k].values - target.slices[k].values
        num += float(np.sum(d * d)) * vol
        den += float(np.sum(target.slices[k].values ** 2)) * vol
    return num, den


def nmse(pred: Trajectory, target: Trajectory, final_only: bool = False) -> float:
    """Residual energy over target energy across stored slices 1..T."""
    num, den = _traj_energies(pred, target, final_only)
    if den == 0.0:
        raise DegenerateInputError("target trajectory has zero energy; NMSE undefined")
    return num / den


def relative_error(pred: Trajectory, target: Trajectory,
                   final_only: bool = False) -> float:
    """Relative L2 error, the square root of the NMSE."""
    return math.sqrt(nmse(pred, target, final_only=final_only))


def predict(coeffs: CoeffSet, initial_states: Sequence[Field]) -> list[Trajectory]:
    """Solve the model forward from each initial state."""
    grid = coeffs.grid
    for u0 in initial_states:
        if u0.grid != grid:
            raise GridMismatchError("initial state lives on a different grid")
    kernel = StepKernel(grid, coeffs.realized())
    u0s = np.stack([u.values for u in initial_states])
    stored = rollout_slices(kernel, u0s)  # (t_slices+1, batch, *spatial)
    stacked = np.moveaxis(stored, 0, 1)
    return [Trajectory.from_stacked(grid, stacked[i]) for i in range(len(initial_states))]


def _set_metrics(coeffs: CoeffSet, trajectories: Sequence[Trajectory]) -> dict[str, float]:
    preds = predict(coeffs, [t.slices[0] for t in trajectories])
    ratios = [nmse(p, t) for p, t in zip(preds, trajectories)]
    finals = [nmse(p, t, final_only=True) for p, t in zip(preds, trajectories)]
    rels = [math.sqrt(r) for r in ratios]
    return {"nmse_mean_slices": float(np.mean(ratios)),
            "nmse_final_slice": float(np.mean(finals)),
            "relative_error": float(np.mean(rels))}


def coeff_recovery_error(coeffs: CoeffSet,
                         truth: Mapping[str, tuple[CoeffFieldSpec, ...]]) -> dict[str, float]:
    """Relative grid-norm error of each realized coefficient against the truth.

    For multi-field terms the energies are pooled across fields before the
    ratio is taken.
    """
    realized = coeffs.realized_fields()
    out: dict[str, float] = {}
    for kind, cfs in truth.items():
        if kind not in realized:
            raise ValidationError(f"model has no active {kind!r} term to compare")
        num = 0.0
        den = 0.0
        for learned, cf in zip(realized[kind], cfs):
            exact = gen_coeff_field(cf, coeffs.grid)
            num += grid_norm(Field(coeffs.grid, learned.values - exact.values)) ** 2
            den += grid_norm(exact) ** 2
        if den == 0.0:
            raise DegenerateInputError(
                f"{kind}: ground truth has zero norm; relative error undefined")
        out[kind] = math.sqrt(num / den)
    return out


@dataclass(frozen=True)
class OodPoint:
    """Model error on a fresh test set drawn at one spectral-shift level."""

    target_h2: float
    achieved_h2: float
    scale: float
    relative_error: float
    nmse_mean_slices: float
    n_samples: int


def _derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def ood_sweep(coeffs: CoeffSet, manifest: DatasetManifest,
              levels: Sequence[float], n_samples: int = 25,
              seed: int = 1234) -> list[OodPoint]:
    """Relative error on fresh test sets at requested H^2 distances.

    Each level gets its own tilted spectrum (level 0 is the base) and a fresh
    seeded draw; samples are normalized exactly like the training pipeline
    (normalization is forced on, matching the shift protocol).
    """
    points = []
    for idx, level in enumerate(levels):
        scale = solve_shift_scale(manifest.spectrum, float(level))
        shifted = spectrum_tilt(manifest.spectrum, scale)
        test_manifest = replace(manifest, spectrum=shifted, samples=int(n_samples),
                                seed=_derived_seed(seed, idx), normalize=True)
        dataset = build_dataset(test_manifest)
        metrics = _set_metrics(coeffs, dataset.trajectories)
        points.append(OodPoint(target_h2=float(level),
                               achieved_h2=hellinger2(manifest.spectrum, shifted),
                               scale=scale,
                               relative_error=metrics["relative_error"],
                               nmse_mean_slices=metrics["nmse_mean_slices"],
                               n_samples=int(n_samples)))
    return points


@dataclass(frozen=True)
class VariancePoint:
    """Error after retraining with one ground-truth field's amplitude changed."""

    amplitude: float
    relative_error: float
    nmse_mean_slices: float
    recovery_error: float
    stop_reason: str


def variance_sweep(manifest: DatasetManifest, config: TrainConfig,
                   amplitudes: Sequence[float], kind: str = "diffusion",
                   field_index: int = 0) -> list[VariancePoint]:
    """Regenerate, retrain, and evaluate at each coefficient amplitude.

    Varies the sine amplitude of one ground-truth field, keeping everything
    else (bounds, spectrum, seeds) fixed, and reports held-out error plus
    recovery error per amplitude.
    """
    if kind not in manifest.truth:
        raise ValidationError(f"manifest has no ground-truth {kind!r} field")
    points = []
    for amp in amplitudes:
        cfs = list(manifest.truth[kind])
        cfs[field_index] = replace(cfs[field_index], amplitude=float(amp))
        truth = dict(manifest.truth)
        truth[kind] = tuple(cfs)
        m2 = replace(manifest, truth=truth)
        dataset = build_dataset(m2)
        result = train(dataset, m2.terms, config)
        test = [dataset.trajectories[i] for i in result.split["test"]]
        metrics = _set_metrics(result.coeffs, test)
        recovery = coeff_recovery_error(result.coeffs, m2.truth)
        points.append(VariancePoint(amplitude=float(amp),
                                    relative_error=metrics["relative_error"],
                                    nmse_mean_slices=metrics["nmse_mean_slices"],
                                    recovery_error=recovery[kind],
                                    stop_reason=result.stop_reason))
    return points


@dataclass
class EvalReport:
    """Held-out metrics of one model on one dataset, plus optional sweeps."""

    n_samples: int
    nmse_mean_slices: float
    nmse_final_slice: float
    relative_error: float
    parameter_count: int
    coeff_recovery: dict[str, float] | None = None
    ood: list[OodPoint] | None = None
    ood_seed: int | None = None

    def to_dict(self) -> dict:
        d = {"n_samples": self.n_samples,
             "nmse_mean_slices": self.nmse_mean_slices,
             "nmse_final_slice": self.nmse_final_slice,
             "relative_error": self.relative_error,
             "parameter_count": self.parameter_count,
             "coeff_recovery": self.coeff_recovery}
        if self.ood is not None:
            d["ood_seed"] = self.ood_seed
            d["ood"] = [{"target_h2": p.target_h2, "achieved_h2": p.achieved_h2,
                         "scale": p.scale, "relative_error": p.relative_error,
                         "nmse_mean_slices": p.nmse_mean_slices,
                         "n_samples": p.n_samples} for p in self.ood]
        return d


def build_eval_report(coeffs: CoeffSet, dataset: Dataset,
                      indices: Sequence[int] | None = None,
                      ood_levels: Sequence[float] | None = None,
                      ood_samples: int = 25, ood_seed: int = 1234,
                      include_recovery: bool = True) -> EvalReport:
    """Evaluate a model on (a subset of) a dataset.

    ``indices`` selects the evaluation samples (default: all). The recovery
    comparison uses the manifest's ground truth; the shift sweep runs only
    when levels are given.
    """
    trajs = dataset.trajectories
    if indices is None:
        indices = list(range(len(trajs)))
    subset = [trajs[int(i)] for i in indices]
    if not subset:
        raise ValidationError("no samples selected for evaluation")
    metrics = _set_metrics(coeffs, subset)
    recovery = None
    if include_recovery:
        recovery = coeff_recovery_error(coeffs, dataset.manifest.truth)
    ood = None
    if ood_levels is not None:
        ood = ood_sweep(coeffs, dataset.manifest, ood_levels,
                        n_samples=ood_samples, seed=ood_seed)
    return EvalReport(n_samples=len(subset),
                      nmse_mean_slices=metrics["nmse_mean_slices"],
                      nmse_final_slice=metrics["nmse_final_slice"],
                      relative_error=metrics["relative_error"],
                      parameter_count=coeffs.param_count,
                      coeff_recovery=recovery,
                      ood=ood, ood_seed=ood_seed if ood is not None else None)
