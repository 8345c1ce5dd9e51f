"""Trajectory data from Gaussian random fields and a fine-grid reference solve.

Initial states are drawn from a Gaussian measure over a real Fourier family:
one cos and one sin entry per integer wavevector in the nonnegative lattice
(the sin at k = 0 is dropped), with a diagonal covariance. Samples are
synthesized on a refined grid, optionally normalized to unit variance, evolved
with the ground-truth coefficients, and block-averaged down to the training
grid. Every sample's draw derives from (seed, sample index), so a manifest
pins the dataset bit for bit.

Squared Hellinger distances between two spectra close over the union of
their modes; a mode present in exactly one spectrum makes the measures
mutually singular (distance one). The distribution-shift family tilts each
mode's variance by scale**|k|, which changes relative mode weights and so
survives per-sample variance normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import product
from typing import Mapping

import numpy as np

from .coeffs import KINDS, TermSpec, fields_per_kind
from .errors import (DegenerateInputError, UnreachableTargetError, ValidationError)
from .grid import Field, Grid, Trajectory
from .solver import StepKernel, rollout_slices, solve_realized

# Reference |u| assumed when budgeting the state-dependent burgers load on
# the fine grid (about three standard deviations of a normalized sample).
FINE_REF_U = 3.0

# Target fraction of the stability budget used by the fine-grid stepper.
FINE_LOAD_TARGET = 0.9


@dataclass(frozen=True)
class ModeEntry:
    """One basis function of the random field: cos or sin at a wavevector."""

    k: tuple[int, ...]
    kind: str
    var: float

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(int(c) for c in self.k))
        if self.kind not in ("cos", "sin"):
            raise ValidationError(f"mode kind must be 'cos' or 'sin', got {self.kind!r}")
        if any(c < 0 for c in self.k):
            raise ValidationError(f"wavevector components must be >= 0, got {self.k}")
        if self.kind == "sin" and all(c == 0 for c in self.k):
            raise ValidationError("the sin basis function at k = 0 vanishes")
        if not (np.isfinite(self.var) and self.var >= 0):
            raise ValidationError(f"mode variance must be finite and >= 0, got {self.var}")

    @property
    def k_norm(self) -> float:
        return math.sqrt(sum(c * c for c in self.k))

    def to_dict(self) -> dict:
        return {"k": list(self.k), "kind": self.kind, "var": self.var}

    @classmethod
    def from_dict(cls, d: dict) -> "ModeEntry":
        return cls(k=tuple(d["k"]), kind=str(d["kind"]), var=float(d["var"]))


@dataclass(frozen=True)
class SpectrumSpec:
    """Diagonal Gaussian measure over the real Fourier family."""

    dim: int
    entries: tuple[ModeEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.dim not in (1, 2, 3):
            raise ValidationError(f"dim must be 1..3, got {self.dim}")
        if not self.entries:
            raise ValidationError("spectrum needs at least one mode")
        seen = set()
        for e in self.entries:
            if len(e.k) != self.dim:
                raise ValidationError(f"mode {e.k} does not match dim {self.dim}")
            key = (e.k, e.kind)
            if key in seen:
                raise ValidationError(f"duplicate mode {key}")
            seen.add(key)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "SpectrumSpec":
        return cls(dim=int(d["dim"]),
                   entries=tuple(ModeEntry.from_dict(e) for e in d["entries"]))


def default_spectrum(dim: int, max_mode: int = 2, amplitude: float = 1.0,
                     decay: float = 2.0) -> SpectrumSpec:
    """Power-law spectrum: var(k) = amplitude * (1 + |k|^2)^(-decay)."""
    if max_mode < 0:
        raise ValidationError("max_mode must be >= 0")
    if amplitude <= 0:
        raise ValidationError("amplitude must be > 0")
    entries = []
    for k in product(range(max_mode + 1), repeat=dim):
        var = amplitude * (1.0 + sum(c * c for c in k)) ** (-decay)
        entries.append(ModeEntry(k=k, kind="cos", var=var))
        if any(c != 0 for c in k):
            entries.append(ModeEntry(k=k, kind="sin", var=var))
    return SpectrumSpec(dim=dim, entries=tuple(entries))


def spectrum_tilt(spec: SpectrumSpec, scale: float) -> SpectrumSpec:
    """Shifted spectrum: each mode's variance scaled by scale**|k|_2.

    The k = 0 band is unchanged (scale**0), higher bands are re-weighted, so
    the shifted samples differ from the originals even after per-sample
    variance normalization.
    """
    if not (np.isfinite(scale) and scale > 0):
        raise ValidationError(f"scale must be positive and finite, got {scale}")
    return SpectrumSpec(spec.dim, tuple(
        replace(e, var=e.var * scale ** e.k_norm) for e in spec.entries))


def hellinger2(a: SpectrumSpec, b: SpectrumSpec) -> float:
    """Squared Hellinger distance between two diagonal Gaussian spectra.

    Computed in log space over the union of modes:
    H^2 = 1 - prod_i (va_i vb_i)^{1/4} / ((va_i + vb_i)/2)^{1/2}.
    A mode carried by exactly one spectrum makes the measures mutually
    singular, so the distance is exactly one; modes with zero variance on
    both sides are absent from both measures and are dropped.
    """
    if a.dim != b.dim:
        raise ValidationError(f"spectra have different dims: {a.dim} vs {b.dim}")
    va = {(e.k, e.kind): e.var for e in a.entries}
    vb = {(e.k, e.kind): e.var for e in b.entries}
    log_bc = 0.0
    for key in sorted(set(va) | set(vb)):
        x = va.get(key, 0.0)
        y = vb.get(key, 0.0)
        if x == 0.0 and y == 0.0:
            continue
        if x == 0.0 or y == 0.0:
            return 1.0
        log_bc += 0.25 * (math.log(x) + math.log(y)) - 0.5 * math.log(0.5 * (x + y))
    return 1.0 - math.exp(log_bc)


def solve_shift_scale(spec: SpectrumSpec, target_h2: float, tol: float = 1e-12,
                      max_scale: float = 1e9) -> float:
    """Tilt scale whose shifted spectrum sits at the requested H^2 from the base.

    Bisects on log(scale) over scales >= 1, where the distance grows
    monotonically from zero. Raises UnreachableTargetError when the family
    cannot reach the target (H^2 = 1 is a hard limit: the tilted measure
    keeps every mode of the base).
    """
    if not (0.0 <= target_h2 < 1.0):
        raise UnreachableTargetError(
            f"target H^2 must be in [0, 1), got {target_h2}; the tilt family "
            "keeps both measures mutually absolutely continuous")
    if target_h2 == 0.0:
        return 1.0
    lo, hi = 1.0, 2.0
    while hellinger2(spec, spectrum_tilt(spec, hi)) < target_h2:
        hi *= 2.0
        if hi > max_scale:
            raise UnreachableTargetError(
                f"H^2 = {target_h2} is not reachable with tilt scales up to {max_scale} "
                "(the spectrum may have too few distinct bands)")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if hellinger2(spec, spectrum_tilt(spec, mid)) < target_h2:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * lo:
            break
    mid = math.sqrt(lo * hi)
    return mid


def basis_matrix(spec: SpectrumSpec, grid: Grid) -> np.ndarray:
    """Stacked basis functions of the spectrum on a grid: shape (modes, *grid.shape)."""
    if spec.dim != grid.dim:
        raise ValidationError(f"spectrum dim {spec.dim} != grid dim {grid.dim}")
    coords = grid.coords()
    out = np.empty((len(spec.entries),) + grid.shape)
    for i, e in enumerate(spec.entries):
        phase = np.zeros(grid.shape)
        for c, x in zip(e.k, coords):
            phase = phase + (2.0 * np.pi * c) * x
        out[i] = np.cos(phase) if e.kind == "cos" else np.sin(phase)
    return out


def _draw_mode_coeffs(spec: SpectrumSpec, rng: np.random.Generator) -> np.ndarray:
    stds = np.sqrt(np.array([e.var for e in spec.entries]))
    return rng.standard_normal(len(spec.entries)) * stds


def sample_initial(spec: SpectrumSpec, grid: Grid, rng) -> Field:
    """Draw one random field: sum of basis functions with Gaussian weights."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    coeffs = _draw_mode_coeffs(spec, rng)
    basis = basis_matrix(spec, grid)
    out = np.zeros(grid.shape)
    for c, b in zip(coeffs, basis):
        out += c * b
    return Field(grid, out)


@dataclass(frozen=True)
class CoeffFieldSpec:
    """Ground-truth coefficient field: mean + amplitude*sin(2 pi k.x + phase)."""

    mean: float
    amplitude: float = 0.0
    wavevector: tuple[int, ...] = ()
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "wavevector", tuple(int(c) for c in self.wavevector))
        for name in ("mean", "amplitude", "phase"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"coefficient field {name} must be finite")
        if self.amplitude < 0:
            raise ValidationError("amplitude must be >= 0")
        if self.amplitude > 0 and not self.wavevector:
            raise ValidationError("a varying coefficient field needs a wavevector")

    def to_dict(self) -> dict:
        return {"mean": self.mean, "amplitude": self.amplitude,
                "wavevector": list(self.wavevector), "phase": self.phase}

    @classmethod
    def from_dict(cls, d: dict) -> "CoeffFieldSpec":
        return cls(mean=float(d["mean"]), amplitude=float(d.get("amplitude", 0.0)),
                   wavevector=tuple(d.get("wavevector", ())),
                   phase=float(d.get("phase", 0.0)))


def gen_coeff_field(cf: CoeffFieldSpec, grid: Grid) -> Field:
    """Evaluate a ground-truth coefficient field on a grid."""
    if cf.amplitude == 0.0:
        return Field.constant(grid, cf.mean)
    if len(cf.wavevector) != grid.dim:
        raise ValidationError(
            f"wavevector {cf.wavevector} does not match grid dim {grid.dim}")
    phase = np.full(grid.shape, cf.phase)
    for c, x in zip(cf.wavevector, grid.coords()):
        phase = phase + (2.0 * np.pi * c) * x
    return Field(grid, cf.mean + cf.amplitude * np.sin(phase))


def check_truth_inside_bounds(cf: CoeffFieldSpec, spec: TermSpec) -> None:
    """The field's range [mean - amp, mean + amp] must sit strictly inside (lo, hi)."""
    if not (cf.mean - cf.amplitude > spec.lo and cf.mean + cf.amplitude < spec.hi):
        raise ValidationError(
            f"{spec.kind}: ground-truth range [{cf.mean - cf.amplitude}, "
            f"{cf.mean + cf.amplitude}] is not strictly inside the bounds "
            f"({spec.lo}, {spec.hi})")


def normalize_variance(u: Field) -> Field:
    """Rescale a field to unit variance around its (preserved) mean."""
    mean = float(np.mean(u.values))
    var = float(np.mean((u.values - mean) ** 2))
    if var <= 0.0:
        raise DegenerateInputError("cannot normalize a field with zero variance")
    return Field(u.grid, (u.values - mean) / math.sqrt(var) + mean)


def _normalize_batch(arr: np.ndarray, dim: int) -> np.ndarray:
    axes = tuple(range(arr.ndim - dim, arr.ndim))
    mean = arr.mean(axis=axes, keepdims=True)
    var = ((arr - mean) ** 2).mean(axis=axes, keepdims=True)
    bad = ~(var > 0.0)
    if bad.any():
        idx = int(np.argmax(bad.reshape(-1)))
        raise DegenerateInputError(f"sample {idx} has zero variance and cannot be normalized")
    return (arr - mean) / np.sqrt(var) + mean


def _coarsen_array(arr: np.ndarray, factor: int, dim: int) -> np.ndarray:
    spatial = arr.shape[arr.ndim - dim:]
    lead = arr.shape[:arr.ndim - dim]
    if any(n % factor != 0 for n in spatial):
        raise ValidationError(f"factor {factor} does not divide spatial shape {spatial}")
    interleaved = lead + tuple(s for n in spatial for s in (n // factor, factor))
    mean_axes = tuple(len(lead) + 2 * i + 1 for i in range(dim))
    return arr.reshape(interleaved).mean(axis=mean_axes)


def coarsen(u: Field, factor: int) -> Field:
    """Block-mean downsample by an integer factor along every axis.

    Averaging commutes with refinement by replication: coarsening a field
    that was obtained by repeating each coarse cell ``factor`` times returns
    the original field exactly.
    """
    if factor < 1:
        raise ValidationError(f"factor must be >= 1, got {factor}")
    g = u.grid
    if g.n % factor != 0:
        raise ValidationError(f"factor {factor} does not divide n = {g.n}")
    coarse = Grid(dim=g.dim, n=g.n // factor, c_t=g.c_t,
                  t_slices=g.t_slices, steps_per_slice=g.steps_per_slice)
    return Field(coarse, _coarsen_array(u.values, factor, g.dim))


def _realize_truth(truth: Mapping[str, tuple[CoeffFieldSpec, ...]],
                   grid: Grid) -> dict[str, tuple[np.ndarray, ...]]:
    return {kind: tuple(gen_coeff_field(cf, grid).values for cf in cfs)
            for kind, cfs in truth.items()}


def plan_fine_grid(coarse: Grid, fine_factor: int,
                   truth: Mapping[str, tuple[CoeffFieldSpec, ...]]) -> Grid:
    """Refined grid whose step keeps the ground-truth update load under budget.

    Spatial resolution is multiplied by fine_factor; the number of substeps
    per stored slice is the smallest integer keeping the fine-grid load at or
    below FINE_LOAD_TARGET (the burgers share is budgeted with FINE_REF_U).
    """
    if fine_factor < 1:
        raise ValidationError(f"fine_factor must be >= 1, got {fine_factor}")
    n_f = coarse.n * fine_factor
    c_x_f = 1.0 / n_f
    slice_dt = coarse.c_t * coarse.steps_per_slice
    rate = 0.0
    for kind, cfs in truth.items():
        peak = max(abs(cf.mean) + cf.amplitude for cf in cfs)
        if kind == "diffusion":
            rate += 2.0 * coarse.dim * peak / c_x_f ** 2
        elif kind == "advection":
            rate += sum(abs(cf.mean) + cf.amplitude for cf in cfs) / c_x_f
        elif kind == "burgers":
            rate += coarse.dim * peak * FINE_REF_U / c_x_f
    substeps = max(1, math.ceil(slice_dt * rate / FINE_LOAD_TARGET))
    return Grid(dim=coarse.dim, n=n_f, c_t=slice_dt / substeps,
                t_slices=coarse.t_slices, steps_per_slice=substeps)


def reference_solve(u0_fine: Field, realized_fine: Mapping, fine_grid: Grid,
                    coarse_grid: Grid) -> Trajectory:
    """Ground-truth solve on the fine grid, block-averaged to the coarse grid."""
    if fine_grid.dim != coarse_grid.dim:
        raise ValidationError("fine and coarse grids have different dims")
    if fine_grid.n % coarse_grid.n != 0:
        raise ValidationError(
            f"coarse n = {coarse_grid.n} does not divide fine n = {fine_grid.n}")
    if fine_grid.t_slices != coarse_grid.t_slices:
        raise ValidationError("fine and coarse grids must store the same slices")
    dt_f = fine_grid.c_t * fine_grid.steps_per_slice
    dt_c = coarse_grid.c_t * coarse_grid.steps_per_slice
    if not math.isclose(dt_f, dt_c, rel_tol=1e-9):
        raise ValidationError(
            f"slice intervals differ: fine {dt_f} vs coarse {dt_c}")
    factor = fine_grid.n // coarse_grid.n
    fine_traj = solve_realized(u0_fine, realized_fine, fine_grid)
    stacked = _coarsen_array(fine_traj.stacked(), factor, fine_grid.dim)
    return Trajectory.from_stacked(coarse_grid, stacked)


@dataclass(frozen=True)
class DatasetManifest:
    """Everything needed to regenerate a dataset bit for bit."""

    grid: Grid
    samples: int
    seed: int
    spectrum: SpectrumSpec
    truth: dict[str, tuple[CoeffFieldSpec, ...]]
    terms: dict[str, TermSpec]
    fine_factor: int = 4
    normalize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "truth",
                           {k: tuple(v) for k, v in self.truth.items()})
        object.__setattr__(self, "terms", dict(self.terms))
        if self.samples < 1:
            raise ValidationError("samples must be >= 1")
        if self.fine_factor < 1:
            raise ValidationError("fine_factor must be >= 1")
        if self.spectrum.dim != self.grid.dim:
            raise ValidationError("spectrum dim does not match the grid")
        active = {k for k, s in self.terms.items() if s.active}
        if set(self.truth) != active:
            raise ValidationError(
                f"ground-truth kinds {sorted(self.truth)} do not match active "
                f"terms {sorted(active)}")
        for kind, cfs in self.truth.items():
            if kind not in KINDS:
                raise ValidationError(f"unknown term kind {kind!r}")
            expected = fields_per_kind(kind, self.grid.dim)
            if len(cfs) != expected:
                raise ValidationError(
                    f"{kind}: expected {expected} ground-truth fields, got {len(cfs)}")
            for cf in cfs:
                check_truth_inside_bounds(cf, self.terms[kind])

    def to_dict(self) -> dict:
        return {"grid": self.grid.to_dict(), "samples": self.samples,
                "seed": self.seed, "spectrum": self.spectrum.to_dict(),
                "truth": {k: [cf.to_dict() for cf in v] for k, v in self.truth.items()},
                "terms": {k: s.to_dict() for k, s in self.terms.items()},
                "fine_factor": self.fine_factor, "normalize": self.normalize}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(grid=Grid.from_dict(d["grid"]), samples=int(d["samples"]),
                   seed=int(d["seed"]),
                   spectrum=SpectrumSpec.from_dict(d["spectrum"]),
                   truth={k: tuple(CoeffFieldSpec.from_dict(cf) for cf in v)
                          for k, v in d["truth"].items()},
                   terms={k: TermSpec.from_dict(s) for k, s in d["terms"].items()},
                   fine_factor=int(d["fine_factor"]),
                   normalize=bool(d["normalize"]))


@dataclass
class Dataset:
    """A manifest plus the trajectories it generates."""

    manifest: DatasetManifest
    trajectories: list[Trajectory]


def build_dataset(manifest: DatasetManifest) -> Dataset:
    """Generate the dataset a manifest describes.

    Per sample: draw mode weights with the (seed, index) stream, synthesize
    the fine-grid state, optionally normalize its variance, evolve it with
    the ground-truth coefficients, and block-average the stored slices down
    to the training grid. All samples are stepped as one batch; the result is
    identical to solving them one by one.
    """
    coarse = manifest.grid
    fine = plan_fine_grid(coarse, manifest.fine_factor, manifest.truth)
    realized_fine = _realize_truth(manifest.truth, fine)
    basis = basis_matrix(manifest.spectrum, fine)
    stds = np.sqrt(np.array([e.var for e in manifest.spectrum.entries]))

    weights = np.empty((manifest.samples, len(stds)))
    for i in range(manifest.samples):
        rng = np.random.default_rng([manifest.seed, i])
        weights[i] = rng.standard_normal(len(stds)) * stds

    u0 = np.zeros((manifest.samples,) + fine.shape)
    for j in range(basis.shape[0]):
        u0 += weights[:, j].reshape((-1,) + (1,) * fine.dim) * basis[j]
    if manifest.normalize:
        u0 = _normalize_batch(u0, fine.dim)

    kernel = StepKernel(fine, realized_fine)
    stored = rollout_slices(kernel, u0)  # (t_slices+1, samples, *fine)
    coarse_stack = _coarsen_array(np.moveaxis(stored, 0, 1),
                                  manifest.fine_factor, fine.dim)
    trajectories = [Trajectory.from_stacked(coarse, coarse_stack[i])
                    for i in range(manifest.samples)]
    return Dataset(manifest=manifest, trajectories=trajectories)
