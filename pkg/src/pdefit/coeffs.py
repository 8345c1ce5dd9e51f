"""Bounded coefficient fields for the PDE family and their CFL accounting.

The scalar PDE family is

    du/dt = a0 + a1*u + a2 . grad(u) + a3*lap(u) + b1*u*(1-u) + b2*u*grad(u)

with one spatially varying field per term kind (dim fields for advection).
Raw parameters theta are unconstrained; realized coefficients are squashed
into per-term (lo, hi) bounds through a sigmoid, so every iterate of the
optimizer satisfies the explicit-step stability bounds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.special import expit

from .errors import ValidationError
from .grid import Field, Grid

KINDS = ("source", "linear", "advection", "diffusion", "reaction", "burgers")

# Terms whose explicit-update load scales with 1/c_x or 1/c_x^2.
STIFF_KINDS = ("advection", "diffusion", "burgers")

# Reference |u| used when budgeting the state-dependent burgers load.
BURGERS_REF_U = 1.0

_CAP_SLACK = 1.0 + 1e-9


def fields_per_kind(kind: str, dim: int) -> int:
    if kind not in KINDS:
        raise ValidationError(f"unknown term kind {kind!r}")
    return dim if kind == "advection" else 1


@dataclass(frozen=True)
class TermSpec:
    """One term of the PDE family: its kind, bounds, and active flag."""

    kind: str
    lo: float
    hi: float
    active: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown term kind {self.kind!r}, expected one of {KINDS}")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValidationError(f"{self.kind}: bounds must be finite")
        if not self.lo < self.hi:
            raise ValidationError(f"{self.kind}: need lo < hi, got ({self.lo}, {self.hi})")
        if self.kind in ("diffusion", "reaction", "burgers") and self.lo < 0.0:
            raise ValidationError(f"{self.kind}: lower bound must be >= 0, got {self.lo}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi, "active": self.active}

    @classmethod
    def from_dict(cls, d: dict) -> "TermSpec":
        return cls(kind=str(d["kind"]), lo=float(d["lo"]), hi=float(d["hi"]),
                   active=bool(d.get("active", True)))


def realize_array(theta: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Map unconstrained values into the open interval (lo, hi)."""
    return lo + (hi - lo) * expit(theta)


def realize(theta: Field, spec: TermSpec) -> Field:
    """Squash a raw parameter field into the term's bounds."""
    return Field(theta.grid, realize_array(theta.values, spec.lo, spec.hi))


@dataclass(frozen=True)
class CflReport:
    """Stability caps for a grid, plus the realized load when coefficients are given.

    c_a is the diffusion cap c_x^2 / (2 * dim * c_t); c_adv the advection cap
    c_x / (dim * c_t). max_load is the largest per-point explicit-update load
    of the supplied coefficients and margin is 1 - max_load; both are None
    when no coefficients were given.
    """

    c_a: float
    c_adv: float
    max_load: float | None = None
    margin: float | None = None


def static_load(grid: Grid, realized: Mapping[str, tuple[np.ndarray, ...]],
                burgers_ref_u: float | None = None) -> np.ndarray:
    """Per-point explicit-update load of state-independent terms.

    The forward-Euler update keeps the center weight nonnegative exactly when
    this load is <= 1. The burgers term depends on the state; it is included
    only when a reference |u| is supplied.
    """
    load = np.zeros((), dtype=np.float64)
    if "diffusion" in realized:
        load = load + grid.c_t * 2.0 * grid.dim * np.abs(realized["diffusion"][0]) / grid.c_x ** 2
    if "advection" in realized:
        for arr in realized["advection"]:
            load = load + grid.c_t * np.abs(arr) / grid.c_x
    if burgers_ref_u is not None and "burgers" in realized:
        load = load + grid.c_t * grid.dim * np.abs(realized["burgers"][0]) * burgers_ref_u / grid.c_x
    return np.asarray(load, dtype=np.float64)


def cfl_caps(grid: Grid, coeffs: "CoeffSet | None" = None) -> CflReport:
    """Stability caps for a grid and, optionally, the realized load of a CoeffSet."""
    c_a = grid.c_x ** 2 / (2.0 * grid.dim * grid.c_t)
    c_adv = grid.c_x / (grid.dim * grid.c_t)
    if coeffs is None:
        return CflReport(c_a=c_a, c_adv=c_adv)
    load = static_load(grid, coeffs.realized())
    max_load = float(np.max(load))
    return CflReport(c_a=c_a, c_adv=c_adv, max_load=max_load, margin=1.0 - max_load)


def default_term_specs(grid: Grid, active: Iterable[str],
                       margin: float = 0.9) -> dict[str, TermSpec]:
    """Default bounds per active term, sized so the worst-case load fits the step.

    Zeroth-order terms get order-one bounds. Stiff terms share the update
    budget: diffusion alone keeps the full cap, advection alone keeps half of
    its cap, and any combination of stiff terms splits ``margin`` equally.
    The burgers share assumes a reference |u| of one; the runtime guard in the
    stepper catches excursions beyond that.
    """
    active = list(dict.fromkeys(active))
    for kind in active:
        if kind not in KINDS:
            raise ValidationError(f"unknown term kind {kind!r}")
    if "burgers" in active and "diffusion" not in active:
        raise ValidationError("burgers requires an active diffusion term")
    caps = cfl_caps(grid)
    stiff = [k for k in active if k in STIFF_KINDS]
    if stiff == ["diffusion"]:
        budget = {"diffusion": 1.0}
    elif stiff == ["advection"]:
        budget = {"advection": 0.5}
    else:
        budget = {k: margin / len(stiff) for k in stiff}
    specs: dict[str, TermSpec] = {}
    for kind in KINDS:
        if kind not in active:
            continue
        if kind in ("source", "linear"):
            specs[kind] = TermSpec(kind, -1.0, 1.0)
        elif kind == "reaction":
            specs[kind] = TermSpec(kind, 0.0, 1.0)
        elif kind == "diffusion":
            hi = budget["diffusion"] * caps.c_a
            lo = 0.1 * hi if "burgers" in active else 0.0
            specs[kind] = TermSpec(kind, lo, hi)
        elif kind == "advection":
            amax = budget["advection"] * caps.c_adv
            specs[kind] = TermSpec(kind, -amax, amax)
        elif kind == "burgers":
            specs[kind] = TermSpec(kind, 0.0, budget["burgers"] * caps.c_adv / BURGERS_REF_U)
    return specs


def _check_bounds_against_caps(grid: Grid, specs: Mapping[str, TermSpec]) -> None:
    caps = cfl_caps(grid)
    worst = 0.0
    diff = specs.get("diffusion")
    if diff is not None and diff.active:
        if diff.hi > caps.c_a * _CAP_SLACK:
            raise ValidationError(
                f"diffusion upper bound {diff.hi} exceeds the cap {caps.c_a} "
                f"for this grid (c_x={grid.c_x}, c_t={grid.c_t})")
        worst += grid.c_t * 2.0 * grid.dim * diff.hi / grid.c_x ** 2
    adv = specs.get("advection")
    if adv is not None and adv.active:
        amax = max(abs(adv.lo), abs(adv.hi))
        worst += grid.c_t * grid.dim * amax / grid.c_x
    if worst > _CAP_SLACK:
        raise ValidationError(
            f"combined worst-case update load {worst:.6g} exceeds 1; shrink the "
            "diffusion/advection bounds or the time step")


@dataclass
class CoeffSet:
    """Raw parameters plus bounds for every active term on one grid.

    theta maps term kind to a tuple of parameter arrays (one per field; the
    advection term has one per axis). Bounds are validated against the grid's
    stability caps on construction, so realized coefficients of a CoeffSet can
    always be stepped explicitly.
    """

    grid: Grid
    specs: dict[str, TermSpec] = field(default_factory=dict)
    theta: dict[str, tuple[np.ndarray, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for kind, spec in self.specs.items():
            if kind not in KINDS:
                raise ValidationError(f"unknown term kind {kind!r}")
            if spec.kind != kind:
                raise ValidationError(f"spec under key {kind!r} has kind {spec.kind!r}")
        active = {k for k, s in self.specs.items() if s.active}
        if "burgers" in active:
            if "diffusion" not in active:
                raise ValidationError("burgers requires an active diffusion term")
            if self.specs["diffusion"].lo <= 0.0:
                raise ValidationError(
                    "burgers requires the diffusion lower bound to be > 0")
        if set(self.theta) != active:
            raise ValidationError(
                f"theta keys {sorted(self.theta)} do not match active terms {sorted(active)}")
        _check_bounds_against_caps(self.grid, self.specs)
        clean: dict[str, tuple[np.ndarray, ...]] = {}
        for kind in KINDS:
            if kind not in self.theta:
                continue
            arrays = self.theta[kind]
            expected = fields_per_kind(kind, self.grid.dim)
            if len(arrays) != expected:
                raise ValidationError(
                    f"{kind}: expected {expected} parameter fields, got {len(arrays)}")
            out = []
            for i, arr in enumerate(arrays):
                a = np.array(arr, dtype=np.float64, copy=True, order="C")
                if a.shape != self.grid.shape:
                    raise ValidationError(
                        f"{kind}[{i}]: shape {a.shape} != grid shape {self.grid.shape}")
                if not np.all(np.isfinite(a)):
                    raise ValidationError(f"{kind}[{i}]: parameters must be finite")
                out.append(a)
            clean[kind] = tuple(out)
        self.theta = clean

    def active_kinds(self) -> tuple[str, ...]:
        return tuple(k for k in KINDS if k in self.theta)

    @property
    def param_count(self) -> int:
        return sum(a.size for arrays in self.theta.values() for a in arrays)

    def realized(self) -> dict[str, tuple[np.ndarray, ...]]:
        """Realized (bounded) coefficient arrays per active term."""
        out = {}
        for kind in self.active_kinds():
            spec = self.specs[kind]
            out[kind] = tuple(realize_array(a, spec.lo, spec.hi) for a in self.theta[kind])
        return out

    def realized_fields(self) -> dict[str, tuple[Field, ...]]:
        return {kind: tuple(Field(self.grid, a) for a in arrays)
                for kind, arrays in self.realized().items()}

    def copy(self) -> "CoeffSet":
        theta = {k: tuple(a.copy() for a in arrays) for k, arrays in self.theta.items()}
        return CoeffSet(self.grid, dict(self.specs), theta)

    def with_theta(self, theta: Mapping[str, tuple[np.ndarray, ...]]) -> "CoeffSet":
        return CoeffSet(self.grid, dict(self.specs), dict(theta))


def init_theta(grid: Grid, specs: Mapping[str, TermSpec], seed) -> CoeffSet:
    """Fresh CoeffSet with parameters drawn uniformly from [-0.1, 0.1].

    The draw order is fixed (canonical kind order, then axis), so a given
    seed always produces the same initialization.
    """
    rng = np.random.default_rng(seed)
    theta: dict[str, tuple[np.ndarray, ...]] = {}
    for kind in KINDS:
        spec = specs.get(kind)
        if spec is None or not spec.active:
            continue
        count = fields_per_kind(kind, grid.dim)
        theta[kind] = tuple(rng.uniform(-0.1, 0.1, size=grid.shape) for _ in range(count))
    return CoeffSet(grid, {k: s for k, s in specs.items()}, theta)
