"""Learn spatially varying PDE coefficients by differentiating a stable solver.

The package wraps an explicit finite-difference stepper for a family of
scalar conservation-style PDEs on periodic grids. Coefficient fields are
sigmoid-bounded inside the step's stability budget, gradients flow through
the unrolled solver with a hand-written adjoint, and datasets come from
Gaussian random fields evolved on a refined reference grid.
"""

from .coeffs import (CflReport, CoeffSet, KINDS, TermSpec, cfl_caps,
                     default_term_specs, init_theta, realize)
from .datagen import (CoeffFieldSpec, Dataset, DatasetManifest, ModeEntry,
                      SpectrumSpec, build_dataset, coarsen, default_spectrum,
                      gen_coeff_field, hellinger2, normalize_variance,
                      reference_solve, sample_initial, solve_shift_scale,
                      spectrum_tilt)
from .errors import (CorruptArtifactError, DegenerateInputError, GridMismatchError,
                     InstabilityError, PdefitError, StorageError,
                     UnreachableTargetError, UnsupportedVersionError,
                     ValidationError)
from .grid import Field, Grid, Trajectory, elementwise, grid_norm, reduce_sum
from .learn import Tape, grad_theta, record_rollout, traj_loss
from .metrics import (EvalReport, OodPoint, VariancePoint, build_eval_report,
                      coeff_recovery_error, nmse, ood_sweep, relative_error,
                      variance_sweep)
from .solver import StepKernel, euler_step, solve, solve_realized
from .stencils import (ConsistencyReport, Stencil, apply_stencil, backward_diff,
                       centered_diff, consistency_order, forward_diff, laplacian,
                       upwind_gradient)
from .storage import (load_dataset, load_model, save_dataset, save_model,
                      verify_artifact)
from .train import (OptState, TrainConfig, TrainResult, adam_update,
                    dataset_loss, split_indices, train)

__version__ = "0.1.0"

__all__ = [
    "CflReport", "CoeffSet", "KINDS", "TermSpec", "cfl_caps",
    "default_term_specs", "init_theta", "realize",
    "CoeffFieldSpec", "Dataset", "DatasetManifest", "ModeEntry", "SpectrumSpec",
    "build_dataset", "coarsen", "default_spectrum", "gen_coeff_field",
    "hellinger2", "normalize_variance", "reference_solve", "sample_initial",
    "solve_shift_scale", "spectrum_tilt",
    "CorruptArtifactError", "DegenerateInputError", "GridMismatchError",
    "InstabilityError", "PdefitError", "StorageError", "UnreachableTargetError",
    "UnsupportedVersionError", "ValidationError",
    "Field", "Grid", "Trajectory", "elementwise", "grid_norm", "reduce_sum",
    "Tape", "grad_theta", "record_rollout", "traj_loss",
    "EvalReport", "OodPoint", "VariancePoint", "build_eval_report",
    "coeff_recovery_error", "nmse", "ood_sweep", "relative_error",
    "variance_sweep",
    "StepKernel", "euler_step", "solve", "solve_realized",
    "ConsistencyReport", "Stencil", "apply_stencil", "backward_diff",
    "centered_diff", "consistency_order", "forward_diff", "laplacian",
    "upwind_gradient",
    "load_dataset", "load_model", "save_dataset", "save_model", "verify_artifact",
    "OptState", "TrainConfig", "TrainResult", "adam_update", "dataset_loss",
    "split_indices", "train",
    "__version__",
]
