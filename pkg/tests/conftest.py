"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from pdefit import (CoeffFieldSpec, DatasetManifest, Grid, TermSpec, cfl_caps,
                    default_spectrum)


def tiny_diffusion_manifest(dim: int = 1, n: int = 16, samples: int = 12,
                            seed: int = 7, t_slices: int = 3,
                            steps_per_slice: int = 5, c_t: float = 2e-4,
                            fine_factor: int = 2, max_mode: int = 2,
                            normalize: bool = True) -> DatasetManifest:
    """Small diffusion-only dataset recipe used across test modules."""
    grid = Grid(dim=dim, n=n, c_t=c_t, t_slices=t_slices,
                steps_per_slice=steps_per_slice)
    c_a = cfl_caps(grid).c_a
    terms = {"diffusion": TermSpec("diffusion", 0.0, c_a)}
    truth = {"diffusion": (CoeffFieldSpec(mean=0.5 * c_a, amplitude=0.25 * c_a,
                                          wavevector=(1,) * dim, phase=0.0),)}
    return DatasetManifest(grid=grid, samples=samples, seed=seed,
                           spectrum=default_spectrum(dim, max_mode),
                           truth=truth, terms=terms,
                           fine_factor=fine_factor, normalize=normalize)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
