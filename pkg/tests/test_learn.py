import numpy as np
import pytest

from pdefit import (CoeffSet, Field, Grid, TermSpec, Trajectory,
                    default_term_specs, grad_theta, init_theta, solve,
                    traj_loss)
from pdefit.learn import loss_and_grad_arrays, record_rollout
from pdefit.solver import StepKernel


def test_traj_loss_hand_value():
    # two slices, batchless: mean over stored slices of cell-weighted sq error
    g = Grid(dim=1, n=2, c_t=1e-3, t_slices=2)
    pred = Trajectory.from_stacked(g, np.array([[0.0, 0.0],
                                                [1.0, 2.0],
                                                [3.0, 4.0]]))
    target = Trajectory.from_stacked(g, np.array([[9.0, 9.0],
                                                  [1.0, 1.0],
                                                  [1.0, 1.0]]))
    # slice 0 is the shared initial state and never scored
    # slice 1: 0.5 * (0 + 1) = 0.5 ; slice 2: 0.5 * (4 + 9) = 6.5 ; mean 3.5
    assert traj_loss(pred, target) == pytest.approx(3.5, rel=1e-14)


def test_gradient_matches_hand_derived_case():
    # one diffusion step on two points; every quantity below is closed-form
    g = Grid(dim=1, n=2, c_t=0.01, t_slices=1, steps_per_slice=1)
    spec = TermSpec("diffusion", 0.0, 1.0)
    coeffs = CoeffSet(g, {"diffusion": spec},
                      {"diffusion": (np.array([0.2, -0.3]),)})
    u0 = Field(g, np.array([0.0, 1.0]))
    target = Trajectory.from_stacked(g, np.array([[0.0, 1.0], [0.3, 0.6]]))
    loss, grads = grad_theta(coeffs, u0, target)
    assert loss == pytest.approx(0.0997330777099879, rel=1e-12)
    g_arr = grads["diffusion"][0].values
    assert g_arr[0] == pytest.approx(-0.0050694023750030605, rel=1e-10)
    assert g_arr[1] == pytest.approx(-0.007156867165351325, rel=1e-10)


def fd_gradient(coeffs, u0, target, kind, field_idx, flat_idx, h=1e-6):
    def loss_at(delta):
        arrays = {k: tuple(a.copy() for a in v) for k, v in coeffs.theta.items()}
        arrays[kind][field_idx].ravel()[flat_idx] += delta
        shifted = CoeffSet(coeffs.grid, coeffs.specs, arrays)
        return traj_loss(solve(u0, shifted), target)
    return (loss_at(h) - loss_at(-h)) / (2 * h)


def test_gradient_matches_central_differences_all_terms():
    n = 16
    g = Grid(dim=1, n=n, c_t=1e-4, t_slices=5, steps_per_slice=1)
    specs = default_term_specs(g, ["source", "linear", "advection",
                                   "diffusion", "reaction", "burgers"])
    rng = np.random.default_rng(42)
    coeffs = init_theta(g, specs, seed=42)
    # spread parameters away from the init band so every branch is exercised
    theta = {k: tuple(np.asarray(a) + rng.uniform(-1.0, 1.0, size=a.shape)
                      for a in v) for k, v in coeffs.theta.items()}
    coeffs = coeffs.with_theta(theta)
    u0 = Field(g, rng.standard_normal(n) * 0.5)
    truth = init_theta(g, specs, seed=7)
    target = solve(u0, truth)

    _, grads = grad_theta(coeffs, u0, target)
    checked = 0
    for kind in coeffs.active_kinds():
        for fi, gfield in enumerate(grads[kind]):
            for flat in (0, n // 2, n - 1):
                want = fd_gradient(coeffs, u0, target, kind, fi, flat)
                got = gfield.values.ravel()[flat]
                assert got == pytest.approx(want, rel=1e-5, abs=1e-10), \
                    f"{kind}[{fi}][{flat}]"
                checked += 1
    assert checked >= 18


def test_gradient_zero_at_exact_fit(rng):
    g = Grid(dim=2, n=4, c_t=1e-4, t_slices=3)
    specs = default_term_specs(g, ["diffusion", "advection"])
    coeffs = init_theta(g, specs, seed=3)
    u0 = Field(g, rng.standard_normal((4, 4)))
    target = solve(u0, coeffs)
    loss, grads = grad_theta(coeffs, u0, target)
    assert loss == 0.0
    for kind in coeffs.active_kinds():
        for f in grads[kind]:
            np.testing.assert_array_equal(f.values, np.zeros((4, 4)))


def test_checkpoint_strides_agree_bitwise(rng):
    n = 8
    g = Grid(dim=1, n=n, c_t=1e-4, t_slices=4, steps_per_slice=3)
    specs = default_term_specs(g, ["source", "linear", "advection",
                                   "diffusion", "reaction"])
    coeffs = init_theta(g, specs, seed=21)
    u0 = rng.standard_normal((2, n))
    targets = rng.standard_normal((2, 4, n))
    base_loss, base = loss_and_grad_arrays(coeffs, u0, targets, stride=1)
    for stride in (2, 3, 7, 12, 50):
        loss, grads = loss_and_grad_arrays(coeffs, u0, targets, stride=stride)
        assert loss == base_loss
        for kind in base:
            for a, b in zip(base[kind], grads[kind]):
                np.testing.assert_array_equal(a, b)


def test_tape_replay_reproduces_recorded_states(rng):
    n = 8
    g = Grid(dim=1, n=n, c_t=1e-4, t_slices=2, steps_per_slice=4)
    specs = default_term_specs(g, ["diffusion", "burgers"])
    coeffs = init_theta(g, specs, seed=2)
    kernel = StepKernel(g, coeffs.realized())
    u0 = rng.standard_normal((1, n))
    dense = record_rollout(kernel, u0, stride=1)
    sparse = record_rollout(kernel, u0, stride=3)
    dense_states = {k: u for k, u, _ in dense.checkpoints}
    for k, u, _ in sparse.checkpoints:
        np.testing.assert_array_equal(u, dense_states[k])
    np.testing.assert_array_equal(np.asarray(sparse.slice_preds),
                                  np.asarray(dense.slice_preds))


def test_batched_gradient_is_mean_of_singles(rng):
    n = 8
    g = Grid(dim=1, n=n, c_t=1e-4, t_slices=3)
    specs = default_term_specs(g, ["diffusion", "reaction"])
    coeffs = init_theta(g, specs, seed=13)
    u0 = rng.standard_normal((3, n))
    targets = rng.standard_normal((3, 3, n))
    loss_b, grads_b = loss_and_grad_arrays(coeffs, u0, targets)
    singles = [loss_and_grad_arrays(coeffs, u0[i], targets[i]) for i in range(3)]
    assert loss_b == pytest.approx(np.mean([s[0] for s in singles]), rel=1e-13)
    for kind in grads_b:
        for fi, arr in enumerate(grads_b[kind]):
            want = np.mean([s[1][kind][fi] for s in singles], axis=0)
            np.testing.assert_allclose(arr, want, rtol=1e-12, atol=1e-15)


def test_loss_and_grad_validates_target_shape(rng):
    g = Grid(dim=1, n=8, c_t=1e-4, t_slices=3)
    specs = default_term_specs(g, ["diffusion"])
    coeffs = init_theta(g, specs, seed=1)
    from pdefit import ValidationError
    with pytest.raises(ValidationError):
        loss_and_grad_arrays(coeffs, rng.standard_normal((2, 8)),
                             rng.standard_normal((2, 2, 8)))
