"""End-to-end acceptance checks.

Each test prints one PASS/FAIL line. The desk-scale fixture trains the five
2D models (plus a 1D recovery run) from the shipped configs once and shares
them across the accuracy, speed, shift, and recovery checks.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from pdefit import (CoeffSet, Field, Grid, TermSpec, build_dataset,
                    build_eval_report, cfl_caps, default_spectrum,
                    default_term_specs, grad_theta, hellinger2, init_theta,
                    solve, traj_loss, train)
from pdefit.cli import main
from pdefit.config import build_manifest, build_train_config, load_config
from pdefit.datagen import ModeEntry, SpectrumSpec
from pdefit.solver import StepKernel

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

NMSE_BANDS = {
    "diffusion2d": 0.005,
    "advection2d": 0.002,
    "advdiff2d": 0.004,
    "reactdiff2d": 0.004,
    "burgers2d": 0.009,
}


def report_line(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def run_family(config_name, with_ood=False):
    cfg = load_config(CONFIG_DIR / f"{config_name}.json")
    manifest = build_manifest(cfg, seed=1001)
    dataset = build_dataset(manifest)
    config = build_train_config(cfg, seed=5)
    result = train(dataset, manifest.terms, config)
    levels = cfg["eval"]["ood_levels"] if with_ood else None
    report = build_eval_report(result.coeffs, dataset,
                               indices=result.split["test"],
                               ood_levels=levels,
                               ood_samples=cfg.get("eval", {}).get("ood_samples", 25))
    return {"manifest": manifest, "dataset": dataset,
            "result": result, "report": report}


@pytest.fixture(scope="module")
def desk():
    t0 = time.perf_counter()
    families = {}
    for name in NMSE_BANDS:
        families[name] = run_family(name, with_ood=(name == "diffusion2d"))
    elapsed_2d = time.perf_counter() - t0
    one_d = run_family("diffusion1d")
    return {"families": families, "elapsed_2d": elapsed_2d, "one_d": one_d}


def test_criterion_01_solver_convergence(capsys):
    # constant-coefficient heat problem against its separable exact solution
    t_final, alpha, ratio = 0.05, 0.1, 0.2
    errors = []
    sizes = (32, 64, 128, 256)
    t0 = time.perf_counter()
    for n in sizes:
        steps = round(t_final * n * n / ratio)
        g = Grid(dim=1, n=n, c_t=ratio / (n * n), t_slices=1,
                 steps_per_slice=steps)
        spec = TermSpec("diffusion", 0.0, 2 * alpha)
        coeffs = CoeffSet(g, {"diffusion": spec},
                          {"diffusion": (np.zeros(n),)})  # mid realizes alpha
        x = np.arange(n) / n
        traj = solve(Field(g, np.sin(2 * np.pi * x)), coeffs)
        exact = np.exp(-4 * np.pi**2 * alpha * t_final) * np.sin(2 * np.pi * x)
        errors.append(float(np.max(np.abs(traj.slices[-1].values - exact))))
    elapsed = time.perf_counter() - t0
    order = -np.polyfit(np.log(sizes), np.log(errors), 1)[0]
    ok = order >= 0.9 and elapsed < 10.0
    report_line(capsys, "solver convergence", ok,
                f"order={order:.2f} (need >= 0.9), errors={['%.2e' % e for e in errors]}, "
                f"{elapsed:.1f}s (limit 10s)")
    assert order >= 0.9
    assert elapsed < 10.0


def test_criterion_02_gradient_check(capsys):
    # every parameter of every term on a short rollout, against central FD
    t0 = time.perf_counter()
    n, h = 16, 1e-5
    # c_t large enough that every component's gradient clears FD noise
    g = Grid(dim=1, n=n, c_t=2e-3, t_slices=5, steps_per_slice=1)
    specs = default_term_specs(g, ["source", "linear", "advection",
                                   "diffusion", "reaction", "burgers"])
    checks = 0
    worst = 0.0
    for draw in (0, 1):
        rng = np.random.default_rng(500 + draw)
        base = init_theta(g, specs, seed=500 + draw)
        coeffs = base.with_theta(
            {k: tuple(a + rng.uniform(-1.5, 1.5, a.shape) for a in arrays)
             for k, arrays in base.theta.items()})
        u0 = Field(g, rng.standard_normal(n) * 0.5)
        target = solve(u0, init_theta(g, specs, seed=900 + draw))
        _, grads = grad_theta(coeffs, u0, target)
        for kind in coeffs.active_kinds():
            for fi in range(len(coeffs.theta[kind])):
                for flat in range(n):
                    def loss_at(delta):
                        arrays = {k: tuple(a.copy() for a in v)
                                  for k, v in coeffs.theta.items()}
                        arrays[kind][fi].ravel()[flat] += delta
                        return traj_loss(
                            solve(u0, coeffs.with_theta(arrays)), target)
                    fd = (loss_at(h) - loss_at(-h)) / (2 * h)
                    ad = grads[kind][fi].values.ravel()[flat]
                    rel = abs(ad - fd) / max(abs(ad), abs(fd), 1e-12)
                    worst = max(worst, rel)
                    checks += 1
    elapsed = time.perf_counter() - t0
    ok = checks >= 100 and worst <= 1e-5 and elapsed < 30.0
    report_line(capsys, "gradient check", ok,
                f"{checks} components across six terms, worst rel err "
                f"{worst:.2e} (need <= 1e-5), {elapsed:.1f}s (limit 30s)")
    assert checks >= 100
    assert worst <= 1e-5
    assert elapsed < 30.0


def test_criterion_03_stability_fuzz(capsys):
    # random in-cap diffusion fields must keep the update a neighbor average
    failures = 0
    rng = np.random.default_rng(8080)
    for trial in range(1000):
        dim = 1 if trial % 2 == 0 else 2
        n = 16 if dim == 1 else 8
        g = Grid(dim=dim, n=n, c_t=1e-4)
        c_a = cfl_caps(g).c_a
        hi = float(rng.uniform(0.3, 1.0)) * c_a
        coeffs = CoeffSet(g, {"diffusion": TermSpec("diffusion", 0.0, hi)},
                          {"diffusion": (rng.uniform(-3, 3, (n,) * dim),)})
        kernel = StepKernel(g, coeffs.realized())
        u = rng.standard_normal((n,) * dim)
        cur_max, cur_min = float(np.max(u)), float(np.min(u))
        try:
            for k in range(12):
                u = kernel.step(u, u, step_index=k)
                new_max, new_min = float(np.max(u)), float(np.min(u))
                # float grace: summation order costs a few ulps, nothing more
                if new_max > cur_max + 1e-13 * max(1.0, abs(cur_max)):
                    failures += 1
                    break
                if new_min < cur_min - 1e-13 * max(1.0, abs(cur_min)):
                    failures += 1
                    break
                cur_max, cur_min = new_max, new_min
        except Exception:
            failures += 1
    ok = failures == 0
    report_line(capsys, "stability fuzz", ok,
                f"{1000 - failures}/1000 instances monotone and finite")
    assert failures == 0


def test_criterion_04_superposition(capsys):
    # affine configurations must superpose exactly up to roundoff
    rng = np.random.default_rng(4242)
    affine = ["source", "linear", "advection", "diffusion"]
    worst = 0.0
    for trial in range(100):
        dim = 1 if trial % 2 == 0 else 2
        n = 16 if dim == 1 else 8
        g = Grid(dim=dim, n=n, c_t=1e-4, t_slices=2, steps_per_slice=5)
        active = [k for k in affine if rng.uniform() < 0.5]
        if not active:
            active = ["diffusion"]
        specs = default_term_specs(g, active)
        base = init_theta(g, specs, seed=trial)
        coeffs = base.with_theta(
            {k: tuple(a + rng.uniform(-2, 2, a.shape) for a in arrays)
             for k, arrays in base.theta.items()})
        shape = (n,) * dim
        u = Field(g, rng.standard_normal(shape))
        v = Field(g, rng.standard_normal(shape))
        su = solve(u, coeffs).stacked()
        sv = solve(v, coeffs).stacked()
        s0 = solve(Field.constant(g, 0.0), coeffs).stacked()
        sw = solve(Field(g, u.values + v.values), coeffs).stacked()
        scale = max(1.0, float(np.max(np.abs(sw))))
        worst = max(worst, float(np.max(np.abs(su + sv - s0 - sw))) / scale)
    ok = worst <= 1e-12
    report_line(capsys, "superposition", ok,
                f"worst relative defect {worst:.2e} over 100 instances "
                "(need <= 1e-12)")
    assert worst <= 1e-12


def test_criterion_05_desk_scale_accuracy(capsys, desk):
    details = []
    ok = desk["elapsed_2d"] <= 1800.0
    for name, band in NMSE_BANDS.items():
        nmse = desk["families"][name]["report"].nmse_mean_slices
        details.append(f"{name}={nmse:.2e} (<= {band})")
        ok = ok and nmse <= band
    report_line(capsys, "desk-scale accuracy", ok,
                ", ".join(details) + f"; five 2D models in "
                f"{desk['elapsed_2d']:.0f}s (limit 1800s)")
    for name, band in NMSE_BANDS.items():
        assert desk["families"][name]["report"].nmse_mean_slices <= band, name
    assert desk["elapsed_2d"] <= 1800.0


def test_criterion_06_training_speed(capsys, desk):
    history = desk["families"]["diffusion2d"]["result"].history
    hit = next((h.epoch for h in history if h.train_loss <= 1e-3), None)
    ok = hit is not None and hit <= 30
    report_line(capsys, "training speed", ok,
                f"diffusion train loss <= 1e-3 at epoch {hit} (need <= 30)")
    assert hit is not None and hit <= 30


def test_criterion_07_shift_robustness(capsys, desk):
    report = desk["families"]["diffusion2d"]["report"]
    points = report.ood
    levels = [p.target_h2 for p in points]
    assert levels == [0.0, 0.25, 0.64, 0.99]
    rels = [p.relative_error for p in points]
    in_dist = report.relative_error
    gap = abs(rels[0] - in_dist) / in_dist
    ok = all(r < 0.01 for r in rels) and gap <= 0.2
    report_line(capsys, "shift robustness", ok,
                "rel err " + ", ".join(f"{l:.2f}:{r:.4f}" for l, r in
                                       zip(levels, rels))
                + f" (all < 0.01); level-0 gap {gap:.1%} of in-dist (<= 20%)")
    for r in rels:
        assert r < 0.01
    assert gap <= 0.2


def test_criterion_08_coefficient_recovery(capsys, desk):
    rec2 = desk["families"]["diffusion2d"]["report"].coeff_recovery["diffusion"]
    rec1 = desk["one_d"]["report"].coeff_recovery["diffusion"]
    ok = rec1 <= 0.05 and rec2 <= 0.05
    report_line(capsys, "coefficient recovery", ok,
                f"relative L2 error 1D={rec1:.3f}, 2D={rec2:.3f} (need <= 0.05)")
    assert rec1 <= 0.05
    assert rec2 <= 0.05


def test_criterion_09_spectral_distance_oracle(capsys):
    # log-space evaluation against the direct determinant formula
    rng = np.random.default_rng(31415)
    worst = 0.0
    for _ in range(1000):
        size = int(rng.integers(1, 41))
        va = rng.uniform(0.05, 4.0, size)
        vb = rng.uniform(0.05, 4.0, size)
        a = SpectrumSpec(1, tuple(ModeEntry((i + 1,), "cos", v)
                                  for i, v in enumerate(va)))
        b = SpectrumSpec(1, tuple(ModeEntry((i + 1,), "cos", v)
                                  for i, v in enumerate(vb)))
        da = np.diag(va)
        db = np.diag(vb)
        direct = 1.0 - (np.linalg.det(da) ** 0.25 * np.linalg.det(db) ** 0.25
                        / np.linalg.det((da + db) / 2.0) ** 0.5)
        worst = max(worst, abs(hellinger2(a, b) - direct))
    base = default_spectrum(2, 2)
    exact_zero = hellinger2(base, base) == 0.0
    ok = worst <= 1e-10 and exact_zero
    report_line(capsys, "spectral distance oracle", ok,
                f"worst |diff| {worst:.2e} over 1000 trials (need <= 1e-10); "
                f"self-distance exactly zero: {exact_zero}")
    assert worst <= 1e-10
    assert exact_zero


def test_criterion_10_reproducibility(capsys, tmp_path):
    cfg = {
        "grid": {"dim": 1, "n": 16, "c_t": 2e-4, "t_slices": 3,
                 "steps_per_slice": 5},
        "terms": {"diffusion": {}},
        "truth": {"diffusion": [{"mean": 4.8, "amplitude": 2.4,
                                 "wavevector": [1]}]},
        "spectrum": {"max_mode": 2},
        "data": {"samples": 10, "fine_factor": 2, "normalize": True},
        "train": {"epochs": 3, "batch_size": 4, "lr": 0.05},
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    pairs = []
    for tag in ("a", "b"):
        data = tmp_path / f"data_{tag}"
        model = tmp_path / f"model_{tag}"
        assert main(["gen", "--config", str(cfg_path), "--out", str(data),
                     "--seed", "11"]) == 0
        assert main(["train", "--config", str(cfg_path), "--data", str(data),
                     "--out", str(model), "--seed", "12", "--no-plots"]) == 0
        pairs.append((data, model))
    (data_a, model_a), (data_b, model_b) = pairs
    mismatched = []
    for name in sorted(p.name for p in data_a.iterdir()):
        if (data_a / name).read_bytes() != (data_b / name).read_bytes():
            mismatched.append(f"data/{name}")
    for name in ("manifest.json", "history.csv", "theta_diffusion_0.f64"):
        if (model_a / name).read_bytes() != (model_b / name).read_bytes():
            mismatched.append(f"model/{name}")
    ok = not mismatched
    report_line(capsys, "reproducibility", ok,
                "two seeded gen+train runs bitwise identical"
                if ok else f"differs: {mismatched}")
    assert not mismatched, mismatched
