"""Command-line interface.

Subcommands: gen (build a dataset from a config), train (fit a model to a
dataset), eval (held-out metrics, recovery, and the distribution-shift
curve), sweep-variance (retrain across coefficient amplitudes), verify
(checksum and round-trip an artifact). Validation problems exit 2, numerical
instability exits 3, storage corruption exits 4.

Report-producing commands write delimited files (CSV/JSON) and, unless
--no-plots is given, PNG figures next to them. Wall-clock timings go to a
separate timing.csv so every other output byte is reproducible from the seed.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import __version__
from .config import (DEFAULT_OOD_LEVELS, DEFAULT_OOD_SAMPLES, apply_overrides,
                     build_grid, build_manifest, build_terms, build_train_config,
                     eval_options, load_config, resolved_config)
from .datagen import build_dataset
from .errors import PdefitError, ValidationError
from .metrics import build_eval_report, variance_sweep
from .storage import (load_dataset, load_model, manifest_fingerprint,
                      save_dataset, save_model, verify_artifact, write_json_atomic)
from .train import train


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _ensure_outdir(path: Path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise ValidationError(f"{out} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cfg(args) -> dict:
    cfg = load_config(args.config)
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    return cfg


def _parse_levels(text: str) -> list[float]:
    try:
        levels = [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as exc:
        raise ValidationError(f"bad level list {text!r}: {exc}") from exc
    if not levels:
        raise ValidationError("no shift levels given")
    return levels


def cmd_gen(args) -> int:
    cfg = _load_cfg(args)
    manifest = build_manifest(cfg, args.seed, samples_override=args.samples)
    dataset = build_dataset(manifest)
    out = save_dataset(args.out, dataset, force=args.force)
    write_json_atomic(out / "config.resolved.json",
                      resolved_config(cfg, args.seed, "gen"))
    g = manifest.grid
    print(f"wrote dataset: {manifest.samples} samples, dim={g.dim} n={g.n} "
          f"slices={g.t_slices} -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    dataset = load_dataset(args.data)
    grid = dataset.manifest.grid
    if "grid" in cfg and build_grid(cfg) != grid:
        raise ValidationError("config grid does not match the dataset's grid")
    specs = build_terms(cfg, grid) if "terms" in cfg else dict(dataset.manifest.terms)
    tc = build_train_config(cfg, args.seed)
    result = train(dataset, specs, tc)
    out = _ensure_outdir(args.out, args.force)
    meta = {"train_config": tc.to_dict(),
            "stop_reason": result.stop_reason,
            "split": result.split,
            "dataset_fingerprint": manifest_fingerprint(args.data),
            "epochs_run": len(result.history),
            "final_train_loss": result.history[-1].train_loss,
            "final_val_loss": result.history[-1].val_loss,
            "parameter_count": result.coeffs.param_count}
    save_model(out, result.coeffs, meta=meta, force=True)
    _write_csv(out / "history.csv", ["epoch", "train_loss", "val_loss"],
               [[row.epoch, repr(row.train_loss), repr(row.val_loss)]
                for row in result.history])
    _write_csv(out / "timing.csv", ["epoch", "seconds"],
               [[row.epoch, f"{row.seconds:.6f}"] for row in result.history])
    write_json_atomic(out / "config.resolved.json",
                      resolved_config(cfg, args.seed, "train"))
    if args.plots:
        from .plots import save_loss_curves
        save_loss_curves(result.history, out / "loss_curves.png")
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs ({result.stop_reason}); "
          f"train loss {last.train_loss:.3e}, val loss {last.val_loss:.3e}; "
          f"{result.coeffs.param_count} parameters -> {out}")
    return 0


def cmd_eval(args) -> int:
    coeffs, meta = load_model(args.model)
    dataset = load_dataset(args.data)
    if coeffs.grid != dataset.manifest.grid:
        raise ValidationError("model and dataset grids differ")
    indices = None
    eval_split = "all"
    if (meta.get("dataset_fingerprint") == manifest_fingerprint(args.data)
            and "split" in meta):
        indices = [int(i) for i in meta["split"]["test"]]
        eval_split = "test"
    levels = None
    if not args.no_ood:
        levels = _parse_levels(args.ood_levels)
    report = build_eval_report(coeffs, dataset, indices=indices,
                               ood_levels=levels,
                               ood_samples=args.ood_samples,
                               ood_seed=args.ood_seed)
    out = _ensure_outdir(args.out, args.force)
    doc = report.to_dict()
    doc["eval_split"] = eval_split
    write_json_atomic(out / "report.json", doc)
    if report.coeff_recovery is not None:
        _write_csv(out / "recovery.csv", ["kind", "relative_error"],
                   [[kind, repr(err)] for kind, err in sorted(report.coeff_recovery.items())])
    if report.ood is not None:
        _write_csv(out / "ood_curve.csv",
                   ["target_h2", "achieved_h2", "scale", "relative_error",
                    "nmse_mean_slices", "n_samples"],
                   [[p.target_h2, repr(p.achieved_h2), repr(p.scale),
                     repr(p.relative_error), repr(p.nmse_mean_slices), p.n_samples]
                    for p in report.ood])
    if args.plots:
        from .plots import save_coeff_maps, save_ood_curve
        save_coeff_maps(coeffs, dataset.manifest.truth, out)
        if report.ood is not None:
            save_ood_curve(report.ood, out / "ood_curve.png")
    print(f"eval on {report.n_samples} samples ({eval_split}): "
          f"nmse {report.nmse_mean_slices:.3e} (final slice {report.nmse_final_slice:.3e}), "
          f"relative error {report.relative_error:.3e} -> {out}")
    return 0


def cmd_sweep_variance(args) -> int:
    cfg = _load_cfg(args)
    manifest = build_manifest(cfg, args.seed)
    tc = build_train_config(cfg, args.seed)
    amplitudes = _parse_levels(args.amplitudes)
    points = variance_sweep(manifest, tc, amplitudes, kind=args.kind)
    out = _ensure_outdir(args.out, args.force)
    _write_csv(out / "sweep.csv",
               ["amplitude", "relative_error", "nmse_mean_slices",
                "recovery_error", "stop_reason"],
               [[p.amplitude, repr(p.relative_error), repr(p.nmse_mean_slices),
                 repr(p.recovery_error), p.stop_reason] for p in points])
    write_json_atomic(out / "config.resolved.json",
                      resolved_config(cfg, args.seed, "sweep-variance"))
    if args.plots:
        from .plots import save_variance_curve
        save_variance_curve(points, out / "sweep.png")
    for p in points:
        print(f"amplitude {p.amplitude:g}: relative error {p.relative_error:.3e}, "
              f"recovery {p.recovery_error:.3e} ({p.stop_reason})")
    print(f"wrote sweep over {len(points)} amplitudes -> {out}")
    return 0


def cmd_verify(args) -> int:
    report = verify_artifact(args.path)
    print(f"ok: {report.kind} artifact, {report.blobs} blobs, "
          f"{report.bytes_total} bytes verified")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdefit",
        description="Learn spatially varying PDE coefficients from trajectory data.")
    parser.add_argument("--version", action="version", version=f"pdefit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a dataset from a config")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--samples", type=int, default=None,
                   help="override the config's sample count")
    p.add_argument("--force", action="store_true",
                   help="overwrite an existing artifact")
    p.add_argument("--set", action="append", default=[], metavar="KEY.PATH=VALUE",
                   help="override a config entry (repeatable)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--force", action="store_true")
    p.add_argument("--no-plots", dest="plots", action="store_false")
    p.add_argument("--set", action="append", default=[], metavar="KEY.PATH=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a dataset")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--ood-levels", default=",".join(str(x) for x in DEFAULT_OOD_LEVELS),
                   help="comma-separated squared Hellinger targets")
    p.add_argument("--no-ood", action="store_true", help="skip the shift sweep")
    p.add_argument("--ood-samples", type=int, default=DEFAULT_OOD_SAMPLES)
    p.add_argument("--ood-seed", type=int, default=1234)
    p.add_argument("--force", action="store_true")
    p.add_argument("--no-plots", dest="plots", action="store_false")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-variance",
                       help="retrain across ground-truth coefficient amplitudes")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--amplitudes", required=True,
                   help="comma-separated sine amplitudes")
    p.add_argument("--kind", default="diffusion",
                   help="which term's amplitude to sweep")
    p.add_argument("--force", action="store_true")
    p.add_argument("--no-plots", dest="plots", action="store_false")
    p.add_argument("--set", action="append", default=[], metavar="KEY.PATH=VALUE")
    p.set_defaults(func=cmd_sweep_variance)

    p = sub.add_parser("verify", help="checksum and round-trip an artifact")
    p.add_argument("--path", required=True, type=Path)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PdefitError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
