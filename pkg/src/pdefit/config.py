"""Run configuration files and dotted-path overrides.

A config is one JSON document with sections: grid, terms, truth, spectrum,
data, train, eval. Term bounds left unspecified fall back to the
stability-budgeted defaults for the grid. `--set a.b.c=value` overrides nest
into the document before anything is built; values parse as JSON literals,
falling back to plain strings.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Mapping, Sequence

from .coeffs import KINDS, TermSpec, default_term_specs
from .datagen import (CoeffFieldSpec, DatasetManifest, ModeEntry, SpectrumSpec,
                      default_spectrum)
from .errors import ValidationError
from .grid import Grid
from .train import TrainConfig

DEFAULT_OOD_LEVELS = (0.0, 0.25, 0.64, 0.99)
DEFAULT_OOD_SAMPLES = 25


def load_config(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            doc = json.loads(fh.read().decode("utf-8"))
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"config root must be an object, got {type(doc).__name__}")
    return doc


def apply_overrides(cfg: dict, sets: Sequence[str]) -> dict:
    """Apply `key.path=value` overrides; values are JSON literals when possible."""
    out = copy.deepcopy(cfg)
    for item in sets:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not of the form key.path=value")
        dotted, raw = item.split("=", 1)
        keys = [k for k in dotted.strip().split(".") if k]
        if not keys:
            raise ValidationError(f"override {item!r} has an empty key path")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for k in keys[:-1]:
            nxt = node.get(k)
            if not isinstance(nxt, dict):
                nxt = {}
                node[k] = nxt
            node = nxt
        node[keys[-1]] = value
    return out


def _section(cfg: Mapping, name: str, required: bool = True) -> dict:
    sec = cfg.get(name)
    if sec is None:
        if required:
            raise ValidationError(f"config is missing the {name!r} section")
        return {}
    if not isinstance(sec, dict):
        raise ValidationError(f"config section {name!r} must be an object")
    return dict(sec)


def build_grid(cfg: Mapping) -> Grid:
    sec = _section(cfg, "grid")
    try:
        return Grid.from_dict(sec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad grid section: {exc}") from exc


def build_terms(cfg: Mapping, grid: Grid) -> dict[str, TermSpec]:
    """Term specs from the config: defaults for the grid, then explicit bounds."""
    sec = _section(cfg, "terms")
    active = []
    for kind, entry in sec.items():
        if kind not in KINDS:
            raise ValidationError(f"terms: unknown kind {kind!r}")
        if not isinstance(entry, dict):
            raise ValidationError(f"terms.{kind} must be an object")
        if entry.get("active", True):
            active.append(kind)
    if not active:
        raise ValidationError("no active terms configured")
    specs = default_term_specs(grid, active)
    out: dict[str, TermSpec] = {}
    for kind, entry in sec.items():
        if not entry.get("active", True):
            out[kind] = TermSpec(kind, float(entry.get("lo", -1.0)),
                                 float(entry.get("hi", 1.0)), active=False)
            continue
        base = specs[kind]
        out[kind] = TermSpec(kind, float(entry.get("lo", base.lo)),
                             float(entry.get("hi", base.hi)), active=True)
    return out


def build_spectrum(cfg: Mapping, grid: Grid) -> SpectrumSpec:
    sec = _section(cfg, "spectrum", required=False)
    if "entries" in sec:
        return SpectrumSpec(dim=grid.dim, entries=tuple(
            ModeEntry.from_dict(e) for e in sec["entries"]))
    return default_spectrum(grid.dim,
                            max_mode=int(sec.get("max_mode", 2)),
                            amplitude=float(sec.get("amplitude", 1.0)),
                            decay=float(sec.get("decay", 2.0)))


def build_truth(cfg: Mapping) -> dict[str, tuple[CoeffFieldSpec, ...]]:
    sec = _section(cfg, "truth")
    out: dict[str, tuple[CoeffFieldSpec, ...]] = {}
    for kind, entries in sec.items():
        if kind not in KINDS:
            raise ValidationError(f"truth: unknown kind {kind!r}")
        if isinstance(entries, dict):
            entries = [entries]
        if not isinstance(entries, list):
            raise ValidationError(f"truth.{kind} must be an object or a list of objects")
        try:
            out[kind] = tuple(CoeffFieldSpec.from_dict(e) for e in entries)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad truth.{kind} entry: {exc}") from exc
    return out


def build_manifest(cfg: Mapping, seed: int,
                   samples_override: int | None = None) -> DatasetManifest:
    grid = build_grid(cfg)
    data = _section(cfg, "data", required=False)
    samples = samples_override if samples_override is not None else int(data.get("samples", 100))
    return DatasetManifest(
        grid=grid, samples=samples, seed=int(seed),
        spectrum=build_spectrum(cfg, grid),
        truth=build_truth(cfg),
        terms=build_terms(cfg, grid),
        fine_factor=int(data.get("fine_factor", 4)),
        normalize=bool(data.get("normalize", True)))


def build_train_config(cfg: Mapping, seed: int) -> TrainConfig:
    sec = _section(cfg, "train", required=False)
    threshold = sec.get("loss_threshold")
    return TrainConfig(
        seed=int(seed),
        epochs=int(sec.get("epochs", 30)),
        batch_size=int(sec.get("batch_size", 32)),
        lr=float(sec.get("lr", 1e-2)),
        patience=int(sec.get("patience", 20)),
        min_improve=float(sec.get("min_improve", 5e-4)),
        loss_threshold=None if threshold is None else float(threshold),
        checkpoint_stride=int(sec.get("checkpoint_stride", 1)))


def eval_options(cfg: Mapping) -> dict:
    sec = _section(cfg, "eval", required=False)
    return {"ood_levels": [float(x) for x in sec.get("ood_levels", DEFAULT_OOD_LEVELS)],
            "ood_samples": int(sec.get("ood_samples", DEFAULT_OOD_SAMPLES))}


def resolved_config(cfg: Mapping, seed: int, command: str) -> dict:
    out = copy.deepcopy(dict(cfg))
    out["_resolved"] = {"command": command, "seed": int(seed)}
    return out
