"""On-disk artifacts: datasets and models as JSON manifests plus raw blobs.

A blob is the float64 little-endian C-order bytes of one array (trajectory
slices are concatenated along axis 0). The manifest lists every blob with its
CRC-32 and byte length; loads verify both. Writes go through a temp file and
os.replace, so a crash can leave stray temp files but never a torn artifact.
Manifests carry a format version; unknown versions are refused.
"""

from __future__ import annotations

import json
import os
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .coeffs import CoeffSet, TermSpec
from .datagen import Dataset, DatasetManifest
from .errors import (CorruptArtifactError, StorageError, UnsupportedVersionError,
                     ValidationError)
from .grid import Grid, Trajectory

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


def json_bytes(obj) -> bytes:
    """Canonical JSON encoding: sorted keys, two-space indent, trailing newline."""
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def write_bytes_atomic(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_json_atomic(path: Path, obj) -> None:
    write_bytes_atomic(path, json_bytes(obj))


def read_json(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return json.loads(fh.read().decode("utf-8"))
    except FileNotFoundError as exc:
        raise StorageError(f"missing file: {path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptArtifactError(f"unreadable JSON in {path}: {exc}",
                                   blob=Path(path).name) from exc


def array_to_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def bytes_to_array(data: bytes, shape: tuple[int, ...]) -> np.ndarray:
    expected = int(np.prod(shape)) * 8
    if len(data) != expected:
        raise CorruptArtifactError(
            f"blob holds {len(data)} bytes, expected {expected} for shape {shape}")
    return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)


def _prepare_dir(dirpath: Path, force: bool) -> Path:
    dirpath = Path(dirpath)
    if dirpath.exists():
        if not dirpath.is_dir():
            raise ValidationError(f"{dirpath} exists and is not a directory")
        if (dirpath / MANIFEST_NAME).exists() and not force:
            raise ValidationError(
                f"{dirpath} already holds an artifact; pass force to overwrite")
    dirpath.mkdir(parents=True, exist_ok=True)
    return dirpath


def _blob_entry(name: str, data: bytes) -> dict:
    return {"name": name, "bytes": len(data), "crc32": zlib.crc32(data)}


def _read_blob(dirpath: Path, entry: Mapping) -> bytes:
    name = str(entry["name"])
    path = dirpath / name
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise CorruptArtifactError(f"missing blob {name}", blob=name) from exc
    if len(data) != int(entry["bytes"]):
        raise CorruptArtifactError(
            f"blob {name} holds {len(data)} bytes, manifest says {entry['bytes']}",
            blob=name)
    if zlib.crc32(data) != int(entry["crc32"]):
        raise CorruptArtifactError(f"blob {name} failed its CRC-32 check", blob=name)
    return data


def _check_header(doc: dict, kind: str, path: Path) -> None:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path} has format version {version!r}; this build supports {FORMAT_VERSION}")
    if doc.get("kind") != kind:
        raise StorageError(f"{path} holds a {doc.get('kind')!r} artifact, expected {kind!r}")


def save_dataset(dirpath: Path, dataset: Dataset, force: bool = False) -> Path:
    """Write a dataset directory: manifest.json plus one blob per sample."""
    if len(dataset.trajectories) != dataset.manifest.samples:
        raise ValidationError(
            f"dataset holds {len(dataset.trajectories)} trajectories but its "
            f"manifest promises {dataset.manifest.samples}")
    dirpath = _prepare_dir(dirpath, force)
    blobs = []
    for i, traj in enumerate(dataset.trajectories):
        name = f"sample_{i:05d}.f64"
        data = array_to_bytes(traj.stacked())
        write_bytes_atomic(dirpath / name, data)
        blobs.append(_blob_entry(name, data))
    doc = {"format_version": FORMAT_VERSION, "kind": "dataset",
           "manifest": dataset.manifest.to_dict(), "blobs": blobs}
    write_json_atomic(dirpath / MANIFEST_NAME, doc)
    return dirpath


def load_dataset(dirpath: Path) -> Dataset:
    dirpath = Path(dirpath)
    doc = read_json(dirpath / MANIFEST_NAME)
    _check_header(doc, "dataset", dirpath / MANIFEST_NAME)
    manifest = DatasetManifest.from_dict(doc["manifest"])
    if len(doc["blobs"]) != manifest.samples:
        raise CorruptArtifactError(
            f"manifest lists {len(doc['blobs'])} blobs for {manifest.samples} samples")
    grid = manifest.grid
    shape = (grid.t_slices + 1,) + grid.shape
    trajectories = []
    for entry in doc["blobs"]:
        data = _read_blob(dirpath, entry)
        trajectories.append(Trajectory.from_stacked(grid, bytes_to_array(data, shape)))
    return Dataset(manifest=manifest, trajectories=trajectories)


def _theta_blob_name(kind: str, index: int) -> str:
    return f"theta_{kind}_{index}.f64"


def save_model(dirpath: Path, coeffs: CoeffSet, meta: Mapping | None = None,
               force: bool = False) -> Path:
    """Write a model directory: manifest.json plus one blob per parameter field."""
    dirpath = _prepare_dir(dirpath, force)
    blobs = []
    for kind in coeffs.active_kinds():
        for i, arr in enumerate(coeffs.theta[kind]):
            name = _theta_blob_name(kind, i)
            data = array_to_bytes(arr)
            write_bytes_atomic(dirpath / name, data)
            blobs.append(_blob_entry(name, data))
    doc = {"format_version": FORMAT_VERSION, "kind": "model",
           "grid": coeffs.grid.to_dict(),
           "terms": {k: s.to_dict() for k, s in coeffs.specs.items()},
           "blobs": blobs,
           "meta": dict(meta) if meta else {}}
    write_json_atomic(dirpath / MANIFEST_NAME, doc)
    return dirpath


def load_model(dirpath: Path) -> tuple[CoeffSet, dict]:
    dirpath = Path(dirpath)
    doc = read_json(dirpath / MANIFEST_NAME)
    _check_header(doc, "model", dirpath / MANIFEST_NAME)
    grid = Grid.from_dict(doc["grid"])
    specs = {k: TermSpec.from_dict(s) for k, s in doc["terms"].items()}
    by_name = {str(e["name"]): e for e in doc["blobs"]}
    theta: dict[str, tuple[np.ndarray, ...]] = {}
    from .coeffs import fields_per_kind  # local to avoid a wider import surface
    for kind, spec in specs.items():
        if not spec.active:
            continue
        arrays = []
        for i in range(fields_per_kind(kind, grid.dim)):
            name = _theta_blob_name(kind, i)
            if name not in by_name:
                raise CorruptArtifactError(f"manifest lists no blob {name}", blob=name)
            data = _read_blob(dirpath, by_name[name])
            arrays.append(bytes_to_array(data, grid.shape))
        theta[kind] = tuple(arrays)
    return CoeffSet(grid, specs, theta), dict(doc.get("meta", {}))


def manifest_fingerprint(dirpath: Path) -> int:
    """CRC-32 of an artifact's manifest bytes; links models to their dataset."""
    path = Path(dirpath) / MANIFEST_NAME
    try:
        return zlib.crc32(path.read_bytes())
    except FileNotFoundError as exc:
        raise StorageError(f"missing file: {path}") from exc


@dataclass(frozen=True)
class VerifyReport:
    kind: str
    blobs: int
    bytes_total: int


def _first_difference(a: bytes, b: bytes) -> int:
    if len(a) != len(b):
        return min(len(a), len(b))
    arr_a = np.frombuffer(a, dtype=np.uint8)
    arr_b = np.frombuffer(b, dtype=np.uint8)
    diff = arr_a != arr_b
    return int(np.argmax(diff))


def verify_artifact(dirpath: Path) -> VerifyReport:
    """Check an artifact end to end: checksums, then a load/save byte comparison.

    The reload must re-serialize to the exact bytes on disk; the first
    differing offset is reported otherwise.
    """
    dirpath = Path(dirpath)
    doc = read_json(dirpath / MANIFEST_NAME)
    kind = doc.get("kind")
    if kind == "dataset":
        artifact = load_dataset(dirpath)
        save = lambda d: save_dataset(d, artifact, force=True)
    elif kind == "model":
        coeffs, meta = load_model(dirpath)
        save = lambda d: save_model(d, coeffs, meta, force=True)
    else:
        raise StorageError(f"unknown artifact kind {kind!r} in {dirpath}")
    total = 0
    with tempfile.TemporaryDirectory(prefix="pdefit-verify-") as tmp:
        tmp_dir = Path(tmp) / "copy"
        save(tmp_dir)
        names = [MANIFEST_NAME] + [str(e["name"]) for e in doc["blobs"]]
        for name in names:
            original = (dirpath / name).read_bytes()
            rewritten = (tmp_dir / name).read_bytes()
            total += len(original)
            if original != rewritten:
                offset = _first_difference(original, rewritten)
                raise CorruptArtifactError(
                    f"{name} does not round-trip: first difference at byte {offset}",
                    blob=name, offset=offset)
    return VerifyReport(kind=kind, blobs=len(doc["blobs"]), bytes_total=total)
