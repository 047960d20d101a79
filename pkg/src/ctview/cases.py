"""Case manifests, case loading, and the on-disk cache of derived results.

A case is described by a small JSON manifest pointing at the scalar volume
and optional mask files (paths resolved relative to the manifest). Derived
results (classification, heatmap volume, measurements) are cached per case,
keyed by the content hash of the input files and the model version, so a
reload serves them without re-running the model.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from filelock import FileLock

from .errors import CacheError, GeometryError, ManifestError, NiftiError
from .nifti import read_nifti_file
from .volume import LabelVolume, ScalarVolume, resample_z, same_geometry

_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def fnv1a64_hex(data: bytes) -> str:
    return f"{fnv1a64(data):016x}"


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    scalar_path: Path
    lung_mask_path: Path | None
    lesion_mask_path: Path | None
    metadata: dict[str, str]
    inputs_hash: str
    needs_lung_fallback: bool
    needs_lesion_fallback: bool


@dataclass
class LoadedCase:
    """Volumes resampled to 1mm z spacing, ready for the pipeline."""

    record: CaseRecord
    scalar: ScalarVolume
    lung_mask: LabelVolume | None
    lesion_mask: LabelVolume | None


def _as_label_volume(vol: ScalarVolume | LabelVolume, what: str) -> LabelVolume:
    """Accept mask files written as scalars by external tools (nonzero =
    inside)."""
    if isinstance(vol, LabelVolume):
        return vol
    values = vol.data
    if not np.all(np.isin(values, values.astype(np.int64).astype(values.dtype))):
        raise ManifestError(f"{what} mask contains non-integral values")
    return LabelVolume((values != 0).astype(np.uint8), vol.spacing, vol.origin)


def validate_manifest(doc) -> dict:
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    case_id = doc.get("id")
    if not isinstance(case_id, str) or not _ID_RE.match(case_id):
        raise ManifestError(f"case id must be filesystem-safe, got {case_id!r}")
    if not isinstance(doc.get("scalar"), str):
        raise ManifestError("manifest needs a 'scalar' volume path")
    meta = doc.get("metadata", {})
    if not (isinstance(meta, dict)
            and all(isinstance(k, str) and isinstance(v, str) for k, v in meta.items())):
        raise ManifestError("metadata must be a string-to-string object")
    return doc


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise ManifestError(f"cannot read manifest: {e}") from e
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not valid JSON: {e}") from e
    return validate_manifest(doc)


def load_case(manifest_path: str | Path) -> LoadedCase:
    """Load a case's volumes, resample to 1mm z, and validate geometry.

    Missing masks are flagged on the record so the caller can run the
    fallback segmenters.
    """
    manifest_path = Path(manifest_path)
    return load_case_doc(load_manifest(manifest_path), manifest_path.parent)


def load_case_doc(doc: dict, base: Path) -> LoadedCase:
    """Load a case from an already-parsed manifest document; relative paths
    resolve against ``base``."""
    doc = validate_manifest(doc)

    def resolve(rel: str | None) -> Path | None:
        if rel is None:
            return None
        p = Path(rel)
        return p if p.is_absolute() else base / p

    scalar_path = resolve(doc["scalar"])
    lung_path = resolve(doc.get("lung_mask"))
    lesion_path = resolve(doc.get("lesion_mask"))

    hasher_input = bytearray()
    for p in (scalar_path, lung_path, lesion_path):
        if p is None:
            continue
        if not p.is_file():
            raise ManifestError(f"referenced file does not exist: {p}")
        hasher_input += p.read_bytes()
    inputs_hash = fnv1a64_hex(bytes(hasher_input))

    scalar = read_nifti_file(scalar_path)
    if isinstance(scalar, LabelVolume):
        raise ManifestError("'scalar' path points at a label volume")
    scalar = resample_z(scalar, 1.0)

    def load_mask(path: Path | None, what: str) -> LabelVolume | None:
        if path is None:
            return None
        mask = _as_label_volume(read_nifti_file(path), what)
        mask = resample_z(mask, 1.0)
        if not same_geometry(mask, scalar):
            raise GeometryError(
                f"{what} mask geometry {mask.dims}/{mask.spacing} does not match "
                f"the scalar volume {scalar.dims}/{scalar.spacing}")
        return mask

    lung = load_mask(lung_path, "lung")
    lesion = load_mask(lesion_path, "lesion")

    record = CaseRecord(
        case_id=doc["id"], scalar_path=scalar_path,
        lung_mask_path=lung_path, lesion_mask_path=lesion_path,
        metadata=dict(doc.get("metadata", {})), inputs_hash=inputs_hash,
        needs_lung_fallback=lung is None,
        needs_lesion_fallback=lesion is None)
    return LoadedCase(record=record, scalar=scalar, lung_mask=lung,
                      lesion_mask=lesion)


class DerivedCache:
    """Per-case result cache.

    Layout: ``<root>/<case_id>/<key>.bin`` plus an ``index.json`` mapping
    entry names to their key, inputs hash, and model version. Entries whose
    hash or version no longer match are invisible. Writers hold a per-case
    lock; readers are lock-free.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            probe = self.root / ".writable"
            probe.write_bytes(b"")
            probe.unlink()
        except OSError as e:
            raise CacheError(f"cache directory unusable: {e}") from e

    def _case_dir(self, case_id: str) -> Path:
        if not _ID_RE.match(case_id):
            raise CacheError(f"unsafe case id {case_id!r}")
        return self.root / case_id

    @staticmethod
    def _key(name: str, inputs_hash: str, model_version: str) -> str:
        return fnv1a64_hex(f"{name}|{inputs_hash}|{model_version}".encode())

    def load(self, case_id: str, name: str, inputs_hash: str,
             model_version: str) -> bytes | None:
        cdir = self._case_dir(case_id)
        index_path = cdir / "index.json"
        if not index_path.is_file():
            return None
        try:
            index = json.loads(index_path.read_text())
        except (OSError, json.JSONDecodeError):
            return None
        entry = index.get(name)
        if (not entry or entry.get("inputs_hash") != inputs_hash
                or entry.get("model_version") != model_version):
            return None
        payload = cdir / f"{entry['key']}.bin"
        try:
            return payload.read_bytes()
        except OSError:
            return None

    def store(self, case_id: str, name: str, inputs_hash: str,
              model_version: str, payload: bytes) -> Path:
        cdir = self._case_dir(case_id)
        try:
            cdir.mkdir(parents=True, exist_ok=True)
            with FileLock(str(cdir / ".lock")):
                key = self._key(name, inputs_hash, model_version)
                target = cdir / f"{key}.bin"
                tmp = cdir / f".{key}.tmp"
                tmp.write_bytes(payload)
                tmp.replace(target)
                index_path = cdir / "index.json"
                index = {}
                if index_path.is_file():
                    try:
                        index = json.loads(index_path.read_text())
                    except json.JSONDecodeError:
                        index = {}
                index[name] = {"key": key, "inputs_hash": inputs_hash,
                               "model_version": model_version}
                tmp_index = cdir / ".index.tmp"
                tmp_index.write_text(json.dumps(index, indent=1, sort_keys=True))
                tmp_index.replace(index_path)
        except OSError as e:
            raise CacheError(f"cannot write cache entry: {e}") from e
        return target
