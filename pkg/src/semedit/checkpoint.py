"""Checkpoint archive format.

A checkpoint is a ZIP (stored, fixed timestamps, sorted entries, so identical
state always produces identical bytes) holding:

    manifest.json       spec dicts, step, config hash, metric snapshot,
                        and a sha256 per array entry
    arrays/<name>.bin   one line ``f32 d0 d1 ...`` then raw little-endian
                        float32 data

Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import hashlib
import json
import os
import zipfile

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(RuntimeError):
    """Raised for unreadable, corrupt, or mismatching checkpoints."""


def _encode_array(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr, dtype="<f4")
    header = "f32 " + " ".join(str(d) for d in a.shape) + "\n"
    return header.encode("ascii") + a.tobytes()


def _decode_array(blob: bytes, name: str) -> np.ndarray:
    nl = blob.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"entry '{name}': missing shape header")
    fields = blob[:nl].decode("ascii", "replace").split()
    if not fields or fields[0] != "f32":
        raise CheckpointError(f"entry '{name}': bad header {fields!r}")
    shape = tuple(int(x) for x in fields[1:])
    data = np.frombuffer(blob[nl + 1:], dtype="<f4")
    expected = int(np.prod(shape)) if shape else 1
    if data.size != expected:
        raise CheckpointError(f"entry '{name}': size does not match header")
    return data.reshape(shape).copy()


def save_checkpoint(path, manifest: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write manifest + named float32 arrays; byte-stable and atomic."""
    manifest = dict(manifest)
    entries = {}
    blobs = {}
    for name in sorted(arrays):
        blob = _encode_array(arrays[name])
        blobs[name] = blob
        entries[name] = {
            "shape": list(np.asarray(arrays[name]).shape),
            "sha256": hashlib.sha256(blob).hexdigest(),
        }
    manifest["format"] = 1
    manifest["entries"] = entries
    tmp = str(path) + ".tmp"
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("manifest.json", date_time=_EPOCH)
        zf.writestr(info, json.dumps(manifest, indent=1, sort_keys=True))
        for name in sorted(blobs):
            info = zipfile.ZipInfo(f"arrays/{name}.bin", date_time=_EPOCH)
            zf.writestr(info, blobs[name])
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint; any checksum or structure problem raises
    CheckpointError naming the offending entry."""
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            arrays = {}
            for name, meta in manifest.get("entries", {}).items():
                try:
                    blob = zf.read(f"arrays/{name}.bin")
                except KeyError:
                    raise CheckpointError(f"entry '{name}' missing from archive")
                digest = hashlib.sha256(blob).hexdigest()
                if digest != meta["sha256"]:
                    raise CheckpointError(f"entry '{name}': checksum mismatch")
                arrays[name] = _decode_array(blob, name)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
    return manifest, arrays


def check_spec_match(expected: dict, found: dict, context: str) -> None:
    """Field-by-field spec comparison; the error names the first mismatch."""
    keys = sorted(set(expected) | set(found))
    for k in keys:
        if expected.get(k) != found.get(k):
            raise CheckpointError(
                f"{context}: spec field '{k}' mismatch "
                f"(expected {expected.get(k)!r}, checkpoint has {found.get(k)!r})")
