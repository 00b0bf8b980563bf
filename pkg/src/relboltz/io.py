"""Serialization: matrix container, CSV tables, manifests, atomic writes.

Matrix container format ("RBSM"):

    bytes 0..3    magic b"RBSM"
    u32           container version (currently 1)
    u32           dim (matrices are square, row-major)
    u32           dtype flag: 0 = float64, 1 = complex128
    u64           seed used by the producing stage
    16 bytes      kernel id, ASCII, NUL padded
    payload       dim*dim little-endian 8-byte floats; complex matrices
                  store interleaved (re, im) pairs

All integers are little-endian.  CSV files use ',' separators, '.'
decimals, a header row, LF line endings and 17 significant digits, so a
round trip through text is bit-exact for doubles.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from typing import Iterable

import numpy as np

MAGIC = b"RBSM"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQ16s")


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write-temp-then-rename so partially written files never appear."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-rbsm-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_matrix(path: str, matrix: np.ndarray, seed: int = 0, kernel_id: str = "") -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("container stores square matrices")
    is_complex = np.iscomplexobj(matrix)
    header = _HEADER.pack(MAGIC, VERSION, matrix.shape[0], 1 if is_complex else 0,
                          seed & (2**64 - 1), kernel_id.encode("ascii")[:16].ljust(16, b"\0"))
    if is_complex:
        payload = np.ascontiguousarray(matrix.astype(np.complex128)).view(np.float64)
    else:
        payload = np.ascontiguousarray(matrix.astype(np.float64))
    atomic_write_bytes(path, header + payload.astype("<f8").tobytes())


def read_matrix(path: str) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, dim, flag, seed, kid = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not an RBSM container")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if flag == 1:
        mat = body.view(np.complex128).reshape(dim, dim).copy()
    else:
        mat = body.reshape(dim, dim).copy()
    meta = {"dim": dim, "seed": seed, "kernel_id": kid.rstrip(b"\0").decode("ascii"),
            "complex": bool(flag)}
    return mat, meta


def format_float(x) -> str:
    return f"{float(x):.17g}"


def write_csv(path: str, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, (float, np.floating)):
                cells.append(format_float(cell))
            elif isinstance(cell, (int, np.integer)):
                cells.append(str(int(cell)))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_json(path: str, payload: dict) -> None:
    atomic_write_bytes(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path: str, stage: str, config_hash: str, files: Iterable[str],
                   extra: dict | None = None) -> dict:
    """Manifest with checksums of every produced file.

    Timestamps live only here, never in the data files, so identical
    configurations reproduce identical data bytes.
    """
    import time as _time

    manifest = {
        "stage": stage,
        "config_hash": config_hash,
        "artifact_version": _artifact_version(),
        "created_unix": _time.time(),
        "files": {os.path.basename(f): sha256_file(f) for f in files},
    }
    if extra:
        manifest["extra"] = extra
    write_json(path, manifest)
    return manifest


def write_errors(outdir: str, stage: str, code: int, reason: str, details: str = "") -> None:
    write_json(os.path.join(outdir, "errors.json"),
               {"stage": stage, "exit_code": code, "reason": reason, "details": details})


def _artifact_version() -> str:
    from . import __version__

    return __version__
