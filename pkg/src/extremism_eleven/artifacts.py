"""On-disk containers, atomic writes and fingerprints shared by all stages."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np


class ArtifactError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=1) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps_json(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def array_fingerprint(a: np.ndarray) -> str:
    a = np.ascontiguousarray(a, dtype="<f8")
    return sha256_bytes(str(a.shape).encode() + a.tobytes())


def matrix_bytes(header: dict, data: np.ndarray) -> bytes:
    """One JSON header line, then row-major little-endian float32 rows."""
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2:
        raise ArtifactError("matrix must be 2-D")
    head = dict(header)
    head["shape"] = list(data.shape)
    return (json.dumps(head, ensure_ascii=False, sort_keys=True) + "\n").encode("utf-8") + data.tobytes()


def write_matrix(path, header: dict, data: np.ndarray) -> None:
    atomic_write_bytes(path, matrix_bytes(header, data))


def read_matrix(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        head_line = fh.readline()
        try:
            header = json.loads(head_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ArtifactError(f"{path}: bad matrix header") from None
        rows, cols = header["shape"]
        body = fh.read()
    if len(body) != rows * cols * 4:
        raise ArtifactError(f"{path}: expected {rows * cols * 4} payload bytes, found {len(body)}")
    data = np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float64)
    return header, data


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def fmt(x) -> str:
    """Stable float formatting for CSV output."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return ""
    return repr(round(x, 10))
