"""Field dumps, CSV tables and atomic writes.

Binary dump layout (little endian)::

    magic "DGMA" | version u16 | kind u8 | rows u32 | cols u32 | rows*cols float64

rows run over the vertical (or radial) index.  ``kind`` is 0 for a
:class:`StripField`, 1 for a :class:`GridFunction` and 2 for a
:class:`PatchField`.  The grid parameters that the payload alone does not
fix (period, domain, patch coordinates) go to a JSON sidecar
``<name>.json`` next to the dump.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from degma.errors import ConfigurationError, MissingInputError
from degma.grid import Domain2D, GridFunction, StripField
from degma.transforms import PatchField

MAGIC = b"DGMA"
VERSION = 1
HEADER = struct.Struct("<4sHBII")
KIND_STRIP, KIND_GRID, KIND_PATCH = 0, 1, 2


def atomic_write(path, data: bytes | str) -> Path:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.chmod(tmp, 0o644)  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".json")


def _describe(field) -> tuple[int, dict]:
    if isinstance(field, StripField):
        return KIND_STRIP, {"kind": "strip", "period": field.period}
    if isinstance(field, GridFunction):
        return KIND_GRID, {"kind": "grid", "domain": field.domain.to_dict()}
    if isinstance(field, PatchField):
        return KIND_PATCH, {"kind": "patch", "x1": field.x1.tolist(), "xn": field.xn.tolist(),
                            "delta": field.delta, "field": field.kind}
    raise ConfigurationError(f"cannot dump {type(field).__name__}")


def encode_field(field) -> bytes:
    kind, _ = _describe(field)
    v = np.ascontiguousarray(field.values, dtype="<f8")
    rows, cols = v.shape
    return HEADER.pack(MAGIC, VERSION, kind, rows, cols) + v.tobytes(order="C")


def write_field(path, field, meta: dict | None = None) -> Path:
    """Dump ``field`` and its sidecar; ``meta`` is merged into the sidecar."""
    _, desc = _describe(field)
    if meta:
        desc = {**desc, "meta": meta}
    atomic_write(path, encode_field(field))
    atomic_write(sidecar_path(path), canonical_json(desc))
    return Path(path)


def decode_header(data: bytes) -> tuple[int, int, int]:
    if len(data) < HEADER.size:
        raise ConfigurationError("truncated dump header")
    magic, version, kind, rows, cols = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ConfigurationError("not a DGMA dump")
    if version != VERSION:
        raise ConfigurationError(f"unsupported dump version {version}")
    if len(data) != HEADER.size + 8 * rows * cols:
        raise ConfigurationError("dump payload size does not match its header")
    return kind, rows, cols


def read_field(path):
    """Read a dump written by :func:`write_field`."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"input {path} does not exist")
    data = path.read_bytes()
    kind, rows, cols = decode_header(data)
    values = np.frombuffer(data, dtype="<f8", offset=HEADER.size).reshape(rows, cols).astype(float)
    side = sidecar_path(path)
    desc = json.loads(side.read_text()) if side.exists() else {}
    if kind == KIND_STRIP:
        return StripField(values, float(desc.get("period", 2.0 * np.pi)))
    if kind == KIND_GRID:
        d = desc.get("domain", {"kind": "disc", "a": 1.0, "b": 1.0})
        return GridFunction(Domain2D(d["kind"], float(d["a"]), float(d["b"])), values)
    if kind == KIND_PATCH:
        if "x1" not in desc:
            raise MissingInputError(f"patch dump {path} needs its sidecar {side}")
        return PatchField(np.array(desc["x1"]), np.array(desc["xn"]), values,
                          delta=float(desc.get("delta", 0.0)), kind=desc.get("field", "v"))
    raise ConfigurationError(f"unknown dump kind {kind}")


def field_coordinates(field) -> tuple[np.ndarray, np.ndarray]:
    """Node coordinates ``(x1, xn)`` with the shape of ``field.values``."""
    if isinstance(field, StripField):
        return field.mesh()
    if isinstance(field, GridFunction):
        return field.coordinates()
    if isinstance(field, PatchField):
        X1, XN = np.meshgrid(field.x1, field.xn)
        return X1, XN
    raise ConfigurationError(f"no coordinates for {type(field).__name__}")


def _fmt(v) -> str:
    return repr(float(v))


def table_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def field_csv(field) -> str:
    """CSV ``i,j,x1,xn,value``; ``i`` is the horizontal (angular) index, ``j`` the vertical (radial)."""
    X1, XN = field_coordinates(field)
    V = field.values
    rows = ((i, j, X1[j, i], XN[j, i], V[j, i]) for j in range(V.shape[0]) for i in range(V.shape[1]))
    return table_csv(("i", "j", "x1", "xn", "value"), rows)


def write_csv(path, header, rows) -> Path:
    return atomic_write(path, table_csv(header, rows))


def write_json(path, obj) -> Path:
    return atomic_write(path, canonical_json(obj))
