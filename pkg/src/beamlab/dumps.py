"""Header-plus-raw export format for complex tensors.

Each dump is a JSON header file describing schema, shape, and layout, next
to a sibling ``.bin`` holding the tensor as little-endian float32 with real
and imaginary parts interleaved, C-order over the stated shape (so the
first, bin, axis is the slowest: "k-major").
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

__all__ = ["write_complex_dump", "read_complex_dump", "write_doa_dump", "read_doa_dump"]

COMPLEX_LAYOUT = "k-major complex interleaved float32"


def write_complex_dump(
    path_json: str | Path, array: np.ndarray, schema: str, **header_fields
) -> Path:
    """Write ``array`` to ``<stem>.bin`` with a JSON header at ``path_json``."""
    path_json = Path(path_json)
    array = np.ascontiguousarray(array, dtype=np.complex128)
    interleaved = np.empty(array.shape + (2,), dtype="<f4")
    interleaved[..., 0] = array.real
    interleaved[..., 1] = array.imag
    header = {
        "schema": schema,
        "shape": list(array.shape),
        "layout": COMPLEX_LAYOUT,
        **header_fields,
    }
    path_json.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    path_json.with_suffix(".bin").write_bytes(interleaved.tobytes())
    return path_json


def read_complex_dump(path_json: str | Path) -> tuple[np.ndarray, dict]:
    """Read a complex dump back; values carry float32 precision."""
    path_json = Path(path_json)
    header = json.loads(path_json.read_text())
    if header.get("layout") != COMPLEX_LAYOUT:
        raise ValueError(f"unsupported dump layout {header.get('layout')!r}")
    shape = tuple(header["shape"])
    raw = np.frombuffer(path_json.with_suffix(".bin").read_bytes(), dtype="<f4")
    expected = int(np.prod(shape)) * 2
    if raw.size != expected:
        raise ValueError(f"{path_json}: payload holds {raw.size} floats, header implies {expected}")
    interleaved = raw.reshape(shape + (2,))
    array = interleaved[..., 0].astype(np.complex128)
    array += 1j * interleaved[..., 1].astype(np.float64)
    return array, header


def write_doa_dump(path_json: str | Path, doa_deg: int, schema: str, **header_fields) -> Path:
    """Scalar direction-of-arrival dump (integer degrees, JSON only)."""
    path_json = Path(path_json)
    header = {"schema": schema, "doa_deg": int(round(doa_deg)), **header_fields}
    path_json.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return path_json


def read_doa_dump(path_json: str | Path) -> tuple[int, dict]:
    header = json.loads(Path(path_json).read_text())
    return int(header["doa_deg"]), header
