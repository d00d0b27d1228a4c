"""Readers for the upstream export formats.

The file layout is the whole contract with the simulation side: a JSON
header naming schema, shape, and layout, next to a sibling ``.bin`` of
little-endian float32 with real and imaginary parts interleaved, C-order
over the stated shape. Nothing here imports the producing package.
"""

import json
from pathlib import Path

import numpy as np

COMPLEX_LAYOUT = "k-major complex interleaved float32"


def read_complex_dump(path_json):
    """Return (complex128 array, header dict) for one dump."""
    path_json = Path(path_json)
    header = json.loads(path_json.read_text())
    if header.get("layout") != COMPLEX_LAYOUT:
        raise ValueError(f"{path_json}: unsupported layout {header.get('layout')!r}")
    shape = tuple(header["shape"])
    raw = np.frombuffer(path_json.with_suffix(".bin").read_bytes(), dtype="<f4")
    expected = int(np.prod(shape)) * 2
    if raw.size != expected:
        raise ValueError(
            f"{path_json}: payload holds {raw.size} floats, header implies {expected}"
        )
    pairs = raw.reshape(shape + (2,))
    values = pairs[..., 0].astype(np.complex128)
    values += 1j * pairs[..., 1].astype(np.float64)
    return values, header


def read_doa_dump(path_json):
    """Return (integer degree, header) from a direction dump."""
    header = json.loads(Path(path_json).read_text())
    return int(header["doa_deg"]), header
