"""Per-scene feature export for downstream separation models.

Each feature kind writes one header+raw dump per scene into a flat output
directory: the mixture STFT, the instantaneous enrollment RTF, or the
desired speaker's direction of arrival from the manifest. The dumps are
the file boundary between this package and anything that trains on it.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .dsp import StftConfig, stft
from .dumps import write_complex_dump
from .rtf import instantaneous_rtf
from .scene import Role, load_dataset_index, load_scene

__all__ = ["export_features", "FEATURE_SCHEMAS"]

log = logging.getLogger(__name__)

FEATURE_SCHEMAS = {
    "stft": "beamlab.feat.stft/1",
    "rtf": "beamlab.feat.rtf/1",
    "doa": "beamlab.feat.doa/1",
}


def export_features(
    dataset_index: str | Path,
    feature: str,
    out_dir: str | Path,
    cfg: StftConfig | None = None,
) -> int:
    """Write one ``<scene_id>.json`` + ``.bin`` dump per scene; returns the
    scene count.

    stft: mixture spectrogram, [bins x frames x channels] complex.
    rtf: instantaneous enrollment RTF, [bins x frames x channels] complex,
        with the manifest's reference mic in the header.
    doa: the desired speaker's direction as a single rounded degree value,
        shape [1], also echoed in the header as an integer.
    """
    if feature not in FEATURE_SCHEMAS:
        raise ValueError(f"unknown feature {feature!r}")
    dataset_index = Path(dataset_index)
    index = load_dataset_index(dataset_index)
    cfg = cfg or StftConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    schema = FEATURE_SCHEMAS[feature]
    for row in index["scenes"]:
        manifest, audio = load_scene(dataset_index.parent / row["dir"])
        path = out_dir / f"{row['scene_id']}.json"
        if feature == "stft":
            spec = stft(audio.mixture, cfg)
            write_complex_dump(
                path, spec.bins, schema,
                frame_len=cfg.frame_len, hop=cfg.hop,
                sample_rate_hz=audio.mixture.sample_rate_hz,
            )
        elif feature == "rtf":
            inst = instantaneous_rtf(
                stft(audio.enrollment, cfg), manifest.array.reference_mic
            )
            write_complex_dump(
                path, inst.values, schema,
                ref_mic=manifest.array.reference_mic,
                frame_len=cfg.frame_len, hop=cfg.hop,
            )
        else:
            doa = int(round(manifest.placement(Role.DESIRED).doa_deg))
            write_complex_dump(
                path, np.array([doa], dtype=np.complex128), schema, doa_deg=doa
            )
    log.info("exported %s features for %d scenes to %s",
             feature, len(index["scenes"]), out_dir)
    return len(index["scenes"])
