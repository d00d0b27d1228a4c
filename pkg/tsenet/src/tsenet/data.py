"""Scene loading against the simulation side's file contract.

A training directory is a dataset index JSON plus per-scene directories
(WAVs + manifest) and a features tree of exported dumps. Both orderings
of the swap objective are materialized here: the direct branch uses the
exported enrollment features of the desired speaker, the swapped branch
derives the interferer's features from its reverberant image and the
manifest direction, since the export side only enrolls the target.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile

from .dumps import read_complex_dump, read_doa_dump
from .signal import (
    HOP, SAMPLE_RATE_HZ, instantaneous_rtf, n_samples_for_frames, ri_split, stft,
)

DATASET_SCHEMA = "beamlab.dataset/1"


def read_wav(path):
    """float64 [n_samples, n_channels] at the pipeline rate."""
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE_HZ:
        raise ValueError(f"{path}: expected {SAMPLE_RATE_HZ} Hz, got {rate}")
    data = np.asarray(data, dtype=np.float64)
    return data[:, None] if data.ndim == 1 else data


def write_wav(path, wave):
    wavfile.write(path, SAMPLE_RATE_HZ, np.asarray(wave, dtype=np.float32).reshape(-1))


@dataclass
class SceneSample:
    scene_id: str
    mix_ri: torch.Tensor       # [2J, K, T] float32
    target_direct: torch.Tensor    # [n] float32, reference mic
    target_swapped: torch.Tensor   # [n] float32
    enroll_direct: object      # variant tensor, or int degree
    enroll_swapped: object


def _enrollment_from_wave(wave_ref_first, variant, ref_mic, doa_deg=None):
    """Features for one speaker from a reverberant multichannel wave."""
    if variant == "doa":
        return int(doa_deg)
    spec = stft(torch.from_numpy(np.ascontiguousarray(wave_ref_first.T)))
    spec = spec.permute(1, 2, 0).numpy()  # [K, T, J]
    if variant == "rtf":
        return ri_split(instantaneous_rtf(spec, ref_mic))
    return ri_split(spec[:, :, ref_mic])


class SceneSet:
    """Eagerly loaded scene collection for one enrollment variant."""

    def __init__(self, data_dir, variant, features_dir=None):
        data_dir = Path(data_dir)
        features = Path(features_dir) if features_dir else data_dir / "features"
        index = json.loads((data_dir / "dataset.json").read_text())
        if index.get("schema") != DATASET_SCHEMA:
            raise ValueError(
                f"expected dataset schema {DATASET_SCHEMA}, got {index.get('schema')!r}"
            )
        self.variant = variant
        self.samples = []
        for row in index["scenes"]:
            scene_id = row["scene_id"]
            scene_dir = data_dir / row["dir"]
            manifest = json.loads((scene_dir / "manifest.json").read_text())
            ref_mic = int(manifest["array"]["reference_mic"])

            mix, _ = read_complex_dump(features / "stft" / f"{scene_id}.json")
            n_frames = mix.shape[1]
            n = n_samples_for_frames(n_frames)
            desired = read_wav(scene_dir / manifest["files"]["desired"])
            interference = read_wav(scene_dir / manifest["files"]["interference"])

            if variant == "rtf":
                rtf, _ = read_complex_dump(features / "rtf" / f"{scene_id}.json")
                enroll_direct = ri_split(rtf)
            elif variant == "doa":
                deg, _ = read_doa_dump(features / "doa" / f"{scene_id}.json")
                enroll_direct = deg
            else:
                enrollment = read_wav(scene_dir / manifest["files"]["enrollment"])
                enroll_direct = _enrollment_from_wave(enrollment, variant, ref_mic)

            interferer_doa = next(
                p["doa_deg"] for p in manifest["placements"]
                if p["role"] == "interference"
            )
            enroll_swapped = _enrollment_from_wave(
                interference, variant, ref_mic, doa_deg=round(interferer_doa)
            )
            self.samples.append(SceneSample(
                scene_id=scene_id,
                mix_ri=ri_split(mix),
                target_direct=torch.from_numpy(
                    desired[:n, ref_mic].astype(np.float32)),
                target_swapped=torch.from_numpy(
                    interference[:n, ref_mic].astype(np.float32)),
                enroll_direct=enroll_direct,
                enroll_swapped=enroll_swapped,
            ))
        if not self.samples:
            raise ValueError(f"no scenes under {data_dir}")

    def __len__(self):
        return len(self.samples)


def crop_sample(sample, n_frames, enroll_frames, rng, tries=20):
    """Fixed-size training crop aligned between frames and time domain.

    Candidate windows are drawn until both speakers carry at least a
    tenth of their scene-average energy, so crops inside a speech pause
    do not hand the loss a near-silent target (which scores at the cap
    no matter what the network does). Falls back to the most energetic
    candidate when a scene has no such window.
    """
    t = sample.mix_ri.shape[2]
    if t < n_frames:
        raise ValueError(f"{sample.scene_id}: {t} frames, need {n_frames}")
    n = n_samples_for_frames(n_frames)
    floors = tuple(0.1 * (w * w).mean().item() + 1e-30
                   for w in (sample.target_direct, sample.target_swapped))
    start, best_score = 0, -1.0
    for _ in range(tries):
        cand = int(rng.integers(0, t - n_frames + 1))
        c0 = cand * HOP
        scores = []
        for wave, floor in zip((sample.target_direct, sample.target_swapped), floors):
            seg = wave[c0 : c0 + n]
            scores.append((seg * seg).mean().item() / floor)
        if min(scores) >= 1.0:
            start = cand
            break
        if min(scores) > best_score:
            best_score, start = min(scores), cand
    t0 = start * HOP
    mix = sample.mix_ri[:, :, start : start + n_frames]
    out = {
        "mix_ri": mix,
        "target_direct": sample.target_direct[t0 : t0 + n],
        "target_swapped": sample.target_swapped[t0 : t0 + n],
    }
    for key in ("enroll_direct", "enroll_swapped"):
        feat = getattr(sample, key)
        if isinstance(feat, torch.Tensor):
            te = feat.shape[2]
            w = min(te, enroll_frames)
            s = int(rng.integers(0, te - w + 1))
            feat = feat[:, :, s : s + w]
        out[key] = feat
    return out


def collate(crops):
    """Stack a list of crop dicts into batch tensors."""
    batch = {}
    for key in ("mix_ri", "target_direct", "target_swapped"):
        batch[key] = torch.stack([c[key] for c in crops])
    for key in ("enroll_direct", "enroll_swapped"):
        feats = [c[key] for c in crops]
        if isinstance(feats[0], torch.Tensor):
            w = min(f.shape[2] for f in feats)
            batch[key] = torch.stack([f[:, :, :w] for f in feats])
        else:
            batch[key] = torch.tensor(feats, dtype=torch.long)
    return batch
