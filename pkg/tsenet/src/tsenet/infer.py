"""Full-length inference: one mono 8 kHz WAV per scene, named so the
simulation side's evaluate command can score the directory directly."""

import logging
from pathlib import Path

import torch

from .data import SceneSet, write_wav
from .signal import istft, ri_join
from .train import load_checkpoint

log = logging.getLogger(__name__)


def infer(data_dir, checkpoint, out_dir, features_dir=None, enrollment="direct"):
    """Writes <scene_id>.wav per scene; returns the scene count.

    ``enrollment`` picks which speaker's features steer the model:
    "direct" extracts the desired speaker, "swapped" the interferer
    (used by the enrollment-sensitivity check).
    """
    checkpoint = Path(checkpoint)
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint {checkpoint} does not exist")
    if enrollment not in ("direct", "swapped"):
        raise ValueError(f"enrollment must be direct or swapped, got {enrollment!r}")
    model, payload = load_checkpoint(checkpoint)
    dataset = SceneSet(data_dir, payload["variant"], features_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        for sample in dataset.samples:
            feat = getattr(sample, f"enroll_{enrollment}")
            if isinstance(feat, torch.Tensor):
                feat = feat[None]
            else:
                feat = torch.tensor([feat], dtype=torch.long)
            est = model(sample.mix_ri[None], feat)
            spec = ri_join(est.permute(0, 3, 1, 2))
            wave = istft(spec, length=sample.target_direct.shape[0])[0]
            write_wav(out_dir / f"{sample.scene_id}.wav", wave.numpy())
    log.info("wrote %d enhanced scenes to %s", len(dataset), out_dir)
    return len(dataset)
