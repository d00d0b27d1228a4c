"""Seeded training loop: Adam at 0.001, swap-averaged SI-SDR objective,
loss curve CSV and a checkpoint on disk. Deterministic for a given seed."""

import csv
import logging
import math
from pathlib import Path

import numpy as np
import torch

from .data import SceneSet, collate, crop_sample
from .loss import swap_loss
from .model import NetConfig, TseNet

log = logging.getLogger(__name__)


def run_batch(model, batch):
    """Forward both orderings of one batch and return the swap loss."""
    est_direct = model(batch["mix_ri"], batch["enroll_direct"])
    est_swapped = model(batch["mix_ri"], batch["enroll_swapped"])
    return swap_loss(
        est_direct, batch["target_direct"], est_swapped, batch["target_swapped"]
    )


def _fit(model, dataset, epochs, seed, batch_size, crop_frames, enroll_frames, lr):
    """Optimizer loop on a loaded SceneSet; returns the per-epoch curve."""
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    curve = []
    model.train()
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for lo in range(0, len(order), batch_size):
            rows = [dataset.samples[i] for i in order[lo : lo + batch_size]]
            batch = collate(
                [crop_sample(s, crop_frames, enroll_frames, rng) for s in rows]
            )
            loss = run_batch(model, batch)
            if not math.isfinite(loss.item()):
                raise RuntimeError(
                    f"training diverged: loss {loss.item()} at epoch {epoch}, "
                    f"batch starting {lo} (variant {dataset.variant}, seed {seed})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        curve.append(float(np.mean(losses)))
        log.info("epoch %d/%d: loss %.3f", epoch + 1, epochs, curve[-1])
    return curve


def train(
    data_dir,
    variant,
    epochs,
    seed,
    out_dir,
    cfg=None,
    features_dir=None,
    batch_size=4,
    crop_frames=128,
    enroll_frames=128,
    lr=1e-3,
):
    """Returns the checkpoint path; writes loss_curve.csv next to it."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = cfg or NetConfig()
    torch.manual_seed(seed)
    dataset = SceneSet(data_dir, variant, features_dir)
    model = TseNet(variant, cfg)
    curve = _fit(model, dataset, epochs, seed, batch_size, crop_frames, enroll_frames, lr)
    with open(out_dir / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, value in enumerate(curve):
            writer.writerow([i, f"{value:.6f}"])
    ckpt_path = out_dir / "checkpoint.pt"
    torch.save(
        {
            "state_dict": model.state_dict(),
            "variant": variant,
            "config": cfg.to_dict(),
            "epochs": epochs,
            "seed": seed,
            "final_loss": curve[-1],
        },
        ckpt_path,
    )
    return ckpt_path


def load_checkpoint(path):
    """Rebuild the trained model from a checkpoint file."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    model = TseNet(payload["variant"], NetConfig.from_dict(payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
