"""Training loss: swap-averaged negative time-domain SI-SDR.

Each training sample is used twice, once extracting the desired speaker
and once, with the other speaker's enrollment, extracting the
interferer; the two negative SI-SDR values are averaged. SI-SDR is
computed on the inverse-STFT of the RI estimate against the reverberant
target at the reference microphone and smoothly capped to +-40 dB so a
perfect or hopeless reconstruction cannot blow up the objective.
"""

import torch

from .signal import istft, ri_join

SI_SDR_CAP_DB = 40.0


def si_sdr_db(estimate, reference, cap_db=SI_SDR_CAP_DB):
    """Batched scale-invariant SDR, [B, n] tensors -> [B] dB, capped.

    The +-cap_db cap is applied smoothly: the power ratio r is mapped
    through (r + e) / (1 + e r) with e = 10^(-cap/10), which pins r = 0
    at -cap and r = inf at +cap while staying monotone and
    differentiable everywhere. A hard clamp would zero the gradient for
    any sample sitting at the cap, which is exactly where an untrained
    network starts.
    """
    alpha = (estimate * reference).sum(dim=-1, keepdim=True) / (
        (reference * reference).sum(dim=-1, keepdim=True)
    )
    target = alpha * reference
    error = estimate - target
    num = (target * target).sum(dim=-1)
    den = (error * error).sum(dim=-1)
    ratio = num / (den + torch.finfo(estimate.dtype).tiny)
    eps = 10.0 ** (-cap_db / 10.0)
    return 10.0 * torch.log10((ratio + eps) / (1.0 + eps * ratio))


def _branch_loss(estimate_ri, target_wave):
    """Negative SI-SDR per batch element, skipping silent targets.

    estimate_ri: [B, K, T, 2], target_wave: [B, n] with n matching the
    inverse STFT of T frames. Returns ([B] losses, [B] bool valid mask).
    """
    spec = ri_join(estimate_ri.permute(0, 3, 1, 2))
    wave = istft(spec, length=target_wave.shape[-1])
    valid = (target_wave * target_wave).sum(dim=-1) > 0
    losses = torch.zeros(wave.shape[0], dtype=wave.dtype, device=wave.device)
    if valid.any():
        losses[valid] = -si_sdr_db(wave[valid], target_wave[valid])
    return losses, valid


def swap_loss(estimate_direct, target_direct, estimate_swapped, target_swapped):
    """Mean over both orderings and the batch of negative SI-SDR.

    Silent targets drop out of the mean; a batch where every target in
    both orderings is silent is a caller error.
    """
    loss_d, valid_d = _branch_loss(estimate_direct, target_direct)
    loss_s, valid_s = _branch_loss(estimate_swapped, target_swapped)
    count = valid_d.sum() + valid_s.sum()
    if count == 0:
        raise ValueError("every target in the batch is silent")
    return (loss_d.sum() + loss_s.sum()) / count
