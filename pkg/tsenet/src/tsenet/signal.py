"""Torch STFT helpers matching the upstream dump convention.

256-sample periodic Hann at hop 128, 8 kHz, frames starting at sample 0,
one-sided 129 bins. ``istft`` is differentiable and feeds the training
loss; ``stft`` builds enrollment features for the spectral variant and
the swapped training branch.
"""

import numpy as np
import torch
import torch.nn.functional as F

FRAME = 256
HOP = 128
N_BINS = FRAME // 2 + 1
SAMPLE_RATE_HZ = 8000


def _window(dtype, device):
    return torch.hann_window(FRAME, periodic=True, dtype=dtype, device=device)


def stft(wave):
    """[n] or [B, n] real -> [.., K, T] complex, frames at t*hop."""
    wave = torch.as_tensor(wave)
    return torch.stft(
        wave, FRAME, hop_length=HOP, win_length=FRAME,
        window=_window(wave.dtype, wave.device),
        center=False, onesided=True, return_complex=True,
    )


def istft(spec, length=None):
    """[B, K, T] or [K, T] complex -> time signal via weighted
    overlap-add with squared-window normalization, differentiable.

    Built on fold rather than torch.istft because the latter rejects
    start-aligned Hann frames (its overlap check requires a nonzero
    envelope at the very first sample, which a zero-edged window cannot
    supply without centering).
    """
    squeeze = spec.dim() == 2
    if squeeze:
        spec = spec[None]
    frames = torch.fft.irfft(spec.transpose(1, 2), n=FRAME)  # [B, T, FRAME]
    w = _window(frames.dtype, frames.device)
    b, t, _ = frames.shape
    n = (t - 1) * HOP + FRAME
    weighted = (frames * w).transpose(1, 2)
    out = F.fold(weighted, (1, n), (1, FRAME), stride=(1, HOP))[:, 0, 0]
    wsq = (w * w)[None, :, None].expand(1, FRAME, t)
    norm = F.fold(wsq, (1, n), (1, FRAME), stride=(1, HOP))[0, 0, 0]
    out = out / norm.clamp_min(torch.finfo(out.dtype).eps)
    if length is not None:
        out = out[:, :length] if length <= n else F.pad(out, (0, length - n))
    if squeeze:
        out = out[0]
    return out


def n_samples_for_frames(n_frames):
    return (n_frames - 1) * HOP + FRAME


def ri_split(spec):
    """[K, T, J] complex numpy -> [2J, K, T] float32 torch, real parts
    first: channel order (re ch0, im ch0, re ch1, ...)."""
    spec = np.asarray(spec)
    if spec.ndim == 2:
        spec = spec[:, :, None]
    parts = np.empty((2 * spec.shape[2],) + spec.shape[:2], dtype=np.float32)
    for j in range(spec.shape[2]):
        parts[2 * j] = spec[:, :, j].real
        parts[2 * j + 1] = spec[:, :, j].imag
    return torch.from_numpy(parts)


def ri_join(ri):
    """[B, 2, K, T] float -> [B, K, T] complex."""
    return torch.complex(ri[:, 0], ri[:, 1])


def instantaneous_rtf(spec, ref_channel, floor=1e-3):
    """Per-frame transfer-function ratios against one reference channel.

    spec: [K, T, J] complex numpy. Bins whose reference magnitude falls
    below ``floor`` times the per-channel median magnitude are zeroed so
    silent regions do not inject huge ratios.
    """
    ref = spec[:, :, ref_channel]
    mag = np.abs(ref)
    gate = mag > floor * max(float(np.median(mag[mag > 0])) if np.any(mag > 0) else 0.0, 1e-12)
    out = np.zeros_like(spec)
    np.divide(spec, ref[:, :, None], out=out, where=gate[:, :, None])
    return out
