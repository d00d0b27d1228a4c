"""Core audio containers, the STFT/iSTFT pair, and WAV file I/O.

Conventions used throughout the package: time-domain audio is float64 with
shape [channels x samples]; spectrograms are complex128 with shape
[bins x frames x channels] so the per-bin channel vector is the fastest axis
for the spatial stages. The default analysis setup is an 8 kHz rate with
256-sample periodic Hann frames at 50% overlap, giving 129 one-sided bins.

Synthesis uses weighted overlap-add with the analysis window and divides by
the accumulated squared window, which makes istft the pseudoinverse of stft:
reconstruction is exact away from the outermost half frame, and
stft(istft(S)) is a projection for arbitrary S.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import InvalidSpectrogram, SampleRateMismatch, SignalTooShort

__all__ = [
    "MultichannelWaveform",
    "StftConfig",
    "Spectrogram",
    "hann_periodic",
    "stft",
    "istft",
    "read_wav",
    "write_wav",
]


def hann_periodic(length: int) -> np.ndarray:
    """Periodic Hann window (DFT-even form, sums to a constant at hop N/2)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


@dataclass(frozen=True)
class MultichannelWaveform:
    """Time-domain signal, [channels x samples], with its sample rate.

    A 1-D array is accepted and promoted to a single channel. Samples are
    stored as float64 and must be finite.
    """

    samples: np.ndarray
    sample_rate_hz: int = 8000

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2 or samples.shape[1] < 1:
            raise ValueError("samples must be [channels x samples] with at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains NaN or Inf")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", samples)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    def channel(self, index: int) -> np.ndarray:
        """One channel as a 1-D view."""
        return self.samples[index]


@dataclass(frozen=True)
class StftConfig:
    """Analysis frame length, hop, window kind, and sample rate.

    Only the periodic Hann window at 50% overlap is supported; the
    constructor additionally verifies the constant-overlap-add property of
    the window at the configured hop.
    """

    frame_len: int = 256
    hop: int = 128
    window: str = "hann"
    sample_rate_hz: int = 8000

    def __post_init__(self) -> None:
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}, only 'hann' is implemented")
        if self.frame_len < 4 or self.frame_len % 2 != 0:
            raise ValueError("frame_len must be an even integer >= 4")
        if self.hop != self.frame_len // 2:
            raise ValueError("hop must equal frame_len / 2 (50% overlap)")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        window = hann_periodic(self.frame_len)
        folded = window.reshape(-1, self.hop).sum(axis=0)
        if not np.allclose(folded, folded[0], atol=1e-12):
            raise ValueError("window does not satisfy constant overlap-add at this hop")

    @property
    def n_bins(self) -> int:
        return self.frame_len // 2 + 1


@dataclass(frozen=True)
class Spectrogram:
    """One-sided STFT tensor, [bins x frames x channels], complex128."""

    bins: np.ndarray
    frame_len: int
    hop: int
    sample_rate_hz: int

    def __post_init__(self) -> None:
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.ndim != 3:
            raise InvalidSpectrogram("bins must be [bins x frames x channels]")
        if self.hop != self.frame_len // 2:
            raise InvalidSpectrogram("hop must equal frame_len / 2")
        if bins.shape[0] != self.frame_len // 2 + 1:
            raise InvalidSpectrogram(
                f"expected {self.frame_len // 2 + 1} one-sided bins, got {bins.shape[0]}"
            )
        if bins.shape[1] < 1:
            raise InvalidSpectrogram("spectrogram must contain at least one frame")
        if not np.all(np.isfinite(bins)):
            raise InvalidSpectrogram("spectrogram contains NaN or Inf")
        object.__setattr__(self, "bins", bins)

    @property
    def n_bins(self) -> int:
        return self.bins.shape[0]

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def n_channels(self) -> int:
        return self.bins.shape[2]

    def frequencies_hz(self) -> np.ndarray:
        """Center frequency of each bin."""
        return np.fft.rfftfreq(self.frame_len, d=1.0 / self.sample_rate_hz)


def stft(waveform: MultichannelWaveform, config: StftConfig | None = None) -> Spectrogram:
    """Windowed one-sided STFT of every channel.

    Frames are fully contained in the signal (no padding), so the frame count
    is floor((N - frame_len) / hop) + 1.

    Raises:
        SignalTooShort: fewer samples than one frame.
        SampleRateMismatch: waveform rate differs from the config rate.
    """
    config = config or StftConfig()
    if waveform.sample_rate_hz != config.sample_rate_hz:
        raise SampleRateMismatch(
            f"waveform at {waveform.sample_rate_hz} Hz, config expects {config.sample_rate_hz} Hz"
        )
    n = waveform.n_samples
    if n < config.frame_len:
        raise SignalTooShort(f"need at least {config.frame_len} samples, got {n}")
    window = hann_periodic(config.frame_len)
    frames = np.lib.stride_tricks.sliding_window_view(
        waveform.samples, config.frame_len, axis=1
    )[:, :: config.hop, :]
    spectra = np.fft.rfft(frames * window, axis=-1)
    bins = np.ascontiguousarray(spectra.transpose(2, 1, 0))
    return Spectrogram(bins, config.frame_len, config.hop, config.sample_rate_hz)


def istft(spectrogram: Spectrogram) -> MultichannelWaveform:
    """Weighted overlap-add synthesis (least-squares inverse of stft).

    Output length is frame_len + (T - 1) * hop, the span covered by the
    frames. Samples where the accumulated squared window is (near) zero, only
    the very first sample with this window, are emitted as zero.
    """
    frame_len, hop = spectrogram.frame_len, spectrogram.hop
    n_frames = spectrogram.n_frames
    window = hann_periodic(frame_len)
    frames = np.fft.irfft(spectrogram.bins.transpose(2, 1, 0), n=frame_len, axis=-1)
    frames *= window
    out_len = frame_len + (n_frames - 1) * hop
    out = np.zeros((spectrogram.n_channels, out_len))
    envelope = np.zeros(out_len)
    w_sq = window * window
    for t in range(n_frames):
        start = t * hop
        out[:, start : start + frame_len] += frames[:, t, :]
        envelope[start : start + frame_len] += w_sq
    covered = envelope > 1e-12
    out[:, covered] /= envelope[covered]
    out[:, ~covered] = 0.0
    return MultichannelWaveform(out, spectrogram.sample_rate_hz)


def write_wav(path: str | Path, waveform: MultichannelWaveform, dtype: str = "float32") -> Path:
    """Write a waveform as a WAV file (float32 by default, or int16).

    Channels map to WAV channels; mono is written as a 1-D stream. int16
    output clips to [-1, 1) full scale.
    """
    path = Path(path)
    data = waveform.samples.T
    if dtype == "float32":
        payload = data.astype(np.float32)
    elif dtype == "int16":
        payload = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unsupported dtype {dtype!r}, use 'float32' or 'int16'")
    if payload.shape[1] == 1:
        payload = payload[:, 0]
    wavfile.write(path, waveform.sample_rate_hz, payload)
    return path


def read_wav(path: str | Path, expect_sample_rate_hz: int | None = None) -> MultichannelWaveform:
    """Read a WAV file into a [channels x samples] float64 waveform.

    Integer PCM is scaled to [-1, 1). There is no implicit resampling: when
    ``expect_sample_rate_hz`` is given and the file differs, the read is
    refused with SampleRateMismatch.
    """
    path = Path(path)
    rate, data = wavfile.read(path)
    if expect_sample_rate_hz is not None and rate != expect_sample_rate_hz:
        raise SampleRateMismatch(
            f"{path} is at {rate} Hz, expected {expect_sample_rate_hz} Hz; "
            "resample it explicitly before use"
        )
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)
    if samples.ndim == 1:
        samples = samples[np.newaxis, :]
    else:
        samples = samples.T
    return MultichannelWaveform(samples, int(rate))
