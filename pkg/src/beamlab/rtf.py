"""Relative transfer function estimation.

Three estimators: the per-frame instantaneous ratio of enrollment STFT
channels to the reference channel, its energy-weighted time average, and a
covariance-whitening estimator that works from speech-plus-noise and
noise-only segments. All estimates are normalized so the reference channel
is exactly 1 on valid cells; invalid cells hold 0 and are flagged in the
mask.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import Spectrogram
from .dumps import read_complex_dump, write_complex_dump
from .errors import (
    InsufficientFrames,
    NoSpeechDetected,
    SilentEnrollment,
    SingularNoiseCovariance,
)
from .rir import RirSet

__all__ = [
    "RtfEstimate",
    "instantaneous_rtf",
    "average_rtf",
    "covariance_whitening_rtf",
    "covariance_whitening_from_matrices",
    "hermitian_angle_deg",
    "rtf_from_rirs",
    "write_rtf_dump",
    "read_rtf_dump",
]

log = logging.getLogger(__name__)

RTF_DUMP_SCHEMA = "beamlab.rtf/1"


@dataclass(frozen=True)
class RtfEstimate:
    """RTF values with reference channel and validity mask.

    Instantaneous estimates are [K x T x J] with a [K x T] mask and carry
    the reference-channel magnitudes needed for energy weighting;
    time-averaged estimates are [K x J] with a [K] mask.
    """

    values: np.ndarray
    reference_mic: int
    mask: np.ndarray
    ref_magnitude: np.ndarray | None = None
    eigengap: np.ndarray | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.complex128)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim not in (2, 3):
            raise ValueError("values must be [K x J] or [K x T x J]")
        if mask.shape != values.shape[:-1]:
            raise ValueError("mask shape must match values without the channel axis")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def is_instantaneous(self) -> bool:
        return self.values.ndim == 3

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[-1]


def instantaneous_rtf(
    enrollment: Spectrogram, ref_mic: int, floor_db: float = 40.0
) -> RtfEstimate:
    """Per-frame RTF: each channel divided by the reference channel.

    Cells whose reference magnitude falls more than ``floor_db`` below the
    per-frequency median are masked invalid (value 0), which guards the
    division at spectral nulls. Raises SilentEnrollment when nothing
    survives.
    """
    if not 0 <= ref_mic < enrollment.n_channels:
        raise ValueError(f"ref_mic {ref_mic} out of range for {enrollment.n_channels} channels")
    ref = enrollment.bins[:, :, ref_mic]
    mag = np.abs(ref)
    floor = np.median(mag, axis=1, keepdims=True) * 10.0 ** (-floor_db / 20.0)
    valid = (mag >= floor) & (mag > 0.0)
    if not np.any(valid):
        raise SilentEnrollment("no enrollment frame is above the spectral floor")
    values = np.zeros_like(enrollment.bins)
    np.divide(enrollment.bins, ref[:, :, None], out=values, where=valid[:, :, None])
    # the self-ratio must be exactly 1, not 1 within rounding
    values[:, :, ref_mic] = np.where(valid, 1.0 + 0.0j, 0.0 + 0.0j)
    return RtfEstimate(values, ref_mic, valid, ref_magnitude=mag)


def average_rtf(inst: RtfEstimate, weighting: str = "ref_energy") -> RtfEstimate:
    """Collapse an instantaneous estimate to one RTF per frequency.

    ``ref_energy`` weights frames by squared reference magnitude (frames
    with the most signal pin the average); ``uniform`` weights valid frames
    equally. Frequencies with no valid frame are flagged in the mask and the
    beamformer is expected to handle them.
    """
    if not inst.is_instantaneous:
        raise ValueError("average_rtf needs an instantaneous estimate")
    if weighting not in ("ref_energy", "uniform"):
        raise ValueError(f"unknown weighting {weighting!r}")
    if weighting == "ref_energy":
        if inst.ref_magnitude is None:
            raise ValueError("estimate lacks reference magnitudes for energy weighting")
        weights = inst.ref_magnitude**2 * inst.mask
    else:
        weights = inst.mask.astype(np.float64)
    total = weights.sum(axis=1)
    freq_valid = total > 0.0
    averaged = np.zeros((inst.n_bins, inst.n_channels), dtype=np.complex128)
    safe_total = np.where(freq_valid, total, 1.0)
    averaged = np.einsum("ktj,kt->kj", inst.values, weights) / safe_total[:, None]
    ref = averaged[:, inst.reference_mic].copy()
    nonzero = freq_valid & (np.abs(ref) > 0.0)
    averaged[nonzero] /= ref[nonzero, None]
    averaged[nonzero, inst.reference_mic] = 1.0 + 0.0j
    averaged[~nonzero] = 0.0
    return RtfEstimate(averaged, inst.reference_mic, nonzero)


def covariance_whitening_from_matrices(
    phi_x: np.ndarray,
    phi_n: np.ndarray,
    ref_mic: int,
    loading: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray]:
    """Covariance-whitening RTF from per-frequency covariance matrices.

    For each frequency: diagonally load the noise covariance, whiten the
    speech-plus-noise covariance with its Cholesky factor, take the
    principal eigenvector, de-whiten, and normalize by the reference
    channel. Returns (rtf [K x J], eigengap [K]), where eigengap is the
    ratio of the two largest whitened eigenvalues.

    Raises SingularNoiseCovariance when a loaded noise matrix has no
    Cholesky factorization.
    """
    phi_x = np.asarray(phi_x, dtype=np.complex128)
    phi_n = np.asarray(phi_n, dtype=np.complex128)
    k_bins, j = phi_x.shape[0], phi_x.shape[-1]
    trace = np.einsum("kjj->k", phi_n).real
    eye = np.eye(j)
    loaded = phi_n + loading * (trace / j)[:, None, None] * eye
    loaded = 0.5 * (loaded + np.conj(np.swapaxes(loaded, 1, 2)))
    try:
        chol = np.linalg.cholesky(loaded)
    except np.linalg.LinAlgError as exc:
        raise SingularNoiseCovariance(
            "noise covariance is not positive definite after loading"
        ) from exc
    whitened = np.linalg.solve(chol, phi_x)
    whitened = np.linalg.solve(chol, np.conj(np.swapaxes(whitened, 1, 2)))
    whitened = 0.5 * (whitened + np.conj(np.swapaxes(whitened, 1, 2)))
    eigvals, eigvecs = np.linalg.eigh(whitened)
    principal = eigvecs[:, :, -1]
    tiny = np.finfo(np.float64).tiny
    eigengap = eigvals[:, -1] / np.maximum(eigvals[:, -2], tiny)
    steering = np.einsum("kij,kj->ki", chol, principal)
    rtf = np.zeros((k_bins, j), dtype=np.complex128)
    ref = steering[:, ref_mic]
    ok = np.abs(ref) > 1e-12 * np.linalg.norm(steering, axis=1)
    rtf[ok] = steering[ok] / ref[ok, None]
    rtf[ok, ref_mic] = 1.0 + 0.0j
    return rtf, eigengap


def covariance_whitening_rtf(
    speech_plus_noise: Spectrogram,
    noise_only: Spectrogram,
    ref_mic: int,
    loading: float = 1e-4,
    eigengap_threshold: float = 1.5,
) -> RtfEstimate:
    """Covariance-whitening RTF from speech-plus-noise / noise-only segments.

    Sample covariances are formed per frequency from the two segments and
    passed through the whitening core. A frequency whose whitened eigengap
    stays below 1.1 is masked; when the median eigengap over all
    frequencies is below ``eigengap_threshold`` the segments are judged
    inseparable and NoSpeechDetected is raised.
    """
    if not 0 <= ref_mic < speech_plus_noise.n_channels:
        raise ValueError("ref_mic out of range")
    if speech_plus_noise.n_channels != noise_only.n_channels:
        raise ValueError("segments disagree on channel count")
    j = speech_plus_noise.n_channels
    if speech_plus_noise.n_frames < j or noise_only.n_frames < j:
        raise InsufficientFrames(
            f"need at least {j} frames per segment, got "
            f"{speech_plus_noise.n_frames} and {noise_only.n_frames}"
        )
    phi_x = _sample_covariance(speech_plus_noise.bins)
    phi_n = _sample_covariance(noise_only.bins)
    rtf, eigengap = covariance_whitening_from_matrices(phi_x, phi_n, ref_mic, loading)
    if float(np.median(eigengap)) < eigengap_threshold:
        raise NoSpeechDetected(
            f"median whitened eigengap {np.median(eigengap):.3f} below "
            f"{eigengap_threshold}; segments look interchangeable"
        )
    mask = (eigengap > 1.1) & np.any(rtf != 0, axis=1)
    rtf[~mask] = 0.0
    return RtfEstimate(rtf, ref_mic, mask, eigengap=eigengap)


def _sample_covariance(bins: np.ndarray) -> np.ndarray:
    cov = np.einsum("ktj,ktl->kjl", bins, np.conj(bins)) / bins.shape[1]
    return 0.5 * (cov + np.conj(np.swapaxes(cov, 1, 2)))


def hermitian_angle_deg(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Principal angle between complex vectors along the last axis, degrees.

    Gain- and phase-invariant, which makes it the canonical RTF error
    measure.
    """
    u = np.asarray(u, dtype=np.complex128)
    v = np.asarray(v, dtype=np.complex128)
    inner = np.abs(np.sum(np.conj(u) * v, axis=-1))
    norms = np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1)
    cos = np.clip(np.divide(inner, norms, out=np.zeros_like(inner), where=norms > 0), 0.0, 1.0)
    return np.degrees(np.arccos(cos))


def rtf_from_rirs(rirs: RirSet, ref_mic: int, frame_len: int = 256) -> np.ndarray:
    """Ground-truth RTF: ratio of true transfer functions at the bin centers.

    The full impulse responses are evaluated on a DFT grid that is an
    integer multiple of ``frame_len`` so the bin-center values are exact
    DTFT samples, then divided by the reference channel.
    """
    taps = rirs.rirs
    factor = int(np.ceil(taps.shape[1] / frame_len))
    spectra = np.fft.rfft(taps, n=factor * frame_len, axis=1)[:, ::factor]
    rtf = (spectra / spectra[ref_mic]).T.astype(np.complex128)
    return rtf


def write_rtf_dump(path_json: str | Path, estimate: RtfEstimate) -> Path:
    """Export an RTF estimate in the header+raw dump format."""
    return write_complex_dump(
        path_json,
        estimate.values,
        RTF_DUMP_SCHEMA,
        ref_mic=estimate.reference_mic,
        instantaneous=estimate.is_instantaneous,
    )


def read_rtf_dump(path_json: str | Path) -> RtfEstimate:
    """Read an RTF dump; the mask is reconstructed as nonzero rows."""
    values, header = read_complex_dump(path_json)
    if header.get("schema") != RTF_DUMP_SCHEMA:
        raise ValueError(f"expected schema {RTF_DUMP_SCHEMA}, got {header.get('schema')!r}")
    mask = np.any(values != 0, axis=-1)
    return RtfEstimate(values, int(header["ref_mic"]), mask)
