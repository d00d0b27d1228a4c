"""Objective evaluation: SI-SDR, STOI, and dataset-level score reports.

SI-SDR projects the estimate onto the reference before computing an SNR,
which makes it blind to overall gain. STOI follows the standard recipe:
resample to 10 kHz, drop frames 40 dB below the loudest, one-third-octave
band envelopes over 384 ms segments, normalized and clipped correlation.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .dsp import read_wav
from .errors import InsufficientSpeech, ZeroReference

__all__ = [
    "ScoreReport",
    "si_sdr",
    "stoi",
    "evaluate_dataset",
]

log = logging.getLogger(__name__)

STOI_RATE_HZ = 10000
STOI_FRAME = 256
STOI_HOP = 128
STOI_FFT = 512
STOI_N_BANDS = 15
STOI_FIRST_BAND_HZ = 150.0
STOI_SEGMENT_FRAMES = 30
STOI_DYN_RANGE_DB = 40.0
STOI_CLIP_DB = -15.0
_EPS = np.finfo(np.float64).eps


def si_sdr(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    The reference is rescaled by the projection coefficient alpha before
    the ratio, so any positive gain on the estimate cancels. Identical
    signals return +inf; an all-zero estimate returns -inf; an all-zero
    reference is a caller error.
    """
    reference = np.asarray(reference, dtype=np.float64).reshape(-1)
    estimate = np.asarray(estimate, dtype=np.float64).reshape(-1)
    if reference.shape != estimate.shape:
        raise ValueError(
            f"length mismatch: reference {reference.size}, estimate {estimate.size}"
        )
    ref_power = float(np.dot(reference, reference))
    if ref_power == 0.0:
        raise ZeroReference("reference signal is identically zero")
    if not np.any(estimate):
        return float("-inf")
    alpha = float(np.dot(estimate, reference)) / ref_power
    target = alpha * reference
    error = estimate - target
    error_power = float(np.dot(error, error))
    target_power = float(np.dot(target, target))
    # an estimate proportional to the reference leaves only rounding dust in
    # the error term; anything below 280 dB is reported as the +inf sentinel
    if error_power <= 1e-28 * target_power:
        return float("inf")
    return 10.0 * math.log10(target_power / error_power)


def _hanning_matlab(n: int) -> np.ndarray:
    # symmetric Hann without the zero endpoints, as classic DSP toolboxes
    # define it; the STOI reference recipe is specified against this window
    return np.hanning(n + 2)[1:-1]


def _remove_silent_frames(
    x: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames of x more than 40 dB below its loudest frame.

    Framing, masking, and windowed overlap-add reconstruction follow the
    reference STOI recipe exactly, including its exclusive final-frame
    bound; y is masked by x's activity so both stay aligned.
    """
    n = STOI_FRAME
    w = _hanning_matlab(n)
    starts = np.arange(0, x.size - n, STOI_HOP)
    if starts.size == 0:
        raise InsufficientSpeech("signal shorter than one analysis frame")
    frames_x = x[starts[:, None] + np.arange(n)]
    level_db = 20.0 * np.log10(np.linalg.norm(frames_x * w, axis=1) / np.sqrt(n) + _EPS)
    keep = level_db > level_db.max() - STOI_DYN_RANGE_DB
    kept = np.flatnonzero(keep)
    out_len = (kept.size - 1) * STOI_HOP + n if kept.size else 0
    x_sil = np.zeros(out_len)
    y_sil = np.zeros(out_len)
    for out_idx, j in enumerate(kept):
        sl_in = slice(starts[j], starts[j] + n)
        sl_out = slice(out_idx * STOI_HOP, out_idx * STOI_HOP + n)
        x_sil[sl_out] += x[sl_in] * w
        y_sil[sl_out] += y[sl_in] * w
    return x_sil, y_sil


def _short_time_spectra(x: np.ndarray) -> np.ndarray:
    """[frames x 257] one-sided magnitudes, 256-sample Hann frames zero-padded
    to a 512 FFT, again with the recipe's exclusive final-frame bound."""
    w = _hanning_matlab(STOI_FRAME)
    starts = np.arange(0, x.size - STOI_FRAME, STOI_HOP)
    frames = x[starts[:, None] + np.arange(STOI_FRAME)] * w
    return np.abs(np.fft.rfft(frames, n=STOI_FFT, axis=1))


def _third_octave_matrix() -> np.ndarray:
    """Binary [15 x 257] band matrix with nearest-bin edge snapping."""
    f = np.linspace(0.0, STOI_RATE_HZ, STOI_FFT + 1)[: STOI_FFT // 2 + 1]
    k = np.arange(STOI_N_BANDS)
    cf = STOI_FIRST_BAND_HZ * 2.0 ** (k / 3.0)
    f_low = cf / 2.0 ** (1.0 / 6.0)
    f_high = cf * 2.0 ** (1.0 / 6.0)
    h = np.zeros((STOI_N_BANDS, f.size))
    for i in range(STOI_N_BANDS):
        lo = int(np.argmin((f - f_low[i]) ** 2))
        hi = int(np.argmin((f - f_high[i]) ** 2))
        h[i, lo:hi] = 1.0
    return h


def stoi(reference: np.ndarray, estimate: np.ndarray, sample_rate_hz: int) -> float:
    """Short-time objective intelligibility in [-1, 1].

    Raises InsufficientSpeech when fewer than 30 active frames survive
    silent-frame removal (384 ms of speech is the minimum the metric is
    defined over).
    """
    x = np.asarray(reference, dtype=np.float64).reshape(-1)
    y = np.asarray(estimate, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: reference {x.size}, estimate {y.size}")
    if sample_rate_hz != STOI_RATE_HZ:
        g = math.gcd(STOI_RATE_HZ, sample_rate_hz)
        x = resample_poly(x, STOI_RATE_HZ // g, sample_rate_hz // g, window=("kaiser", 7.0))
        y = resample_poly(y, STOI_RATE_HZ // g, sample_rate_hz // g, window=("kaiser", 7.0))
    x, y = _remove_silent_frames(x, y)
    spec_x = _short_time_spectra(x) if x.size > STOI_FRAME else np.zeros((0, 257))
    if spec_x.shape[0] < STOI_SEGMENT_FRAMES:
        raise InsufficientSpeech(
            f"{spec_x.shape[0]} active frames, need {STOI_SEGMENT_FRAMES}"
        )
    spec_y = _short_time_spectra(y)
    h = _third_octave_matrix()
    bands_x = np.sqrt(h @ (spec_x.T**2))  # [15 x frames]
    bands_y = np.sqrt(h @ (spec_y.T**2))
    m = STOI_SEGMENT_FRAMES
    clip_gain = 10.0 ** (-STOI_CLIP_DB / 20.0)
    correlations = []
    for end in range(m, bands_x.shape[1] + 1):
        seg_x = bands_x[:, end - m : end]
        seg_y = bands_y[:, end - m : end]
        alpha = np.sqrt(
            np.sum(seg_x**2, axis=1) / (np.sum(seg_y**2, axis=1) + _EPS)
        )
        y_prime = np.minimum(seg_y * alpha[:, None], seg_x * (1.0 + clip_gain))
        xc = seg_x - seg_x.mean(axis=1, keepdims=True)
        yc = y_prime - y_prime.mean(axis=1, keepdims=True)
        denom = np.linalg.norm(xc, axis=1) * np.linalg.norm(yc, axis=1) + _EPS
        correlations.append(np.sum(xc * yc, axis=1) / denom)
    return float(np.mean(correlations))


@dataclass
class ScoreReport:
    """Per-scene scores plus per-method aggregates and skip counts."""

    per_scene: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)

    def rows_sorted(self) -> list[dict]:
        return sorted(self.per_scene, key=lambda r: (r["scene_id"], r["method"]))


def _aggregate(rows: list[dict]) -> dict:
    out: dict = {}
    by_method: dict[str, list[dict]] = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(row)
    for method, scored in sorted(by_method.items()):
        sdr = np.array([r["si_sdr_db"] for r in scored])
        st = np.array([r["stoi"] for r in scored])
        out[method] = {
            "n_scenes": len(scored),
            "si_sdr_db": {
                "mean": float(np.mean(sdr)),
                "median": float(np.median(sdr)),
                "stddev": float(np.std(sdr)),
            },
            "stoi": {
                "mean": float(np.mean(st)),
                "median": float(np.median(st)),
                "stddev": float(np.std(st)),
            },
        }
    return out


def evaluate_dataset(
    dataset_index: str | Path, methods_dirs: list[str | Path], out: str | Path
) -> ScoreReport:
    """Score every scene of a dataset and write CSV + JSON reports.

    The Unprocessed condition (mixture at the reference mic against the
    reverberant desired signal) is always scored. Each entry of
    ``methods_dirs`` is a directory of per-scene mono WAVs named
    ``<scene_id>.wav``; its scores are reported under the directory's
    basename. A missing file skips that scene for that method with a
    warning and a count in the report.
    """
    from .scene import load_dataset_index

    dataset_index = Path(dataset_index)
    index = load_dataset_index(dataset_index)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dirs = {Path(d).name: Path(d) for d in methods_dirs}
    report = ScoreReport()
    skipped: dict[str, int] = {m: 0 for m in dirs}
    for scene in index["scenes"]:
        scene_dir = dataset_index.parent / scene["dir"]
        ref_mic = int(scene["ref_mic"])
        reference = read_wav(scene_dir / "desired.wav").samples[ref_mic]
        mixture = read_wav(scene_dir / "mixture.wav").samples[ref_mic]
        conditions = {"Unprocessed": mixture}
        for method, method_dir in dirs.items():
            wav_path = method_dir / f"{scene['scene_id']}.wav"
            if not wav_path.exists():
                log.warning("scene %s: missing %s, skipped", scene["scene_id"], wav_path)
                skipped[method] += 1
                continue
            conditions[method] = read_wav(wav_path).samples[0]
        for method, waveform in conditions.items():
            n = min(waveform.size, reference.size)
            report.per_scene.append(
                {
                    "scene_id": scene["scene_id"],
                    "method": method,
                    "si_sdr_db": si_sdr(reference[:n], waveform[:n]),
                    "stoi": stoi(reference[:n], waveform[:n], 8000),
                }
            )
    report.aggregate = _aggregate(report.per_scene)
    report.skipped = skipped
    _write_csv(out / "scores.csv", report)
    _write_json(out / "scores.json", report)
    return report


def _write_csv(path: Path, report: ScoreReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene_id", "method", "si_sdr_db", "stoi"])
        for row in report.rows_sorted():
            writer.writerow(
                [
                    row["scene_id"],
                    row["method"],
                    "%.6f" % row["si_sdr_db"],
                    "%.6f" % row["stoi"],
                ]
            )


def _write_json(path: Path, report: ScoreReport) -> None:
    payload = {"aggregate": report.aggregate, "skipped": report.skipped}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
