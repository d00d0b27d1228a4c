"""Acoustic scene sampling, rendering, and dataset generation.

A scene is a shoebox room holding a linear microphone array, a desired
speaker, an interfering speaker, and a directional noise source, each
placed by direction of arrival and distance in the array's horizontal
plane. Rendering convolves dry signals with image-method impulse
responses, scales the directional noise to a drawn SNR, adds per-channel
pink sensor noise at a fixed 20 dB, and also renders the auxiliary
segments the estimated beamformer variant trains its covariances on.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .corpus import list_corpus, list_noise, load_mono
from .dsp import MultichannelWaveform, read_wav, write_wav
from .errors import DegenerateSource, InfeasibleReverb, PlacementFailed
from .rir import ArrayGeometry, RirSet, RoomSpec, simulate_rir

__all__ = [
    "Role",
    "SourcePlacement",
    "SamePlacementConstraint",
    "SceneManifest",
    "SceneAudio",
    "sample_scene",
    "render_scene",
    "generate_dataset",
    "load_scene",
]

log = logging.getLogger(__name__)

SCENE_SCHEMA = "beamlab.scene/1"
DATASET_SCHEMA = "beamlab.dataset/1"
SAMPLE_RATE_HZ = 8000
WALL_CLEARANCE_M = 0.7
AUX_SEGMENT_S = 2.0
SENSOR_SNR_DB = 20.0
N_MICS = 4
MIC_SPACING_M = 0.08
PLACEMENT_RETRIES = 100

SCENE_FILES = {
    "mixture": "mixture.wav",
    "desired": "desired.wav",
    "interference": "interference.wav",
    "enrollment": "enrollment.wav",
}
AUX_FILES = {
    "desired_plus_noise": "aux_desired_plus_noise.wav",
    "noise_only": "aux_noise_only.wav",
}


class Role(str, Enum):
    DESIRED = "desired"
    INTERFERENCE = "interference"
    DIRECTIONAL_NOISE = "directional_noise"


@dataclass(frozen=True)
class SourcePlacement:
    """A point source located by azimuth (0 = endfire, 90 = broadside) and
    distance from the array centroid, in the array's horizontal plane."""

    position_m: np.ndarray
    doa_deg: float
    distance_m: float
    role: Role

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "position_m", np.asarray(self.position_m, dtype=np.float64)
        )


@dataclass(frozen=True)
class SamePlacementConstraint:
    """Force both speakers onto one ray: equal DOA, distances at least
    ``min_distance_gap_m`` apart (the spatial discrimination stress test)."""

    min_distance_gap_m: float = 0.5


@dataclass
class SceneManifest:
    room: RoomSpec
    array: ArrayGeometry
    placements: list[SourcePlacement]
    snr_directional_db: float
    snr_sensor_db: float
    seed: int
    duration_s: float
    axis_azimuth_rad: float
    files: dict = field(default_factory=lambda: dict(SCENE_FILES))
    aux_files: dict = field(default_factory=lambda: dict(AUX_FILES))
    measured_snr_directional_db: float | None = None
    measured_snr_sensor_db: float | None = None

    def placement(self, role: Role) -> SourcePlacement:
        for p in self.placements:
            if p.role == role:
                return p
        raise KeyError(f"no placement for role {role}")

    @classmethod
    def from_json_dict(cls, d: dict) -> "SceneManifest":
        if d.get("schema") != SCENE_SCHEMA:
            raise ValueError(f"expected schema {SCENE_SCHEMA}, got {d.get('schema')!r}")
        room = RoomSpec(dims_m=tuple(d["room"]["dims_m"]), t60_s=d["room"]["t60_s"])
        array = ArrayGeometry(
            mic_positions_m=np.asarray(d["array"]["mic_positions_m"]),
            reference_mic=d["array"]["reference_mic"],
        )
        placements = [
            SourcePlacement(
                position_m=np.asarray(p["position_m"]),
                doa_deg=p["doa_deg"],
                distance_m=p["distance_m"],
                role=Role(p["role"]),
            )
            for p in d["placements"]
        ]
        return cls(
            room=room,
            array=array,
            placements=placements,
            snr_directional_db=d["snr_directional_db"],
            snr_sensor_db=d["snr_sensor_db"],
            seed=d["seed"],
            duration_s=d["duration_s"],
            axis_azimuth_rad=d["array"]["axis_azimuth_rad"],
            files=dict(d["files"]),
            aux_files=dict(d["aux_files"]),
            measured_snr_directional_db=d.get("measured_snr_directional_db"),
            measured_snr_sensor_db=d.get("measured_snr_sensor_db"),
        )

    def to_json_dict(self) -> dict:
        return {
            "schema": SCENE_SCHEMA,
            "seed": int(self.seed),
            "duration_s": float(self.duration_s),
            "room": {
                "dims_m": list(self.room.dims_m),
                "t60_s": float(self.room.t60_s),
            },
            "array": {
                "mic_positions_m": self.array.mic_positions_m.tolist(),
                "reference_mic": int(self.array.reference_mic),
                "axis_azimuth_rad": float(self.axis_azimuth_rad),
            },
            "placements": [
                {
                    "role": p.role.value,
                    "position_m": p.position_m.tolist(),
                    "doa_deg": float(p.doa_deg),
                    "distance_m": float(p.distance_m),
                }
                for p in self.placements
            ],
            "snr_directional_db": float(self.snr_directional_db),
            "snr_sensor_db": float(self.snr_sensor_db),
            "measured_snr_directional_db": self.measured_snr_directional_db,
            "measured_snr_sensor_db": self.measured_snr_sensor_db,
            "files": self.files,
            "aux_files": self.aux_files,
        }


@dataclass
class SceneAudio:
    """Rendered components of one scene; mixture is their exact sum."""

    mixture: MultichannelWaveform
    reverberant_desired: MultichannelWaveform
    reverberant_interference: MultichannelWaveform | None
    enrollment: MultichannelWaveform | None
    aux_desired_plus_noise: MultichannelWaveform | None = None
    aux_noise_only: MultichannelWaveform | None = None
    measured_snr_directional_db: float | None = None
    measured_snr_sensor_db: float | None = None


def _horizontal_frame(axis_azimuth_rad: float) -> tuple[np.ndarray, np.ndarray]:
    axis = np.array([np.cos(axis_azimuth_rad), np.sin(axis_azimuth_rad), 0.0])
    perp = np.array([-np.sin(axis_azimuth_rad), np.cos(axis_azimuth_rad), 0.0])
    return axis, perp


def _position_from_doa(
    center: np.ndarray, axis: np.ndarray, perp: np.ndarray, doa_deg: float, dist: float
) -> np.ndarray:
    theta = np.radians(doa_deg)
    direction = np.cos(theta) * axis + np.sin(theta) * perp
    return center + dist * direction


def _fits(position: np.ndarray, dims: np.ndarray) -> bool:
    return bool(
        np.all(position >= WALL_CLEARANCE_M) and np.all(position <= dims - WALL_CLEARANCE_M)
    )


def sample_scene(
    rng_seed: int,
    constraints: SamePlacementConstraint | None = None,
    duration_range_s: tuple[float, float] = (3.0, 6.0),
) -> SceneManifest:
    """Draw one scene from the scenario distribution.

    Room dims U[3,10] m per axis, T60 U[0.2,0.8] s, source DOAs U[0,180]
    degrees and distances U[1,4] m, directional SNR U[-5,20] dB, sensor
    SNR fixed at 20 dB. With a SamePlacementConstraint both speakers share
    one DOA at distances at least the constraint's gap apart. Placement
    draws that leave the room after 100 retries raise PlacementFailed.
    """
    rng = np.random.default_rng([rng_seed, 0x5CE])
    for _ in range(PLACEMENT_RETRIES):
        dims = rng.uniform(3.0, 10.0, 3)
        room = RoomSpec(dims_m=tuple(dims), t60_s=float(rng.uniform(0.2, 0.8)))
        try:
            room.sabine_absorption()
        except InfeasibleReverb:
            # a large hall cannot decay in a fraction of a second; redraw
            continue
        break
    else:
        raise PlacementFailed(
            f"no feasible room/T60 pair after {PLACEMENT_RETRIES} tries"
        )
    half_span = (N_MICS - 1) * MIC_SPACING_M / 2.0
    margin = WALL_CLEARANCE_M + half_span
    center = np.array(
        [
            rng.uniform(margin, dims[0] - margin),
            rng.uniform(margin, dims[1] - margin),
            rng.uniform(1.0, 2.0),
        ]
    )
    axis_azimuth = float(rng.uniform(0.0, 2.0 * np.pi))
    axis, perp = _horizontal_frame(axis_azimuth)
    array = ArrayGeometry.uniform_linear(
        center_m=center, axis_direction=axis, n_mics=N_MICS, spacing_m=MIC_SPACING_M
    )
    placements: list[SourcePlacement] = []
    if constraints is None:
        for role in (Role.DESIRED, Role.INTERFERENCE):
            placements.append(_place_single(rng, role, center, axis, perp, dims))
    else:
        placements.extend(
            _place_same_doa(rng, center, axis, perp, dims, constraints.min_distance_gap_m)
        )
    placements.append(
        _place_single(rng, Role.DIRECTIONAL_NOISE, center, axis, perp, dims)
    )
    lo, hi = duration_range_s
    return SceneManifest(
        room=room,
        array=array,
        placements=placements,
        snr_directional_db=float(rng.uniform(-5.0, 20.0)),
        snr_sensor_db=SENSOR_SNR_DB,
        seed=int(rng_seed),
        duration_s=float(rng.uniform(lo, hi)),
        axis_azimuth_rad=axis_azimuth,
    )


def _place_single(rng, role, center, axis, perp, dims) -> SourcePlacement:
    for _ in range(PLACEMENT_RETRIES):
        doa = float(rng.uniform(0.0, 180.0))
        dist = float(rng.uniform(1.0, 4.0))
        pos = _position_from_doa(center, axis, perp, doa, dist)
        if _fits(pos, dims):
            return SourcePlacement(pos, doa, dist, role)
    raise PlacementFailed(
        f"no in-room placement for {role.value} after {PLACEMENT_RETRIES} tries"
    )


def _place_same_doa(
    rng, center, axis, perp, dims, min_gap
) -> list[SourcePlacement]:
    """Put both speakers on one bearing with the interferer strictly nearer.

    A nearer, louder interferer on the desired speaker's exact bearing is
    the configuration a direction-based reference would be blind to, so
    the preset commits to that ordering instead of a random one. The
    interferer sits close to the array and the gap never drops below
    min_gap, drawn at 1.5 m or more when min_gap allows, to keep a clear
    propagation contrast between the two.
    """
    for _ in range(PLACEMENT_RETRIES):
        doa = float(rng.uniform(0.0, 180.0))
        d_interference = float(rng.uniform(1.0, 1.5))
        gap = float(rng.uniform(max(min_gap, 1.5), max(min_gap, 2.5)))
        d_desired = d_interference + gap
        p_d = _position_from_doa(center, axis, perp, doa, d_desired)
        p_i = _position_from_doa(center, axis, perp, doa, d_interference)
        if _fits(p_d, dims) and _fits(p_i, dims):
            return [
                SourcePlacement(p_d, doa, d_desired, Role.DESIRED),
                SourcePlacement(p_i, doa, d_interference, Role.INTERFERENCE),
            ]
    raise PlacementFailed(
        f"no shared-ray speaker pair after {PLACEMENT_RETRIES} tries"
    )


def _convolve_channels(rirs: RirSet, dry: np.ndarray, n_out: int) -> np.ndarray:
    return np.stack([fftconvolve(dry, h)[:n_out] for h in rirs.rirs], axis=0)


def _pink_noise(rng, n_channels: int, n_samples: int) -> np.ndarray:
    """Per-channel independent 1/f noise via spectral shaping."""
    white = rng.standard_normal((n_channels, n_samples))
    spectrum = np.fft.rfft(white, axis=1)
    f = np.fft.rfftfreq(n_samples, 1.0 / SAMPLE_RATE_HZ)
    shape = 1.0 / np.sqrt(np.maximum(f, f[1]))
    pink = np.fft.irfft(spectrum * shape[None, :], n_samples, axis=1)
    return pink / np.sqrt(np.mean(pink**2, axis=1, keepdims=True))


def _energy_db(x: np.ndarray) -> float:
    return 10.0 * np.log10(np.mean(x**2))


def render_scene(
    manifest: SceneManifest,
    dry_signals: dict[Role, np.ndarray],
    enrollment_dry: np.ndarray | None = None,
) -> SceneAudio:
    """Render a manifest into waveforms.

    ``dry_signals`` maps roles to dry mono signals; the desired role is
    mandatory and must carry energy (DegenerateSource otherwise), the
    others are optional. ``enrollment_dry`` is a second utterance of the
    desired speaker emitted noiselessly from the same position. The dry
    directional noise must be long enough to also cover the two auxiliary
    2 s segments beyond the scene duration.
    """
    if Role.DESIRED not in dry_signals:
        raise DegenerateSource("a scene needs a desired source signal")
    n = int(round(manifest.duration_s * SAMPLE_RATE_HZ))
    ref = manifest.array.reference_mic
    rirs: dict[Role, RirSet] = {}
    for role in dry_signals:
        placement = manifest.placement(role)
        rirs[role] = simulate_rir(
            manifest.room, manifest.array, placement.position_m, SAMPLE_RATE_HZ
        )

    dry_desired = np.asarray(dry_signals[Role.DESIRED], dtype=np.float64)[:n]
    if dry_desired.size < n:
        dry_desired = np.pad(dry_desired, (0, n - dry_desired.size))
    if not np.any(dry_desired):
        raise DegenerateSource("desired dry signal has zero energy")
    rev_d = _convolve_channels(rirs[Role.DESIRED], dry_desired, n)
    p_desired = np.mean(rev_d[ref] ** 2)

    rev_i = None
    if Role.INTERFERENCE in dry_signals:
        dry_i = np.asarray(dry_signals[Role.INTERFERENCE], dtype=np.float64)[:n]
        if dry_i.size < n:
            dry_i = np.pad(dry_i, (0, n - dry_i.size))
        if not np.any(dry_i):
            raise DegenerateSource("interference dry signal has zero energy")
        rev_i = _convolve_channels(rirs[Role.INTERFERENCE], dry_i, n)

    n_aux = int(AUX_SEGMENT_S * SAMPLE_RATE_HZ)
    dir_noise = aux_noise_a = aux_noise_b = None
    measured_dir = None
    if Role.DIRECTIONAL_NOISE in dry_signals:
        dry_n = np.asarray(dry_signals[Role.DIRECTIONAL_NOISE], dtype=np.float64)
        needed = n + 2 * n_aux
        if dry_n.size < needed:
            reps = int(np.ceil(needed / dry_n.size))
            dry_n = np.tile(dry_n, reps)
        if not np.any(dry_n[:needed]):
            raise DegenerateSource("directional noise signal has zero energy")
        wet_n_full = _convolve_channels(rirs[Role.DIRECTIONAL_NOISE], dry_n[:needed], needed)
        wet_n = wet_n_full[:, :n]
        scale = np.sqrt(p_desired / np.mean(wet_n[ref] ** 2)) * 10.0 ** (
            -manifest.snr_directional_db / 20.0
        )
        dir_noise = scale * wet_n
        aux_noise_a = scale * wet_n_full[:, n : n + n_aux]
        aux_noise_b = scale * wet_n_full[:, n + n_aux : n + 2 * n_aux]
        measured_dir = _energy_db(rev_d[ref]) - _energy_db(dir_noise[ref])

    sensor = aux_sensor_a = aux_sensor_b = None
    measured_sensor = None
    if np.isfinite(manifest.snr_sensor_db):
        rng_pink = np.random.default_rng([manifest.seed, 0xF1])
        pink = _pink_noise(rng_pink, rev_d.shape[0], n)
        sensor_scale = np.sqrt(p_desired / np.mean(pink[ref] ** 2)) * 10.0 ** (
            -manifest.snr_sensor_db / 20.0
        )
        sensor = sensor_scale * pink
        rng_aux = np.random.default_rng([manifest.seed, 0xF2])
        aux_sensor_a = sensor_scale * _pink_noise(rng_aux, rev_d.shape[0], n_aux)
        aux_sensor_b = sensor_scale * _pink_noise(
            np.random.default_rng([manifest.seed, 0xF3]), rev_d.shape[0], n_aux
        )
        measured_sensor = _energy_db(rev_d[ref]) - _energy_db(sensor[ref])

    mixture = rev_d.copy()
    if rev_i is not None:
        mixture = mixture + rev_i
    if dir_noise is not None:
        mixture = mixture + dir_noise
    if sensor is not None:
        mixture = mixture + sensor

    enrollment = None
    if enrollment_dry is not None:
        dry_e = np.asarray(enrollment_dry, dtype=np.float64)[:n]
        if dry_e.size < n:
            dry_e = np.pad(dry_e, (0, n - dry_e.size))
        if not np.any(dry_e):
            raise DegenerateSource("enrollment dry signal has zero energy")
        enrollment = MultichannelWaveform(
            _convolve_channels(rirs[Role.DESIRED], dry_e, n), SAMPLE_RATE_HZ
        )

    aux_mix = aux_noise_only = None
    if dir_noise is not None or sensor is not None:
        start = _max_energy_start(rev_d[ref], n_aux)
        aux_desired = rev_d[:, start : start + n_aux]
        noise_a = np.zeros_like(aux_desired)
        noise_b = np.zeros_like(aux_desired)
        if aux_noise_a is not None:
            noise_a = noise_a + aux_noise_a
            noise_b = noise_b + aux_noise_b
        if aux_sensor_a is not None:
            noise_a = noise_a + aux_sensor_a
            noise_b = noise_b + aux_sensor_b
        aux_mix = MultichannelWaveform(aux_desired + noise_a, SAMPLE_RATE_HZ)
        aux_noise_only = MultichannelWaveform(noise_b, SAMPLE_RATE_HZ)

    return SceneAudio(
        mixture=MultichannelWaveform(mixture, SAMPLE_RATE_HZ),
        reverberant_desired=MultichannelWaveform(rev_d, SAMPLE_RATE_HZ),
        reverberant_interference=(
            MultichannelWaveform(rev_i, SAMPLE_RATE_HZ) if rev_i is not None else None
        ),
        enrollment=enrollment,
        aux_desired_plus_noise=aux_mix,
        aux_noise_only=aux_noise_only,
        measured_snr_directional_db=measured_dir,
        measured_snr_sensor_db=measured_sensor,
    )


def _max_energy_start(x: np.ndarray, window: int) -> int:
    if x.size <= window:
        return 0
    cumulative = np.concatenate([[0.0], np.cumsum(x**2)])
    energy = cumulative[window:] - cumulative[:-window]
    return int(np.argmax(energy))


def _scene_job(args) -> dict:
    (scene_index, base_seed, corpus_dir, out_root, preset, duration_range) = args
    scene_seed = base_seed + scene_index
    constraints = SamePlacementConstraint() if preset == "same_doa" else None
    manifest = None
    for attempt in range(5):
        try:
            manifest = sample_scene(
                scene_seed + attempt * 7_777_777, constraints, duration_range
            )
            break
        except PlacementFailed:
            log.warning("scene %d: placement retry %d", scene_index, attempt + 1)
    if manifest is None:
        raise PlacementFailed(f"scene {scene_index}: no feasible geometry in 5 rooms")

    corpus = list_corpus(corpus_dir)
    noise_paths = list_noise(corpus_dir)
    rng_cast = np.random.default_rng([scene_seed, 0xCA57])
    speaker_ids = sorted(corpus)
    desired_spk, interference_spk = rng_cast.choice(
        len(speaker_ids), size=2, replace=False
    )
    desired_utts = corpus[speaker_ids[desired_spk]]
    mix_utt, enroll_utt = rng_cast.choice(len(desired_utts), size=2, replace=False)
    interference_utts = corpus[speaker_ids[interference_spk]]
    interference_utt = int(rng_cast.integers(len(interference_utts)))
    noise_path = noise_paths[int(rng_cast.integers(len(noise_paths)))]

    dry = {
        Role.DESIRED: load_mono(desired_utts[mix_utt]),
        Role.INTERFERENCE: load_mono(interference_utts[interference_utt]),
        Role.DIRECTIONAL_NOISE: load_mono(noise_path),
    }
    audio = render_scene(manifest, dry, enrollment_dry=load_mono(desired_utts[enroll_utt]))
    manifest.measured_snr_directional_db = audio.measured_snr_directional_db
    manifest.measured_snr_sensor_db = audio.measured_snr_sensor_db

    scene_id = f"scene_{scene_index:04d}"
    scene_dir = Path(out_root) / scene_id
    scene_dir.mkdir(parents=True, exist_ok=True)
    write_wav(scene_dir / manifest.files["mixture"], audio.mixture)
    write_wav(scene_dir / manifest.files["desired"], audio.reverberant_desired)
    write_wav(scene_dir / manifest.files["interference"], audio.reverberant_interference)
    write_wav(scene_dir / manifest.files["enrollment"], audio.enrollment)
    write_wav(scene_dir / manifest.aux_files["desired_plus_noise"], audio.aux_desired_plus_noise)
    write_wav(scene_dir / manifest.aux_files["noise_only"], audio.aux_noise_only)
    (scene_dir / "manifest.json").write_text(
        json.dumps(manifest.to_json_dict(), indent=2, sort_keys=True) + "\n"
    )
    return {
        "scene_id": scene_id,
        "dir": scene_id,
        "ref_mic": int(manifest.array.reference_mic),
        "seed": int(manifest.seed),
    }


def load_dataset_index(path: str | Path) -> dict:
    """Read a dataset index JSON, refusing a mismatched schema version."""
    index = json.loads(Path(path).read_text())
    if index.get("schema") != DATASET_SCHEMA:
        raise ValueError(
            f"expected schema {DATASET_SCHEMA}, got {index.get('schema')!r}"
        )
    return index


def load_scene(scene_dir: str | Path) -> tuple[SceneManifest, SceneAudio]:
    """Read a rendered scene directory back into manifest and audio."""
    scene_dir = Path(scene_dir)
    manifest = SceneManifest.from_json_dict(
        json.loads((scene_dir / "manifest.json").read_text())
    )

    def _read(name: str | None) -> MultichannelWaveform | None:
        if name is None:
            return None
        path = scene_dir / name
        if not path.exists():
            return None
        return read_wav(path, expect_sample_rate_hz=SAMPLE_RATE_HZ)

    return manifest, SceneAudio(
        mixture=_read(manifest.files["mixture"]),
        reverberant_desired=_read(manifest.files["desired"]),
        reverberant_interference=_read(manifest.files["interference"]),
        enrollment=_read(manifest.files["enrollment"]),
        aux_desired_plus_noise=_read(manifest.aux_files.get("desired_plus_noise")),
        aux_noise_only=_read(manifest.aux_files.get("noise_only")),
        measured_snr_directional_db=manifest.measured_snr_directional_db,
        measured_snr_sensor_db=manifest.measured_snr_sensor_db,
    )


def generate_dataset(
    n_scenes: int,
    seed: int,
    dry_corpus_dir: str | Path,
    out_dir: str | Path,
    preset: str = "random",
    jobs: int = 1,
    duration_range_s: tuple[float, float] = (3.0, 6.0),
) -> Path:
    """Render ``n_scenes`` scenes with per-scene seeds ``seed + index``.

    Returns the path of the dataset index JSON. Fully deterministic for a
    given (seed, n_scenes, corpus, preset) regardless of ``jobs``.
    """
    if preset not in ("random", "same_doa"):
        raise ValueError(f"unknown preset {preset!r}")
    list_corpus(dry_corpus_dir)  # fail fast on an unusable corpus
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    args = [
        (i, seed, str(dry_corpus_dir), str(out_dir), preset, duration_range_s)
        for i in range(n_scenes)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_scene_job, args))
    else:
        rows = [_scene_job(a) for a in args]
    index = {
        "schema": DATASET_SCHEMA,
        "seed": int(seed),
        "preset": preset,
        "n_scenes": int(n_scenes),
        "scenes": rows,
    }
    index_path = out_dir / "dataset.json"
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return index_path
