"""Multichannel target-speaker-extraction laboratory.

Simulates reverberant two-speaker scenes with an image-method room model,
estimates relative transfer functions, separates with MVDR beamformers, and
scores the result with SI-SDR and STOI. A command-line front end drives the
simulate / beamform / evaluate / export-features pipeline.
"""

from .dsp import (
    MultichannelWaveform,
    Spectrogram,
    StftConfig,
    istft,
    read_wav,
    stft,
    write_wav,
)
from .beamformer import (
    BeamformerWeights,
    NoiseCovariance,
    apply_beamformer,
    beamform_dataset,
    estimate_covariance,
    estimated_mvdr,
    identity_covariance,
    mvdr_weights,
    oracle_mvdr,
)
from .metrics import ScoreReport, evaluate_dataset, si_sdr, stoi
from .rir import ArrayGeometry, RirSet, RoomSpec, schroeder_t60, simulate_rir
from .rtf import (
    RtfEstimate,
    average_rtf,
    covariance_whitening_rtf,
    hermitian_angle_deg,
    instantaneous_rtf,
    rtf_from_rirs,
)
from .scene import (
    Role,
    SamePlacementConstraint,
    SceneAudio,
    SceneManifest,
    SourcePlacement,
    generate_dataset,
    load_scene,
    render_scene,
    sample_scene,
)

__version__ = "0.1.0"
