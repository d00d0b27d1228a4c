"""Exception types shared across the package.

Every raisable condition gets its own class so callers (and the CLI exit-code
mapping) can distinguish configuration mistakes from per-scene failures.
"""


class BeamlabError(Exception):
    """Base class for all package-specific errors."""


class SignalTooShort(BeamlabError):
    """Waveform shorter than one analysis frame."""


class InvalidSpectrogram(BeamlabError):
    """Spectrogram tensor inconsistent with its frame/hop configuration."""


class SampleRateMismatch(BeamlabError):
    """File or waveform sample rate differs from the expected rate.

    The package never resamples implicitly; the caller must convert first.
    """


class InfeasibleReverb(BeamlabError):
    """Requested T60 needs average absorption above 1 for this room."""


class PlacementFailed(BeamlabError):
    """Could not place array and sources inside the room under constraints."""


class DegenerateSource(BeamlabError):
    """A provided dry source signal has (near) zero energy."""


class EmptyCorpus(BeamlabError):
    """Dry-speech corpus directory has no usable speakers."""


class SilentEnrollment(BeamlabError):
    """Enrollment signal has no frames above the spectral floor."""


class SingularNoiseCovariance(BeamlabError):
    """Noise covariance not positive definite even after loading escalation."""


class NoSpeechDetected(BeamlabError):
    """Speech-plus-noise segment is not separable from the noise-only one."""


class InsufficientFrames(BeamlabError):
    """Covariance estimation needs at least as many frames as channels."""


class ZeroReference(BeamlabError):
    """Metric reference signal is identically zero."""


class InsufficientSpeech(BeamlabError):
    """Too little active speech left after silent-frame removal."""
