import numpy as np
import pytest

from beamlab.dsp import MultichannelWaveform, Spectrogram, StftConfig, stft
from beamlab.errors import (
    InsufficientFrames,
    NoSpeechDetected,
    SilentEnrollment,
)
from beamlab.rir import ArrayGeometry, RoomSpec, simulate_rir
from beamlab.rtf import (
    RtfEstimate,
    average_rtf,
    covariance_whitening_from_matrices,
    covariance_whitening_rtf,
    hermitian_angle_deg,
    instantaneous_rtf,
    read_rtf_dump,
    rtf_from_rirs,
    write_rtf_dump,
)

FS = 8000


def spectrogram_from_bins(bins):
    bins = np.asarray(bins, dtype=np.complex128)
    frame_len = 2 * (bins.shape[0] - 1)
    return Spectrogram(
        bins=bins, frame_len=frame_len, hop=frame_len // 2, sample_rate_hz=FS
    )


def random_spectrogram(rng, k=129, t=40, j=4, scale=1.0):
    shape = (k, t, j)
    return spectrogram_from_bins(
        scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    )


def test_hermitian_angle_basic():
    u = np.array([1.0, 1j, 0.0])
    # arccos amplifies rounding near zero angle, hence the loose 1e-5
    assert hermitian_angle_deg(u, u) == pytest.approx(0.0, abs=1e-5)
    assert hermitian_angle_deg(u, 3.7j * u) == pytest.approx(0.0, abs=1e-5)
    v = np.array([0.0, 0.0, 1.0])
    assert hermitian_angle_deg(u, v) == pytest.approx(90.0)
    w = np.array([1.0, 0.0, 0.0])
    x = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    assert hermitian_angle_deg(w, x) == pytest.approx(45.0, abs=1e-9)


def test_hermitian_angle_batched():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
    angles = hermitian_angle_deg(a, a * np.exp(1j * 0.3))
    assert angles.shape == (5,)
    assert np.allclose(angles, 0.0, atol=1e-5)


def test_instantaneous_rtf_known_ratio():
    # channel 1 = channel 0 times a per-frequency complex constant, so every
    # frame must report exactly that constant
    rng = np.random.default_rng(0)
    k, t = 65, 30
    base = rng.standard_normal((k, t)) + 1j * rng.standard_normal((k, t))
    base += 3.0  # keep magnitudes away from the floor
    ratio = np.exp(1j * np.linspace(0.0, np.pi, k)) * np.linspace(0.5, 2.0, k)
    bins = np.stack([base, base * ratio[:, None]], axis=2)
    est = instantaneous_rtf(spectrogram_from_bins(bins), ref_mic=0)
    assert est.is_instantaneous
    assert np.all(est.mask)
    assert np.allclose(est.values[:, :, 0], 1.0, atol=0)
    assert np.allclose(est.values[:, :, 1], ratio[:, None], atol=1e-12)


def test_instantaneous_rtf_reference_channel_is_exactly_one():
    rng = np.random.default_rng(1)
    est = instantaneous_rtf(random_spectrogram(rng), ref_mic=2)
    ref = est.values[:, :, 2][est.mask]
    assert np.all(ref == 1.0 + 0.0j)


def test_instantaneous_rtf_floor_masks_weak_cells():
    rng = np.random.default_rng(2)
    k, t = 33, 20
    bins = rng.standard_normal((k, t, 3)) + 1j * rng.standard_normal((k, t, 3))
    bins[:, :, 0] += 4.0
    bins[5, 7, :] = 1e-9  # one cell far below the per-frequency median
    est = instantaneous_rtf(spectrogram_from_bins(bins), ref_mic=0, floor_db=40.0)
    assert not est.mask[5, 7]
    assert np.all(est.values[5, 7] == 0)
    assert est.mask[5, 6]


def test_instantaneous_rtf_silent_enrollment_raises():
    bins = np.zeros((17, 10, 2), dtype=np.complex128)
    with pytest.raises(SilentEnrollment):
        instantaneous_rtf(spectrogram_from_bins(bins), ref_mic=0)


def test_instantaneous_rtf_bad_ref_mic():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        instantaneous_rtf(random_spectrogram(rng, j=2), ref_mic=2)


def test_average_rtf_single_frame_passthrough():
    # averaging one frame returns that frame's ratios unchanged
    rng = np.random.default_rng(4)
    est = instantaneous_rtf(random_spectrogram(rng, t=1), ref_mic=0)
    for weighting in ("ref_energy", "uniform"):
        avg = average_rtf(est, weighting)
        assert avg.values.shape == (129, 4)
        assert np.allclose(avg.values, est.values[:, 0, :], atol=1e-12)


def test_average_rtf_uniform_matches_ref_energy_on_equal_energy_frames():
    # when every frame has the same reference magnitude the two weightings
    # must agree to rounding
    rng = np.random.default_rng(5)
    k, t, j = 65, 25, 3
    phases = np.exp(1j * rng.uniform(-np.pi, np.pi, (k, t)))
    base = 2.0 * phases
    bins = np.stack(
        [base, base * (1.3 + 0.4j), base * rng.standard_normal((k, 1))], axis=2
    )
    est = instantaneous_rtf(spectrogram_from_bins(bins), ref_mic=0)
    a = average_rtf(est, "ref_energy")
    b = average_rtf(est, "uniform")
    assert np.allclose(a.values, b.values, atol=1e-12)


def test_average_rtf_energy_weighting_prefers_loud_frames():
    # one loud frame with ratio 2, many quiet frames with ratio 1: the
    # energy-weighted average should sit near 2, the uniform one near 1
    k, t = 5, 11
    bins = np.zeros((k, t, 2), dtype=np.complex128)
    bins[:, :, 0] = 1.0
    bins[:, 0, 0] = 100.0
    bins[:, :, 1] = bins[:, :, 0]
    bins[:, 0, 1] = 200.0
    est = instantaneous_rtf(spectrogram_from_bins(bins), ref_mic=0)
    heavy = average_rtf(est, "ref_energy").values[:, 1].real
    flat = average_rtf(est, "uniform").values[:, 1].real
    expected_heavy = (100.0**2 * 2.0 + 10.0) / (100.0**2 + 10.0)
    expected_flat = (2.0 + 10.0) / 11.0
    assert np.allclose(heavy, expected_heavy, atol=1e-12)
    assert np.allclose(flat, expected_flat, atol=1e-12)


def test_average_rtf_masks_dead_frequencies():
    bins = np.ones((9, 6, 2), dtype=np.complex128)
    bins[4] = 0.0  # a frequency with no valid frames at all
    bins[0, :, 0] *= 2.0
    est = instantaneous_rtf(spectrogram_from_bins(bins), ref_mic=0)
    avg = average_rtf(est)
    assert not avg.mask[4]
    assert np.all(avg.values[4] == 0)
    assert avg.mask[0]


def test_average_rtf_convergence_rate():
    # with i.i.d. phase noise on the ratio the averaged error should shrink
    # roughly like 1/sqrt(T)
    rng = np.random.default_rng(6)
    k = 33
    true = np.stack([np.ones(k), 1.5 * np.exp(1j * np.linspace(0, 2, k))], axis=1)
    errs = []
    for t in (50, 5000):
        base = np.exp(1j * rng.uniform(-np.pi, np.pi, (k, t)))
        noise = 0.3 * (rng.standard_normal((k, t)) + 1j * rng.standard_normal((k, t)))
        bins = np.stack([base, base * true[:, 1:2] + noise * base], axis=2)
        est = average_rtf(instantaneous_rtf(spectrogram_from_bins(bins), 0))
        errs.append(np.median(np.abs(est.values[:, 1] - true[:, 1])))
    shrink = errs[0] / errs[1]
    assert 5.0 < shrink < 20.0  # sqrt(100) = 10 with slack


def test_covariance_whitening_rank_one_analytic():
    # Phi_n = I and Phi_x = I + d d^H make the whitened principal
    # eigenvector collinear with d, so the estimator must return d / d[0]
    j = 4
    d = np.array([1.0, 0.5 - 0.5j, -0.25 + 1j, 0.8j])
    k = 7
    phi_n = np.broadcast_to(np.eye(j), (k, j, j)).astype(np.complex128)
    phi_x = phi_n + 5.0 * np.einsum("i,j->ij", d, np.conj(d))[None]
    rtf, gap = covariance_whitening_from_matrices(phi_x, phi_n, ref_mic=0, loading=0.0)
    expected = d / d[0]
    assert np.allclose(rtf, expected[None], atol=1e-6)
    assert np.all(gap > 5.0)


def test_covariance_whitening_reference_exactly_one():
    rng = np.random.default_rng(8)
    j, k = 3, 11
    a = rng.standard_normal((k, j, j)) + 1j * rng.standard_normal((k, j, j))
    phi_n = np.einsum("kij,klj->kil", a, np.conj(a)) + 3 * np.eye(j)[None]
    d = rng.standard_normal((k, j)) + 1j * rng.standard_normal((k, j))
    phi_x = phi_n + 50.0 * np.einsum("ki,kj->kij", d, np.conj(d))
    rtf, _ = covariance_whitening_from_matrices(phi_x, phi_n, ref_mic=1)
    assert np.all(rtf[:, 1] == 1.0 + 0.0j)


def test_covariance_whitening_noise_scale_invariance():
    # scaling the noise-only segment must not move the estimate
    rng = np.random.default_rng(9)
    k, t, j = 65, 80, 4
    d = rng.standard_normal((k, j)) + 1j * rng.standard_normal((k, j))
    s = rng.standard_normal((k, t)) + 1j * rng.standard_normal((k, t))
    n1 = 0.3 * (rng.standard_normal((k, t, j)) + 1j * rng.standard_normal((k, t, j)))
    n2 = 0.3 * (rng.standard_normal((k, t, j)) + 1j * rng.standard_normal((k, t, j)))
    mix = spectrogram_from_bins(d[:, None, :] * s[:, :, None] + n1)
    est_a = covariance_whitening_rtf(mix, spectrogram_from_bins(n2), ref_mic=0)
    est_b = covariance_whitening_rtf(mix, spectrogram_from_bins(100.0 * n2), ref_mic=0)
    both = est_a.mask & est_b.mask
    assert both.sum() > 50
    assert np.max(np.abs(est_a.values[both] - est_b.values[both])) < 1e-9


def test_covariance_whitening_recovers_steering_vector():
    rng = np.random.default_rng(10)
    k, t, j = 129, 120, 4
    d = np.exp(1j * rng.uniform(-np.pi, np.pi, (k, j)))
    d[:, 0] = 1.0
    s = 3.0 * (rng.standard_normal((k, t)) + 1j * rng.standard_normal((k, t)))
    noise = 0.2 * (rng.standard_normal((k, t, j)) + 1j * rng.standard_normal((k, t, j)))
    noise_only = 0.2 * (
        rng.standard_normal((k, t, j)) + 1j * rng.standard_normal((k, t, j))
    )
    mix = spectrogram_from_bins(d[:, None, :] * s[:, :, None] + noise)
    est = covariance_whitening_rtf(mix, spectrogram_from_bins(noise_only), ref_mic=0)
    angles = hermitian_angle_deg(est.values[est.mask], d[est.mask])
    assert np.median(angles) < 2.0


def test_covariance_whitening_no_speech_raises():
    # statistically identical segments leave no eigengap to exploit
    rng = np.random.default_rng(11)
    k, t, j = 65, 100, 4
    a = spectrogram_from_bins(
        rng.standard_normal((k, t, j)) + 1j * rng.standard_normal((k, t, j))
    )
    b = spectrogram_from_bins(
        rng.standard_normal((k, t, j)) + 1j * rng.standard_normal((k, t, j))
    )
    with pytest.raises(NoSpeechDetected):
        covariance_whitening_rtf(a, b, ref_mic=0)


def test_covariance_whitening_too_few_frames():
    rng = np.random.default_rng(12)
    short = random_spectrogram(rng, t=2)
    long = random_spectrogram(rng, t=50)
    with pytest.raises(InsufficientFrames):
        covariance_whitening_rtf(short, long, ref_mic=0)


def test_rtf_from_rirs_pure_delay():
    # two impulse responses that differ by an integer delay give an exact
    # linear-phase RTF at every bin center
    taps = np.zeros((2, 300))
    taps[0, 10] = 1.0
    taps[1, 14] = 0.5
    rtf = rtf_from_rirs_as_matrix(taps)
    k = np.arange(129)
    expected = 0.5 * np.exp(-2j * np.pi * k * 4 / 256)
    assert np.allclose(rtf[:, 0], 1.0, atol=1e-12)
    assert np.allclose(rtf[:, 1], expected, atol=1e-10)


def rtf_from_rirs_as_matrix(taps):
    from beamlab.rir import RirSet

    rirset = RirSet(
        rirs=np.asarray(taps, dtype=np.float64),
        sample_rate_hz=FS,
        source_position_m=np.zeros(3),
    )
    return rtf_from_rirs(rirset, ref_mic=0)


def test_rtf_estimate_shape_validation():
    with pytest.raises(ValueError):
        RtfEstimate(np.zeros((4, 3, 2, 1)), 0, np.zeros((4, 3, 2), dtype=bool))
    with pytest.raises(ValueError):
        RtfEstimate(np.zeros((4, 3)), 0, np.zeros(3, dtype=bool))


def test_rtf_dump_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    est = average_rtf(instantaneous_rtf(random_spectrogram(rng, t=12), ref_mic=1))
    path = write_rtf_dump(tmp_path / "rtf.json", est)
    back = read_rtf_dump(path)
    assert back.reference_mic == 1
    assert np.allclose(back.values, est.values, atol=1e-6)
    assert np.array_equal(back.mask, est.mask)


def test_consistency_anechoic_white_noise():
    # short anechoic responses keep the windowing bias small enough that a
    # plain white-noise excitation already agrees with the true ratio
    room = RoomSpec(dims_m=(6.0, 5.0, 3.0), t60_s=0.25)
    array = ArrayGeometry.uniform_linear(
        center_m=(3.0, 1.0, 1.5), axis_direction=(1.0, 0.0, 0.0)
    )
    rirs = simulate_rir(room, array, source_position_m=(3.9, 2.6, 1.4), anechoic=True)
    rng = np.random.default_rng(14)
    dry = rng.standard_normal(FS * 2)
    from scipy.signal import fftconvolve

    wet = np.stack([fftconvolve(dry, h)[: len(dry)] for h in rirs.rirs], axis=0)
    spec = stft(MultichannelWaveform(wet, FS))
    est = average_rtf(instantaneous_rtf(spec, ref_mic=0))
    truth = rtf_from_rirs(rirs, ref_mic=0)
    keep = est.mask.copy()
    keep[:4] = False  # DC-side bins carry almost no windowed energy
    angles = hermitian_angle_deg(est.values[keep], truth[keep])
    assert np.median(angles) < 2.0


def test_consistency_reverberant_multisine_probe():
    # in a reverberant room the averaged per-frame ratio of a multisine
    # probe must match the impulse-response transfer ratio at every probed
    # bin; see _probes for why tones rather than noise
    from _probes import probe_rtf, random_probe_scene

    rng = np.random.default_rng(21)
    room, array, src = random_probe_scene(rng)
    rirs = simulate_rir(room, array, src)
    est = probe_rtf(rirs, rng)
    truth = rtf_from_rirs(rirs, ref_mic=0)
    ref_mag = np.abs(
        np.fft.rfft(
            rirs.rirs,
            n=int(np.ceil(rirs.rirs.shape[1] / 256)) * 256,
            axis=1,
        )
    )[0, :: int(np.ceil(rirs.rirs.shape[1] / 256))]
    keep = ref_mag > np.percentile(ref_mag, 10)
    angles = hermitian_angle_deg(est[keep], truth[keep])
    assert np.median(angles) < 2.0
    # steady-state tones make this essentially exact
    assert np.median(angles) < 1e-6
