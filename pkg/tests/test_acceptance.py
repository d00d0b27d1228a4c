"""Acceptance suite: one test per required behavior, each printing a
single PASS line with its measured value (visible with -s; pytest -v shows
the per-criterion pass/fail verdict either way).

Covered: MVDR correctness and optimality, STFT round trip, RIR validity,
RTF estimator accuracy, SI-SDR anchors, STOI cross-check against an
independent reference, desk-scale baseline ordering on the random preset,
the shared-bearing stress preset, and byte-level pipeline determinism.
"""

import time

import numpy as np
import pytest

from _probes import FRAME, FS, N_BINS, probe_rtf, random_probe_scene, render_steady_probe
from stoi_reference import reference_stoi

from beamlab.beamformer import NoiseCovariance, beamform_dataset, mvdr_weights
from beamlab.cli import main as cli_main
from beamlab.corpus import build_corpus, synth_utterance
from beamlab.dsp import MultichannelWaveform, istft, stft
from beamlab.errors import InfeasibleReverb
from beamlab.metrics import evaluate_dataset, si_sdr, stoi
from beamlab.rir import ArrayGeometry, RoomSpec, schroeder_t60, simulate_rir
from beamlab.rtf import RtfEstimate, covariance_whitening_rtf, hermitian_angle_deg, rtf_from_rirs
from beamlab.scene import generate_dataset

JOBS = 4


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    return build_corpus(root / "corpus", n_speakers=6, utts_per_speaker=3, seed=23)


def test_mvdr_correctness_and_optimality():
    """Distortionless to 1e-9 and minimal against 1000 random feasible
    competitors per matrix, 100 random Hermitian-PD covariances, under 10 s."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(301)
    k, j, m = 100, 4, 1000
    a = rng.standard_normal((k, j, j)) + 1j * rng.standard_normal((k, j, j))
    q = a @ np.conj(np.swapaxes(a, 1, 2)) + 0.1 * np.eye(j)
    q = 0.5 * (q + np.conj(np.swapaxes(q, 1, 2)))
    r = rng.standard_normal((k, j)) + 1j * rng.standard_normal((k, j))
    r[:, 0] = 1.0
    rtf = RtfEstimate(values=r, reference_mic=0, mask=np.ones(k, dtype=bool))
    g = mvdr_weights(rtf, NoiseCovariance(q, frame_count=0)).weights
    response_error = np.max(np.abs(np.einsum("kj,kj->k", np.conj(g), r) - 1.0))
    assert response_error < 1e-9
    gqg = np.einsum("kj,kjl,kl->k", np.conj(g), q, g).real
    z = rng.standard_normal((k, m, j)) + 1j * rng.standard_normal((k, m, j))
    scale = np.einsum("kmj,kj->km", np.conj(z), r)
    v = z / np.conj(scale)[:, :, None]
    vqv = np.einsum("kmj,kjl,kml->km", np.conj(v), q, v).real
    violations = int(np.sum(vqv < gqg[:, None]))
    assert violations == 0
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    print(f"\n[MVDR correctness] PASS: response error {response_error:.1e}, "
          f"0 of {k * m} competitors better, {elapsed:.2f} s")


def test_stft_round_trip():
    """Interior reconstruction below 1e-10 relative on 20 random
    multichannel signals, under 5 s."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(302)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(2000, 20000))
        channels = int(rng.integers(1, 5))
        wf = MultichannelWaveform(rng.standard_normal((channels, n)), FS)
        back = istft(stft(wf))
        interior = slice(256, back.n_samples - 256)
        rel = np.linalg.norm(back.samples[:, interior] - wf.samples[:, interior])
        rel /= np.linalg.norm(wf.samples[:, interior])
        worst = max(worst, rel)
    assert worst < 1e-10
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    print(f"\n[STFT round trip] PASS: worst relative error {worst:.1e}, {elapsed:.2f} s")


def test_rir_validity():
    """Anechoic pulse lands within half a sample of the true delay, and the
    Schroeder T60 of 10 random rooms stays within 20 percent, under 60 s."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(304)
    worst_delay = 0.0
    for _ in range(10):
        dims = rng.uniform(4.0, 9.0, 3)
        room = RoomSpec(dims_m=tuple(dims), t60_s=0.5)
        src = dims * rng.uniform(0.2, 0.8, 3)
        mic = dims * rng.uniform(0.2, 0.8, 3)
        rs = simulate_rir(room, ArrayGeometry(mic[None, :]), src, anechoic=True)
        expected = np.linalg.norm(src - mic) / room.speed_of_sound_mps * FS
        worst_delay = max(worst_delay, abs(int(np.argmax(np.abs(rs.rirs[0]))) - expected))
    assert worst_delay <= 0.5
    rng = np.random.default_rng(303)
    worst_t60 = 0.0
    for _ in range(10):
        while True:
            dims = rng.uniform(4.0, 9.0, 3)
            t60 = float(rng.uniform(0.25, 0.7))
            room = RoomSpec(dims_m=tuple(dims), t60_s=t60)
            try:
                room.sabine_absorption()
                break
            except InfeasibleReverb:
                continue
        src = dims * rng.uniform(0.25, 0.75, 3)
        mic = dims * rng.uniform(0.25, 0.75, 3)
        rs = simulate_rir(room, ArrayGeometry(mic[None, :]), src)
        estimate = schroeder_t60(rs.rirs[0], FS)
        worst_t60 = max(worst_t60, abs(estimate - t60) / t60)
    assert worst_t60 < 0.2
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    print(f"\n[RIR validity] PASS: delay error {worst_delay:.3f} samples, "
          f"worst T60 error {100 * worst_t60:.1f}%, {elapsed:.1f} s")


def test_rtf_estimator_accuracy():
    """Pooled over 20 reverberant rooms: averaged instantaneous RTF within
    2 degrees of the impulse-response truth, covariance whitening at 20 dB
    within 5 degrees over 300 to 3500 Hz, under 2 min."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    k_all = np.arange(N_BINS)
    freqs = k_all * FS / FRAME
    band = (freqs >= 300.0) & (freqs <= 3500.0)
    inst_pool, cw_pool = [], []
    scenes = 0
    while scenes < 20:
        room, array, src = random_probe_scene(rng)
        try:
            rirs = simulate_rir(room, array, src)
        except InfeasibleReverb:
            continue
        scenes += 1
        truth = rtf_from_rirs(rirs, ref_mic=0)
        est = probe_rtf(rirs, rng)
        inst_pool.append(hermitian_angle_deg(est[1:], truth[1:]))
        cw_values = np.zeros((N_BINS, rirs.rirs.shape[0]), dtype=np.complex128)
        cw_mask = np.zeros(N_BINS, dtype=bool)
        for cls in range(3):
            subset = k_all[k_all % 3 == cls]
            speech = render_steady_probe(rirs, rng, subset, FS)
            sigma = np.sqrt(np.mean(speech**2) / 10.0 ** (20.0 / 10.0))
            noisy = speech + sigma * rng.standard_normal(speech.shape)
            noise_only = sigma * rng.standard_normal(speech.shape)
            cw = covariance_whitening_rtf(
                stft(MultichannelWaveform(noisy, FS)),
                stft(MultichannelWaveform(noise_only, FS)),
                ref_mic=0,
            )
            cw_values[subset] = cw.values[subset]
            cw_mask[subset] = cw.mask[subset]
        keep = band & cw_mask
        cw_pool.append(hermitian_angle_deg(cw_values[keep], truth[keep]))
    inst_median = float(np.median(np.concatenate(inst_pool)))
    cw_median = float(np.median(np.concatenate(cw_pool)))
    assert inst_median < 2.0
    assert cw_median < 5.0
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    print(f"\n[RTF estimators] PASS: instantaneous {inst_median:.4f} deg, "
          f"whitening at 20 dB {cw_median:.3f} deg, {elapsed:.1f} s")


def test_si_sdr_anchors():
    """Two-sample anchor exactly 0 dB, scale invariance and the
    orthogonal-noise closed form both below 1e-9 dB."""
    assert si_sdr(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == 0.0
    rng = np.random.default_rng(305)
    ref = rng.standard_normal(4000)
    est = ref + 0.3 * rng.standard_normal(4000)
    scale_gap = abs(si_sdr(ref, 3.7 * est) - si_sdr(ref, est))
    assert scale_gap < 1e-9
    noise = rng.standard_normal(4000)
    noise -= (noise @ ref) / (ref @ ref) * ref
    closed_form = 10.0 * np.log10((ref @ ref) / (0.25 * (noise @ noise)))
    gap = abs(si_sdr(ref, ref + 0.5 * noise) - closed_form)
    assert gap < 1e-9
    print(f"\n[SI-SDR anchors] PASS: scale gap {scale_gap:.1e} dB, "
          f"closed-form gap {gap:.1e} dB")


def test_stoi_against_independent_reference():
    """Within 0.01 of the independently written reference on 20 degraded
    pairs spanning noise levels, filtering, and clipping."""
    rng = np.random.default_rng(306)
    worst = 0.0
    for i in range(20):
        clean = np.concatenate(
            [synth_utterance(400 + i, u, duration_s=5.0) for u in (0, 1)]
        )
        kind = i % 4
        if kind == 0:
            degraded = clean + rng.uniform(0.05, 1.0) * rng.standard_normal(clean.size)
        elif kind == 1:
            degraded = np.convolve(clean, np.ones(int(rng.integers(2, 8))), "same")
        elif kind == 2:
            degraded = np.clip(clean, -rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5))
        else:
            degraded = 0.7 * np.roll(clean, 2) + 0.4 * rng.standard_normal(clean.size)
        ours = stoi(clean, degraded, FS)
        theirs = reference_stoi(clean, degraded, FS)
        worst = max(worst, abs(ours - theirs))
    assert worst <= 0.01
    print(f"\n[STOI cross-check] PASS: worst gap to reference {worst:.2e}")


def test_baseline_ordering_random_preset(corpus, tmp_path):
    """50 random scenes, pinned seed: oracle above estimated above
    unprocessed, unprocessed mean within 3 dB of -2.6 dB, oracle at least
    4 dB over unprocessed, under 10 min."""
    t0 = time.perf_counter()
    index = generate_dataset(50, 101, corpus, tmp_path / "random", jobs=JOBS)
    beamform_dataset(index)
    report = evaluate_dataset(
        index,
        [tmp_path / "random" / "OracleMvdr", tmp_path / "random" / "EstimatedMvdr"],
        tmp_path / "random",
    )
    means = {m: report.aggregate[m]["si_sdr_db"]["mean"]
             for m in ("Unprocessed", "OracleMvdr", "EstimatedMvdr")}
    assert means["OracleMvdr"] > means["EstimatedMvdr"] > means["Unprocessed"]
    assert abs(means["Unprocessed"] - (-2.6)) <= 3.0
    assert means["OracleMvdr"] - means["Unprocessed"] >= 4.0
    elapsed = time.perf_counter() - t0
    assert elapsed < 600.0
    print(f"\n[Baseline ordering] PASS: oracle {means['OracleMvdr']:+.2f} > "
          f"estimated {means['EstimatedMvdr']:+.2f} > "
          f"unprocessed {means['Unprocessed']:+.2f} dB, {elapsed:.0f} s")


def test_same_doa_preset_margin(corpus, tmp_path):
    """20 shared-bearing scenes, pinned seed: oracle still at least 4 dB
    over unprocessed, showing discrimination beyond direction."""
    index = generate_dataset(20, 101, corpus, tmp_path / "same_doa",
                             preset="same_doa", jobs=JOBS)
    beamform_dataset(index, methods=("OracleMvdr",))
    report = evaluate_dataset(
        index, [tmp_path / "same_doa" / "OracleMvdr"], tmp_path / "same_doa"
    )
    margin = (report.aggregate["OracleMvdr"]["si_sdr_db"]["mean"]
              - report.aggregate["Unprocessed"]["si_sdr_db"]["mean"])
    assert margin >= 4.0
    print(f"\n[Same-DOA preset] PASS: oracle margin {margin:+.2f} dB over unprocessed")


def test_pipeline_determinism(corpus, tmp_path):
    """simulate -> beamform -> evaluate twice with one seed: byte-identical
    score CSVs."""
    outputs = []
    for tag in ("first", "second"):
        data = tmp_path / tag
        assert cli_main(["simulate", "-n", "3", "--corpus", str(corpus),
                         "--out-dir", str(data), "--seed", "77",
                         "--jobs", str(JOBS)]) == 0
        assert cli_main(["beamform", "--dataset", str(data)]) == 0
        assert cli_main(["evaluate", "--dataset", str(data),
                         "--method-dir", str(data / "OracleMvdr"),
                         "--method-dir", str(data / "EstimatedMvdr")]) == 0
        outputs.append((data / "scores.csv").read_bytes())
    assert outputs[0] == outputs[1]
    print(f"\n[Determinism] PASS: {len(outputs[0])} identical CSV bytes")
