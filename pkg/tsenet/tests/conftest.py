"""Shared fixture: a 20-scene dataset with exported features, built by
driving the simulation CLI as a subprocess. Files are the only coupling."""

import shutil
import subprocess

import pytest

BEAMLAB = shutil.which("beamlab")


def run_beamlab(args):
    assert BEAMLAB, "the beamlab CLI must be on PATH for integration tests"
    proc = subprocess.run(
        [BEAMLAB, *[str(a) for a in args]], capture_output=True, text=True
    )
    assert proc.returncode in (0, 1), f"beamlab {args[0]} failed:\n{proc.stderr}"
    return proc


@pytest.fixture(scope="session")
def scene_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    corpus = root / "corpus"
    data = root / "data"
    run_beamlab(["make-corpus", "--out-dir", corpus,
                 "--speakers", 6, "--utts", 3, "--seed", 23])
    run_beamlab(["simulate", "-n", 20, "--seed", 909, "--corpus", corpus,
                 "--out-dir", data, "--jobs", 4])
    for feature in ("stft", "rtf", "doa"):
        run_beamlab(["export-features", "--dataset", data, "--feature", feature])
    return data
