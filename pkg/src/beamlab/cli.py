"""Command-line pipeline: corpus, scene simulation, beamforming, scoring,
and feature export.

Every subcommand accepts the global flags --seed, --out-dir, --jobs, and
--config, where the config file holds `key = value` lines mirroring the
subcommand's long flag names (explicit flags win). The seed falls back to
the BEAMLAB_SEED environment variable, then 0. Each run writes a resolved
run_config.<subcommand>.json next to its outputs; logs go to stderr and
machine-readable outputs only to files.

Exit codes: 0 success, 1 partial per-scene failures, 2 configuration
errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .beamformer import beamform_dataset
from .corpus import build_corpus
from .errors import BeamlabError, EmptyCorpus
from .features import export_features
from .metrics import evaluate_dataset
from .scene import generate_dataset, load_dataset_index

__all__ = ["main"]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

REPEATABLE_FLAGS = {"--method", "--method-dir"}


class ConfigError(Exception):
    """A config file entry that cannot be mapped onto the subcommand."""


def _add_global_flags(p: argparse.ArgumentParser) -> set[str]:
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (falls back to BEAMLAB_SEED, then 0)")
    p.add_argument("--out-dir", default=None, help="output directory")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel scene workers (outputs are identical for any value)")
    p.add_argument("--config", default=None,
                   help="key = value file mirroring this subcommand's flags")
    return {"--seed", "--out-dir", "--jobs", "--config"}


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, set[str]]]:
    parser = argparse.ArgumentParser(
        prog="beamlab",
        description="reverberant scene simulation, MVDR separation, and scoring",
    )
    parser.add_argument("--version", action="version", version=f"beamlab {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    flag_sets: dict[str, set[str]] = {}

    p = sub.add_parser("make-corpus", help="write the bundled synthetic speech corpus")
    flags = _add_global_flags(p)
    p.add_argument("--speakers", type=int, default=6)
    p.add_argument("--utts", type=int, default=3, help="utterances per speaker")
    p.add_argument("--duration", type=float, default=7.0, help="utterance seconds")
    p.set_defaults(run=cmd_make_corpus)
    flag_sets["make-corpus"] = flags | {"--speakers", "--utts", "--duration"}

    p = sub.add_parser("simulate", help="render a dataset of reverberant scenes")
    flags = _add_global_flags(p)
    p.add_argument("-n", "--n-scenes", type=int, required=True)
    p.add_argument("--corpus", required=True, help="dry corpus directory")
    p.add_argument("--preset", choices=("random", "same-doa"), default="random")
    p.set_defaults(run=cmd_simulate)
    flag_sets["simulate"] = flags | {"--n-scenes", "--corpus", "--preset"}

    p = sub.add_parser("beamform", help="run MVDR variants over a dataset")
    flags = _add_global_flags(p)
    p.add_argument("--dataset", required=True, help="dataset index JSON or directory")
    p.add_argument("--method", action="append",
                   choices=("OracleMvdr", "EstimatedMvdr"),
                   help="repeatable; default runs both")
    p.set_defaults(run=cmd_beamform)
    flag_sets["beamform"] = flags | {"--dataset", "--method"}

    p = sub.add_parser("evaluate", help="score method directories against a dataset")
    flags = _add_global_flags(p)
    p.add_argument("--dataset", required=True, help="dataset index JSON or directory")
    p.add_argument("--method-dir", action="append",
                   help="repeatable; directory of per-scene WAVs to score")
    p.set_defaults(run=cmd_evaluate)
    flag_sets["evaluate"] = flags | {"--dataset", "--method-dir"}

    p = sub.add_parser("export-features", help="dump per-scene model inputs")
    flags = _add_global_flags(p)
    p.add_argument("--dataset", required=True, help="dataset index JSON or directory")
    p.add_argument("--feature", choices=("stft", "rtf", "doa"), required=True)
    p.set_defaults(run=cmd_export_features)
    flag_sets["export-features"] = flags | {"--dataset", "--feature"}

    return parser, flag_sets


def _read_config_file(path: str | Path) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blank lines skipped."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{path}:{lineno}: empty key or value")
        values[key] = value
    return values


def _apply_config(argv: list[str], flag_sets: dict[str, set[str]]) -> list[str]:
    """Expand a --config file into flags placed before the explicit ones.

    Later flags win in argparse, so explicit command-line flags override
    the file. Keys must mirror the running subcommand's flags.
    """
    if not argv or argv[0].startswith("-") or argv[0] not in flag_sets:
        return argv
    subcommand, rest = argv[0], argv[1:]
    config_path = None
    for i, token in enumerate(rest):
        if token == "--config" and i + 1 < len(rest):
            config_path = rest[i + 1]
        elif token.startswith("--config="):
            config_path = token.split("=", 1)[1]
    if config_path is None:
        return argv
    try:
        entries = _read_config_file(config_path)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    injected: list[str] = []
    for key, value in entries.items():
        flag = "--" + key.replace("_", "-").lstrip("-")
        if flag == "--config":
            raise ConfigError(f"{config_path}: a config file cannot nest --config")
        if flag not in flag_sets[subcommand]:
            raise ConfigError(
                f"{config_path}: key {key!r} does not mirror a flag of {subcommand}"
            )
        parts = value.split(",") if flag in REPEATABLE_FLAGS else [value]
        for part in parts:
            injected.extend([flag, part.strip()])
    return [subcommand] + injected + rest


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("BEAMLAB_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"BEAMLAB_SEED={env!r} is not an integer") from None


def _write_run_config(out_dir: Path, subcommand: str, **fields) -> None:
    """Resolved-flag provenance next to the outputs; no timestamps, so a
    rerun with the same inputs reproduces the file byte for byte."""
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"subcommand": subcommand, **fields}
    path = out_dir / f"run_config.{subcommand}.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _dataset_index_path(dataset: str) -> Path:
    p = Path(dataset)
    return p / "dataset.json" if p.is_dir() else p


def cmd_make_corpus(args) -> int:
    out = Path(args.out_dir or "corpus")
    _write_run_config(out, "make-corpus", seed=args.seed, jobs=args.jobs,
                      speakers=args.speakers, utts=args.utts,
                      duration=args.duration)
    build_corpus(out, n_speakers=args.speakers, utts_per_speaker=args.utts,
                 seed=args.seed, duration_s=args.duration)
    log.info("corpus with %d speakers x %d utterances at %s",
             args.speakers, args.utts, out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = Path(args.out_dir or "dataset")
    preset = args.preset.replace("-", "_")
    _write_run_config(out, "simulate", seed=args.seed, jobs=args.jobs,
                      n_scenes=args.n_scenes, corpus=str(args.corpus),
                      preset=args.preset)
    index_path = generate_dataset(args.n_scenes, args.seed, args.corpus, out,
                                  preset=preset, jobs=args.jobs)
    log.info("%d scenes indexed at %s", args.n_scenes, index_path)
    return EXIT_OK


def cmd_beamform(args) -> int:
    index_path = _dataset_index_path(args.dataset)
    methods = tuple(args.method or ("OracleMvdr", "EstimatedMvdr"))
    out_root = Path(args.out_dir) if args.out_dir else index_path.parent
    _write_run_config(out_root, "beamform", seed=args.seed, jobs=args.jobs,
                      dataset=str(index_path), methods=sorted(set(methods)))
    n_scenes = len(load_dataset_index(index_path)["scenes"])
    counts = beamform_dataset(index_path, methods=methods, out_root=out_root)
    for method, count in counts.items():
        log.info("%s: %d of %d scenes written under %s",
                 method, count, n_scenes, out_root / method)
    return EXIT_OK if all(c == n_scenes for c in counts.values()) else EXIT_PARTIAL


def cmd_evaluate(args) -> int:
    index_path = _dataset_index_path(args.dataset)
    method_dirs = [Path(d) for d in (args.method_dir or [])]
    out = Path(args.out_dir) if args.out_dir else index_path.parent
    _write_run_config(out, "evaluate", seed=args.seed, jobs=args.jobs,
                      dataset=str(index_path),
                      method_dirs=[str(d) for d in method_dirs])
    report = evaluate_dataset(index_path, method_dirs, out)
    for method, stats in sorted(report.aggregate.items()):
        log.info("%s: mean SI-SDR %+.2f dB, mean STOI %.3f over %d scenes",
                 method, stats["si_sdr_db"]["mean"], stats["stoi"]["mean"],
                 stats["n_scenes"])
    return EXIT_PARTIAL if any(report.skipped.values()) else EXIT_OK


def cmd_export_features(args) -> int:
    index_path = _dataset_index_path(args.dataset)
    out = (Path(args.out_dir) if args.out_dir
           else index_path.parent / "features" / args.feature)
    _write_run_config(out, "export-features", seed=args.seed, jobs=args.jobs,
                      dataset=str(index_path), feature=args.feature)
    export_features(index_path, args.feature, out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    if not logging.getLogger().handlers:
        logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, flag_sets = build_parser()
    try:
        argv = _apply_config(argv, flag_sets)
        args = parser.parse_args(argv)
        args.seed = _resolve_seed(args.seed)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.run(args)
    except (EmptyCorpus, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except BeamlabError as exc:
        log.error("%s", exc)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
