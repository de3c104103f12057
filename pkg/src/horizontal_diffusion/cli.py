"""Command-line runner: ``hdiff SUBCOMMAND --config PATH [--seed N] [--out DIR] [--threads N]``.

Every run writes to its own directory: ``manifest.json`` first, then the data
files, then the final manifest (file hashes, wall time, verdict).  The exit
status is 0 iff every configured check passed, 1 if a check failed and 2 for
configuration or runtime errors.  ``--replay MANIFEST`` re-runs a recorded
run and compares data file hashes.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import traceback
import warnings
from importlib import metadata
from pathlib import Path
from typing import Optional

from .config import ExperimentConfig, load_config, validate_config
from .errors import HorizontalDiffusionError, SchemaError
from .experiments import RUNNERS, checks_as_dicts, run_selftest

SUBCOMMANDS = ("simulate", "transport", "family", "coupling", "ot-contract", "selftest")
OUT_ENV = "HDIFF_OUTPUT_DIR"


def toolkit_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class RunDirectory:
    """One output directory per run; manifest first, data files append-only."""

    def __init__(self, root: Path, subcommand: str, cfg: Optional[ExperimentConfig], seed: int):
        digest = cfg.digest() if cfg is not None else "none"
        stem = f"{subcommand}-{digest[:12]}-seed{seed}"
        path = root / stem
        n = 1
        while path.exists():
            n += 1
            path = root / f"{stem}-{n}"
        path.mkdir(parents=True)
        self.path = path
        self.files = []
        self.manifest = {
            "subcommand": subcommand,
            "config": cfg.canonical() if cfg is not None else None,
            "config_hash": digest,
            "toolkit_version": toolkit_version(),
            "seed": seed,
            "stream_ids": f"path b uses Philox stream (seed, b); auxiliary streams start at 2**40",
            "status": "running",
            "files": [],
        }
        self._write_manifest()
        self.t0 = time.perf_counter()

    def _write_manifest(self):
        (self.path / "manifest.json").write_text(_dump(self.manifest), encoding="utf-8")

    def emit(self, name: str, text: str):
        target = self.path / name
        if target.exists():
            raise FileExistsError(f"{name} was already written in this run")
        target.write_text(text, encoding="utf-8")
        self.files.append(name)

    def finish(self, status: str, extra: dict):
        self.manifest.update(extra)
        self.manifest["status"] = status
        self.manifest["wall_time_s"] = round(time.perf_counter() - self.t0, 3)
        self.manifest["files"] = [{"name": n, "sha256": sha256_file(self.path / n)} for n in self.files]
        self._write_manifest()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hdiff", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", nargs="?", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--seed", type=int, help="override mc.seed")
    p.add_argument("--out", type=Path, help=f"output root (else ${OUT_ENV}, else output.directory)")
    p.add_argument("--threads", type=int, help="override mc.threads")
    p.add_argument("--replay", type=Path, help="re-run a recorded manifest and compare hashes")
    p.add_argument("--quiet", action="store_true")
    return p


def _override(cfg: ExperimentConfig, seed, threads) -> ExperimentConfig:
    data = cfg.canonical()
    if seed is not None:
        data["mc"]["seed"] = seed
    if threads is not None:
        data["mc"]["threads"] = threads
    return validate_config(data)


def _output_root(args, cfg: Optional[ExperimentConfig]) -> Path:
    if args.out is not None:
        return args.out
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    return Path(cfg.output.directory if cfg is not None else "runs")


def execute(subcommand: str, cfg: Optional[ExperimentConfig], root: Path, seed: int = 0,
            quiet: bool = False) -> tuple:
    """Run one subcommand; returns ``(exit_code, run_directory)``."""
    seed = cfg.seed if cfg is not None else seed
    run = RunDirectory(root, subcommand, cfg, seed)
    formats = set(cfg.output.formats) if cfg is not None else {"csv", "json"}

    def emit(name, text):
        if name.endswith(".csv") and "csv" not in formats:
            return
        run.emit(name, text)

    try:
        if subcommand == "selftest":
            checks, summary = run_selftest(cfg, emit, seed)
        else:
            checks, summary = RUNNERS[subcommand](cfg, emit)
    except Exception as exc:  # structured failure report, partial files kept
        run.finish("error", {"error": {"type": type(exc).__name__, "message": str(exc),
                                       "traceback": traceback.format_exc()}})
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2, run.path
    passed = all(c.passed for c in checks)
    report = {"subcommand": subcommand, "checks": checks_as_dicts(checks), "summary": summary,
              "verdict": "PASS" if passed else "FAIL"}
    if "json" in formats:
        run.emit("summary.json", _dump(report))
    run.finish("passed" if passed else "failed", {"verdict": report["verdict"]})
    if not quiet:
        for c in checks:
            print(c.line())
        print(f"{report['verdict']} ({len(checks)} checks) -> {run.path}")
    return (0 if passed else 1), run.path


def replay(manifest_path: Path, root: Path, quiet: bool = False) -> int:
    rec = json.loads(manifest_path.read_text(encoding="utf-8"))
    cfg = validate_config(rec["config"]) if rec["config"] is not None else None
    code, path = execute(rec["subcommand"], cfg, root, rec.get("seed", 0), quiet=True)
    new = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    old_hashes = {f["name"]: f["sha256"] for f in rec["files"]}
    new_hashes = {f["name"]: f["sha256"] for f in new["files"]}
    same = old_hashes == new_hashes
    if not quiet:
        for name in sorted(set(old_hashes) | set(new_hashes)):
            tag = "same" if old_hashes.get(name) == new_hashes.get(name) else "DIFFERENT"
            print(f"{tag} {name}")
        print(f"replay {'identical' if same else 'differs'} -> {path}")
    return code if same else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.replay is not None:
            return replay(args.replay, _output_root(args, None), args.quiet)
        if args.subcommand is None:
            print("error: a subcommand (or --replay) is required", file=sys.stderr)
            return 2
        cfg = None
        if args.config is not None:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                cfg = _override(load_config(args.config), args.seed, args.threads)
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
        elif args.subcommand != "selftest":
            print("error: --config is required for this subcommand", file=sys.stderr)
            return 2
        root = _output_root(args, cfg)
        seed = args.seed if args.seed is not None else 0
        return execute(args.subcommand, cfg, root, seed, args.quiet)[0]
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, HorizontalDiffusionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
