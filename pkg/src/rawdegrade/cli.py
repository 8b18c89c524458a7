"""Command-line interface.

Exit statuses: 0 success, 2 bad arguments, 3 validation error, 4 I/O error,
5 partial success (some inputs skipped or unmatched).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset_io import (
    BuildError,
    DatasetManifest,
    build_dataset,
    load_mosaic,
    load_raw,
    to_mosaic,
    write_container,
    write_ppm,
)
from .degrade import DegradationConfig, degrade_batch, round_half_away
from .metrics import evaluate_dirs
from .noise import estimate_profile, format_profile_line, read_registry
from .raw_core import demosaic_bilinear, normalize, pack_rggb

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4
EXIT_PARTIAL = 5

DEFAULTS = DegradationConfig()
INPUT_SUFFIXES = (".rawir", ".pgm")

log = logging.getLogger("rawdegrade")


class CliError(Exception):
    def __init__(self, message: str, status: int = EXIT_VALIDATION):
        super().__init__(message)
        self.status = status


def _add_degrade_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with a full or partial DegradationConfig")
    p.add_argument("--level", type=int, choices=(1, 2), help=f"degradation level (default: {DEFAULTS.level})")
    p.add_argument("--seed", type=int, help=f"master seed, unsigned 64-bit (default: {DEFAULTS.master_seed})")
    p.add_argument(
        "--exposure-prob", type=float, help=f"probability of exposure dimming (default: {DEFAULTS.exposure_prob})"
    )
    p.add_argument("--quant-prob", type=float, help=f"probability of requantization (default: {DEFAULTS.quant_prob})")
    p.add_argument(
        "--noise-first-prob",
        type=float,
        help=f"probability noise is injected before blur (default: {DEFAULTS.noise_injection_order_prob})",
    )
    p.add_argument("--noise-registry", type=Path, help="profile file: '<label> <lambda_read> <lambda_shot>' lines")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default: 1)")
    p.add_argument("--overwrite", action="store_true", help="replace existing outputs (default: off)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rawdegrade", description="RAW degradation synthesis and evaluation")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v prints parameters, -vv debug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="degrade RAW files")
    p.add_argument("input", type=Path, help="RawContainer/PGM file or directory")
    p.add_argument("-o", "--output", type=Path, required=True, help="output directory")
    p.add_argument("--black-level", type=int, help="black level for PGM inputs (default: 0)")
    p.add_argument("--white-level", type=int, help="white level for PGM inputs (default: maxval)")
    _add_degrade_flags(p)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("dataset", help="dataset operations")
    dsub = p.add_subparsers(dest="dataset_command", required=True)
    b = dsub.add_parser("build", help="generate degraded/clean patch pairs from a manifest")
    b.add_argument("manifest", type=Path)
    b.add_argument("-o", "--output", type=Path, required=True, help="output directory")
    b.add_argument("--patch-size", type=int, default=248, help="patch side in packed pixels (default: 248)")
    b.add_argument("--stride", type=int, help="patch stride in packed pixels (default: patch size)")
    _add_degrade_flags(b)
    b.set_defaults(func=cmd_dataset_build)

    p = sub.add_parser("bench", help="RAW-domain PSNR/SSIM of predictions vs ground truth")
    p.add_argument("--pred-dir", type=Path, required=True)
    p.add_argument("--gt-dir", type=Path, required=True)
    p.add_argument("-o", "--output", type=Path, help="write <output>.tsv and <output>.json (default: print only)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("preview", help="bilinear-demosaiced 8-bit PPM preview")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True, help="PPM path")
    p.add_argument("--gamma", action="store_true", help="apply 1/2.2 display gamma (default: linear)")
    p.add_argument("--overwrite", action="store_true", help="replace an existing output (default: off)")
    p.set_defaults(func=cmd_preview)

    p = sub.add_parser("estimate-noise", help="fit (lambda_read, lambda_shot) from flat-field captures")
    p.add_argument("flats", type=Path, nargs="+", help="one flat capture per intensity level")
    p.add_argument("--label", default="estimated", help="profile label (default: estimated)")
    p.add_argument("-o", "--output", type=Path, help="registry file to write (default: stdout only)")
    p.add_argument("--overwrite", action="store_true", help="replace an existing output (default: off)")
    p.set_defaults(func=cmd_estimate_noise)
    return parser


def resolve_config(args) -> DegradationConfig:
    """Built-in defaults < config file < command-line flags."""
    cfg = DegradationConfig()
    if args.config is not None:
        try:
            d = json.loads(args.config.read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"{args.config}: {exc.strerror}", EXIT_IO) from None
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.config}: invalid JSON ({exc})") from None
        merged = cfg.to_dict()
        merged.update(d)
        cfg = DegradationConfig.from_dict(merged, base_dir=args.config.parent)
    overrides = {
        "level": args.level,
        "master_seed": args.seed,
        "exposure_prob": args.exposure_prob,
        "quant_prob": args.quant_prob,
        "noise_injection_order_prob": args.noise_first_prob,
    }
    if args.noise_registry is not None:
        overrides["noise_registry"] = read_registry(args.noise_registry)
    return cfg.with_overrides(**overrides)


def _inputs(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() in INPUT_SUFFIXES)
        if not files:
            raise CliError(f"{path}: no .rawir or .pgm files", EXIT_VALIDATION)
        return files
    if not path.exists():
        raise CliError(f"{path}: no such file", EXIT_IO)
    return [path]


def _announce(cfg: DegradationConfig, verbose: int) -> None:
    print(f"master seed: {cfg.master_seed}", file=sys.stderr)
    if verbose >= 1:
        print("config: " + json.dumps(cfg.to_dict(), sort_keys=True), file=sys.stderr)


def cmd_degrade(args) -> int:
    cfg = resolve_config(args)
    _announce(cfg, args.verbose)
    files = _inputs(args.input)
    args.output.mkdir(parents=True, exist_ok=True)
    mosaics = []
    for f in files:
        try:
            mosaics.append(load_mosaic(f, args.black_level, args.white_level))
        except OSError as exc:
            raise CliError(f"{f}: {exc.strerror or exc}", EXIT_IO) from None
        except ValueError as exc:
            raise CliError(str(exc) if str(f) in str(exc) else f"{f}: {exc}") from None
    for f in files:
        for suffix in (".rawir", ".json"):
            out = args.output / (f.stem + suffix)
            if out.exists() and not args.overwrite:
                raise CliError(f"{out}: already exists (use --overwrite)", EXIT_IO)
    raws = [pack_rggb(normalize(m)) for m in mosaics]
    results = degrade_batch(raws, cfg, threads=args.threads)
    for f, m, (deg, record) in zip(files, mosaics, results):
        write_container(to_mosaic(deg, m.black_level, m.white_level, m.sensor_id), args.output / (f.stem + ".rawir"))
        (args.output / (f.stem + ".json")).write_text(record.to_json(), encoding="utf-8")
        if args.verbose >= 1:
            print(f"{f.name}: seed={record.per_image_seed} " + " -> ".join(record.realized()))
    return EXIT_OK


def cmd_dataset_build(args) -> int:
    cfg = resolve_config(args)
    _announce(cfg, args.verbose)
    try:
        manifest = DatasetManifest.read(args.manifest)
    except OSError as exc:
        raise CliError(f"{args.manifest}: {exc.strerror or exc}", EXIT_IO) from None
    try:
        summary = build_dataset(
            manifest,
            cfg,
            args.output,
            patch_size=args.patch_size,
            stride=args.stride,
            threads=args.threads,
            overwrite=args.overwrite,
        )
    except BuildError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    print(f"patches: {summary.n_patches}")
    for split, n in sorted(summary.per_split.items()):
        print(f"  split {split}: {n}")
    for device, n in sorted(summary.per_device.items()):
        print(f"  device {device}: {n}")
    for msg in summary.skipped:
        print(f"skipped: {msg}", file=sys.stderr)
    return EXIT_OK if summary.ok else EXIT_PARTIAL


def cmd_bench(args) -> int:
    for d in (args.pred_dir, args.gt_dir):
        if not d.is_dir():
            raise CliError(f"{d}: not a directory", EXIT_IO)
    report = evaluate_dirs(args.pred_dir, args.gt_dir, load_raw)
    if report.n_evaluated == 0:
        for msg in report.skipped:
            print(f"unmatched: {msg}", file=sys.stderr)
        raise CliError("no pairs to evaluate", EXIT_VALIDATION)
    sys.stdout.write(report.to_tsv())
    print(f"mean PSNR {report.mean_psnr:.2f} dB, mean SSIM {report.mean_ssim:.4f}")
    if args.output is not None:
        args.output.parent.mkdir(parents=True, exist_ok=True)
        Path(str(args.output) + ".tsv").write_text(report.to_tsv(), encoding="utf-8")
        Path(str(args.output) + ".json").write_text(report.to_json(), encoding="utf-8")
    for msg in report.skipped:
        print(f"unmatched: {msg}", file=sys.stderr)
    return EXIT_OK if not report.skipped else EXIT_PARTIAL


def preview_pixels(rgb: np.ndarray, gamma: bool) -> np.ndarray:
    x = np.clip(rgb, 0.0, 1.0)
    if gamma:
        x = x ** (1 / 2.2)
    return round_half_away(x * 255.0).astype(np.uint8)


def cmd_preview(args) -> int:
    if args.output.exists() and not args.overwrite:
        raise CliError(f"{args.output}: already exists (use --overwrite)", EXIT_IO)
    if not args.input.exists():
        raise CliError(f"{args.input}: no such file", EXIT_IO)
    raw = load_raw(args.input)
    write_ppm(preview_pixels(demosaic_bilinear(raw).rgb, args.gamma), args.output)
    return EXIT_OK


def cmd_estimate_noise(args) -> int:
    if len(args.flats) < 3:
        raise CliError(f"insufficient data: need flats at >= 3 intensity levels, got {len(args.flats)}")
    if args.output is not None and args.output.exists() and not args.overwrite:
        raise CliError(f"{args.output}: already exists (use --overwrite)", EXIT_IO)
    means, variances, counts = [], [], []
    for f in args.flats:
        if not f.exists():
            raise CliError(f"{f}: no such file", EXIT_IO)
        raw = load_raw(f)
        for plane in raw.planes:
            means.append(plane.mean())
            # a constant plane can pick up ~1e-32 of rounding error in var()
            variances.append(0.0 if plane.min() == plane.max() else plane.var(ddof=1))
            counts.append(plane.size)
    fit = estimate_profile(means, variances, weights=counts, label=args.label)
    p = fit.profile
    if max(variances) == 0:
        print("warning: flats are noise-free; fitted profile is clean", file=sys.stderr)
    elif fit.clamped:
        print("warning: fit gave negative coefficients, clamped to zero", file=sys.stderr)
    print(f"lambda_read={p.lambda_read:.6g} lambda_shot={p.lambda_shot:.6g} (rms residual {fit.rms_residual:.3g})")
    line = format_profile_line(p)
    print(line)
    if args.output is not None:
        args.output.write_text("# label lambda_read lambda_shot\n" + line + "\n", encoding="utf-8")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.status
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
