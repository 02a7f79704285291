"""Command-line interface.

Exit codes: 0 success, 2 usage or I/O error, 3 data-contract violation
(mismatched grids, wrong field level), 4 numerical failure.

Config precedence for ``register``: built-in defaults, then the JSON file
given with ``--config``, then individual command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .config import RegistrationConfig
from .exceptions import DimensionMismatchError, FormatError, NonFiniteError
from .gradcheck import THRESHOLDS, check_term
from .metrics import evaluate_case
from .nifti_io import as_labels, read_any, write_any
from .optimizer import register_pair
from .resample import warp, warp_nearest
from .synth import PhantomSpec, make_pair, make_smooth_field
from .validation import check_full_field
from .volume_core import DisplacementField, Volume

logger = logging.getLogger("hybridreg")

EXIT_OK, EXIT_IO, EXIT_CONTRACT, EXIT_NUMERIC = 0, 2, 3, 4
MIN_SYNTH_DIM = 8


class UsageError(Exception):
    pass


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _sibling(path, tag):
    p = Path(path)
    name = p.name
    for ext in (".nii", ".json", ".bin"):
        if name.endswith(ext):
            return p.with_name(name[: -len(ext)] + tag + ext)
    return p.with_name(name + tag)


def _stem(path):
    p = Path(path)
    return p.with_name(p.name.split(".")[0])


def _read_volume(path) -> Volume:
    v = read_any(path)
    if isinstance(v, DisplacementField):
        raise FormatError(f"{path} holds a displacement field, expected an image")
    return v


def _read_field(path) -> DisplacementField:
    f = read_any(path)
    if not isinstance(f, DisplacementField):
        raise FormatError(f"{path} holds an image, expected a displacement field")
    return f


def _threads(args):
    n = args.threads or os.environ.get("HYBRIDREG_THREADS")
    return int(n) if n else None


def _build_config(args) -> RegistrationConfig:
    cfg = RegistrationConfig.from_file(args.config) if args.config else RegistrationConfig()
    overrides = {}
    if args.reg_lambda is not None:
        overrides["lambda_"] = args.reg_lambda
    if args.steps is not None:
        steps = tuple(args.steps)
        overrides["steps_per_level"] = steps[0] if len(steps) == 1 else steps
    if args.learning_rate is not None:
        overrides["learning_rate"] = args.learning_rate
    if args.levels is not None:
        overrides["pyramid_levels"] = args.levels
        if args.steps is None:
            overrides["steps_per_level"] = cfg.steps_per_level[-1]
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.terms is not None:
        overrides["terms"] = tuple(args.terms)
    return replace(cfg, **overrides) if overrides else cfg


def cmd_register(args) -> int:
    timing = {}
    t0 = time.perf_counter()
    cfg = _build_config(args)
    moving = _read_volume(args.moving)
    fixed = _read_volume(args.fixed)
    ml = as_labels(read_any(args.moving_labels)) if args.moving_labels else None
    fl = as_labels(read_any(args.fixed_labels)) if args.fixed_labels else None
    if "boundary" in cfg.terms and (ml is None or fl is None):
        logger.warning("boundary term requested but labels are missing; dropping it")
        cfg = cfg.without("boundary")
        ml = fl = None
    timing["read"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    half, full, history = register_pair(moving, fixed, ml, fl, cfg)
    timing["register"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    out_field = Path(args.out_field)
    out_half = _sibling(out_field, "_half")
    out_warped = Path(args.out_warped) if args.out_warped else _sibling(out_field, "_warped")
    stem = _stem(out_field)
    out_history = stem.with_name(stem.name + "_history.csv")
    out_manifest = stem.with_name(stem.name + "_manifest.json")
    out_field.parent.mkdir(parents=True, exist_ok=True)
    out_warped.parent.mkdir(parents=True, exist_ok=True)
    write_any(full, out_field)
    write_any(half, out_half)
    write_any(warp(moving, full), out_warped)
    with open(out_history, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "level", "intensity", "statistic", "boundary",
                         "regularizer", "total"])
        for h in history:
            writer.writerow([h.step, h.level] + [repr(x) for x in h.report.as_row()])
    timing["write"] = time.perf_counter() - t0

    inputs = {k: getattr(args, k) for k in ("moving", "fixed", "moving_labels", "fixed_labels")
              if getattr(args, k)}
    manifest = {
        "tool": "hybridreg",
        "version": __version__,
        "command": "register",
        "config": cfg.to_dict(),
        "threads": _threads(args),
        "inputs": {k: {"path": str(p), "sha256": sha256(p)} for k, p in inputs.items()},
        "outputs": {"field_full": str(out_field), "field_half": str(out_half),
                    "warped": str(out_warped), "history": str(out_history)},
        "timing_s": timing,
        "final_total": history[-1].best_total if history else None,
    }
    out_manifest.write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {out_field} ({len(history)} steps)")
    return EXIT_OK


def cmd_warp(args) -> int:
    f = _read_field(args.field)
    if args.labels:
        labels = as_labels(read_any(args.labels))
        out = warp_nearest(labels, check_full_field(f, labels.dims))
    else:
        image = _read_volume(args.image)
        out = warp(image, check_full_field(f, image.dims))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_any(out, args.out)
    return EXIT_OK


def cmd_metrics(args) -> int:
    warped = as_labels(read_any(args.warped_labels))
    fixed = as_labels(read_any(args.fixed_labels))
    psi = None
    if args.field:
        psi = check_full_field(_read_field(args.field), fixed.dims)
    report = evaluate_case(warped, fixed, psi, percentile=args.hd_percentile)
    report.save(args.out_report)
    if args.table:
        report.write_table(args.table)
    print(f"dice_mean={report.dice_mean:.4f} hd_mean={report.hd_mean:.4f}"
          + (f" sdlogj={report.sdlogj:.4f}" if report.sdlogj is not None else ""))
    return EXIT_OK


SYNTH_DEFAULTS = {"dims": [48, 48, 48], "num_blobs": 5, "noise_sigma": 0.0, "seed": 0,
                  "max_magnitude": 3.0, "smoothness_sigma": 6.0}


def cmd_synth(args) -> int:
    spec = dict(SYNTH_DEFAULTS)
    if args.spec:
        with open(args.spec) as fh:
            spec.update(json.load(fh))
    if args.seed is not None:
        spec["seed"] = args.seed
    if any(int(d) < MIN_SYNTH_DIM for d in spec["dims"]):
        raise UsageError(f"synthetic dims must be at least {MIN_SYNTH_DIM} per axis, "
                         f"got {spec['dims']}")
    max_mag = spec.pop("max_magnitude")
    sigma = spec.pop("smoothness_sigma")
    phantom = PhantomSpec(**spec)
    gt = make_smooth_field(phantom.dims, max_mag, sigma, seed=phantom.seed)
    moving, fixed, ml, fl = make_pair(phantom, gt)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = ".json" if args.format == "raw" else ".nii"
    for name, obj in [("moving", moving), ("fixed", fixed), ("moving_labels", ml),
                      ("fixed_labels", fl), ("gt_field", gt.field)]:
        write_any(obj, out / (name + ext))
    print(f"wrote synthetic pair to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    err = check_term(args.term, args.size, args.seed)
    limit = THRESHOLDS[args.term]
    ok = err < limit
    print(f"{args.term}: max relative error {err:.3e} (threshold {limit:.0e}) "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridreg",
        description="Deformable registration with a hybrid SSD + MI + boundary loss. "
                    "Reads uncompressed NIfTI-1 (.nii) or raw+JSON sidecar files; "
                    "decompress .nii.gz first.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=None,
                        help="cap on numerical worker threads (env HYBRIDREG_THREADS)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    # --threads is also accepted after the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help=argparse.SUPPRESS)

    p = sub.add_parser("register", parents=[common], help="estimate a displacement field")
    p.add_argument("--moving", required=True)
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving-labels")
    p.add_argument("--fixed-labels")
    p.add_argument("--config", help="JSON file with RegistrationConfig fields")
    p.add_argument("--out-field", required=True, help="full-resolution field output")
    p.add_argument("--out-warped")
    p.add_argument("--lambda", dest="reg_lambda", type=float)
    p.add_argument("--steps", type=int, nargs="+", help="steps per level, coarse to fine")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--levels", type=int)
    p.add_argument("--terms", nargs="+", choices=["intensity", "statistic", "boundary"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("warp", parents=[common], help="apply a full-resolution field")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image")
    src.add_argument("--labels")
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("metrics", parents=[common], help="Dice, Hausdorff and SDlogJ report")
    p.add_argument("--warped-labels", required=True)
    p.add_argument("--fixed-labels", required=True)
    p.add_argument("--field")
    p.add_argument("--hd-percentile", type=float, default=95.0)
    p.add_argument("--out-report", required=True)
    p.add_argument("--table", help="optional per-label CSV table")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic phantom pair")
    p.add_argument("--spec", help="JSON phantom/field description")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=["nii", "raw"], default="nii")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", parents=[common], help="compare analytic and numeric loss gradients")
    p.add_argument("--term", required=True, choices=sorted(THRESHOLDS))
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    threads = _threads(args)
    limits = threadpool_limits(threads) if threads else nullcontext()
    try:
        with limits:
            return args.func(args)
    except DimensionMismatchError as exc:
        logger.error("%s", exc)
        return EXIT_CONTRACT
    except NonFiniteError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (OSError, FormatError, UsageError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
