"""Command-line entry point: ``videnn <subcommand> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
Every subcommand that takes ``--out`` writes ``config.json`` there.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import data, io, metrics, networks, training
from .gradcheck import TOLERANCE, run_gradcheck
from .networks import WeightFileError
from .noise import AwgnParams, NoiseMix, NoiseSpec, SensorNoiseParams, apply_noise

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "VIDENN_THREADS"
CONFIG_NAME = "config.json"

log = logging.getLogger("videnn")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers ----------------------------------------------------------------------------

def _write_config(out_dir: Path, args) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = {k: (str(v) if isinstance(v, Path) else v)
           for k, v in sorted(vars(args).items()) if k != "func"}
    (out_dir / CONFIG_NAME).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _list(directory) -> list:
    try:
        return io.list_pngs(directory)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc


def _frames(directory) -> tuple:
    paths = _list(directory)
    if not paths:
        raise DataError(f"no PNG frames in {directory}")
    try:
        return paths, [io.read_png(p) for p in paths]
    except OSError as exc:
        raise DataError(str(exc)) from exc


def _load_weights(path, what: str):
    if path is None:
        raise UsageError(f"{what} weights are required (--{what}-weights)")
    try:
        return networks.load_weights(path)
    except FileNotFoundError as exc:
        raise DataError(f"{what} weights not found: {path}") from exc
    except WeightFileError as exc:
        raise DataError(f"bad {what} weights file {path}: {exc}") from exc


def _noise_spec(args) -> NoiseSpec:
    if args.sensor:
        if args.ag is None or args.dg is None:
            raise UsageError("--sensor needs --ag and --dg")
        params = SensorNoiseParams(args.ag, args.dg)
    else:
        if args.awgn_sigma is None:
            raise UsageError("give --awgn-sigma or --sensor --ag A --dg D")
        params = AwgnParams(args.awgn_sigma)
    return NoiseSpec(params, args.seed)


def _lr_segments(text: str):
    try:
        segs = [(int(n), float(lr)) for n, lr in (part.split(":") for part in text.split(","))]
    except ValueError as exc:
        raise UsageError(f"bad --lr {text!r}; expected EPOCHS:LR[,EPOCHS:LR...]") from exc
    return segs


def _mix(args) -> NoiseMix:
    return NoiseMix(p_awgn=args.p_awgn, sigma_range=tuple(args.sigma_range),
                    ag_range=tuple(args.ag_range), dg_range=tuple(args.dg_range))


# -- subcommands --------------------------------------------------------------------------

def cmd_synth_noise(args) -> int:
    spec = _noise_spec(args)
    paths, frames = _frames(args.input)
    out = Path(args.out)
    _write_config(out, args)
    records = []
    for k, (p, f) in enumerate(zip(paths, frames)):
        io.write_png(out / p.name, apply_noise(f, spec, seed=(spec.seed, k)))
        records.append(data.ManifestRecord(p.name, 0, 0, 0, spec.encode(), spec.seed))
    # frame k of the manifest is keyed by (seed, k)
    data.DatasetManifest(records, "frames", "all", 0).write(out / "manifest.tsv")
    print(f"wrote {len(frames)} noisy frames to {out}")
    return EXIT_OK


def _video_dirs(root) -> list:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"not a directory: {root}")
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    return subdirs or [root]


def _read_videos(dirs) -> list:
    videos = []
    for d in dirs:
        try:
            videos.append((d.name, io.read_frames(d)))
        except OSError as exc:
            raise DataError(str(exc)) from exc
    return videos


def _write_split(out: Path, name: str, manifest, pairs) -> None:
    manifest.write(out / f"{name}.tsv")
    data.ResidualDataset.from_pairs(pairs).save(out / f"{name}.npz")


def cmd_build_dataset(args) -> int:
    out = Path(args.out)
    mix = _mix(args)
    if args.kind == "spatial":
        paths, images = _frames(args.input)
        units = [(p.name, im) for p, im in zip(paths, images)]
    else:
        spatial = _load_spatial_for_temporal(args)
        units = _read_videos(_video_dirs(args.input))
    train_units, test_units = data.split_train_test(units, args.seed, args.train_fraction)
    _write_config(out, args)
    for split, chosen, count in (("train", train_units, args.count),
                                 ("test", test_units, args.test_count)):
        if not chosen or not count:
            continue
        if args.kind == "spatial":
            manifest, pairs = data.build_spatial_dataset(chosen, mix, count, args.seed,
                                                         args.patch_size, split)
        else:
            manifest, pairs = data.build_temporal_dataset(chosen, spatial, mix, count, args.seed,
                                                          args.patch_size, args.window, split)
        _write_split(out, split, manifest, pairs)
        print(f"{split}: {len(pairs)} {args.kind} patches from {len(chosen)} source(s)")
    return EXIT_OK


def _load_spatial_for_temporal(args):
    if not args.spatial_weights:
        raise UsageError("temporal stage needs trained spatial weights (--spatial-weights): "
                         "the pipeline order is train-spatial first, then build/train temporal "
                         "on spatially denoised frames")
    return _load_weights(args.spatial_weights, "spatial")


def _schedule(args, default):
    kw = {"shuffle_seed": args.seed, "mean_loss": args.mean_loss, "grad_clip": args.grad_clip,
          "checkpoint_every": args.checkpoint_every, "max_steps": args.max_steps}
    if args.batch_size is not None:
        kw["batch_size"] = args.batch_size
    if args.lr is not None:
        segs = _lr_segments(args.lr)
        kw["lr_segments"] = segs
        kw["epochs"] = sum(n for n, _ in segs)
    elif args.epochs is not None:
        kw["epochs"] = args.epochs
        kw["lr_segments"] = [(args.epochs, default().lr_segments[0][1])]
    try:
        return default(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _net_overrides(args) -> dict:
    return {k: v for k, v in (("depth", args.depth), ("first_width", args.first_width),
                              ("mid_width", args.mid_width)) if v is not None}


def _train_common(args, spec, dataset, default_schedule) -> int:
    out = Path(args.out)
    schedule = _schedule(args, default_schedule)
    _write_config(out, args)
    ckpt = out / "checkpoint.ckpt"
    try:
        if args.resume:
            weights, trace = training.resume(args.resume, dataset, schedule, args.deterministic)
        else:
            weights = networks.build_network(spec, args.seed)
            if args.zero_last_layer:
                weights = weights.zero_last_layer()
            weights, trace = training.train(weights, dataset, schedule,
                                            ckpt if schedule.checkpoint_every else None,
                                            args.deterministic)
    except training.TrainingDivergedError as exc:
        raise NumericalError(str(exc)) from exc
    except training.CheckpointError as exc:
        raise DataError(str(exc)) from exc
    networks.save_weights(weights, out / "weights.vdnn")
    trace.write_csv(out / "loss.csv")
    last = trace.losses[-1] if trace.losses else math.nan
    print(f"trained {len(trace.steps)} steps; final loss {last:.6g}; weights in {out}")
    return EXIT_OK


def _load_dataset(path, channels: int):
    try:
        ds = data.ResidualDataset.load(path)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load dataset {path}: {exc}") from exc
    if ds.channels != channels:
        raise DataError(f"dataset {path} has {ds.channels} input channels, expected {channels}")
    return ds


def cmd_train_spatial(args) -> int:
    spec = networks.spatial_spec(**_net_overrides(args))
    if args.dataset:
        ds = _load_dataset(args.dataset, 3)
    elif args.images:
        paths, images = _frames(args.images)
        _, pairs = data.build_spatial_dataset([(p.name, im) for p, im in zip(paths, images)],
                                              _mix(args), args.count, args.seed, args.patch_size)
        ds = data.ResidualDataset.from_pairs(pairs)
    else:
        raise UsageError("give --dataset NPZ or --images DIR")
    return _train_common(args, spec, ds, training.spatial_schedule)


def cmd_train_temporal(args) -> int:
    spatial = _load_spatial_for_temporal(args)
    spec = networks.temporal_spec(args.window, **_net_overrides(args))
    if args.dataset:
        ds = _load_dataset(args.dataset, spec.in_channels)
    elif args.videos:
        _, pairs = data.build_temporal_dataset(_read_videos(_video_dirs(args.videos)), spatial,
                                               _mix(args), args.count, args.seed,
                                               args.patch_size, args.window)
        ds = data.ResidualDataset.from_pairs(pairs)
    else:
        raise UsageError("give --dataset NPZ or --videos DIR")
    return _train_common(args, spec, ds, training.temporal_schedule)


def cmd_denoise(args) -> int:
    paths, frames = _frames(args.input)
    spatial = temporal = None
    if args.mode in ("spatial", "full", "temporal-spatial"):
        spatial = _load_weights(args.spatial_weights, "spatial")
    if args.mode in ("temporal", "full", "temporal-spatial"):
        temporal = _load_weights(args.temporal_weights, "temporal")
    if spatial is not None and spatial.spec.in_channels != 3:
        raise UsageError("--spatial-weights holds a temporal network")
    if temporal is not None and temporal.spec.in_channels == 3:
        raise UsageError("--temporal-weights holds a single-frame network")
    try:
        out_frames = networks.denoise_video(frames, args.mode, spatial, temporal, args.window)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    _write_config(out, args)
    io.write_frames(out, out_frames, [p.name for p in paths])
    print(f"{args.mode}: wrote {len(out_frames)} frames to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ref_paths, test_paths = _list(args.reference), _list(args.test)
    ref_names = {p.name for p in ref_paths}
    test_names = {p.name for p in test_paths}
    if ref_names != test_names:
        missing = sorted(ref_names - test_names)
        extra = sorted(test_names - ref_names)
        raise DataError(f"unmatched frames; missing from test: {missing}; "
                        f"missing from reference: {extra}")
    if not ref_paths:
        raise DataError(f"no PNG frames in {args.reference}")
    try:
        ref = [io.read_png(p) for p in ref_paths]
        test = [io.read_png(Path(args.test) / p.name) for p in ref_paths]
        report = metrics.evaluate_video(ref, test)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    _write_config(out, args)
    report.write_csv(out / "metrics.csv")
    print(f"{report.frame_count} frames: mean PSNR {report.mean_psnr:.4f} dB, "
          f"mean SSIM {report.mean_ssim:.6f}"
          + (f" ({report.n_infinite} identical frame(s) left out of the PSNR mean)"
             if report.n_infinite else ""))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(args.seed)
    failed = [k for k, v in results.items() if not v < args.tolerance]
    for k, v in results.items():
        print(f"{k:28s} {v:.3e}  {'FAIL' if k in failed else 'ok'}")
    if args.out:
        _write_config(Path(args.out), args)
        (Path(args.out) / "gradcheck.json").write_text(json.dumps(results, indent=2) + "\n")
    if failed:
        raise NumericalError(f"gradient check failed for: {', '.join(failed)}")
    return EXIT_OK


def _parse_filters(text, count):
    if text is None:
        return list(range(1, count + 1))
    try:
        picked = [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --filters {text!r}") from exc
    bad = [f for f in picked if not 1 <= f <= count]
    if bad:
        raise UsageError(f"filters {bad} out of range 1..{count}")
    return picked


def cmd_dump_filters(args) -> int:
    weights = _load_weights(args.weights, "network")
    window = weights.spec.window
    if Path(args.input).is_dir():
        _, frames = _frames(args.input)
    else:
        try:
            frames = [io.read_png(args.input)]
        except OSError as exc:
            raise DataError(str(exc)) from exc
    if len(frames) != window:
        raise DataError(f"network takes {window} frame(s) but --input holds {len(frames)}")
    try:
        maps = networks.dump_first_layer_activations(weights, networks.stack_window(frames))
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    picked = _parse_filters(args.filters, len(maps))
    out = Path(args.out)
    _write_config(out, args)
    for f in picked:
        io.write_png(out / f"filter_{f:03d}.png", maps[f - 1])
    print(f"wrote {len(picked)} filter maps to {out}")
    return EXIT_OK


def cmd_probe_inconsistency(args) -> int:
    temporal = _load_weights(args.temporal_weights, "temporal")
    spatial = _load_weights(args.spatial_weights, "spatial") if args.spatial_weights else None
    _, original = _frames(args.frames)
    _, edited = _frames(args.edited)
    window = temporal.spec.window
    if len(original) != window or len(edited) != window:
        raise DataError(f"need exactly {window} frames in --frames and --edited "
                        f"(got {len(original)} and {len(edited)})")
    try:
        reference = io.read_png(args.reference)
        if spatial is not None:
            original = [networks.denoise_frame(spatial, f) for f in original]
            edited = [networks.denoise_frame(spatial, f) for f in edited]
        out_a = networks.denoise_window(temporal, original)
        out_b = networks.denoise_window(temporal, edited)
        p_a, p_b = metrics.psnr(reference, out_a), metrics.psnr(reference, out_b)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    report = {"psnr_original_db": p_a, "psnr_edited_db": p_b,
              "delta_db": 0.0 if p_a == p_b else p_b - p_a,
              "max_abs_pixel_difference": float(np.abs(out_a - out_b).max())}
    out = Path(args.out)
    _write_config(out, args)
    (out / "probe.json").write_text(json.dumps(report, indent=2) + "\n")
    io.write_png(out / "center_original.png", out_a)
    io.write_png(out / "center_edited.png", out_b)
    print(f"original {p_a:.4f} dB, edited {p_b:.4f} dB, delta {report['delta_db']:+.4f} dB")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------

def _add_common(p, out_required=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true",
                   help="single BLAS thread; byte-reproducible output")
    p.add_argument("--threads", type=int, default=None,
                   help=f"BLAS threads (default: ${THREADS_ENV} or library default)")
    p.add_argument("--out", type=Path, required=out_required)


def _add_mix(p):
    p.add_argument("--p-awgn", type=float, default=0.5)
    p.add_argument("--sigma-range", type=float, nargs=2, default=[0.0, 55.0])
    p.add_argument("--ag-range", type=float, nargs=2, default=[0.0, 64.0])
    p.add_argument("--dg-range", type=float, nargs=2, default=[0.0, 32.0])


def _add_train(p):
    _add_mix(p)
    p.add_argument("--dataset", type=Path, help="ResidualDataset .npz from build-dataset")
    p.add_argument("--count", type=int, default=1000, help="patches when building inline")
    p.add_argument("--patch-size", type=int, default=data.PATCH_SIZE)
    p.add_argument("--depth", type=int)
    p.add_argument("--first-width", type=int)
    p.add_argument("--mid-width", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", help="EPOCHS:LR[,EPOCHS:LR...]; overrides --epochs")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", type=Path, help="continue from a checkpoint")
    p.add_argument("--mean-loss", action="store_true")
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--zero-last-layer", action="store_true",
                   help="start from a zero residual (identity denoiser)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="videnn", description="Blind video denoising toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-noise", help="degrade a frame directory")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--awgn-sigma", type=float)
    p.add_argument("--sensor", action="store_true")
    p.add_argument("--ag", type=float)
    p.add_argument("--dg", type=float)
    p.set_defaults(func=cmd_synth_noise)

    p = sub.add_parser("build-dataset", help="patch manifests and datasets")
    _add_common(p)
    _add_mix(p)
    p.add_argument("--kind", choices=("spatial", "temporal"), default="spatial")
    p.add_argument("--input", type=Path, required=True,
                   help="image dir (spatial) or dir of video frame dirs (temporal)")
    p.add_argument("--spatial-weights", type=Path)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--test-count", type=int, default=0)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--patch-size", type=int, default=data.PATCH_SIZE)
    p.add_argument("--window", type=int, default=3)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train-spatial", help="train the single-frame network")
    _add_common(p)
    _add_train(p)
    p.add_argument("--images", type=Path, help="build the dataset inline from clean images")
    p.set_defaults(func=cmd_train_spatial)

    p = sub.add_parser("train-temporal", help="train the multi-frame network")
    _add_common(p)
    _add_train(p)
    p.add_argument("--spatial-weights", type=Path)
    p.add_argument("--videos", type=Path, help="build the dataset inline from clean videos")
    p.add_argument("--window", type=int, default=3)
    p.set_defaults(func=cmd_train_temporal)

    p = sub.add_parser("denoise", help="denoise a frame directory")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--mode", choices=networks.DENOISE_MODES, default="full")
    p.add_argument("--spatial-weights", type=Path)
    p.add_argument("--temporal-weights", type=Path)
    p.add_argument("--window", type=int, default=3, help="window of the average mode")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("evaluate", help="PSNR/SSIM of a frame directory against a reference")
    _add_common(p)
    p.add_argument("--reference", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    _add_common(p, out_required=False)
    p.add_argument("--tolerance", type=float, default=TOLERANCE)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dump-filters", help="first-layer activation maps as PNGs")
    _add_common(p)
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True,
                   help="a PNG (single-frame net) or a dir holding one window of frames")
    p.add_argument("--filters", help="comma-separated 1-based filter numbers, e.g. 59,90")
    p.set_defaults(func=cmd_dump_filters)

    p = sub.add_parser("probe-inconsistency",
                       help="compare a center-frame result with original vs edited neighbors")
    _add_common(p)
    p.add_argument("--temporal-weights", type=Path, required=True)
    p.add_argument("--spatial-weights", type=Path,
                   help="spatially denoise the window first (noisy inputs)")
    p.add_argument("--frames", type=Path, required=True, help="dir with the original window")
    p.add_argument("--edited", type=Path, required=True, help="dir with the edited window")
    p.add_argument("--reference", type=Path, required=True, help="clean center frame PNG")
    p.set_defaults(func=cmd_probe_inconsistency)
    return parser


def _thread_limit(args):
    if args.deterministic:
        return threadpool_limits(limits=1)
    n = args.threads
    if n is None and os.environ.get(THREADS_ENV):
        try:
            n = int(os.environ[THREADS_ENV])
        except ValueError as exc:
            raise UsageError(f"${THREADS_ENV} must be an integer") from exc
    return threadpool_limits(limits=n) if n else contextlib.nullcontext()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args):
            return args.func(args)
    except UsageError as exc:
        print(f"videnn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"videnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"videnn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"videnn: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
