"""``demsr`` command line: synth, prepare, train, infer, upsample, eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import raster_io
from .metrics import DEFAULT_CLIP, error_raster, evaluate_region, format_table, write_report
from .network import CheckpointError, ConfigError, ModelConfig, build, load_checkpoint
from .raster_io import RasterFormatError, read_tile, write_tile
from .resample import build_manifest, load_manifest, upsample
from .terrain_synth import SynthSpec, crop_tiles, diamond_square
from .tiling import default_overlap, plan_patches, super_resolve
from .training import NumericalAbort, TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

RUN_CONFIG_KEYS = {"model", "train", "train_manifest", "val_manifest"}

log = logging.getLogger("demsr")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _tile_suffix(path: str) -> str:
    suffix = Path(path).suffix.lower()
    if suffix not in (".asc", ".bin"):
        raise ConfigError(f"output {path} must end in .asc or .bin")
    return suffix


# -- subcommands ----------------------------------------------------------

def _parent(path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _write_out(tile, path) -> None:
    _parent(path)
    write_tile(tile, path)


def cmd_synth(args) -> int:
    corners = tuple(args.corners)
    if len(corners) == 1:
        corners = corners * 4
    if args.count == 1:
        _tile_suffix(args.out)
        spec = SynthSpec(k=args.k, seed=args.seed, roughness=args.roughness, decay=args.decay,
                         corner_heights=corners)
        _write_out(diamond_square(spec), args.out)
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        spec = SynthSpec(k=args.k, seed=args.seed + i, roughness=args.roughness, decay=args.decay,
                         corner_heights=corners)
        write_tile(diamond_square(spec), out / f"synth_{args.seed + i}.{args.format}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    hr_dir = Path(args.hr_dir)
    out = Path(args.out)
    if args.crop:
        if not hr_dir.is_dir():
            raise FileNotFoundError(f"HR directory not found: {hr_dir}")
        crop_dir = out / "hr_crops"
        crop_dir.mkdir(parents=True, exist_ok=True)
        stride = args.stride or args.crop
        for path in sorted(p for p in hr_dir.iterdir() if p.suffix.lower() in (".asc", ".bin")):
            for i, tile in enumerate(crop_tiles(read_tile(path), args.crop, stride)):
                raster_io.write_bin(tile, crop_dir / f"{path.stem}_{i:04d}.bin")
        hr_dir = crop_dir
    manifests = build_manifest(hr_dir, args.split, args.scale, args.seed, out, threads=args.threads)
    for name, m in manifests.items():
        log.info("%s: %d pairs", name, len(m))
    return EXIT_OK


def load_run_config(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(raw) - RUN_CONFIG_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    if "train_manifest" not in raw:
        raise ConfigError(f"{path}: 'train_manifest' is required")
    base = path.parent
    cfg = {
        "model": ModelConfig.from_dict(raw.get("model", {})),
        "train": TrainConfig.from_dict(raw.get("train", {})),
        "train_manifest": base / raw["train_manifest"],
        "val_manifest": base / raw["val_manifest"] if raw.get("val_manifest") else None,
    }
    return cfg


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    train_set = load_manifest(cfg["train_manifest"])
    val_set = load_manifest(cfg["val_manifest"]) if cfg["val_manifest"] else None
    if train_set.scale != cfg["model"].scale:
        raise ConfigError(f"manifest scale {train_set.scale} differs from model scale {cfg['model'].scale}")
    net = build(cfg["model"], seed=cfg["train"].seed)
    report = train(net, train_set, cfg["train"], val_data=val_set, out_dir=args.out)
    log.info("final loss %.6f", report.records[-1].loss)
    return EXIT_OK


def cmd_infer(args) -> int:
    _tile_suffix(args.out)
    if args.mode == "dsrfb":
        if args.overlap:
            raise ConfigError("--mode dsrfb processes independent patches; use --mode dsrfo for --overlap")
        overlap = 0
    else:
        overlap = default_overlap(args.patch) if args.overlap is None else args.overlap
    net, _ = load_checkpoint(args.checkpoint)
    net.eval()
    tile = read_tile(args.input)
    if args.input_kind == "lr":
        scale = args.scale or net.config.scale
        tile = upsample(tile, tile.rows * scale, tile.cols * scale)
    plan = plan_patches(tile.rows, tile.cols, args.patch, overlap)
    result = super_resolve(net, tile, plan, args.ensemble)
    _write_out(result, args.out)
    return EXIT_OK


def cmd_upsample(args) -> int:
    _tile_suffix(args.out)
    tile = read_tile(args.input)
    _write_out(upsample(tile, tile.rows * args.scale, tile.cols * args.scale), args.out)
    return EXIT_OK


def _tile_files(directory: Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(directory.iterdir())
            if p.is_file() and p.suffix.lower() in (".asc", ".bin")}


def _regions(truth_dir: Path) -> dict[str, Path]:
    subdirs = sorted(p for p in truth_dir.iterdir() if p.is_dir())
    if subdirs:
        return {p.name: p for p in subdirs}
    return {truth_dir.name: truth_dir}


def cmd_eval(args) -> int:
    truth_dir = Path(args.truth)
    if not truth_dir.is_dir():
        raise FileNotFoundError(f"truth directory not found: {truth_dir}")
    methods = []
    for item in args.pred:
        label, sep, directory = item.partition("=")
        if not sep:
            label, directory = Path(item).name, item
        methods.append((label, Path(directory)))

    results = []
    nested = any(p.is_dir() for p in truth_dir.iterdir())
    for region, region_dir in _regions(truth_dir).items():
        truth_files = _tile_files(region_dir)
        if not truth_files:
            raise ConfigError(f"no .asc/.bin tiles in {region_dir}")
        truths = {k: read_tile(p) for k, p in truth_files.items()}
        for label, pred_root in methods:
            pred_dir = pred_root / region if nested else pred_root
            pred_files = _tile_files(pred_dir) if pred_dir.is_dir() else {}
            missing = sorted(set(truth_files) - set(pred_files))
            if missing:
                raise FileNotFoundError(f"{pred_dir}: no prediction for tiles {missing}")
            preds = {k: read_tile(pred_files[k]) for k in truth_files}
            results.append(evaluate_region([preds[k] for k in truth_files], [truths[k] for k in truth_files],
                                           region=region, method=label))
            if args.error_dir:
                err_dir = Path(args.error_dir) / label / (region if nested else "")
                err_dir.mkdir(parents=True, exist_ok=True)
                for k in truth_files:
                    error_raster(preds[k], truths[k], err_dir / k, clip=args.clip)
    _parent(args.report)
    write_report(results, args.report)
    table = format_table(results)
    if args.table:
        _parent(args.table)
        Path(args.table).write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="demsr", description="DEM super-resolution with a feedback network.")
    parser.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate diamond-square terrain")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, required=True, help="grid side is 2^k + 1")
    p.add_argument("--roughness", type=float, default=10.0)
    p.add_argument("--decay", type=float, default=0.5)
    p.add_argument("--corners", type=_floats, default=[1000.0], help="one or four corner heights (NW,NE,SW,SE)")
    p.add_argument("--count", type=int, default=1, help="with >1, --out is a directory of tiles")
    p.add_argument("--format", choices=("asc", "bin"), default="asc")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="build LR/HR pairs and split manifests")
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--scale", type=int, default=8)
    p.add_argument("--split", type=_floats, default=[0.8, 0.2])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--crop", type=int, default=0, help="crop HR tiles to this size first")
    p.add_argument("--stride", type=int, default=0, help="crop stride (default: crop size)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve a tile")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--input-kind", choices=("lr", "ilr"), default="lr",
                   help="lr tiles are bicubically upsampled by the model scale first")
    p.add_argument("--scale", type=int, default=0, help="override the checkpoint's scale")
    p.add_argument("--mode", choices=("dsrfb", "dsrfo"), default="dsrfo")
    p.add_argument("--patch", type=int, default=200)
    p.add_argument("--overlap", type=int, default=None, help="default: patch // 4 in dsrfo mode")
    p.add_argument("--ensemble", choices=("last", "mean"), default="last")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("upsample", help="bicubic baseline: upsample an LR tile")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--scale", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_upsample)

    p = sub.add_parser("eval", help="RMSE/PSNR report against ground truth")
    p.add_argument("--pred", action="append", required=True, help="DIR or LABEL=DIR; repeatable")
    p.add_argument("--truth", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--table", help="also write the text table here")
    p.add_argument("--error-dir", help="write signed error rasters (.asc + .ppm) here")
    p.add_argument("--clip", type=float, default=DEFAULT_CLIP)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.print_usage(sys.stderr)
        print("demsr: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"demsr: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RasterFormatError, CheckpointError, OSError) as exc:
        print(f"demsr: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"demsr: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
