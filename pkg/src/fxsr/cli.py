"""Command-line entry point.

One binary with subcommands covering the full workflow: dataset prep,
training, single-image inference, style sweeps, evaluation reports, trade-
off curves, and the HTTP service. Every command accepts --config (YAML
file of option values, flags win) and --seed, and can print its effective
options with --dump-config.

Exit codes: 0 success, 2 usage, 3 bad configuration, 4 data problems,
5 numerical abort.
"""

import argparse
import os
import sys

import numpy as np
import torch
import yaml

from . import inference, metrics, plotting
from . import data as data_mod
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DomainError,
    NumericalError,
    ShapeError,
)
from .imgio import load_rgb, save_gray, save_image
from .perceptual import FeatureExtractor
from .resample import resize
from .trainer import TrainConfig, train

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERICAL = 5


class UsageError(Exception):
    pass


def _t_flag(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"t must be a number, got {text!r}")
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"t must lie in [0, 1], got {text}")
    return value


def _ts_flag(text: str) -> str:
    try:
        inference.parse_ts(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc))
    return text


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, metavar="YAML",
                        help="option values file; explicit flags win")
    parser.add_argument("--dump-config", action="store_true",
                        help="print the effective options and exit")
    parser.add_argument("--seed", type=int, default=None,
                        help="global RNG seed (default 0)")


def _read_yaml(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid config syntax: {exc}") from exc
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return loaded


def _effective(args, defaults: dict) -> dict:
    """Merge defaults <- config file <- explicit flags."""
    values = dict(defaults)
    values.setdefault("seed", 0)
    if args.config is not None:
        loaded = _read_yaml(args.config)
        unknown = sorted(set(loaded) - set(values))
        if unknown:
            raise ConfigError(f"{args.config}: unknown options {unknown}")
        values.update(loaded)
    for dest in values:
        flag = getattr(args, dest, None)
        if flag is not None:
            values[dest] = flag
    return values


def _maybe_dump(args, values: dict) -> bool:
    if args.dump_config:
        sys.stdout.write(yaml.safe_dump(values, sort_keys=True))
        return True
    return False


def _apply_seed(seed) -> None:
    seed = int(seed) if seed is not None else 0
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def _require(values: dict, names: list[str], command: str) -> None:
    missing = [n for n in names if values.get(n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"{command} requires {flags}")


def _resolve_ts(values: dict):
    spec = values.get("ts")
    if spec is None:
        return list(inference.DEFAULT_TS)
    return inference.parse_ts(spec)


# ---------------------------------------------------------------------------
# subcommands

_PREPARE_DEFAULTS = {
    "input": None, "out": None, "scale": 4, "jpeg_quality": None,
}


def _cmd_prepare(args) -> int:
    values = _effective(args, _PREPARE_DEFAULTS)
    if _maybe_dump(args, values):
        return 0
    _require(values, ["input", "out"], "prepare")
    _apply_seed(values["seed"])
    spec = data_mod.DegradationSpec(scale=int(values["scale"]),
                                    jpeg_quality=values["jpeg_quality"])
    manifest = data_mod.prepare_directory(values["input"], values["out"], spec)
    print(manifest)
    return 0


def _cmd_train(args) -> int:
    # The starting point is the config file, or a preset; scalar flags then
    # override individual fields on top of it.
    if args.config is not None and args.preset is not None:
        raise UsageError("--config and --preset are mutually exclusive; "
                         "put the preset's values in the config file")
    if args.config is not None:
        base = TrainConfig.from_dict(_read_yaml(args.config)).to_dict()
    elif args.preset == "toy":
        base = TrainConfig.toy(scale=args.scale or 4).to_dict()
    else:
        base = TrainConfig().to_dict()
    if args.scale is not None and args.scale != base["scale"]:
        from .generator import Backbone, GeneratorConfig

        backbone = Backbone.parse(base["generator"].get("backbone", "rrdb"))
        if args.preset == "toy":
            base["generator"] = GeneratorConfig.toy(args.scale).to_dict()
        else:
            base["generator"] = GeneratorConfig.full(args.scale,
                                                     backbone).to_dict()
        base["scale"] = args.scale
    for dest in ("variant", "total_iters", "batch_size", "seed",
                 "feature_source", "jpeg_quality", "checkpoint_every",
                 "warmup_iters", "init_checkpoint", "disc_width", "lr0"):
        flag = getattr(args, dest, None)
        if flag is not None:
            base[dest] = flag
    config = TrainConfig.from_dict(base)
    if _maybe_dump(args, config.to_dict()):
        return 0
    _require({"dataset": args.dataset, "out": args.out},
             ["dataset", "out"], "train")
    final = train(config, args.dataset, args.out, resume=args.resume)
    print(final)
    return 0


_INFER_DEFAULTS = {
    "model": None, "lr": None, "out": None, "t": None, "map": None,
    "tile_size": inference.TILE_SIZE, "tile_overlap": inference.TILE_OVERLAP,
}


def _cmd_infer(args) -> int:
    values = _effective(args, _INFER_DEFAULTS)
    if _maybe_dump(args, values):
        return 0
    _require(values, ["model", "lr", "out"], "infer")
    if (values["t"] is None) == (values["map"] is None):
        raise UsageError("infer needs exactly one of --t and --map")
    _apply_seed(values["seed"])
    model = inference.load_model(values["model"])
    lr = load_rgb(values["lr"])
    style = values["t"] if values["t"] is not None else values["map"]
    sr = inference.super_resolve(model, lr, style,
                                 tile_size=int(values["tile_size"]),
                                 tile_overlap=int(values["tile_overlap"]))
    save_image(values["out"], np.clip(sr, 0.0, 1.0))
    print(values["out"])
    return 0


_SWEEP_DEFAULTS = {
    "model": None, "lr": None, "out_dir": None, "ts": None,
    "tile_size": inference.TILE_SIZE, "tile_overlap": inference.TILE_OVERLAP,
}


def _cmd_sweep(args) -> int:
    values = _effective(args, _SWEEP_DEFAULTS)
    if _maybe_dump(args, values):
        return 0
    _require(values, ["model", "lr", "out_dir"], "sweep")
    _apply_seed(values["seed"])
    model = inference.load_model(values["model"])
    lr = load_rgb(values["lr"])
    ts = _resolve_ts(values)
    os.makedirs(values["out_dir"], exist_ok=True)
    for t, sr in inference.sweep(model, lr, ts,
                                 tile_size=int(values["tile_size"]),
                                 tile_overlap=int(values["tile_overlap"])):
        path = os.path.join(values["out_dir"], f"t_{t:g}.png")
        save_image(path, np.clip(sr, 0.0, 1.0))
        print(path)
    return 0


_EVAL_DEFAULTS = {
    "model": None, "dataset": None, "out_dir": None, "ts": None,
    "extractor": "seeded:0", "name": None, "limit": None,
}


def _load_pairs(dataset_dir, model_scale: int, limit):
    pairs, spec = data_mod.load_dataset(dataset_dir)
    if spec.scale != model_scale:
        raise DataError(
            f"dataset was prepared at scale {spec.scale}, model wants "
            f"{model_scale}"
        )
    if limit is not None:
        pairs = pairs[: int(limit)]
    if not pairs:
        raise DataError(f"no usable pairs in {dataset_dir}")
    return pairs


def _cmd_eval(args) -> int:
    values = _effective(args, _EVAL_DEFAULTS)
    if _maybe_dump(args, values):
        return 0
    _require(values, ["model", "dataset", "out_dir"], "eval")
    _apply_seed(values["seed"])
    model = inference.load_model(values["model"])
    pairs = _load_pairs(values["dataset"], model.scale, values["limit"])
    extractor = FeatureExtractor.from_source(values["extractor"])
    name = values["name"] or os.path.basename(
        os.path.normpath(values["dataset"])
    )
    rows = metrics.evaluate_dataset(model, pairs, extractor,
                                    ts=_resolve_ts(values),
                                    dataset_name=name)
    out_dir = values["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    metrics.write_records(os.path.join(out_dir, "rows.jsonl"), rows)
    metrics.write_table(os.path.join(out_dir, "summary.tsv"), rows)
    plotting.plot_metric_curves(rows, os.path.join(out_dir, "metrics.png"))
    sys.stdout.write(metrics.format_table(rows))
    return 0


_PDCURVE_DEFAULTS = {
    "model": None, "dataset": None, "out_dir": None, "ts": None,
    "extractor": "seeded:0", "name": None, "limit": None,
}


def _cmd_pdcurve(args) -> int:
    values = _effective(args, _PDCURVE_DEFAULTS)
    if _maybe_dump(args, values):
        return 0
    _require(values, ["model", "dataset", "out_dir"], "pdcurve")
    _apply_seed(values["seed"])
    model = inference.load_model(values["model"])
    pairs = _load_pairs(values["dataset"], model.scale, values["limit"])
    extractor = FeatureExtractor.from_source(values["extractor"])
    name = values["name"] or model.model_id
    points = metrics.pd_curve(model, pairs, extractor, ts=_resolve_ts(values))
    out_dir = values["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    rows = [
        {"t": p.t, "psnr": p.distortion, "perceptual": p.perception}
        for p in points
    ]
    metrics.write_records(os.path.join(out_dir, "pd_points.jsonl"), rows)
    table = "t\tpsnr\tperceptual\n" + "".join(
        f"{p.t:g}\t{p.distortion:.6g}\t{p.perception:.6g}\n" for p in points
    )
    from .imgio import atomic_write_bytes

    atomic_write_bytes(os.path.join(out_dir, "pd_curve.tsv"),
                       table.encode("utf-8"))
    plotting.plot_pd_plane(points, os.path.join(out_dir, "pd_curve.png"),
                           label=name)
    sys.stdout.write(table)
    return 0


_SERVE_DEFAULTS = {"models": None, "port": 8321, "host": "127.0.0.1"}


def _cmd_serve(args) -> int:
    values = _effective(args, _SERVE_DEFAULTS)
    if _maybe_dump(args, values):
        return 0
    _require(values, ["models"], "serve")
    _apply_seed(values["seed"])
    import uvicorn

    from .service import create_app

    app = create_app(values["models"])
    uvicorn.run(app, host=values["host"], port=int(values["port"]),
                log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fxsr",
        description="Flexible super-resolution: train, infer, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("prepare", help="tile and degrade a directory of images")
    p.add_argument("--input", help="directory of source images")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--scale", type=int, choices=(4, 8), default=None)
    p.add_argument("--jpeg-quality", dest="jpeg_quality", type=int,
                   default=None, help="optional JPEG degradation quality")
    _add_common(p)
    p.set_defaults(handler=_cmd_prepare)

    p = sub.add_parser("train", help="train a style-conditioned generator")
    p.add_argument("--dataset", help="prepared dataset directory")
    p.add_argument("--out", help="run directory for checkpoints and logs")
    p.add_argument("--resume", default=None, help="checkpoint to continue")
    p.add_argument("--variant", choices=("pd", "ds"), default=None)
    p.add_argument("--scale", type=int, choices=(4, 8), default=None)
    p.add_argument("--preset", choices=("toy", "full"), default=None)
    p.add_argument("--total-iters", dest="total_iters", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--disc-width", dest="disc_width", type=int, default=None)
    p.add_argument("--lr0", type=float, default=None)
    p.add_argument("--feature-source", dest="feature_source", default=None)
    p.add_argument("--jpeg-quality", dest="jpeg_quality", type=int,
                   default=None)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int,
                   default=None)
    p.add_argument("--warmup-iters", dest="warmup_iters", type=int,
                   default=None)
    p.add_argument("--init-checkpoint", dest="init_checkpoint", default=None)
    _add_common(p)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("infer", help="super-resolve one image")
    p.add_argument("--model", help="checkpoint file")
    p.add_argument("--lr", help="input image")
    p.add_argument("--out", help="output image path")
    p.add_argument("--t", type=_t_flag, default=None,
                   help="flat style value in [0, 1]")
    p.add_argument("--map", default=None,
                   help="8-bit grayscale style map, same size as the input")
    p.add_argument("--tile-size", dest="tile_size", type=int, default=None)
    p.add_argument("--tile-overlap", dest="tile_overlap", type=int,
                   default=None)
    _add_common(p)
    p.set_defaults(handler=_cmd_infer)

    p = sub.add_parser("sweep", help="render one image at a range of styles")
    p.add_argument("--model", help="checkpoint file")
    p.add_argument("--lr", help="input image")
    p.add_argument("--out-dir", dest="out_dir", help="directory for outputs")
    p.add_argument("--ts", type=_ts_flag, default=None,
                   help="style values: start:stop:step or comma list")
    p.add_argument("--tile-size", dest="tile_size", type=int, default=None)
    p.add_argument("--tile-overlap", dest="tile_overlap", type=int,
                   default=None)
    _add_common(p)
    p.set_defaults(handler=_cmd_sweep)

    p = sub.add_parser("eval", help="metric report over a prepared dataset")
    p.add_argument("--model", help="checkpoint file")
    p.add_argument("--dataset", help="prepared dataset directory")
    p.add_argument("--out-dir", dest="out_dir", help="report directory")
    p.add_argument("--ts", type=_ts_flag, default=None)
    p.add_argument("--extractor", default=None,
                   help="feature extractor source (default seeded:0)")
    p.add_argument("--name", default=None, help="dataset label in reports")
    p.add_argument("--limit", type=int, default=None,
                   help="evaluate at most this many pairs")
    _add_common(p)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("pdcurve",
                       help="distortion/perception curve across styles")
    p.add_argument("--model", help="checkpoint file")
    p.add_argument("--dataset", help="prepared dataset directory")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--ts", type=_ts_flag, default=None)
    p.add_argument("--extractor", default=None)
    p.add_argument("--name", default=None, help="curve label in the plot")
    p.add_argument("--limit", type=int, default=None)
    _add_common(p)
    p.set_defaults(handler=_cmd_pdcurve)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--models", help="directory of checkpoints to serve")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default=None)
    _add_common(p)
    p.set_defaults(handler=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "handler", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"fxsr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"fxsr {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError, DomainError, CheckpointError) as exc:
        print(f"fxsr {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"fxsr {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def resize_map_main(argv=None) -> int:
    """Entry point for fxsr-resize-map: explicit style-map resizing."""
    parser = argparse.ArgumentParser(
        prog="fxsr-resize-map",
        description="Resize an 8-bit style map to match an input image.",
    )
    parser.add_argument("--input", required=True, help="map to resize")
    parser.add_argument("--out", required=True, help="output path")
    parser.add_argument("--width", type=int, default=None)
    parser.add_argument("--height", type=int, default=None)
    parser.add_argument("--like", default=None,
                        help="take the target size from this image")
    parser.add_argument("--mode", choices=("smooth", "nearest"),
                        default="smooth")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        from .imgio import load_gray

        values = load_gray(args.input)
        if args.like is not None:
            target = load_rgb(args.like).shape[:2]
        elif args.width is not None and args.height is not None:
            target = (args.height, args.width)
        else:
            print("fxsr-resize-map: need --like or both --width and --height",
                  file=sys.stderr)
            return EXIT_USAGE
        if args.mode == "nearest":
            ys = (np.arange(target[0]) + 0.5) * values.shape[0] / target[0]
            xs = (np.arange(target[1]) + 0.5) * values.shape[1] / target[1]
            out = values[ys.astype(int)[:, None], xs.astype(int)[None, :]]
        else:
            out = np.clip(resize(values, target[0], target[1]), 0.0, 1.0)
        save_gray(args.out, out)
        print(args.out)
        return 0
    except (DataError, ShapeError, DomainError) as exc:
        print(f"fxsr-resize-map: {exc}", file=sys.stderr)
        return EXIT_DATA
