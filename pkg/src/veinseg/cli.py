"""Command-line driver.

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics and the
effective-configuration echo go to stderr; results go to files or stdout.
``VEINSEG_THREADS`` caps BLAS worker threads; unset means single-threaded
deterministic mode (applied before numpy is first imported, so it has no
effect if numpy is already loaded in the process).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _configure_threads() -> None:
    raw = os.environ.get("VEINSEG_THREADS")
    if raw is None:
        count = "1"
    else:
        try:
            n = int(raw)
        except ValueError:
            raise UsageError(f"VEINSEG_THREADS must be a positive integer, got {raw!r}")
        if n < 1:
            raise UsageError(f"VEINSEG_THREADS must be a positive integer, got {raw!r}")
        count = str(n)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, count)


def _echo_config(name: str, cfg: dict) -> None:
    print(f"effective-config {name}: {json.dumps(cfg, sort_keys=True)}", file=sys.stderr)


def _parse_widths(text: str) -> list[int]:
    try:
        widths = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--widths must be a comma-separated integer list, got {text!r}")
    if not widths:
        raise UsageError("--widths must not be empty")
    return widths


def _build_parser() -> _Parser:
    p = _Parser(prog="veinseg", description="vein-wall segmentation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic phantom corpus")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--size", type=int, default=64, help="square phantom side in pixels")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    tp = sub.add_parser("train", help="train a model on an image/mask directory pair")
    tp.add_argument("--data", required=True, help="directory containing images/ and masks/")
    tp.add_argument("--out", required=True, help="output directory for checkpoint/history/curves")
    tp.add_argument("--config", help="JSON file with TrainConfig fields; flags override it")
    tp.add_argument("--manifest", help="newline-delimited image names overriding directory scan")
    tp.add_argument("--resume", help="checkpoint to continue from")
    tp.add_argument("--train-fraction", type=float, default=0.75)
    tp.add_argument("--split-seed", type=int, default=None, help="defaults to the training seed")
    tp.add_argument("--model", dest="kind", choices=["proposed", "resunet", "unet"])
    tp.add_argument("--widths", type=_parse_widths)
    tp.add_argument("--bridge-dilation", type=int, dest="bridge_dilation")
    tp.add_argument("--epochs", type=int)
    tp.add_argument("--batch-size", type=int, dest="batch_size")
    tp.add_argument("--lr", type=float)
    tp.add_argument("--smooth", type=float)
    tp.add_argument("--threshold", type=float)
    tp.add_argument("--seed", type=int)
    tp.add_argument("--precision", type=int, choices=[32, 64])
    tp.add_argument("--height", type=int, dest="target_h")
    tp.add_argument("--width", type=int, dest="target_w")
    tp.add_argument("--early-stop-train-loss", type=float, dest="early_stop_train_loss")

    ep = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    ep.add_argument("--ckpt", required=True)
    ep.add_argument("--data", required=True)
    ep.add_argument("--split", choices=["train", "heldout"], required=True)
    ep.add_argument("--manifest")
    ep.add_argument("--train-fraction", type=float, default=0.75)
    ep.add_argument("--split-seed", type=int, default=None)

    pp = sub.add_parser("predict", help="segment one image")
    pp.add_argument("--ckpt", required=True)
    pp.add_argument("--image", required=True)
    pp.add_argument("--out", required=True, help="binary mask PNG; probabilities go next to it")

    op = sub.add_parser("overlay", help="draw mask boundaries in red over an image")
    op.add_argument("--image", required=True)
    op.add_argument("--mask", required=True)
    op.add_argument("--out", required=True)

    mp = sub.add_parser("summary", help="print layer table and trainable parameter count")
    mp.add_argument("--model", dest="kind", choices=["proposed", "resunet", "unet"], required=True)
    mp.add_argument("--widths", type=_parse_widths)
    mp.add_argument("--bridge-dilation", type=int, dest="bridge_dilation", default=None)

    lp = sub.add_parser("plot", help="render loss/accuracy curves from a history CSV")
    lp.add_argument("--history", required=True)
    lp.add_argument("--out", required=True)
    return p


def _load_split_dataset(args, cfg):
    from .data import load_dataset, split_dataset

    data_dir = Path(args.data)
    ds = load_dataset(data_dir / "images", data_dir / "masks", cfg.target_h, cfg.target_w,
                      manifest=args.manifest)
    split_seed = args.split_seed if args.split_seed is not None else cfg.seed
    return split_dataset(ds, args.train_fraction, split_seed)


def _cmd_synth(args) -> int:
    from .data import write_phantom_corpus

    _echo_config("synth", {"count": args.count, "size": args.size, "seed": args.seed, "out": args.out})
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    written = write_phantom_corpus(args.out, args.count, args.size, args.size, args.seed)
    print(f"wrote {len(written)} PNG files under {args.out}")
    return 0


_TRAIN_OVERRIDES = ("kind", "widths", "bridge_dilation", "epochs", "batch_size", "lr", "smooth",
                    "threshold", "seed", "precision", "target_h", "target_w", "early_stop_train_loss")


def _resolve_train_config(args) -> "object":
    from .trainer import TrainConfig

    merged = TrainConfig().to_dict()
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text())
        unknown = set(file_cfg) - set(merged)
        if unknown:
            raise UsageError(f"unknown config fields in {args.config}: {sorted(unknown)}")
        merged.update(file_cfg)
    for name in _TRAIN_OVERRIDES:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    return TrainConfig.from_dict(merged)


def _cmd_train(args) -> int:
    from .trainer import load_checkpoint, train

    cfg = _resolve_train_config(args)
    echo = dict(cfg.to_dict(), data=args.data, out=args.out,
                train_fraction=args.train_fraction,
                split_seed=args.split_seed if args.split_seed is not None else cfg.seed,
                manifest=args.manifest, resume=args.resume)
    _echo_config("train", echo)
    ds = _load_split_dataset(args, cfg)
    resume = load_checkpoint(args.resume) if args.resume else None
    history, _ = train(cfg, ds, out_dir=args.out, resume=resume)
    last = history[-1]
    print(f"finished epoch {last.epoch}: train_loss={last.train_loss:.6f} "
          f"val_loss={last.val_loss:.6f} val_acc={last.val_acc:.6f}")
    print(f"artifacts written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from .trainer import evaluate, load_checkpoint

    ckpt = load_checkpoint(args.ckpt)
    echo = dict(ckpt=args.ckpt, data=args.data, split=args.split,
                train_fraction=args.train_fraction,
                split_seed=args.split_seed if args.split_seed is not None else ckpt.config.seed,
                threshold=ckpt.config.threshold)
    _echo_config("eval", echo)
    ds = _load_split_dataset(args, ckpt.config)
    evaluate(ckpt, ds, args.split)
    return 0


def _cmd_predict(args) -> int:
    import numpy as np

    from .data import load_png, resize_bilinear, save_png, save_png16
    from .model import model_forward
    from .tensor import Tensor4
    from .trainer import load_checkpoint, model_from_checkpoint

    ckpt = load_checkpoint(args.ckpt)
    cfg = ckpt.config
    _echo_config("predict", {"ckpt": args.ckpt, "image": args.image, "out": args.out,
                             "threshold": cfg.threshold, "target_h": cfg.target_h,
                             "target_w": cfg.target_w})
    img = load_png(args.image)
    if img.ndim != 2:
        raise ValueError(f"{args.image}: predict expects an 8-bit grayscale image")
    x = resize_bilinear(Tensor4(img[None, None].astype(np.float64) / 255.0), cfg.target_h, cfg.target_w)
    g = model_from_checkpoint(ckpt)
    probs, _ = model_forward(g, x, mode="eval")
    p = probs.array[0, 0]
    out = Path(args.out)
    save_png(((p > cfg.threshold) * np.uint8(255)).astype(np.uint8), out)
    prob_path = out.with_name(out.stem + "_prob.png")
    save_png16(np.round(p * 65535.0).astype(np.uint16), prob_path)
    print(f"wrote {out} and {prob_path}")
    return 0


def _cmd_overlay(args) -> int:
    import numpy as np

    from .data import boundary_overlay, load_png, save_png
    from .tensor import Tensor4

    _echo_config("overlay", {"image": args.image, "mask": args.mask, "out": args.out})
    img = load_png(args.image)
    msk = load_png(args.mask)
    if img.ndim != 2 or msk.ndim != 2:
        raise ValueError("overlay expects 8-bit grayscale image and mask")
    image = Tensor4(img[None, None].astype(np.float64) / 255.0)
    mask = Tensor4((msk[None, None] > 127).astype(np.float64))
    save_png(boundary_overlay(image, mask), args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_summary(args) -> int:
    from .model import build, count_parameters, layer_table

    widths = args.widths
    if widths is None:
        widths = [64, 128, 256, 512, 1024] if args.kind == "unet" else [64, 128, 256, 512]
    dilation = args.bridge_dilation
    if dilation is None:
        dilation = 2 if args.kind == "proposed" else 1
    _echo_config("summary", {"model": args.kind, "widths": widths, "bridge_dilation": dilation})
    g = build(args.kind, 1, widths, dilation)
    print(f"model {args.kind}  widths {','.join(map(str, widths))}  bridge_dilation {g.bridge_dilation}")
    print(f"{'name':<24}{'shape':<22}{'params':>10}")
    for name, shape, size in layer_table(g):
        print(f"{name:<24}{str(shape):<22}{size:>10}")
    print(f"total trainable parameters: {count_parameters(g)}")
    return 0


def _cmd_plot(args) -> int:
    from .trainer import load_history, render_curves

    _echo_config("plot", {"history": args.history, "out": args.out})
    history = load_history(args.history)
    if not history:
        raise ValueError(f"{args.history}: history has no epochs to plot")
    render_curves(history, args.out)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "overlay": _cmd_overlay,
    "summary": _cmd_summary,
    "plot": _cmd_plot,
}


def cli_main(argv: list[str]) -> int:
    try:
        _configure_threads()
        args = _build_parser().parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
