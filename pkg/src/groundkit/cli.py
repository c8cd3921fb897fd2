"""Command-line entry point: gen / train / finetune / eval / infer / serve.

``GROUNDKIT_LOG`` sets the log level (default INFO); ``GROUNDKIT_NUMBA=0``
selects the pure-numpy kernel path.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import engine
from .data import evaluate, load_dataset, load_image, prepare_image, split_manifest, synth_generate
from .engine import TrainConfig, finetune, load_checkpoint, save_checkpoint, train, write_metric_log


def _setup_logging():
    level = os.environ.get("GROUNDKIT_LOG", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _data_manifests(data_dir: Path) -> tuple[Path, Path]:
    train_m = data_dir / "train.jsonl"
    val_m = data_dir / "val.jsonl"
    if train_m.exists() and val_m.exists():
        return train_m, val_m
    manifest = data_dir / "manifest.jsonl"
    if not manifest.exists():
        raise SystemExit(f"no train/val or manifest JSONL in {data_dir}")
    return split_manifest(manifest, val_fraction=0.1, seed=0)


def cmd_gen(args):
    manifest = synth_generate(
        args.scenes, args.seed, args.out, image_size=args.image_size, domain=args.domain
    )
    if args.val_split > 0:
        split_manifest(manifest, args.val_split, args.seed)
    print(manifest)


def cmd_train(args):
    if args.config:
        config = TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
    elif args.toy:
        config = engine.toy_train_config()
    else:
        config = TrainConfig()
    train_m, val_m = _data_manifests(Path(args.data))
    result = train(config, train_m, val_m)
    save_checkpoint(
        result.model, args.out, train_config=config,
        epoch=result.epochs_run, global_step=result.global_step,
        history=result.history,
    )
    if args.log:
        write_metric_log(result.history, args.log)
    print(args.out)


def cmd_finetune(args):
    train_m, val_m = _data_manifests(Path(args.data))
    overrides = json.loads(args.overrides) if args.overrides else {}
    model, report = finetune(args.ckpt, train_m, val_m, overrides)
    out = args.out or args.ckpt
    config = TrainConfig.from_dict(load_checkpoint(args.ckpt)[1]["train_config"])
    save_checkpoint(model, out, train_config=config, history=report["history"])
    print(
        json.dumps(
            {"before_acc": report["before_acc"], "after_acc": report["after_acc"], "out": str(out)}
        )
    )


def cmd_eval(args):
    model, meta = load_checkpoint(args.ckpt)
    use_clahe = meta["train_config"].get("use_clahe", True)
    data_path = Path(args.data)
    manifest = data_path if data_path.is_file() else data_path / "manifest.jsonl"
    samples = load_dataset(manifest)
    result = evaluate(model, samples, use_clahe=use_clahe)
    out = {"top1_acc": result.top1_acc, "mean_iou": result.mean_iou, "n": result.total}
    if args.per_tag:
        out["per_tag"] = result.per_tag
    print(json.dumps(out, indent=2))


def cmd_infer(args):
    model, meta = load_checkpoint(args.ckpt)
    use_clahe = meta["train_config"].get("use_clahe", True)
    rgb = load_image(args.image)
    image = prepare_image(rgb, model.config.image_size, use_clahe)
    g = model.infer_top1(image, args.caption)
    print(
        json.dumps(
            {
                "box_px": [g.box_px.x1, g.box_px.y1, g.box_px.x2, g.box_px.y2],
                "score": g.score,
                "anchor_index": g.anchor_index,
            }
        )
    )


def cmd_serve(args):
    from .service import serve

    model, meta = load_checkpoint(args.ckpt)
    use_clahe = meta["train_config"].get("use_clahe", True)
    serve(
        model,
        bind=args.bind,
        http_bind=args.http,
        use_clahe=use_clahe,
        static_root=args.static,
    )


def main(argv=None):
    _setup_logging()
    parser = argparse.ArgumentParser(prog="groundkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene dataset")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--domain", choices=["base", "novel"], default="base")
    p.add_argument("--val-split", type=float, default=0.1)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train from scratch")
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--toy", action="store_true", help="desk-scale preset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="metric log JSONL path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("finetune", help="few-shot adaptation of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--overrides", help="JSON dict of TrainConfig overrides")
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="top-1 accuracy on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--per-tag", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="ground one caption in one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--caption", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("serve", help="run the grounding service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bind", default="127.0.0.1:7401")
    p.add_argument("--http", help="HTTP gateway bind address")
    p.add_argument("--static", help="serve this directory over HTTP (console build)")
    p.set_defaults(fn=cmd_serve)

    args = parser.parse_args(argv)
    return args.fn(args) or 0


if __name__ == "__main__":
    sys.exit(main())
