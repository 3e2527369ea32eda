"""Command-line entry points: dataset synthesis, training, inference, makeup
control, evaluation, and the HTTP service."""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evalsuite, facedata
from .errors import ConfigError, DataError, TrainingError
from .facedata import FaceSample
from .service import ModelRegistry, create_app, decode_parsing_png, decode_png, \
    encode_png, run_operation
from .trainer import MakeupPipeline, TrainConfig, train

ENV_CHECKPOINT = "CSDMT_CHECKPOINT"


def _load_sample(img_path, parsing_path, tag):
    image = decode_png(Path(img_path).read_bytes())
    parsing = decode_parsing_png(Path(parsing_path).read_bytes())
    return FaceSample(image=image, parsing=parsing, domain="source", id=tag)


def _pipeline_from(checkpoint):
    from .networks import models_from_checkpoint
    models, config, _ = models_from_checkpoint(checkpoint)
    models["esc"].eval()
    models["gmr"].eval()
    return MakeupPipeline(models["esc"], models["gmr"], config.d), config


def _add_checkpoint_arg(parser):
    default = os.environ.get(ENV_CHECKPOINT)
    parser.add_argument("--checkpoint", required=default is None, default=default,
                        help="model checkpoint path (or set $CSDMT_CHECKPOINT)")


def build_parser():
    parser = argparse.ArgumentParser(prog="csdmt")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None, help="samples per domain")
    p.add_argument("--n-source", type=int, default=200)
    p.add_argument("--n-reference", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", required=True, help="JSON train config")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = sub.add_parser("infer", help="plain makeup transfer")
    _add_checkpoint_arg(p)
    p.add_argument("--source", required=True)
    p.add_argument("--source-parsing", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--reference-parsing", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("control", help="makeup control operations")
    _add_checkpoint_arg(p)
    p.add_argument("--op", required=True,
                   choices=["removal", "interp-global", "interp-local", "skin",
                            "partial", "edit"])
    p.add_argument("--source", required=True)
    p.add_argument("--source-parsing", required=True)
    p.add_argument("--reference", action="append", default=[])
    p.add_argument("--reference-parsing", action="append", default=[])
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--region", choices=["lip", "eye"], default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--lf-out", default=None, help="also write the deformed-LF preview")

    p = sub.add_parser("eval", help="self-augmented evaluation protocol")
    _add_checkpoint_arg(p)
    p.add_argument("--scenario", choices=["crop", "rotate"], default="crop")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=1000)
    p.add_argument("--out", default=None, help="write the JSON report here")

    p = sub.add_parser("serve", help="start the HTTP inference service")
    _add_checkpoint_arg(p)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    return parser


def cmd_synth_data(args):
    n_source = args.n if args.n is not None else args.n_source
    n_reference = args.n if args.n is not None else args.n_reference
    facedata.generate_dataset(args.out, n_source, n_reference, args.size, args.seed)
    print(f"wrote {n_source}+{n_reference} samples to {args.out}")


def cmd_train(args):
    config = TrainConfig.from_json(args.config)
    ckpt, metrics = train(config, resume=args.resume)
    print(f"final checkpoint: {ckpt}")
    print(f"metrics log: {metrics}")


def cmd_infer(args):
    pipeline, _ = _pipeline_from(args.checkpoint)
    source = _load_sample(args.source, args.source_parsing, "source")
    reference = _load_sample(args.reference, args.reference_parsing, "reference")
    result = run_operation("transfer", pipeline, source, [reference])
    Path(args.out).write_bytes(encode_png(result.image))
    print(f"wrote {args.out}")


def cmd_control(args):
    pipeline, _ = _pipeline_from(args.checkpoint)
    source = _load_sample(args.source, args.source_parsing, "source")
    if len(args.reference) != len(args.reference_parsing):
        raise DataError("--reference and --reference-parsing counts differ")
    references = [_load_sample(img, par, f"reference[{i}]")
                  for i, (img, par) in enumerate(zip(args.reference,
                                                     args.reference_parsing))]
    result = run_operation(args.op, pipeline, source, references,
                           beta=args.beta, region=args.region)
    Path(args.out).write_bytes(encode_png(result.image))
    if args.lf_out:
        Path(args.lf_out).write_bytes(encode_png(result.deformed_lf))
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {args.out}")


def cmd_eval(args):
    pipeline, config = _pipeline_from(args.checkpoint)
    size = config.size
    rng = np.random.default_rng(args.seed)
    makeup = [facedata.make_sample(args.seed, i, True, size) for i in range(args.n)]
    sources = [facedata.make_sample(args.seed, i, False, size) for i in range(args.n)]
    report = evalsuite.self_aug_protocol(pipeline, makeup, sources, rng,
                                         args.scenario,
                                         config={"checkpoint": args.checkpoint,
                                                 "n": args.n, "seed": args.seed})
    if args.out:
        Path(args.out).write_text(report.to_json())
    print(report.to_markdown())


def cmd_serve(args):
    import uvicorn
    registry = ModelRegistry({"default": args.checkpoint})
    app = create_app(registry)
    uvicorn.run(app, host=args.host, port=args.port)


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "control": cmd_control,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        COMMANDS[args.command](args)
    except (ConfigError, DataError, TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
