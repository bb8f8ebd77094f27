"""Command-line entry point: synth, preprocess, train, evaluate, ablate.

Exit codes: 0 success, 2 invalid arguments, 3 data or artifact error, 4 divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from .data import (CACHE_ENV, STREAMS, ClipDataset, PipelineConfig, SyntheticSpec, generate_synthetic_dataset,
                   load_manifest, prepare_dataset)
from .data.pipeline import cache_root
from .errors import (CorruptCheckpointError, DataError, DivergenceError, InvalidArgumentError,
                     MissingArtifactError)
from .fusion import (ALL_ABLATIONS, AblationSettings, StreamScores, find_checkpoint, fuse,
                     read_pipeline_config, run_ablation, stream_dir, stream_input_size, write_pipeline_config)
from .metrics import stream_scores, top_n_accuracy
from .models import DESK_I3D_OVERRIDES, build_model, stream_model_config
from .training import TrainConfig, load_checkpoint, train_stream

log = logging.getLogger("msnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _stream_list(text: str) -> list[str]:
    streams = [s.strip() for s in text.split(",") if s.strip()]
    unknown = [s for s in streams if s not in STREAMS]
    if unknown or not streams:
        raise argparse.ArgumentTypeError(f"streams must be drawn from {', '.join(STREAMS)}")
    return streams


def _add_scale_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--desk", action="store_true",
                   help="desk scale: 64x64 network inputs, 8-frame clips, 3x3x3 I3D stem")
    p.add_argument("--input-size", type=int, help="network input side (default 224, or 64 with --desk)")
    p.add_argument("--clip-length", type=int, help="train-time clip length M (default 64, or 8 with --desk)")
    p.add_argument("--cache", help="preprocessing cache directory (default: $MSNN_CACHE_DIR)")


def _pipeline(args) -> PipelineConfig:
    size = args.input_size or (64 if args.desk else 224)
    length = args.clip_length or (8 if args.desk else 64)
    return PipelineConfig.desk(input_size=size, clip_length=length)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msnn", description="Multi-stream sign recognition at desk scale")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset and its manifest")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--clips-per-class", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--shape-pairs", type=int, default=1,
                   help="class pairs that differ only in hand shape (default 1)")
    p.add_argument("--frame-size", type=int, default=128)

    p = sub.add_parser("preprocess", help="normalise frames, compute flow and crops into the cache")
    p.add_argument("--manifest", required=True)
    _add_scale_args(p)

    p = sub.add_parser("train", help="train one stream")
    p.add_argument("--manifest", required=True)
    p.add_argument("--stream", required=True, choices=STREAMS)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint directory for this stream")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, help="learning rate (default by stream kind)")
    p.add_argument("--weight-decay", type=float, help="L2 weight decay (default by stream kind)")
    p.add_argument("--clip-norm", type=float, help="clip the global gradient norm (off by default)")
    p.add_argument("--resume", action="store_true", help="continue from <out>/last.ckpt")
    _add_scale_args(p)

    p = sub.add_parser("evaluate", help="per-stream and fused Top-N on a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--streams", type=_stream_list, required=True, help="comma-separated stream list")
    p.add_argument("--ckpt-dir", required=True, help="directory holding one sub-directory per stream")
    p.add_argument("--top-n", type=_int_list, default=[1, 5, 10])
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--csv", help="CSV output path (default <ckpt-dir>/evaluation.csv)")
    p.add_argument("--cache", help="preprocessing cache directory (default: $MSNN_CACHE_DIR)")

    p = sub.add_parser("ablate", help="fused Top-1/5/10 for all eight stream compositions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--seeds", type=_int_list,
                   help="train/evaluate under <ckpt-dir>/seed<S>/; without it <ckpt-dir>/<stream> is used")
    p.add_argument("--train", action="store_true", help="train streams whose checkpoint is missing")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--average-base-first", action="store_true",
                   help="average rgb and flow into one vote before fusing")
    p.add_argument("--csv", help="CSV output path (default: stdout)")
    _add_scale_args(p)
    return parser


# -- commands ------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SyntheticSpec(args.classes, args.clips_per_class, seed=args.seed, frame_size=args.frame_size,
                         num_shape_pairs=args.shape_pairs)
    print(generate_synthetic_dataset(args.out, spec))
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cache = cache_root(args.cache)
    if cache is None:
        raise InvalidArgumentError(f"preprocess needs --cache (or {CACHE_ENV}) to store its output")
    dataset = load_manifest(args.manifest)
    prepare_dataset(dataset, _pipeline(args), cache_dir=cache)
    print(f"preprocessed {len(dataset)} videos into {cache}")
    return EXIT_OK


def _split_data(dataset, split: str, cfg: PipelineConfig, cache) -> ClipDataset | None:
    clips = prepare_dataset(dataset, cfg, cache_dir=cache, entries=dataset.split(split))
    return ClipDataset(clips, cfg) if clips else None


def cmd_train(args) -> int:
    dataset = load_manifest(args.manifest)
    cfg = _pipeline(args)
    overrides = dict(DESK_I3D_OVERRIDES) if args.desk and args.stream != "skeleton" else {}
    model = build_model(stream_model_config(args.stream, dataset.num_classes, stream_input_size(args.stream, cfg),
                                            seed=args.seed, **overrides))
    train_cfg = TrainConfig(args.stream, lr=args.lr, weight_decay=args.weight_decay, epochs=args.epochs,
                            batch_size=args.batch_size, seed=args.seed, clip_norm=args.clip_norm)
    train = _split_data(dataset, "train", cfg, args.cache)
    val = _split_data(dataset, "val", cfg, args.cache)
    write_pipeline_config(args.out, cfg)
    result = train_stream(model, train, train_cfg, val_data=val, out_dir=args.out, resume=args.resume)
    last = result.history[-1] if result.history else None
    if last is not None:
        print(f"{args.stream}: {len(result.history)} epochs, final loss {last.train_loss:.4f}, "
              f"best val Top-1 {result.best_val_top1:.4f}")
    return EXIT_OK


def evaluate_streams(manifest, streams, ckpt_dir, top_n, split: str = "test", cache=None) -> dict:
    """Top-N per stream and for the fused scores, keyed ``stream -> {n: accuracy}`` (``"fused"`` last)."""
    models, cfgs = {}, {}
    for stream in streams:
        directory = stream_dir(ckpt_dir, stream)
        path = find_checkpoint(directory)
        if path is None:
            raise MissingArtifactError(f"no checkpoint for stream {stream!r} in {directory}")
        models[stream], _, _ = load_checkpoint(path)
        cfgs[stream] = read_pipeline_config(directory)
    pipeline_cfgs = {c for c in cfgs.values() if c is not None}
    if len(pipeline_cfgs) > 1:
        raise InvalidArgumentError("the streams were trained with different pipeline settings")
    cfg = pipeline_cfgs.pop() if pipeline_cfgs else PipelineConfig()
    num_classes = {m.cfg.num_classes for m in models.values()}
    if len(num_classes) != 1:
        raise InvalidArgumentError("the stream checkpoints disagree on the number of classes")
    c = num_classes.pop()
    bad = [n for n in top_n if n < 1 or n > c]
    if bad:
        raise InvalidArgumentError(f"top-n values {bad} outside [1, {c}]")
    dataset = load_manifest(manifest, num_classes=c)
    data = _split_data(dataset, split, cfg, cache)
    if data is None:
        raise DataError(f"the {split} split is empty")
    scores = [StreamScores(s, stream_scores(models[s], data, s)) for s in streams]
    results = {}
    for s in scores:
        results[s.stream] = {n: top_n_accuracy(s.probabilities, data.labels, n) for n in top_n}
    fused = fuse(scores)
    results["fused"] = {n: top_n_accuracy(fused, data.labels, n) for n in top_n}
    return results


def results_to_csv(results: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    ns = list(next(iter(results.values())))
    writer.writerow(["stream"] + [f"top{n}" for n in ns])
    for name, acc in results.items():
        writer.writerow([name] + [repr(acc[n]) for n in ns])
    return buf.getvalue()


def parse_results_csv(text: str) -> dict:
    rows = list(csv.reader(io.StringIO(text)))
    ns = [int(h[3:]) for h in rows[0][1:]]
    return {r[0]: {n: float(v) for n, v in zip(ns, r[1:])} for r in rows[1:]}


def cmd_evaluate(args) -> int:
    results = evaluate_streams(args.manifest, args.streams, args.ckpt_dir, args.top_n, args.split, args.cache)
    width = max(len(k) for k in results)
    print(f"{'stream':<{width}}  " + "  ".join(f"top{n:<4}" for n in args.top_n))
    for name, acc in results.items():
        print(f"{name:<{width}}  " + "  ".join(f"{acc[n]:.4f}" for n in args.top_n))
    out = Path(args.csv) if args.csv else Path(args.ckpt_dir) / "evaluation.csv"
    out.write_text(results_to_csv(results))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    settings = AblationSettings(pipeline=_pipeline(args), epochs=args.epochs, eval_only=not args.train,
                                average_base_first=args.average_base_first,
                                model_overrides=dict(DESK_I3D_OVERRIDES) if args.desk else {})
    if settings.eval_only:
        stored = {read_pipeline_config(stream_dir(args.ckpt_dir, s, (args.seeds or [None])[0])) for s in STREAMS}
        stored.discard(None)
        if len(stored) == 1:
            settings.pipeline = stored.pop()
    seeds = args.seeds if args.seeds else [None]
    rows = run_ablation(args.manifest, ALL_ABLATIONS, seeds, args.ckpt_dir, settings, cache_dir=args.cache)
    buf = io.StringIO()
    fields = list(rows[0].as_dict())
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.as_dict().items()})
    if args.csv:
        Path(args.csv).write_text(buf.getvalue())
        print(f"wrote {args.csv}")
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train, "evaluate": cmd_evaluate,
            "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InvalidArgumentError as exc:
        print(f"msnn: invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"msnn: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, MissingArtifactError, CorruptCheckpointError, FileNotFoundError) as exc:
        print(f"msnn: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
