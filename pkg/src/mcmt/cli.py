"""Command-line operator surface.

Subcommands: ``synth`` (generate a planted-moment dataset), ``train``,
``eval``, ``infer``, and ``inspect-masks`` (dump plottable mask curves).
The data directory layout is the one ``synth`` produces: manifest.jsonl,
features/, embeddings.txt; ``MCMT_DATA_DIR`` supplies the default path.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import inference, metrics, training
from .dataio.features import load_clip_features, sample_clips
from .dataio.manifest import load_manifest
from .dataio.synthetic import SyntheticConfig, generate_synthetic_dataset
from .dataio.vocab import build_vocab, load_embedding_table, tokenize
from .training import PROFILES, TrainConfig, load_config, prepare_data, profile_config

logger = logging.getLogger(__name__)


def _resolve_data_dir(args) -> Path:
    data = args.data or os.environ.get("MCMT_DATA_DIR")
    if not data:
        raise ValueError("no data directory: pass --data or set MCMT_DATA_DIR")
    path = Path(data)
    if not path.is_dir():
        raise ValueError(f"data directory {path} does not exist")
    return path


def _resolve_config(args) -> TrainConfig:
    if args.config:
        config = load_config(args.config)
    elif args.profile:
        config = profile_config(args.profile)
    else:
        raise ValueError("pass --config FILE or --profile NAME")
    overrides = {}
    for field in ("seed", "epochs", "k", "fusion_mode", "batch_size"):
        value = getattr(args, field, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "mt", None) is not None:
        overrides["mt_enabled"] = args.mt == "on"
    if getattr(args, "mc", None) is not None:
        overrides["mc_enabled"] = args.mc == "on"
    if getattr(args, "strategy", None):
        overrides["inference_strategy"] = args.strategy
    if getattr(args, "vote_threshold", None) is not None:
        overrides["vote_threshold"] = args.vote_threshold
    if overrides:
        config = TrainConfig.from_dict({**config.to_dict(), **overrides})
    return config


def _load_eval_stack(args):
    """Common eval/infer plumbing: models + data under the checkpoint's config."""
    expected = None
    if args.config:
        expected = load_config(args.config)
    config, generator, reconstructor, extra = training.load_models(args.checkpoint, expected)
    data_dir = _resolve_data_dir(args)
    data = prepare_data(data_dir, config)
    stored = extra.get("vocab_fingerprint")
    if stored is not None and stored != data.vocab.fingerprint():
        raise ValueError(
            "vocabulary mismatch: the data directory does not rebuild the "
            "vocabulary this checkpoint was trained with"
        )
    return config, generator, reconstructor, data, data_dir


def cmd_synth(args) -> int:
    config = SyntheticConfig(
        n_train=args.n_train, n_test=args.n_test, n_v=args.n_v, d_v=args.d_v,
        vocab_size=args.vocab_size, d_w=args.d_w, n_signatures=args.n_signatures,
        sigma=args.sigma,
    )
    dataset = generate_synthetic_dataset(args.out, config, seed=args.seed)
    print(f"wrote {len(dataset.manifest)} records under {dataset.root}")
    return 0


def cmd_train(args) -> int:
    config = _resolve_config(args)
    data_dir = _resolve_data_dir(args)
    data = prepare_data(data_dir, config)
    result = training.train(config, data, args.out)
    print(f"trained {config.epochs} epochs; final checkpoint: {result.final_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    config, generator, _, data, _ = _load_eval_stack(args)
    if not data.eval_examples:
        raise ValueError("evaluation split has no records with ground truth")
    thresholds = [float(t) for t in args.thresholds.split(",") if t]
    results = inference.batch_retrieve(generator, config, data.eval_examples,
                                       strategy=args.strategy)
    preds = [r.top1 for r in results]
    gts = [ex.gt for ex in data.eval_examples]
    report = metrics.evaluate(preds, gts, thresholds)
    strategy = args.strategy or config.inference_strategy
    print(metrics.format_report(report, label=f"strategy={strategy}, k={config.k}"))
    if args.dump:
        inference.write_predictions(args.dump, results, config.k)
        print(f"predictions written to {args.dump}")
    return 0


def _single_example(config, data, data_dir, video_id: str, query_text: str):
    record = next((r for r in load_manifest(data_dir / "manifest.jsonl")
                   if r.video_id == video_id), None)
    if record is None:
        raise ValueError(f"unknown video id {video_id!r}")
    raw = load_clip_features(data_dir / "features", video_id, config.d_v)
    video = sample_clips(raw, config.n_v, record.duration, video_id)
    query = tokenize(query_text, data.vocab, config.n_q, data.table)
    if query.valid_len == 0:
        raise ValueError("query has no usable tokens")
    return video, query


def cmd_infer(args) -> int:
    config, generator, _, data, data_dir = _load_eval_stack(args)
    video, query = _single_example(config, data, data_dir, args.video_id, args.query)
    result = inference.retrieve(generator, config, video, query, args.query,
                                strategy=args.strategy)
    print(f"{result.top1.start:.3f} {result.top1.end:.3f}")
    return 0


def cmd_inspect_masks(args) -> int:
    config, generator, _, data, data_dir = _load_eval_stack(args)
    video, query = _single_example(config, data, data_dir, args.video_id, args.query)
    curves = inference.mask_curves(generator, config, video, query)
    k, n_v = curves["masks"].shape
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("# beta " + " ".join(f"{b:.8f}" for b in curves["beta"]) + "\n")
        f.write("# columns: clip " + " ".join(f"mask_{i}" for i in range(k))
                + " positive easy\n")
        for j in range(n_v):
            row = [f"{j}"]
            row += [f"{curves['masks'][i, j]:.8f}" for i in range(k)]
            row += [f"{curves['positive'][j]:.8f}", f"{curves['easy'][j]:.8f}"]
            f.write(" ".join(row) + "\n")
    print(f"mask curves written to {args.out}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help="data directory (default: $MCMT_DATA_DIR)")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--strategy", choices=training.STRATEGIES,
                        help="top-1 strategy: vote or attn")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcmt",
        description="Weakly-supervised video moment retrieval: train, evaluate, "
                    "and inspect multi-proposal Gaussian-mask models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic planted-moment dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=500)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--n-v", type=int, default=32)
    p.add_argument("--d-v", type=int, default=16)
    p.add_argument("--d-w", type=int, default=16)
    p.add_argument("--vocab-size", type=int, default=50)
    p.add_argument("--n-signatures", type=int, default=8)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--fusion-mode", dest="fusion_mode", choices=("concat", "attention"))
    p.add_argument("--mt", choices=("on", "off"), help="inverse-stream toggle")
    p.add_argument("--mc", choices=("on", "off"), help="multi-proposal toggle")
    p.add_argument("--vote-threshold", dest="vote_threshold", type=float,
                   nargs="?", const=0.5, help="binary voting at IoU > TAU")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--thresholds", default="0.3,0.5,0.7")
    p.add_argument("--dump", help="write a JSONL prediction dump here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="retrieve a moment for one video/query")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--video-id", required=True)
    p.add_argument("--query", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("inspect-masks", help="dump per-clip mask curves")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--video-id", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect_masks)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface a clean diagnostic, not a stack trace
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
