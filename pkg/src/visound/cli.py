"""Command-line entry point.

Subcommands: synth-data, curate, stats, train, generate, eval.  Common flags
--config/--seed/--profile/--workers/--out; values in a config file (plain
``key = value`` lines, keys matching flag names with dashes or underscores)
are applied as defaults and explicit flags override them.

Every command validates its inputs fully before writing anything, embeds the
resolved configuration in its outputs, and exits 0 on success, 2 on
validation errors, 3 on data errors, 4 on I/O errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as D
from . import evaluation as E
from . import training as TR
from .audio import write_wav, dequantize
from .curation import dataset_stats, filter_and_merge, load_annotations, CuratedVideo
from .errors import ConfigError, ContractError, DataError, VisoundError
from .generator import GeneratorConfig, GeneratorModel, sample_autoregressive

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DATA = 3
EXIT_IO = 4

PROFILES = {"desk": D.DESK_PROFILE, "paper": D.PAPER_PROFILE}

# model-size defaults per profile; flags override
_MODEL_DEFAULTS = {
    "desk": {"hidden": 48, "embed_dim": 16, "frame_sizes": (8, 2, 1), "context_k": 4},
    "paper": {"hidden": 1024, "embed_dim": 256, "frame_sizes": (8, 2, 1), "context_k": 4},
}


def _read_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise DataError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = body.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if known.config:
        raw = _read_config_file(known.config)
        defaults = {}
        for action in parser._actions:
            if action.dest in raw:
                value = raw[action.dest]
                if action.type is not None:
                    value = action.type(value)
                elif isinstance(action.const, bool) or isinstance(action.default, bool):
                    value = value.lower() in ("1", "true", "yes")
                defaults[action.dest] = value
        parser.set_defaults(**defaults)
    return argv


def _provenance(args, extra=None) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func" and v is not None}
    cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}
    if extra:
        cfg.update(extra)
    return cfg


def cmd_synth_data(args) -> int:
    profile = PROFILES[args.profile]
    if args.categories != profile.n_categories:
        profile = D.CorpusProfile(
            name=profile.name,
            n_categories=args.categories,
            sr_audio=profile.sr_audio,
            sr_video=profile.sr_video,
            clip_seconds=args.clip_seconds or profile.clip_seconds,
            feature_dim=profile.feature_dim,
        )
    elif args.clip_seconds:
        import dataclasses

        profile = dataclasses.replace(profile, clip_seconds=args.clip_seconds)
    if args.clips_per_category == 0:
        print("warning: zero clips per category, writing an empty manifest", file=sys.stderr)
    manifest = D.build_synth_corpus(
        args.out_dir,
        args.clips_per_category,
        args.seed,
        profile=profile,
        test_per_category=args.test_per_category,
        meta={"command": "synth-data", "seed": str(args.seed), "profile": profile.name},
    )
    print(
        f"wrote {len(manifest.records)} clips over {len(manifest.categories)} "
        f"categories to {args.out_dir}"
    )
    return EXIT_OK


def cmd_curate(args) -> int:
    annotations = load_annotations(args.annotations)
    videos = filter_and_merge(annotations, segment_seconds=args.segment_seconds)
    profile = PROFILES[args.profile]
    s = D.step_size(profile.sr_audio, profile.sr_video)
    categories = sorted({v.category for v in videos})
    records = []
    for v in videos:
        frames = int(round(v.duration * profile.sr_video))
        records.append(
            D.ClipRecord(
                id=v.id,
                category=v.category,
                audio_path=os.path.join(args.media_root, f"{v.id}.wav"),
                feature_paths=(os.path.join(args.media_root, f"{v.id}.vsft"),),
                split="train",
                n_samples=frames * s,
                n_frames=frames,
            )
        )
    manifest = D.Manifest(
        categories=tuple(categories) or ("none",),
        records=tuple(records),
        sr_audio=profile.sr_audio,
        sr_video=profile.sr_video,
        meta={"command": "curate", "source": str(args.annotations),
              "segment_seconds": str(args.segment_seconds)},
    )
    D.save_manifest(args.out, manifest)
    print(f"curated {len(videos)} videos from {args.annotations} -> {args.out}")
    if videos:
        print(dataset_stats(videos).table())
    return EXIT_OK


def cmd_stats(args) -> int:
    manifest = D.load_manifest(args.manifest, check_files=False)
    if not manifest.records:
        raise DataError(f"{args.manifest}: manifest has no records")
    videos = [
        CuratedVideo(
            source_video=r.id,
            category=r.category,
            start_segment=0,
            end_segment=1,
            segment_seconds=r.n_samples / manifest.sr_audio,
        )
        for r in manifest.records
    ]
    print(dataset_stats(videos).table())
    return EXIT_OK


def _model_config_for_manifest(args, manifest: D.Manifest) -> GeneratorConfig:
    records = manifest.records
    if not records:
        raise ConfigError("manifest has no records")
    dims = set()
    kinds = set()
    for r in records:
        total = 0
        kind = None
        for p in r.feature_paths:
            frames, dim, k = D.peek_features(manifest.resolve(p))
            total += dim
            kind = k
        if len(r.feature_paths) == 2:
            kind = D.KIND_APPEARANCE_FLOW
        dims.add(total)
        kinds.add(kind)
    if len(dims) != 1:
        raise ConfigError(f"records disagree on feature dim: {sorted(dims)}")
    (feature_dim,) = dims
    if args.mode == "flow" and kinds != {D.KIND_APPEARANCE_FLOW}:
        raise ConfigError(
            f"flow mode needs appearance+flow features (double width); manifest "
            f"provides kind(s) {sorted(kinds)} of dim {feature_dim}"
        )
    defaults = _MODEL_DEFAULTS[args.profile]
    return GeneratorConfig(
        mode=args.mode,
        feature_dim=feature_dim,
        step_size=manifest.step,
        frame_sizes=defaults["frame_sizes"],
        context_k=args.context_k or defaults["context_k"],
        hidden_size=args.hidden or defaults["hidden"],
        embed_dim=args.embed_dim or defaults["embed_dim"],
    )


def cmd_train(args) -> int:
    manifest = D.load_manifest(args.manifest)
    categories = None
    if not args.all_categories and args.category:
        categories = tuple(args.category.split(","))
    train_cfg = TR.TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        chunk_len=args.chunk_len,
        epochs=args.epochs,
        max_steps=args.max_steps,
        seed=args.seed,
        categories=categories,
        eval_every=args.eval_every,
    )
    model_cfg = _model_config_for_manifest(args, manifest)
    if args.resume:
        model, optimizer, start_step = TR.load_checkpoint(args.resume)
        if model.config != model_cfg:
            raise ConfigError(
                "resume checkpoint config does not match the requested run config"
            )
        if optimizer is None:
            optimizer = TR.Adam(model.parameters(), learning_rate=args.lr)
    else:
        model = GeneratorModel.initialize(model_cfg, seed=args.seed)
        optimizer = TR.Adam(model.parameters(), learning_rate=args.lr)
        start_step = 0
    report = TR.train(model, manifest, train_cfg, optimizer=optimizer, start_step=start_step)
    TR.save_checkpoint(args.out, model, optimizer, report.config.get("final_step", 0))
    if args.report:
        report.to_jsonl(args.report)
    print(report.summary(), file=sys.stderr)
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    model, _, _ = TR.load_checkpoint(args.checkpoint)
    track = D.load_feature_paths([p for p in args.features.split(";")])
    model.validate_features(track)
    profile = PROFILES[args.profile]
    sr = args.sample_rate or profile.sr_audio
    n = int(round(args.duration * sr))
    fs_c = model.config.coarse_size
    n += (-n) % fs_c  # round up to a whole coarse frame
    if n < fs_c:
        raise ConfigError(f"duration {args.duration}s at {sr} Hz gives no samples")
    clip = sample_autoregressive(
        model, track, n, temperature=args.temperature, seed=args.seed, sample_rate=sr
    )
    write_wav(args.out, dequantize(clip))
    sidecar = {
        "config": _provenance(args, {"model": model.config.to_dict(), "n_samples": n}),
    }
    with open(str(args.out) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    print(f"generated {n} samples ({model.config.mode} conditioning) -> {args.out}")
    return EXIT_OK


def _load_models(args, manifest) -> GeneratorModel | dict:
    if args.checkpoint:
        model, _, _ = TR.load_checkpoint(args.checkpoint)
        return model
    if not args.checkpoint_for:
        raise ConfigError("eval needs --checkpoint or one --checkpoint-for per category")
    models = {}
    for spec in args.checkpoint_for:
        cat, _, path = spec.partition("=")
        if not path:
            raise ConfigError(f"--checkpoint-for expects category=path, got {spec!r}")
        model, _, _ = TR.load_checkpoint(path)
        models[cat] = model
    return models


def cmd_eval(args) -> int:
    manifest = D.load_manifest(args.manifest)
    models = _load_models(args, manifest)
    out = {"config": _provenance(args)}
    if args.loss:
        lines = []
        for split in ("train", "test"):
            if not manifest.split(split):
                continue
            model = models if isinstance(models, GeneratorModel) else None
            if model is None:
                raise ConfigError("--loss evaluation uses a single (multi-category) checkpoint")
            value = TR.evaluate_loss(model, manifest, split)
            lines.append((split, value))
            print(f"{split} loss: {value:.4f} {TR.LOSS_UNIT}")
        out["loss"] = {s: v for s, v in lines}
    if args.retrieval:
        ks = tuple(int(k) for k in args.topk.split(","))
        report = E.run_retrieval(models, manifest, ks=ks)
        print(report.table())
        out["retrieval"] = {
            "pool_size": report.pool_size,
            "category_accuracy": report.category_accuracy,
            "instance_accuracy": report.instance_accuracy,
            "chance_category": report.chance_category,
            "chance_instance_pool": report.chance_instance_pool,
            "chance_instance_category": report.chance_instance_category,
            "per_query": [
                {"query": q.query_id, "category": q.category,
                 "ranking": list(q.ranking), "scores": list(q.scores)}
                for q in report.per_query
            ],
        }
    if not args.loss and not args.retrieval:
        raise ConfigError("eval requires --loss and/or --retrieval")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="visound",
        description="Video-conditioned sample-level waveform generation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="plain-text key = value config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
        p.add_argument("--workers", type=int, default=1,
                       help="upper bound on internal parallelism")

    p = sub.add_parser("synth-data", help="write a synthetic corpus")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--categories", type=int, default=4)
    p.add_argument("--clips-per-category", type=int, default=16)
    p.add_argument("--test-per-category", type=int, default=None)
    p.add_argument("--clip-seconds", type=float, default=None)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("curate", help="aggregate votes and merge segments")
    common(p)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--segment-seconds", type=float, default=2.0)
    p.add_argument("--media-root", default="media")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("stats", help="dataset statistics from a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a generator on a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("frame", "seq", "flow"), required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--report", help="JSONL loss-curve path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--category", help="comma-separated category filter")
    p.add_argument("--all-categories", action="store_true",
                   help="train one model over every category")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--chunk-len", type=int, default=512)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--context-k", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample a waveform from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True,
                   help="feature file, or 'appearance;flow' pair")
    p.add_argument("--duration", type=float, required=True, help="seconds")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--sample-rate", type=float, default=None)
    p.add_argument("--out", required=True, help="output WAV path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="loss table and/or retrieval report")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", help="single (multi-category) checkpoint")
    p.add_argument("--checkpoint-for", action="append", default=[],
                   metavar="CATEGORY=PATH", help="per-category checkpoint")
    p.add_argument("--loss", action="store_true")
    p.add_argument("--retrieval", action="store_true")
    p.add_argument("--topk", default="1,5")
    p.add_argument("--out", help="write the full report as JSON")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except VisoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
