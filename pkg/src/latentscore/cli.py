"""Operator command line: synthesize data, train, generate, evaluate,
benchmark.

One binary with subcommands; a config file plus flag overrides (flags
win) resolve to a single recorded config hash. Exit codes: 0 success,
1 usage, 2 data/validation, 3 internal. `ROBIN_LOG` sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
import time
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .codec import unpatchify
from .config import PRESETS, load_config
from .container import read_array, write_array
from .data import (
    FALLBACK_PROMPT,
    TaskDims,
    TextTokens,
    VideoFeatures,
    load_manifest,
    save_manifest,
    synth_task,
    tokenize_prompt,
)
from .errors import ConfigError, DataError, GenerationError, ValidationError
from .generator import GenerationRequest, generate
from .judge import aggregate_judges, parse_judge
from .metrics import (
    ClassDistribution,
    EmbeddingSet,
    MetricReport,
    class_probabilities,
    cosine_alignment,
    density_coverage,
    frechet_distance,
    inception_score,
    kl_divergence,
)
from .model import arch_fingerprint
from .refiner import FlowConfig
from .tensor import derive_seed, set_default_dtype
from .trainer import train_stage1, train_stage2

logger = logging.getLogger("latentscore")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); route to exit 1
        raise UsageError(message)


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _config_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "patch_size", None) is not None:
        overrides[("model", "patch_len")] = args.patch_size
    return overrides


def _load_run_config(args, extra_overrides=None):
    overrides = _config_overrides(args)
    overrides.update(extra_overrides or {})
    cfg = load_config(getattr(args, "config", None), getattr(args, "preset", "desk"), overrides)
    set_default_dtype(cfg.dtype)
    return cfg


# ---------------------------------------------------------------------------
# synthdata


def cmd_synthdata(args) -> int:
    if args.count < 1:
        raise UsageError(f"--count must be >= 1, got {args.count}")
    cfg = _load_run_config(args)
    dims = TaskDims(
        text_len=cfg.text_len,
        vocab=cfg.model.vocab,
        frames=cfg.frames,
        channels=cfg.model.channels,
        video_len=cfg.video_len,
        video_dim=cfg.model.video_dim,
    )
    out = Path(args.out)
    manifest = synth_task(args.seed, args.count, args.mode, dims, out)
    save_manifest(manifest, out / "manifest.jsonl")
    _write_json(
        out / "record.json",
        {
            "command": "synthdata",
            "mode": args.mode,
            "count": args.count,
            "seed": args.seed,
            "config_hash": cfg.config_hash(),
        },
    )
    print(f"wrote {len(manifest)} examples to {out / 'manifest.jsonl'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    if args.steps is not None and args.steps < 1:
        raise UsageError(f"--steps must be >= 1, got {args.steps}")
    if args.stage == 2 and args.init is None:
        raise UsageError("stage 2 requires --init with a stage-1 checkpoint")
    extra = {("train", "stage"): args.stage}
    if args.steps is not None:
        extra[("train", "steps")] = args.steps
    if args.seed is not None:
        extra[("train", "seed")] = args.seed
    cfg = _load_run_config(args, extra)
    manifest = load_manifest(args.manifest)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log")
    resume = load_checkpoint(args.resume) if args.resume else None
    if args.stage == 1:
        ckpt = train_stage1(
            manifest, cfg.model, cfg.codec, cfg.flow, cfg.train,
            config_hash=cfg.config_hash(), resume=resume, log_path=log_path,
        )
    else:
        init = load_checkpoint(args.init)
        ckpt = train_stage2(
            manifest, cfg.model, cfg.codec, cfg.flow, cfg.train, init,
            config_hash=cfg.config_hash(), log_path=log_path,
        )
    save_checkpoint(ckpt, args.out)
    print(f"stage {args.stage} finished at step {ckpt.step}; checkpoint: {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# generate


def _resolve_conditioning(args, model):
    """Returns (text_ids, video_features|None, prompt_text|None, fallback_used)."""
    vocab = model.cfg.vocab
    if args.example_id is not None:
        if args.manifest is None:
            raise UsageError("--example-id requires --manifest")
        manifest = load_manifest(args.manifest)
        matches = [r for r in manifest.records if r.id == args.example_id]
        if not matches:
            raise DataError(f"example id {args.example_id!r} not found in {args.manifest}")
        example = manifest.load_example(matches[0], vocab)
        video = example.video.features if example.video is not None else None
        return example.text.ids, video, None, False
    video = read_array(args.video) if args.video else None
    if args.prompt is not None:
        return tokenize_prompt(args.prompt, vocab), video, args.prompt, False
    if video is not None:
        return tokenize_prompt(FALLBACK_PROMPT, vocab), video, FALLBACK_PROMPT, True
    raise UsageError("provide --prompt, --video, or --manifest/--example-id")


def cmd_generate(args) -> int:
    if args.patches < 1:
        raise UsageError(f"--patches must be >= 1, got {args.patches}")
    ckpt = load_checkpoint(args.ckpt)
    cfg = _load_run_config(args)
    if args.config is not None or args.patch_size is not None:
        expected_model = cfg.model
        if ckpt.stage == 2:
            expected_model = expected_model.with_video_enabled()
        expected = arch_fingerprint(expected_model, cfg.codec)
        if expected != ckpt.arch_hash:
            raise DataError(
                f"checkpoint architecture {ckpt.arch_hash} does not match the "
                f"requested configuration {expected}"
            )
    model = ckpt.build_model()
    codec = ckpt.codec_spec()
    flow = FlowConfig(
        euler_steps=args.steps if args.steps is not None else cfg.flow.euler_steps,
        cfg_scale=args.cfg_scale if args.cfg_scale is not None else cfg.flow.cfg_scale,
        cond_drop_prob=0.0,
    )
    text_ids, video, prompt_text, fallback_used = _resolve_conditioning(args, model)
    req = GenerationRequest(
        text=TextTokens(text_ids, model.cfg.vocab),
        video=VideoFeatures(video) if video is not None else None,
        n_patches=args.patches,
        flow=flow,
        seed=args.seed,
    )
    result = generate(req, model, codec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_array(out / "latents.lsc", unpatchify(result.patches).frames)
    write_array(out / "waveform.lsc", result.waveform.samples)
    _write_json(
        out / "record.json",
        {
            "command": "generate",
            "seed": args.seed,
            "n_patches": args.patches,
            "euler_steps": flow.euler_steps,
            "cfg_scale": flow.cfg_scale,
            "prompt": prompt_text,
            "fallback_prompt_used": fallback_used,
            "checkpoint_config_hash": ckpt.config_hash,
            "arch_hash": ckpt.arch_hash,
            "per_patch_seconds": result.per_patch_seconds,
        },
    )
    print(f"generated {args.patches} patches -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _load_probs(path) -> list[ClassDistribution]:
    arr = read_array(path)
    if arr.ndim != 2:
        raise DataError(f"{path}: class probabilities must be [N, C], got {arr.shape}")
    return [ClassDistribution(row) for row in arr]


def cmd_eval(args) -> int:
    real = EmbeddingSet(read_array(args.real), "real")
    fake = EmbeddingSet(read_array(args.fake), "fake")
    fd_real = EmbeddingSet(read_array(args.fd_real), "fd-real") if args.fd_real else real
    fd_fake = EmbeddingSet(read_array(args.fd_fake), "fd-fake") if args.fd_fake else fake

    if args.probs_ref and args.probs_gen:
        ref_probs = _load_probs(args.probs_ref)
        gen_probs = _load_probs(args.probs_gen)
    elif args.probs_ref or args.probs_gen:
        raise UsageError("--probs-ref and --probs-gen must be given together")
    else:
        ref_probs = class_probabilities(real, args.classes, args.extractor_seed)
        gen_probs = class_probabilities(fake, args.classes, args.extractor_seed)

    ib_a = EmbeddingSet(read_array(args.ib_a), "ib-a") if args.ib_a else real
    ib_b = EmbeddingSet(read_array(args.ib_b), "ib-b") if args.ib_b else fake

    judge_means = None
    if args.judge:
        reports = []
        failures = []
        for path in args.judge:
            try:
                reports.append(parse_judge(Path(path).read_text()))
            except (OSError, ValidationError) as exc:
                failures.append(f"{path}: {exc}")
        if failures:
            for line in failures:
                print(line, file=sys.stderr)
            return EXIT_DATA
        judge_means = aggregate_judges(reports)

    dens, cov = density_coverage(real, fake, k=args.k)
    is_mean, is_std = inception_score(gen_probs, splits=args.splits)
    report = MetricReport(
        fad=frechet_distance(real, fake),
        fd=frechet_distance(fd_real, fd_fake),
        kl=kl_divergence(ref_probs, gen_probs),
        is_mean=is_mean,
        is_std=is_std,
        ib=cosine_alignment(ib_a, ib_b),
        density=dens,
        coverage=cov,
        judge_means=judge_means,
    )
    doc = report.to_json_dict()
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    if args.repeats < 1:
        raise UsageError(f"--repeats must be >= 1, got {args.repeats}")
    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.build_model()
    codec = ckpt.codec_spec()
    flow = FlowConfig(euler_steps=args.steps, cfg_scale=args.cfg_scale, cond_drop_prob=0.0)
    prompt_ids = tokenize_prompt(args.prompt or FALLBACK_PROMPT, model.cfg.vocab)
    walls = []
    per_patch = []
    for rep in range(args.repeats):
        req = GenerationRequest(
            text=TextTokens(prompt_ids, model.cfg.vocab),
            n_patches=args.patches,
            flow=flow,
            seed=derive_seed(args.seed, "bench", rep),
        )
        started = time.perf_counter()
        result = generate(req, model, codec)
        walls.append(time.perf_counter() - started)
        per_patch.append(result.per_patch_seconds)
    doc = {
        "command": "bench",
        "seed": args.seed,
        "euler_steps": args.steps,
        "n_patches": args.patches,
        "repeats": args.repeats,
        "checkpoint_config_hash": ckpt.config_hash,
        "arch_hash": ckpt.arch_hash,
        "wall_seconds": walls,
        "per_patch_seconds": per_patch,
        "mean_seconds": statistics.mean(walls),
        "median_seconds": statistics.median(walls),
    }
    if args.out:
        _write_json(args.out, doc)
    print(f"{'repeat':>6} {'wall_s':>10} {'per_patch_mean_s':>18}")
    for rep, (wall, patches) in enumerate(zip(walls, per_patch)):
        print(f"{rep:>6} {wall:>10.4f} {statistics.mean(patches):>18.4f}")
    print(f"mean {doc['mean_seconds']:.4f}s  median {doc['median_seconds']:.4f}s  "
          f"steps {args.steps}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="latentscore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--preset", default="desk", choices=sorted(PRESETS))
        p.add_argument("--patch-size", type=int, default=None,
                       help="override model.patch_len")

    p = sub.add_parser("synthdata", help="generate a synthetic paired task")
    add_config_flags(p)
    p.add_argument("--mode", choices=("text_only", "text_video"), default="text_only")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthdata)

    p = sub.add_parser("train", help="run one training stage")
    add_config_flags(p)
    p.add_argument("--stage", type=int, choices=(1, 2), default=1)
    p.add_argument("--manifest", required=True)
    p.add_argument("--init", help="stage-1 checkpoint to fine-tune from (stage 2)")
    p.add_argument("--resume", help="checkpoint of an interrupted run to continue")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--log", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample latents and decode a waveform")
    add_config_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prompt", default=None)
    p.add_argument("--video", default=None, help="video feature container")
    p.add_argument("--manifest", default=None)
    p.add_argument("--example-id", default=None)
    p.add_argument("--patches", type=int, default=2)
    p.add_argument("--steps", type=int, default=None, help="Euler steps")
    p.add_argument("--cfg-scale", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="compute the metric report")
    p.add_argument("--real", required=True)
    p.add_argument("--fake", required=True)
    p.add_argument("--fd-real", default=None)
    p.add_argument("--fd-fake", default=None)
    p.add_argument("--probs-ref", default=None)
    p.add_argument("--probs-gen", default=None)
    p.add_argument("--ib-a", default=None)
    p.add_argument("--ib-b", default=None)
    p.add_argument("--judge", nargs="*", default=None)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--splits", type=int, default=1)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--extractor-seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time generation wall clock")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--steps", type=int, default=20, help="Euler steps")
    p.add_argument("--patches", type=int, default=2)
    p.add_argument("--cfg-scale", type=float, default=2.0)
    p.add_argument("--prompt", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("ROBIN_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DataError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GenerationError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # anything unexpected
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
