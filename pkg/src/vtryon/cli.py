"""Command line entry point.

Subcommands: gen-data, train, sample, eval, ablate, profile. Every command
takes --out for its artifact root and --seed where randomness is involved;
--config points at a JSON file overriding dataclass defaults. Exit codes:
0 success, 2 configuration problem, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import tensorio
from .adapters import LoraConfig
from .backbone import ModelConfig
from .codec import CodecParams
from .efficiency import build_report, render_table
from .errors import ConfigError, VtryonError
from .firstframe import plug_editor
from .flowmatch import TrainConfig, VARIANTS
from .pipeline import (
    build_bundle,
    load_checkpoint,
    load_train_state,
    continue_training,
    model_config_for_manifest,
    run_ablation,
    run_eval,
    run_tryon,
    save_checkpoint,
    train_model,
)
from .synthdata import GenConfig, build_dataset, load_manifest


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        blob = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(blob, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return blob


def _dataclass_from(cls, blob: dict, section: str, **overrides):
    """Build a config dataclass from a JSON section plus CLI overrides."""
    data = dict(blob.get(section, {}))
    unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ConfigError(
            f"unknown keys in config section {section!r}: {sorted(unknown)}"
        )
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        obj = cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad config section {section!r}: {exc}") from exc
    obj.validate()
    return obj


def _add_common(parser: argparse.ArgumentParser, seed_default: int | None = 0) -> None:
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--out", default="out", help="artifact root directory")
    if seed_default is not None:
        parser.add_argument("--seed", type=int, default=seed_default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vtryon",
        description="Synthetic video try-on: data generation, adapter "
        "training, sampling, evaluation, ablations, profiling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    _add_common(p)

    p = sub.add_parser("train", help="train adapters and guider on a dataset")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory or manifest.json")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--resume", default=None, help="checkpoint directory to continue")

    p = sub.add_parser("sample", help="run try-on on one dataset sample")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", type=int, default=None, help="sample index (default: first eval)")
    p.add_argument("--garment", type=int, default=None, help="pool garment id (default: worn)")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--editor-cmd", default=None, help="external first-frame editor command")
    p.add_argument("--instruction", default=None)

    p = sub.add_parser("eval", help="paired or unpaired evaluation over the eval split")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--setting", choices=("paired", "unpaired"), default="paired")
    p.add_argument("--steps", type=int, default=10)

    p = sub.add_parser("ablate", help="train and score conditioning variants")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--seeds", default="0,1,2")

    p = sub.add_parser("profile", help="parameter and FLOPs accounting")
    _add_common(p, seed_default=None)
    p.add_argument("--timing-runs", type=int, default=5)
    return parser


def _cmd_gen_data(args) -> int:
    blob = _load_config_file(args.config)
    cfg = _dataclass_from(GenConfig, blob, "gen", seed=args.seed)
    out = Path(args.out) / "dataset"
    manifest = build_dataset(cfg, out)
    print(f"wrote {len(manifest.records)} samples to {out}")
    return 0


def _train_configs(args, blob, manifest):
    model_cfg = _dataclass_from(
        ModelConfig,
        blob,
        "model",
        frames=manifest.config.num_frames,
        height=manifest.config.height,
        width=manifest.config.width,
        patch_size=manifest.config.patch_size,
    )
    lora_cfg = _dataclass_from(LoraConfig, blob, "lora")
    steps = getattr(args, "steps", None)
    variant = getattr(args, "variant", None)
    train_cfg = _dataclass_from(
        TrainConfig, blob, "train", seed=args.seed, steps=steps, variant=variant
    )
    return model_cfg, lora_cfg, train_cfg


def _cmd_train(args) -> int:
    blob = _load_config_file(args.config)
    manifest = load_manifest(args.data)
    out = Path(args.out) / "checkpoints"
    if args.resume:
        bundle, state = load_train_state(args.resume)
        samples = [
            manifest.load_sample(i, include_truth=False)
            for i in manifest.indices("train")
        ]
        history = continue_training(samples, bundle, state, out)
    else:
        model_cfg, lora_cfg, train_cfg = _train_configs(args, blob, manifest)
        _, history = train_model(
            manifest, train_cfg, model_cfg, lora_cfg=lora_cfg, out_dir=out
        )
    print(f"trained to step {len(history)}; final loss {history[-1]:.6f}")
    print(f"checkpoint: {out / 'final'}")
    return 0


def _cmd_sample(args) -> int:
    manifest = load_manifest(args.data)
    bundle = load_checkpoint(args.checkpoint)
    indices = manifest.indices("eval") or manifest.indices()
    index = args.index if args.index is not None else indices[0]
    sample = manifest.load_sample(index)
    pool = {g.garment_id: g for g in manifest.garment_pool()}
    gid = args.garment if args.garment is not None else sample.g_worn
    if gid not in pool:
        raise ConfigError(f"garment id {gid} not in pool {sorted(pool)}")
    editor = plug_editor("external", args.editor_cmd.split()) if args.editor_cmd else None

    result = run_tryon(
        sample,
        pool[gid],
        bundle,
        seed=args.seed,
        steps=args.steps,
        editor=editor,
        instruction=args.instruction,
    )
    out = Path(args.out) / "samples" / f"sample_{index:04d}_g{gid}"
    out.mkdir(parents=True, exist_ok=True)
    video = np.clip(result.video, 0.0, 1.0)
    tensorio.write_tensor(out / "video.tns", video)
    tensorio.write_tensor(out / "edited_frame.tns", result.edited_frame)
    tensorio.export_frames(out, video, stem="frame")
    tensorio.export_frames(out, video.mean(axis=1, keepdims=True), stem="gray")
    print(f"wrote try-on video ({result.video.shape[0]} frames) to {out}")
    print(
        f"editor {result.editor_name!r} called {result.editor_calls}x, "
        f"sequence assembled {result.assemble_calls}x"
    )
    return 0


def _cmd_eval(args) -> int:
    manifest = load_manifest(args.data)
    bundle = load_checkpoint(args.checkpoint)
    out = Path(args.out) / "reports"
    report = run_eval(
        manifest,
        bundle,
        setting=args.setting,
        seed=args.seed,
        steps=args.steps,
        out_dir=out,
    )
    print(
        f"{report.setting} eval on {report.sample_count} samples: "
        f"ssim {report.ssim:.4f}, perceptual {report.perc:.4f}, fvd {report.fvd:.4f}"
    )
    print(f"report: {out / 'report.json'}")
    return 0


def _cmd_ablate(args) -> int:
    blob = _load_config_file(args.config)
    manifest = load_manifest(args.data)
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    try:
        seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"bad --seeds value {args.seeds!r}: {exc}") from exc
    if not seeds:
        raise ConfigError("--seeds must name at least one seed")
    model_cfg, lora_cfg, train_cfg = _train_configs(args, blob, manifest)
    out = Path(args.out)
    rows = run_ablation(
        manifest,
        train_cfg,
        variants=variants,
        seeds=seeds,
        model_cfg=model_cfg,
        lora_cfg=lora_cfg,
        out_dir=out,
    )
    for row in rows:
        print(
            f"{row['variant']:>12} seed {row['seed']}: ssim {row['ssim']:.4f} "
            f"perc {row['perc']:.4f} fvd {row['fvd']:.4f} loss {row['final_loss']:.4f}"
        )
    print(f"table: {out / 'ablation.csv'}")
    return 0


def _cmd_profile(args) -> int:
    blob = _load_config_file(args.config)
    model_cfg = _dataclass_from(ModelConfig, blob, "model")
    lora_cfg = _dataclass_from(LoraConfig, blob, "lora")
    report = build_report(model_cfg, lora_cfg, timing_runs=args.timing_runs)
    print(render_table(report))
    out = Path(args.out) / "reports"
    out.mkdir(parents=True, exist_ok=True)
    path = out / "efficiency.json"
    path.write_text(
        json.dumps({"format_version": "1", **report.to_dict()}, indent=1, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )
    print(f"report: {path}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "profile": _cmd_profile,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except VtryonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
