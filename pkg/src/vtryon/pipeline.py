"""End-to-end orchestration: bundles, checkpoints, try-on inference,
paired/unpaired evaluation, and the ablation matrix.

A TryOnBundle ties together the (possibly adapted) backbone, the mask
guider, and the codec under one geometry. Checkpoints are a directory of
one .tns file per named tensor plus config.json; adapter tensors use the
``lora.<block>.<site>.{A,B}`` names and guider tensors the ``guider.``
prefix, which together form the stable public naming contract.
"""

from __future__ import annotations

import contextlib
import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import tensorio
from .adapters import (
    LoraConfig,
    attach_lora,
    checkpoint_name,
    has_adapters,
    merge_lora,
)
from .backbone import DEFAULT_INSTRUCTION, ModelConfig, VideoBackbone, init_model
from .codec import Codec, CodecParams
from .conditioning import MaskGuider, build_guider
from .errors import ConfigError, FormatError, PipelineError, VtryonError
from .firstframe import EditorRequest, OracleEditor
from .flowmatch import (
    DEFAULT_LATENT_SCALE,
    SamplingConditioning,
    TrainConfig,
    TrainState,
    VARIANTS,
    build_conditioning,
    euler_sample,
    make_optimizer,
    pick_train_index,
    trainable_named_parameters,
    training_step,
)
from .metrics import MetricsReport, frechet_video_distance, perceptual_distance, ssim_video
from .seeding import stable_seed
from .synthdata import GarmentSpec, Manifest, Sample, render_garment


@dataclass
class TryOnBundle:
    backbone: VideoBackbone
    guider: MaskGuider | None
    codec: Codec
    model_cfg: ModelConfig
    codec_params: CodecParams
    lora_cfg: LoraConfig | None = None
    train_cfg: TrainConfig | None = None

    @property
    def variant(self) -> str:
        return self.train_cfg.variant if self.train_cfg is not None else "full"


def validate_geometry(model_cfg: ModelConfig, codec_params: CodecParams) -> None:
    pairs = (
        ("d", model_cfg.d, codec_params.d),
        ("patch_size", model_cfg.patch_size, codec_params.patch_size),
        ("height", model_cfg.height, codec_params.height),
        ("width", model_cfg.width, codec_params.width),
    )
    for name, a, b in pairs:
        if a != b:
            raise ConfigError(f"model/codec geometry mismatch on {name}: {a} vs {b}")


def default_codec_params(model_cfg: ModelConfig) -> CodecParams:
    return CodecParams(
        d=model_cfg.d,
        patch_size=model_cfg.patch_size,
        height=model_cfg.height,
        width=model_cfg.width,
    )


def model_config_for_manifest(manifest: Manifest, **overrides) -> ModelConfig:
    gen = manifest.config
    fields = {
        "frames": gen.num_frames,
        "height": gen.height,
        "width": gen.width,
        "patch_size": gen.patch_size,
    }
    fields.update(overrides)
    return ModelConfig(**fields)


def build_bundle(
    model_cfg: ModelConfig,
    codec_params: CodecParams | None = None,
    lora_cfg: LoraConfig | None = None,
    train_cfg: TrainConfig | None = None,
    with_guider: bool = True,
) -> TryOnBundle:
    """Fresh deterministic bundle; adapters attached when lora_cfg given."""
    model_cfg.validate()
    if codec_params is None:
        codec_params = default_codec_params(model_cfg)
    validate_geometry(model_cfg, codec_params)
    backbone = init_model(model_cfg)
    if lora_cfg is not None:
        backbone = attach_lora(backbone, lora_cfg)
    guider = build_guider(model_cfg) if with_guider else None
    return TryOnBundle(
        backbone=backbone,
        guider=guider,
        codec=Codec(codec_params),
        model_cfg=model_cfg,
        codec_params=codec_params,
        lora_cfg=lora_cfg,
        train_cfg=train_cfg,
    )


# ---------------------------------------------------------------------------
# checkpoints


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except VtryonError:
        raise
    except Exception as exc:  # noqa: BLE001 - stage boundary
        raise PipelineError(f"stage {name!r} failed: {exc}") from exc


def _config_blob(bundle: TryOnBundle) -> dict:
    return {
        "format_version": "1",
        "model": bundle.model_cfg.to_dict(),
        "codec": bundle.codec_params.to_dict(),
        "lora": bundle.lora_cfg.to_dict() if bundle.lora_cfg else None,
        "train": bundle.train_cfg.to_dict() if bundle.train_cfg else None,
    }


def checkpoint_tensors(bundle: TryOnBundle) -> dict[str, torch.Tensor]:
    tensors = {
        checkpoint_name(name): param
        for name, param in bundle.backbone.named_parameters()
    }
    if bundle.guider is not None:
        for name, param in bundle.guider.named_parameters():
            tensors[f"guider.{name}"] = param
    return tensors


def save_checkpoint(
    directory: str | Path, bundle: TryOnBundle, state: TrainState | None = None
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.json").write_text(
        json.dumps(_config_blob(bundle), indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    for name, param in checkpoint_tensors(bundle).items():
        tensorio.write_tensor(directory / f"{name}.tns", param.detach().cpu().numpy())
    if state is not None:
        payload = {
            "format_version": "1",
            "step": state.step,
            "loss_history": state.loss_history,
        }
        (directory / "training_state.json").write_text(
            json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8"
        )
        for name, param in trainable_named_parameters(bundle.backbone, bundle.guider):
            opt_state = state.optimizer.state.get(param, {})
            m1 = opt_state.get("exp_avg", torch.zeros_like(param))
            m2 = opt_state.get("exp_avg_sq", torch.zeros_like(param))
            tensorio.write_tensor(directory / f"opt.{name}.m1.tns", m1.detach().numpy())
            tensorio.write_tensor(directory / f"opt.{name}.m2.tns", m2.detach().numpy())
    return directory


def _read_config(directory: Path) -> dict:
    config_path = directory / "config.json"
    if not config_path.exists():
        raise FormatError(f"checkpoint has no config.json: {directory}")
    blob = json.loads(config_path.read_text(encoding="utf-8"))
    if blob.get("format_version") != "1":
        raise FormatError(
            f"unsupported checkpoint format_version {blob.get('format_version')!r}"
        )
    return blob


def load_checkpoint(directory: str | Path, merged: bool = False) -> TryOnBundle:
    directory = Path(directory)
    blob = _read_config(directory)
    model_cfg = ModelConfig.from_dict(blob["model"])
    codec_params = CodecParams(**blob["codec"])
    lora_cfg = LoraConfig.from_dict(blob["lora"]) if blob.get("lora") else None
    train_cfg = TrainConfig.from_dict(blob["train"]) if blob.get("train") else None
    bundle = build_bundle(model_cfg, codec_params, lora_cfg, train_cfg)

    expected = checkpoint_tensors(bundle)
    with torch.no_grad():
        for name, param in expected.items():
            path = directory / f"{name}.tns"
            if not path.exists():
                raise FormatError(f"checkpoint missing tensor {name!r}: {path}")
            loaded = tensorio.read_tensor(path)
            if tuple(loaded.shape) != tuple(param.shape):
                raise FormatError(
                    f"tensor {name!r} has shape {loaded.shape}, expected "
                    f"{tuple(param.shape)}"
                )
            param.copy_(torch.as_tensor(loaded, dtype=param.dtype))
    known = set(expected)
    for path in directory.glob("*.tns"):
        stem = path.name.removesuffix(".tns")
        if stem not in known and not stem.startswith("opt."):
            raise FormatError(f"unexpected tensor in checkpoint: {path.name}")

    if merged and has_adapters(bundle.backbone):
        bundle.backbone = merge_lora(bundle.backbone)
        bundle.lora_cfg = None
    return bundle


def load_train_state(directory: str | Path) -> tuple[TryOnBundle, TrainState]:
    """Rebuild a resumable TrainState; continuing from it is bit-identical to
    an uninterrupted run (stateless per-step RNG plus exact f32 moments)."""
    directory = Path(directory)
    bundle = load_checkpoint(directory, merged=False)
    if bundle.train_cfg is None:
        raise FormatError(f"checkpoint has no training config: {directory}")
    state_path = directory / "training_state.json"
    if not state_path.exists():
        raise FormatError(f"checkpoint has no training_state.json: {directory}")
    payload = json.loads(state_path.read_text(encoding="utf-8"))
    step = int(payload["step"])

    optimizer = make_optimizer(bundle.backbone, bundle.guider, bundle.train_cfg)
    for name, param in trainable_named_parameters(bundle.backbone, bundle.guider):
        m1_path = directory / f"opt.{name}.m1.tns"
        m2_path = directory / f"opt.{name}.m2.tns"
        if not m1_path.exists() or not m2_path.exists():
            raise FormatError(f"checkpoint missing optimizer moments for {name!r}")
        optimizer.state[param] = {
            "step": torch.tensor(float(step)),
            "exp_avg": torch.as_tensor(tensorio.read_tensor(m1_path), dtype=param.dtype),
            "exp_avg_sq": torch.as_tensor(tensorio.read_tensor(m2_path), dtype=param.dtype),
        }
    state = TrainState(
        model=bundle.backbone,
        guider=bundle.guider,
        codec=bundle.codec,
        config=bundle.train_cfg,
        optimizer=optimizer,
        step=step,
        loss_history=[float(x) for x in payload.get("loss_history", [])],
    )
    return bundle, state


# ---------------------------------------------------------------------------
# inference


@dataclass
class TryOnResult:
    video: np.ndarray  # (F, 3, H, W) float32, unclamped
    edited_frame: np.ndarray
    editor_name: str
    editor_calls: int
    assemble_calls: int
    garment_id: int | None
    seed: int
    steps: int
    variant: str


class _CountingEditor:
    def __init__(self, editor):
        self.editor = editor
        self.calls = 0
        self.name = getattr(editor, "name", type(editor).__name__)

    def __call__(self, request: EditorRequest):
        self.calls += 1
        return self.editor(request)


class _CountingCodec:
    """Pass-through codec that counts sequence assemblies."""

    def __init__(self, codec: Codec):
        self._codec = codec
        self.assemble_calls = 0

    def __getattr__(self, item):
        return getattr(self._codec, item)

    def assemble_sequence(self, garment_block, latents):
        self.assemble_calls += 1
        return self._codec.assemble_sequence(garment_block, latents)


def _resolve_garment(garment) -> tuple[np.ndarray, int | None]:
    if isinstance(garment, GarmentSpec):
        return render_garment(garment), garment.garment_id
    image = np.asarray(garment, dtype=np.float32)
    if image.ndim != 3:
        raise ConfigError(f"garment must be a GarmentSpec or (C, H, W) image, got {image.shape}")
    return image, None


def run_tryon(
    sample: Sample,
    garment,
    bundle: TryOnBundle,
    seed: int = 0,
    steps: int = 10,
    variant: str | None = None,
    editor=None,
    instruction: str | None = None,
    pin_first_frame: bool | None = None,
) -> TryOnResult:
    """Edit frame 0 once, assemble conditioning once, integrate, decode.

    The editor and the sequence assembly are instrumented; anything other
    than exactly one call each is a pipeline error, not just a test failure.
    """
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    variant = bundle.variant if variant is None else variant
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if instruction is None:
        instruction = (
            bundle.train_cfg.instruction if bundle.train_cfg else DEFAULT_INSTRUCTION
        )
    if pin_first_frame is None:
        pin_first_frame = bool(bundle.train_cfg and bundle.train_cfg.pin_first_frame)
    latent_scale = (
        bundle.train_cfg.latent_scale if bundle.train_cfg else DEFAULT_LATENT_SCALE
    )

    garment_image, garment_id = _resolve_garment(garment)
    counting_editor = _CountingEditor(editor if editor is not None else OracleEditor())
    counting_codec = _CountingCodec(bundle.codec)

    with _stage("edit-first-frame"):
        request = EditorRequest(
            i_0=sample.source_video[0],
            instruction=instruction,
            garment_image=garment_image,
            torso_quad0=sample.scene.torso_quad(0),
        )
        edited = counting_editor(request).i_r

    with _stage("conditioning"):
        seq, guider_features = build_conditioning(
            counting_codec,
            sample,
            bundle.guider,
            variant,
            instruction,
            garment_image=garment_image,
            edited_frame=edited,
            latent_scale=latent_scale,
        )

    with _stage("euler-sample"):
        cfg = bundle.model_cfg
        dtype = bundle.backbone.pos_video.dtype
        latents = euler_sample(
            bundle.backbone,
            SamplingConditioning(seq, guider_features, instruction),
            steps=steps,
            seed=seed,
            shape=(cfg.video_tokens, cfg.d),
            dtype=dtype,
        )

    with _stage("decode"):
        z = (
            latents.detach()
            .cpu()
            .numpy()
            .astype(np.float32)
            .reshape(cfg.frames, cfg.patches_per_frame, cfg.d)
        )
        video = bundle.codec.decode_video(z / np.float32(latent_scale))
        if pin_first_frame:
            video = video.copy()
            video[0] = edited

    if counting_editor.calls != 1 or counting_codec.assemble_calls != 1:
        raise PipelineError(
            f"single-injection invariant violated: editor calls "
            f"{counting_editor.calls}, assemble calls {counting_codec.assemble_calls}"
        )
    return TryOnResult(
        video=video,
        edited_frame=edited,
        editor_name=counting_editor.name,
        editor_calls=counting_editor.calls,
        assemble_calls=counting_codec.assemble_calls,
        garment_id=garment_id,
        seed=seed,
        steps=steps,
        variant=variant,
    )


# ---------------------------------------------------------------------------
# evaluation


def derangement(worn_ids: list[int], seed: int, max_tries: int = 10000) -> list[int]:
    """Permutation of positions such that no sample keeps its worn garment."""
    n = len(worn_ids)
    if n < 2:
        raise PipelineError("unpaired evaluation needs at least 2 samples")
    if len(set(worn_ids)) < 2:
        raise PipelineError("unpaired evaluation impossible: all samples wear the same garment")
    rng = np.random.default_rng(stable_seed(seed, "derangement"))
    for _ in range(max_tries):
        perm = rng.permutation(n)
        if all(worn_ids[perm[i]] != worn_ids[i] for i in range(n)):
            return [int(p) for p in perm]
    raise PipelineError(f"no valid unpaired assignment found in {max_tries} tries")


def run_eval(
    manifest: Manifest,
    bundle: TryOnBundle,
    setting: str = "paired",
    seed: int = 0,
    steps: int = 10,
    variant: str | None = None,
    editor=None,
    feature_net_seed: int = 0,
    out_dir: str | Path | None = None,
) -> MetricsReport:
    if setting not in ("paired", "unpaired"):
        raise ConfigError(f"setting must be paired or unpaired, got {setting!r}")
    indices = manifest.indices("eval")
    if not indices:
        raise PipelineError("empty eval split")
    pool = {g.garment_id: g for g in manifest.garment_pool()}

    samples = [manifest.load_sample(i) for i in indices]
    worn = [s.g_worn for s in samples]
    if setting == "unpaired":
        perm = derangement(worn, seed)
        assigned = [worn[perm[i]] for i in range(len(samples))]
    else:
        assigned = worn

    generated: list[np.ndarray] = []
    references: list[np.ndarray] = []
    rows: list[dict] = []
    for sample, idx, gid in zip(samples, indices, assigned):
        result = run_tryon(
            sample,
            pool[gid],
            bundle,
            seed=stable_seed(seed, "eval-noise", idx),
            steps=steps,
            variant=variant,
            editor=editor,
        )
        video = np.clip(result.video, 0.0, 1.0)
        reference = (
            sample.source_video if setting == "paired" else sample.truth_videos[gid]
        )
        generated.append(video)
        references.append(np.asarray(reference, dtype=np.float32))
        rows.append(
            {
                "index": idx,
                "garment_id": gid,
                "ssim": ssim_video(video, references[-1]),
                "perc": perceptual_distance(video, references[-1], feature_net_seed),
            }
        )

    report = MetricsReport(
        ssim=float(np.mean([r["ssim"] for r in rows])),
        perc=float(np.mean([r["perc"] for r in rows])),
        fvd=frechet_video_distance(generated, references, feature_net_seed),
        setting=setting,
        sample_count=len(rows),
        feature_net_seed=feature_net_seed,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(
            json.dumps({"format_version": "1", **report.to_dict()}, indent=1, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )
        with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["index", "garment_id", "ssim", "perc"])
            writer.writeheader()
            writer.writerows(rows)
    return report


# ---------------------------------------------------------------------------
# training loops


def train_model(
    manifest: Manifest,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
    codec_params: CodecParams | None = None,
    lora_cfg: LoraConfig | None = None,
    out_dir: str | Path | None = None,
) -> tuple[TryOnBundle, list[float]]:
    """Full training run; returns the trained bundle and the loss history."""
    train_cfg.validate()
    if model_cfg is None:
        model_cfg = model_config_for_manifest(manifest)
    if lora_cfg is None:
        lora_cfg = LoraConfig(rank=model_cfg.lora_rank)
    bundle = build_bundle(model_cfg, codec_params, lora_cfg, train_cfg)
    gen_cfg = manifest.config
    if (gen_cfg.num_frames, gen_cfg.height, gen_cfg.width) != (
        model_cfg.frames,
        model_cfg.height,
        model_cfg.width,
    ):
        raise ConfigError(
            f"dataset geometry {(gen_cfg.num_frames, gen_cfg.height, gen_cfg.width)} "
            f"does not match model {(model_cfg.frames, model_cfg.height, model_cfg.width)}"
        )

    train_samples = [
        manifest.load_sample(i, include_truth=False) for i in manifest.indices("train")
    ]
    if not train_samples:
        raise PipelineError("empty training split")

    state = TrainState(
        model=bundle.backbone,
        guider=bundle.guider,
        codec=bundle.codec,
        config=train_cfg,
        optimizer=make_optimizer(bundle.backbone, bundle.guider, train_cfg),
    )
    return bundle, continue_training(train_samples, bundle, state, out_dir)


def continue_training(
    train_samples: list[Sample],
    bundle: TryOnBundle,
    state: TrainState,
    out_dir: str | Path | None = None,
) -> list[float]:
    """Run the loop from state.step to the configured budget. With a state
    restored by load_train_state this is bit-identical to never stopping."""
    if not train_samples:
        raise PipelineError("empty training split")
    train_cfg = state.config
    out = Path(out_dir) if out_dir is not None else None
    while state.step < train_cfg.steps:
        idx = pick_train_index(train_cfg.seed, state.step, len(train_samples))
        state, _ = training_step(state, train_samples[idx])
        if out is not None and state.step % train_cfg.checkpoint_interval == 0:
            save_checkpoint(out / f"step_{state.step:05d}", bundle, state)
    if out is not None:
        save_checkpoint(out / "final", bundle, state)
        write_loss_csv(out / "loss.csv", state.loss_history)
    return state.loss_history


def write_loss_csv(path: str | Path, history: list[float]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for step, loss in enumerate(history):
            writer.writerow([step, repr(float(loss))])


def run_ablation(
    manifest: Manifest,
    train_cfg: TrainConfig,
    variants: tuple[str, ...] = VARIANTS,
    seeds: tuple[int, ...] = (0, 1, 2),
    model_cfg: ModelConfig | None = None,
    codec_params: CodecParams | None = None,
    lora_cfg: LoraConfig | None = None,
    eval_steps: int = 10,
    out_dir: str | Path | None = None,
) -> list[dict]:
    """Train every (variant, seed) cell from scratch with an identical budget
    and data order, then evaluate paired metrics."""
    if not variants:
        raise ConfigError("run_ablation needs at least one variant")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; expected one of {VARIANTS}")
    out = Path(out_dir) if out_dir is not None else None
    rows: list[dict] = []
    for variant in variants:
        for seed in seeds:
            cell_cfg = replace(train_cfg, variant=variant, seed=seed)
            cell_out = out / "checkpoints" / f"{variant}_seed{seed}" if out else None
            bundle, history = train_model(
                manifest, cell_cfg, model_cfg, codec_params, lora_cfg, out_dir=cell_out
            )
            report = run_eval(
                manifest, bundle, setting="paired", seed=seed, steps=eval_steps
            )
            rows.append(
                {
                    "variant": variant,
                    "seed": seed,
                    "steps": cell_cfg.steps,
                    "ssim": report.ssim,
                    "perc": report.perc,
                    "fvd": report.fvd,
                    "final_loss": history[-1],
                    "loss_history": history,
                    "checkpoint": str(cell_out / "final") if cell_out else None,
                }
            )
    budgets = {row["steps"] for row in rows}
    if len(budgets) != 1:
        raise PipelineError(f"ablation budget fairness violated: step counts {budgets}")
    if out is not None:
        write_ablation_csv(out / "ablation.csv", rows)
    return rows


def write_ablation_csv(path: str | Path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["variant", "seed", "steps", "ssim", "perc", "fvd", "final_loss"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
