"""Velocity-regression training and the explicit Euler sampler.

Straight interpolation paths: x_t = (1-t) x_0 + t x_1 with target velocity
v = x_1 - x_0, t uniform on [0,1], noise at t=0 and data at t=1. Sampling
integrates x <- x + (1/steps) u(x, t_k) on the grid t_k = k/steps.

Per-step randomness (noise, t, data index) derives statelessly from
(run seed, step index), which is what makes checkpoint-resume bit-exact
without serializing RNG state.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch

from .adapters import checkpoint_name
from .backbone import DEFAULT_INSTRUCTION, VideoBackbone
from .codec import Codec, LatentSequence
from .conditioning import MaskGuider, agnostic_with_mask
from .errors import ConfigError, PipelineError
from .firstframe import EditorRequest, OracleEditor
from .seeding import stable_seed
from .synthdata import Sample

VARIANTS = ("full", "no_pose", "no_agnostic", "no_both")

# Pixel videos embed to latents with per-element rms near 0.2, far below the
# unit-variance noise prior; flow matching across that gap wastes the whole
# integration budget on noise removal. Data latents and conditioning rows
# are therefore multiplied by this factor (and samples divided by it before
# decoding), putting data and prior on the same scale.
DEFAULT_LATENT_SCALE = 5.0


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-4
    seed: int = 0
    manifest: str = ""
    checkpoint_interval: int = 500
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    variant: str = "full"
    instruction: str = DEFAULT_INSTRUCTION
    pin_first_frame: bool = False
    latent_scale: float = DEFAULT_LATENT_SCALE

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.checkpoint_interval < 1:
            raise ConfigError(
                f"checkpoint_interval must be >= 1, got {self.checkpoint_interval}"
            )
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}"
            )
        if self.latent_scale <= 0:
            raise ConfigError(
                f"latent_scale must be positive, got {self.latent_scale}"
            )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["betas"] = list(self.betas)
        return out

    @staticmethod
    def from_dict(data: dict) -> "TrainConfig":
        kwargs = dict(data)
        if "betas" in kwargs:
            kwargs["betas"] = tuple(kwargs["betas"])
        return TrainConfig(**kwargs)


@dataclass
class PathSample:
    x0: torch.Tensor
    x1: torch.Tensor
    t: float
    x_t: torch.Tensor
    v_t: torch.Tensor


def sample_path(
    x1: torch.Tensor, seed: int, t: float | None = None
) -> PathSample:
    """Draw (x0, t) and build the straight interpolant toward x1."""
    if not torch.isfinite(x1).all():
        raise ConfigError("sample_path: x_1 contains non-finite values")
    gen = torch.Generator().manual_seed(seed & 0x7FFF_FFFF_FFFF_FFFF)
    if t is None:
        t = float(torch.rand((), generator=gen, dtype=torch.float64).item())
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"t outside [0,1]: {t}")
    x0 = torch.randn(x1.shape, generator=gen, dtype=x1.dtype)
    x_t = (1.0 - t) * x0 + t * x1
    return PathSample(x0=x0, x1=x1, t=t, x_t=x_t, v_t=x1 - x0)


def velocity_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if predicted.shape != target.shape:
        raise ValueError(
            f"velocity shapes disagree: {tuple(predicted.shape)} vs {tuple(target.shape)}"
        )
    return torch.mean((predicted - target) ** 2)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainState:
    model: VideoBackbone  # adapted (LoRA attached)
    guider: MaskGuider
    codec: Codec
    config: TrainConfig
    optimizer: torch.optim.AdamW
    step: int = 0
    loss_history: list[float] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.config.seed


def trainable_named_parameters(
    model: VideoBackbone, guider: MaskGuider | None
) -> list[tuple[str, torch.nn.Parameter]]:
    """Trainable set in stable checkpoint-name order: adapters, text stub,
    every guider parameter."""
    named: list[tuple[str, torch.nn.Parameter]] = []
    for name, param in model.named_parameters():
        if param.requires_grad:
            named.append((checkpoint_name(name), param))
    if guider is not None:
        for name, param in guider.named_parameters():
            named.append((f"guider.{name}", param))
    return sorted(named, key=lambda item: item[0])


def make_optimizer(
    model: VideoBackbone, guider: MaskGuider | None, cfg: TrainConfig
) -> torch.optim.AdamW:
    """AdamW with weight decay restricted to adapter factor matrices."""
    named = trainable_named_parameters(model, guider)
    decay = [p for n, p in named if n.startswith("lora.")]
    no_decay = [p for n, p in named if not n.startswith("lora.")]
    return torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": cfg.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=cfg.lr,
        betas=cfg.betas,
        eps=cfg.eps,
        foreach=False,
    )


def build_conditioning(
    codec: Codec,
    sample: Sample,
    guider: MaskGuider | None,
    variant: str,
    instruction: str,
    garment_image: np.ndarray | None = None,
    edited_frame: np.ndarray | None = None,
    latent_scale: float = DEFAULT_LATENT_SCALE,
) -> tuple[LatentSequence, torch.Tensor | None]:
    """Shared conditioning assembly for training and inference.

    ``edited_frame`` defaults to the oracle edit with the sample's own worn
    garment (the paired training signal)."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if edited_frame is None:
        editor = OracleEditor()
        request = EditorRequest(
            i_0=sample.source_video[0],
            instruction=instruction,
            garment_image=(
                sample.garment_image if garment_image is None else garment_image
            ),
            torso_quad0=sample.scene.torso_quad(0),
        )
        edited_frame = editor(request).i_r
    block = codec.encode_image(edited_frame)
    pose_latents = codec.encode_video(sample.pose_video)
    if variant in ("no_pose", "no_both"):
        pose_latents = np.zeros_like(pose_latents)
    seq = codec.assemble_sequence(block, pose_latents)
    seq.tokens = seq.tokens * np.float32(latent_scale)

    guider_features: torch.Tensor | None = None
    if guider is not None and variant not in ("no_agnostic", "no_both"):
        stacked = agnostic_with_mask(sample.agnostic_video, sample.agnostic_mask)
        guider_features = guider(torch.as_tensor(stacked))
    return seq, guider_features


def training_step(state: TrainState, batch: Sample) -> tuple[TrainState, float]:
    """One optimizer update on one sample; loss is MSE over video-token rows."""
    cfg = state.config
    step_seed = stable_seed(cfg.seed, "train-step", state.step)

    seq, guider_features = build_conditioning(
        state.codec,
        batch,
        state.guider,
        cfg.variant,
        cfg.instruction,
        latent_scale=cfg.latent_scale,
    )
    x1_np = state.codec.encode_video(batch.source_video) * cfg.latent_scale
    f, p, d = x1_np.shape
    dtype = state.model.pos_video.dtype
    x1 = torch.as_tensor(x1_np.reshape(f * p, d), dtype=dtype)

    path = sample_path(x1, step_seed)
    predicted = state.model(
        path.x_t, seq, path.t, cfg.instruction, guider_features
    )
    loss = velocity_loss(predicted, path.v_t)
    if not torch.isfinite(loss):
        raise PipelineError(f"non-finite loss at training step {state.step}")

    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()

    value = float(loss.detach().item())
    state.loss_history.append(value)
    state.step += 1
    return state, value


def pick_train_index(seed: int, step: int, n_train: int) -> int:
    """Stateless per-step data order, identical across variants and resumes."""
    if n_train < 1:
        raise ConfigError("empty training split")
    return stable_seed(seed, "data-order", step) % n_train


# ---------------------------------------------------------------------------
# sampling


def euler_sample(
    model: Callable[..., torch.Tensor],
    conditioning: "SamplingConditioning",
    steps: int,
    seed: int,
    x0: torch.Tensor | None = None,
    shape: tuple[int, ...] | None = None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Explicit Euler integration of the learned velocity field from noise
    (t=0) to data (t=1). ``model`` is anything with the backbone forward
    signature (x, seq, t, instruction, guider_features)."""
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if x0 is None:
        if shape is None:
            raise ConfigError("euler_sample needs x0 or shape")
        gen = torch.Generator().manual_seed(
            stable_seed(seed, "euler-noise") & 0x7FFF_FFFF_FFFF_FFFF
        )
        x = torch.randn(shape, generator=gen, dtype=dtype)
    else:
        x = x0.clone()
    with torch.no_grad():
        for k in range(steps):
            t_k = k / steps
            v = model(
                x,
                conditioning.seq,
                t_k,
                conditioning.instruction,
                conditioning.guider_features,
            )
            x = x + v / steps
            if not torch.isfinite(x).all():
                raise PipelineError(f"non-finite sampler state at step {k}")
    return x


@dataclass
class SamplingConditioning:
    seq: LatentSequence | None
    guider_features: torch.Tensor | None = None
    instruction: str = DEFAULT_INSTRUCTION
