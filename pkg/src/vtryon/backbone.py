"""Space-time transformer velocity predictor.

Tokens = [garment block rows | video rows]; video rows are the noisy latents
plus additive pose-latent conditioning plus a learned (frame, patch)
positional table; garment rows stay clean, get their own positional table,
attend and are attended to, but emit no output and receive no loss. Each
block runs self-attention over the whole sequence, cross-attention onto a
single hashed-instruction text token, and an FFN, with timestep scale/shift
modulation on the two norms.

The base model plays the role of a frozen pretrained backbone: training
never touches these weights, only adapters, the mask guider, and the text
embedding, so initialization here is about giving the adapters a usable
frozen feature machine, not about training the base itself.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .codec import LatentSequence
from .conditioning import inject
from .errors import ConfigError
from .seeding import stable_seed, stable_text_id

DEFAULT_INSTRUCTION = "replace the garment"

FULL_SCALE_GUIDER_CHANNELS = (32, 96, 192, 256)


def scaled_guider_channels(d: int) -> tuple[int, int, int, int]:
    """Guider channel schedule for width d, scaled down from the full-scale
    profile by d/1024 and floored at 4."""
    return tuple(max(4, (c * d) // 1024) for c in FULL_SCALE_GUIDER_CHANNELS)


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    n_blocks: int = 4
    n_heads: int = 4
    ffn_mult: int = 4
    patch_size: int = 4
    frames: int = 8
    height: int = 32
    width: int = 32
    guider_channels: tuple[int, int, int, int] | None = None
    lora_rank: int = 4
    text_vocab: int = 32
    seed: int = 0
    time_gain_floor: float = 0.2

    @property
    def patches_per_frame(self) -> int:
        return (self.height // self.patch_size) * (self.width // self.patch_size)

    @property
    def video_tokens(self) -> int:
        return self.frames * self.patches_per_frame

    @property
    def ffn_dim(self) -> int:
        return self.d * self.ffn_mult

    def resolved_guider_channels(self) -> tuple[int, int, int, int]:
        if self.guider_channels is None:
            return scaled_guider_channels(self.d)
        return tuple(self.guider_channels)

    def validate(self) -> None:
        if self.d % self.n_heads:
            raise ConfigError(f"d not divisible by n_heads: d={self.d}, n_heads={self.n_heads}")
        if self.d % 2:
            raise ConfigError(f"d must be even for the sinusoidal timestep embedding, got {self.d}")
        if self.n_blocks < 1:
            raise ConfigError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.ffn_mult < 1:
            raise ConfigError(f"ffn_mult must be >= 1, got {self.ffn_mult}")
        if self.patch_size < 1 or self.patch_size & (self.patch_size - 1):
            raise ConfigError(f"patch_size must be a power of two, got {self.patch_size}")
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ConfigError(
                f"frame {self.height}x{self.width} not divisible by patch size {self.patch_size}"
            )
        if self.text_vocab < 1:
            raise ConfigError(f"text_vocab must be >= 1, got {self.text_vocab}")
        schedule = self.resolved_guider_channels()
        if len(schedule) != 4:
            raise ConfigError(f"guider channel schedule needs exactly 4 entries, got {schedule}")
        if any(c < 1 for c in schedule):
            raise ConfigError(f"guider channels must be positive, got {schedule}")
        if not 0.0 < self.time_gain_floor <= 1.0:
            raise ConfigError(
                f"time_gain_floor must be in (0, 1], got {self.time_gain_floor}"
            )

    def to_dict(self) -> dict:
        out = asdict(self)
        if out["guider_channels"] is not None:
            out["guider_channels"] = list(out["guider_channels"])
        return out

    @staticmethod
    def from_dict(data: dict) -> "ModelConfig":
        kwargs = dict(data)
        if kwargs.get("guider_channels") is not None:
            kwargs["guider_channels"] = tuple(kwargs["guider_channels"])
        return ModelConfig(**kwargs)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of t in [0,1], scaled to the usual 0..1000 range."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period)
        * torch.arange(half, dtype=t.dtype, device=t.device)
        / half
    )
    args = 1000.0 * t.reshape(-1, 1) * freqs.reshape(1, -1)
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class Attention(nn.Module):
    """Unbatched multi-head attention over (N, d) rows.

    Addressing (q/k) and content (v) inputs are separate so positional
    embeddings can steer attention without entering the value stream."""

    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)

    def forward(
        self, q_in: torch.Tensor, k_in: torch.Tensor, v_in: torch.Tensor
    ) -> torch.Tensor:
        nq, nk = q_in.shape[0], k_in.shape[0]
        q = self.q(q_in).reshape(nq, self.n_heads, self.head_dim).transpose(0, 1)
        k = self.k(k_in).reshape(nk, self.n_heads, self.head_dim).transpose(0, 1)
        v = self.v(v_in).reshape(nk, self.n_heads, self.head_dim).transpose(0, 1)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(0, 1).reshape(nq, -1)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, d: int, hidden: int):
        super().__init__()
        self.up = nn.Linear(d, hidden)
        self.down = nn.Linear(hidden, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.down(torch.nn.functional.gelu(self.up(x)))


def _modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1.0 + scale) + shift


class TransformerBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d, elementwise_affine=False, eps=1e-6)
        self.norm2 = nn.LayerNorm(cfg.d, elementwise_affine=False, eps=1e-6)
        self.self_attn = Attention(cfg.d, cfg.n_heads)
        self.cross_attn = Attention(cfg.d, cfg.n_heads)
        self.ffn = FeedForward(cfg.d, cfg.ffn_dim)
        self.modulation = nn.Linear(cfg.d, 4 * cfg.d)

    def forward(
        self,
        h: torch.Tensor,
        pos: torch.Tensor,
        text_row: torch.Tensor,
        t_emb: torch.Tensor,
    ) -> torch.Tensor:
        shift1, scale1, shift2, scale2 = self.modulation(t_emb).chunk(4, dim=-1)
        normed = _modulate(self.norm1(h), shift1, scale1)
        h = h + self.self_attn(normed + pos, normed + pos, normed)
        h = h + self.cross_attn(h + pos, text_row, text_row)
        h = h + self.ffn(_modulate(self.norm2(h), shift2, scale2))
        return h


class VideoBackbone(nn.Module):
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(TransformerBlock(cfg) for _ in range(cfg.n_blocks))
        self.time_in = nn.Linear(cfg.d, cfg.d)
        self.time_out = nn.Linear(cfg.d, cfg.d)
        self.pos_video = nn.Parameter(torch.zeros(cfg.video_tokens, cfg.d))
        self.pos_garment = nn.Parameter(torch.zeros(cfg.patches_per_frame, cfg.d))
        self.text_embed = nn.Embedding(cfg.text_vocab, cfg.d)
        self.head = nn.Linear(cfg.d, cfg.d)

    def _param_like(self) -> torch.Tensor:
        return self.pos_video

    def text_row(self, instruction: str) -> torch.Tensor:
        idx = stable_text_id(instruction, self.cfg.text_vocab)
        return self.text_embed.weight[idx].reshape(1, -1)

    def time_embedding(self, t: float | torch.Tensor) -> torch.Tensor:
        ref = self._param_like()
        t_tensor = torch.as_tensor(t, dtype=ref.dtype, device=ref.device)
        emb = timestep_embedding(t_tensor, self.cfg.d)
        return self.time_out(torch.nn.functional.silu(self.time_in(emb)))

    def forward(
        self,
        x_t: torch.Tensor,
        seq: LatentSequence,
        t: float | torch.Tensor,
        instruction: str = DEFAULT_INSTRUCTION,
        guider_features: torch.Tensor | None = None,
    ) -> torch.Tensor:
        ref = self._param_like()
        t_val = float(torch.as_tensor(t).reshape(()).item())
        if not 0.0 <= t_val <= 1.0:
            raise ValueError(f"t outside [0,1]: {t_val}")
        x_t = torch.as_tensor(x_t, dtype=ref.dtype, device=ref.device)
        cond = torch.as_tensor(seq.video_rows(), dtype=ref.dtype, device=ref.device)
        if x_t.shape != cond.shape:
            raise ValueError(
                f"x_t shape {tuple(x_t.shape)} does not match sequence video rows "
                f"{tuple(cond.shape)}"
            )
        if x_t.shape[0] != self.cfg.video_tokens or x_t.shape[1] != self.cfg.d:
            raise ValueError(
                f"x_t shape {tuple(x_t.shape)} does not match model grid "
                f"({self.cfg.video_tokens}, {self.cfg.d})"
            )
        garment = torch.as_tensor(seq.garment_rows(), dtype=ref.dtype, device=ref.device)
        if garment.shape[0] > self.pos_garment.shape[0]:
            raise ValueError(
                f"garment block of {garment.shape[0]} rows exceeds positional "
                f"table of {self.pos_garment.shape[0]}"
            )

        h = torch.cat([garment, x_t + cond], dim=0)
        pos = torch.cat([self.pos_garment[: garment.shape[0]], self.pos_video], dim=0)

        text_row = self.text_row(instruction)
        t_emb = self.time_embedding(t_val)
        block_len = garment.shape[0]
        for i, block in enumerate(self.blocks):
            h = block(h, pos, text_row, t_emb)
            if i == 0 and guider_features is not None:
                h = inject(h, guider_features, block_len)
        # Denoiser parametrization: the head regresses a data estimate and
        # the velocity is derived from it. This keeps late-time integration
        # strongly contractive, which plain velocity output cannot learn.
        estimate = self.head(h[block_len:])
        gain = 1.0 / max(1.0 - t_val, self.cfg.time_gain_floor)
        return (estimate - x_t) * gain


# Identity gains and noise scales for the frozen-base init. The base stands
# in for a pretrained video model, so its residual stream is basis-aligned
# the way pretraining leaves it: near-identity q/k make attention start
# roughly diagonal, near-identity values pass content through recognizably,
# and the head starts near -identity (a crude noise-removing velocity
# prior). A fully random init leaves the output basis scrambled behind
# frozen weights, which low-rank adapters cannot undo, and training then
# stalls at the trivial optimum of silencing the network.
INIT_SCALES = {
    "qk_eye": 1.2,
    "v_eye": 1.0,
    "o_eye": 0.25,
    "head_eye": 0.2,
    "pos_std": 0.3,
    "noise_std": 0.02,
}


def init_model(cfg: ModelConfig) -> VideoBackbone:
    """Build and deterministically initialize the frozen-base analog.

    Weights are filled from one seeded generator in sorted parameter-name
    order, so the result depends only on (cfg), not construction order.
    """
    cfg.validate()
    model = VideoBackbone(cfg)
    gen = torch.Generator().manual_seed(stable_seed(cfg.seed, "backbone-init"))
    eye = torch.eye(cfg.d)
    s = INIT_SCALES
    with torch.no_grad():
        for name, param in sorted(model.named_parameters()):
            if name.endswith(".bias"):
                param.zero_()
            elif name in ("pos_video", "pos_garment"):
                param.normal_(0.0, s["pos_std"], generator=gen)
            elif name == "text_embed.weight":
                param.normal_(0.0, 0.1, generator=gen)
            elif "modulation" in name:
                param.normal_(0.0, s["noise_std"], generator=gen)
            elif ".self_attn.q." in name or ".self_attn.k." in name:
                param.normal_(0.0, s["noise_std"], generator=gen).add_(
                    eye, alpha=s["qk_eye"]
                )
            elif ".self_attn.v." in name:
                param.normal_(0.0, s["noise_std"], generator=gen).add_(
                    eye, alpha=s["v_eye"]
                )
            elif ".self_attn.o." in name:
                param.normal_(0.0, s["noise_std"], generator=gen).add_(
                    eye, alpha=s["o_eye"]
                )
            elif ".cross_attn.o." in name or ".ffn.down." in name:
                param.normal_(0.0, s["noise_std"], generator=gen)
            elif name == "head.weight":
                param.normal_(0.0, s["noise_std"], generator=gen).add_(
                    eye, alpha=s["head_eye"]
                )  # head estimates data latents, so it starts as a weak copy
            else:
                fan_in = param.shape[1] if param.ndim == 2 else param.shape[0]
                param.normal_(0.0, 1.0 / math.sqrt(fan_in), generator=gen)
    return model
