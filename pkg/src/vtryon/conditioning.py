"""Mask guider: 3D-conv encoder over the agnostic video plus mask channel.

Four conv3d layers (kernel 3x3x3) whose spatial strides multiply out to the
codec patch size, followed by a zero-initialized linear onto model width.
The zero init makes the additive injection a provable no-op on an untrained
checkpoint; everything the guider learns therefore rides on top of the
frozen base instead of disturbing it.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .errors import ConfigError
from .seeding import stable_seed


def stride_schedule(patch_size: int) -> list[tuple[int, int, int]]:
    """Distribute log2(ps) spatial halvings over the four layers, temporal
    stride always 1."""
    if patch_size < 1 or patch_size & (patch_size - 1):
        raise ConfigError(f"patch_size must be a power of two, got {patch_size}")
    halvings = int(math.log2(patch_size))
    if halvings > 4:
        raise ConfigError(f"patch_size {patch_size} needs more than 4 conv strides")
    return [(1, 2, 2) if i < halvings else (1, 1, 1) for i in range(4)]


class MaskGuider(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        channels = cfg.resolved_guider_channels()
        strides = stride_schedule(cfg.patch_size)
        in_channels = [4] + list(channels[:-1])  # video RGB + binary mask
        self.convs = nn.ModuleList(
            nn.Conv3d(c_in, c_out, kernel_size=3, stride=s, padding=1)
            for c_in, c_out, s in zip(in_channels, channels, strides)
        )
        self.final = nn.Linear(channels[-1], cfg.d)

    def forward(self, x_agn: torch.Tensor) -> torch.Tensor:
        """(F, 4, H, W) -> guider features, one row per video token."""
        ref = self.final.weight
        x_agn = torch.as_tensor(x_agn, dtype=ref.dtype, device=ref.device)
        if x_agn.ndim != 4 or x_agn.shape[1] != 4:
            raise ConfigError(
                f"guider input must be (F, 4, H, W) video+mask, got {tuple(x_agn.shape)}"
            )
        if x_agn.shape[2] != self.cfg.height or x_agn.shape[3] != self.cfg.width:
            raise ConfigError(
                f"guider input grid {tuple(x_agn.shape[2:])} does not match model "
                f"frame {self.cfg.height}x{self.cfg.width}"
            )
        h = x_agn.permute(1, 0, 2, 3).unsqueeze(0)  # (1, 4, F, H, W)
        for conv in self.convs:
            h = torch.nn.functional.silu(conv(h))
        # (1, C, F, H/ps, W/ps) -> frame-major, patch-row-major rows
        h = h.squeeze(0).permute(1, 2, 3, 0)
        tokens = h.reshape(-1, h.shape[-1])
        return self.final(tokens)


def guider_forward(guider: MaskGuider, x_agn: torch.Tensor | np.ndarray) -> torch.Tensor:
    return guider(torch.as_tensor(np.asarray(x_agn)))


def inject(
    features: torch.Tensor, guider_features: torch.Tensor, block_len: int
) -> torch.Tensor:
    """Add guider features onto the video-token rows; garment rows untouched."""
    video = features[block_len:]
    if guider_features.shape != video.shape:
        raise ValueError(
            f"guider feature rows {tuple(guider_features.shape)} do not align with "
            f"video-token rows {tuple(video.shape)}"
        )
    return torch.cat([features[:block_len], video + guider_features], dim=0)


def build_guider(cfg) -> MaskGuider:
    """Deterministic guider init; convs seeded, final linear exactly zero."""
    guider = MaskGuider(cfg)
    gen = torch.Generator().manual_seed(stable_seed(cfg.seed, "guider-init"))
    with torch.no_grad():
        for name, param in sorted(guider.named_parameters()):
            if name.startswith("final."):
                param.zero_()
            elif name.endswith(".bias"):
                param.zero_()
            else:
                fan_in = param.shape[1] * param.shape[2] * param.shape[3] * param.shape[4]
                param.normal_(0.0, 1.0 / math.sqrt(fan_in), generator=gen)
    return guider


def agnostic_with_mask(agnostic_video: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Stack the binary mask as a fourth channel: (F,3,H,W)+(F,1,H,W) -> (F,4,H,W)."""
    agnostic_video = np.asarray(agnostic_video, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.float32)
    if agnostic_video.ndim != 4 or mask.ndim != 4 or mask.shape[1] != 1:
        raise ConfigError(
            f"expected (F,3,H,W) video and (F,1,H,W) mask, got "
            f"{agnostic_video.shape} and {mask.shape}"
        )
    if agnostic_video.shape[0] != mask.shape[0] or agnostic_video.shape[2:] != mask.shape[2:]:
        raise ConfigError(
            f"video/mask grids disagree: {agnostic_video.shape} vs {mask.shape}"
        )
    return np.concatenate([agnostic_video, mask], axis=1)
