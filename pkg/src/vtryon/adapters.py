"""Low-rank adapters: attach, merge, and parameter bookkeeping.

An adapted projection computes ``y = W x + (alpha/r) * A (B^T x)`` with the
host weight frozen; A is seeded-normal with std 1/sqrt(r) and B starts at
zero, so a fresh attach leaves every forward bit-identical to the base
model. Merging bakes ``W + (alpha/r) A B^T`` back into a plain linear.

Site tokens name individual projections: q, k, v, o for self-attention,
cross_q/cross_k/cross_v/cross_o for the text cross-attention, ffn_up and
ffn_down for the feed-forward pair. The default set adapts every attention
projection and leaves the FFN pair selectable.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .backbone import VideoBackbone
from .conditioning import MaskGuider
from .errors import ConfigError
from .seeding import stable_seed

SITE_UNIVERSE = (
    "q",
    "k",
    "v",
    "o",
    "cross_q",
    "cross_k",
    "cross_v",
    "cross_o",
    "ffn_up",
    "ffn_down",
)
DEFAULT_SITES = SITE_UNIVERSE[:8]

_SITE_ALIASES = {
    "ffn-up": "ffn_up",
    "ffn-down": "ffn_down",
}


def canonical_site(site: str) -> str:
    token = _SITE_ALIASES.get(site.lower(), site.lower())
    if token not in SITE_UNIVERSE:
        raise ConfigError(
            f"unknown LoRA site {site!r}; valid sites: {', '.join(SITE_UNIVERSE)}"
        )
    return token


def _site_module(model: VideoBackbone, block_index: int, site: str) -> nn.Linear:
    block = model.blocks[block_index]
    if site in ("q", "k", "v", "o"):
        return getattr(block.self_attn, site)
    if site.startswith("cross_"):
        return getattr(block.cross_attn, site.removeprefix("cross_"))
    if site == "ffn_up":
        return block.ffn.up
    return block.ffn.down


def _set_site_module(model: VideoBackbone, block_index: int, site: str, module: nn.Module) -> None:
    block = model.blocks[block_index]
    if site in ("q", "k", "v", "o"):
        setattr(block.self_attn, site, module)
    elif site.startswith("cross_"):
        setattr(block.cross_attn, site.removeprefix("cross_"), module)
    elif site == "ffn_up":
        block.ffn.up = module
    else:
        block.ffn.down = module


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 4
    alpha: float = 4.0
    sites: tuple[str, ...] = DEFAULT_SITES
    init_seed: int = 0

    def validate(self) -> None:
        if self.rank < 1:
            raise ConfigError(f"LoRA rank must be >= 1, got {self.rank}")
        seen = set()
        for site in self.sites:
            token = canonical_site(site)
            if token in seen:
                raise ConfigError(f"duplicate LoRA site {token!r}")
            seen.add(token)

    def canonical_sites(self) -> tuple[str, ...]:
        self.validate()
        ordered = [canonical_site(s) for s in self.sites]
        return tuple(s for s in SITE_UNIVERSE if s in ordered)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["sites"] = list(self.canonical_sites())
        return out

    @staticmethod
    def from_dict(data: dict) -> "LoraConfig":
        kwargs = dict(data)
        if "sites" in kwargs:
            kwargs["sites"] = tuple(kwargs["sites"])
        return LoraConfig(**kwargs)


class LoraLinear(nn.Linear):
    """nn.Linear subclass so the host weight keeps its parameter name."""

    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__(base.in_features, base.out_features, bias=base.bias is not None)
        with torch.no_grad():
            self.weight.copy_(base.weight)
            if base.bias is not None:
                self.bias.copy_(base.bias)
        self.weight.requires_grad_(False)
        if self.bias is not None:
            self.bias.requires_grad_(False)
        self.rank = rank
        self.scaling = alpha / rank
        self.lora_A = nn.Parameter(torch.zeros(base.out_features, rank))
        self.lora_B = nn.Parameter(torch.zeros(base.in_features, rank))

    def delta_weight(self) -> torch.Tensor:
        return self.scaling * (self.lora_A @ self.lora_B.T)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = torch.nn.functional.linear(x, self.weight, self.bias)
        return y + (x @ self.lora_B) @ self.lora_A.T * self.scaling


def attach_lora(model: VideoBackbone, cfg: LoraConfig) -> VideoBackbone:
    """Copy the model, freeze everything, wrap selected projections with
    adapters, and leave only adapters + text embedding trainable."""
    cfg.validate()
    sites = cfg.canonical_sites()
    adapted = copy.deepcopy(model)
    for param in adapted.parameters():
        param.requires_grad_(False)
    adapted.text_embed.weight.requires_grad_(True)

    gen = torch.Generator().manual_seed(stable_seed(cfg.init_seed, "lora-init"))
    for block_index in range(len(adapted.blocks)):
        for site in sites:
            host = _site_module(adapted, block_index, site)
            limit = min(host.in_features, host.out_features)
            if cfg.rank >= limit:
                raise ConfigError(
                    f"rank not < min(d,k): rank {cfg.rank} at site "
                    f"blocks.{block_index}.{site} with min(d,k)={limit}"
                )
            wrapped = LoraLinear(host, cfg.rank, cfg.alpha).to(host.weight.dtype)
            with torch.no_grad():
                wrapped.lora_A.normal_(0.0, 1.0 / math.sqrt(cfg.rank), generator=gen)
                wrapped.lora_B.zero_()
            _set_site_module(adapted, block_index, site, wrapped)
    return adapted


def merge_lora(model: VideoBackbone) -> VideoBackbone:
    """Bake adapter deltas into plain linears; plain models pass through."""
    merged = copy.deepcopy(model)
    for block_index in range(len(merged.blocks)):
        for site in SITE_UNIVERSE:
            module = _site_module(merged, block_index, site)
            if not isinstance(module, LoraLinear):
                continue
            plain = nn.Linear(
                module.in_features, module.out_features, bias=module.bias is not None
            ).to(module.weight.dtype)
            with torch.no_grad():
                plain.weight.copy_(module.weight + module.delta_weight())
                if module.bias is not None:
                    plain.bias.copy_(module.bias)
            _set_site_module(merged, block_index, site, plain)
    for param in merged.parameters():
        param.requires_grad_(True)
    return merged


def has_adapters(model: VideoBackbone) -> bool:
    return any(isinstance(m, LoraLinear) for m in model.modules())


@dataclass(frozen=True)
class ParamReport:
    total: int
    trainable: int
    added_over_base: int


def count_params(model: nn.Module, guider: MaskGuider | None = None) -> ParamReport:
    """Exact integer counts by named-parameter traversal. ``added_over_base``
    counts everything a plain base model of the same config lacks: adapter
    factors and the whole guider."""
    total = 0
    trainable = 0
    added = 0
    for name, param in model.named_parameters():
        n = param.numel()
        total += n
        if param.requires_grad:
            trainable += n
        if ".lora_A" in name or ".lora_B" in name:
            added += n
    if guider is not None:
        for param in guider.parameters():
            n = param.numel()
            total += n
            added += n
            if param.requires_grad:
                trainable += n
    return ParamReport(total=total, trainable=trainable, added_over_base=added)


# ---------------------------------------------------------------------------
# checkpoint tensor naming


def _site_of_param(name: str) -> tuple[int, str, str] | None:
    """blocks.<i>.<attn-or-ffn-path>.lora_{A,B} -> (block, site token, factor)."""
    parts = name.split(".")
    if len(parts) != 5 or parts[0] != "blocks" or not parts[4].startswith("lora_"):
        return None
    block_index = int(parts[1])
    owner, attr = parts[2], parts[3]
    if owner == "self_attn":
        site = attr
    elif owner == "cross_attn":
        site = f"cross_{attr}"
    elif owner == "ffn":
        site = "ffn_up" if attr == "up" else "ffn_down"
    else:
        return None
    return block_index, site, parts[4].removeprefix("lora_")


def checkpoint_name(param_name: str) -> str:
    """Stable public tensor name for a backbone parameter."""
    located = _site_of_param(param_name)
    if located is not None:
        block_index, site, factor = located
        return f"lora.{block_index}.{site}.{factor}"
    return param_name


def parameter_name(ckpt_name: str) -> str:
    """Inverse of checkpoint_name."""
    if not ckpt_name.startswith("lora."):
        return ckpt_name
    _, block_index, site, factor = ckpt_name.split(".")
    if site.startswith("cross_"):
        path = f"cross_attn.{site.removeprefix('cross_')}"
    elif site.startswith("ffn_"):
        path = f"ffn.{'up' if site == 'ffn_up' else 'down'}"
    else:
        path = f"self_attn.{site}"
    return f"blocks.{block_index}.{path}.lora_{factor}"
