"""Analytic FLOPs estimation and overhead reporting.

Convention, declared once: a multiply-add counts as 2 FLOPs; matrix multiply
(m, k) x (k, n) costs 2mkn; conv3d costs 2 * out_voxels * C_in * C_out * k^3;
normalizations, softmax, activations, and bias adds are excluded. Numbers
are internally consistent across configs, not comparable to published
absolute figures.
"""

from __future__ import annotations

import platform
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .adapters import LoraConfig, attach_lora, count_params
from .backbone import ModelConfig, init_model
from .codec import Codec, CodecParams
from .conditioning import build_guider, stride_schedule
from .errors import ConfigError


def matmul_flops(m: int, k: int, n: int) -> int:
    return 2 * m * k * n


def conv3d_flops(out_voxels: int, c_in: int, c_out: int, kernel: int = 3) -> int:
    return 2 * out_voxels * c_in * c_out * kernel**3


def attention_flops(n_q: int, n_kv: int, d: int) -> int:
    """Scores plus attention-value products; head count cancels out."""
    return 2 * (2 * n_q * n_kv * d)


def _sequence_lengths(cfg: ModelConfig, mode: str) -> tuple[int, int, int]:
    """(total rows N, video rows, garment rows) for the given codec mode."""
    block = 1 if mode == "single-pooled" else cfg.patches_per_frame
    video = cfg.video_tokens
    return block + video, video, block


def backbone_flops(cfg: ModelConfig, mode: str = "frame-block", text_len: int = 1) -> int:
    cfg.validate()
    n, n_video, _ = _sequence_lengths(cfg, mode)
    d, fd = cfg.d, cfg.ffn_dim
    per_block = (
        4 * matmul_flops(n, d, d)  # self q,k,v,o
        + attention_flops(n, n, d)
        + matmul_flops(n, d, d)  # cross q
        + 2 * matmul_flops(text_len, d, d)  # cross k,v
        + attention_flops(n, text_len, d)
        + matmul_flops(n, d, d)  # cross o
        + matmul_flops(n, d, fd)
        + matmul_flops(n, fd, d)
        + matmul_flops(1, d, 4 * d)  # timestep modulation
    )
    trunk = 2 * matmul_flops(1, d, d)
    head = matmul_flops(n_video, d, d)
    return cfg.n_blocks * per_block + trunk + head


def guider_flops(cfg: ModelConfig) -> int:
    cfg.validate()
    channels = cfg.resolved_guider_channels()
    strides = stride_schedule(cfg.patch_size)
    in_channels = [4] + list(channels[:-1])
    f, h, w = cfg.frames, cfg.height, cfg.width
    total = 0
    for c_in, c_out, s in zip(in_channels, channels, strides):
        f, h, w = f // s[0], h // s[1], w // s[2]
        total += conv3d_flops(f * h * w, c_in, c_out)
    total += matmul_flops(cfg.video_tokens, channels[-1], cfg.d)
    return total


def lora_flops(cfg: ModelConfig, lora: LoraConfig, mode: str = "frame-block", text_len: int = 1) -> int:
    cfg.validate()
    n, _, _ = _sequence_lengths(cfg, mode)
    d, fd, r = cfg.d, cfg.ffn_dim, lora.rank
    site_dims = {
        "q": (n, d, d),
        "k": (n, d, d),
        "v": (n, d, d),
        "o": (n, d, d),
        "cross_q": (n, d, d),
        "cross_k": (text_len, d, d),
        "cross_v": (text_len, d, d),
        "cross_o": (n, d, d),
        "ffn_up": (n, d, fd),
        "ffn_down": (n, fd, d),
    }
    total = 0
    for site in lora.canonical_sites():
        rows, d_in, d_out = site_dims[site]
        total += matmul_flops(rows, d_in, r) + matmul_flops(rows, r, d_out)
    return cfg.n_blocks * total


def flops_breakdown(
    cfg: ModelConfig,
    lora: LoraConfig | None = None,
    with_guider: bool = False,
    mode: str = "frame-block",
) -> dict[str, int]:
    parts = {"backbone": backbone_flops(cfg, mode)}
    parts["guider"] = guider_flops(cfg) if with_guider else 0
    parts["lora"] = lora_flops(cfg, lora, mode) if lora is not None else 0
    return parts


def estimate_flops(
    cfg: ModelConfig,
    lora: LoraConfig | None = None,
    with_guider: bool = False,
    mode: str = "frame-block",
) -> int:
    return sum(flops_breakdown(cfg, lora, with_guider, mode).values())


def overhead_pct(base: float, conditioned: float) -> float:
    if base <= 0:
        raise ConfigError(f"base count must be positive, got {base}")
    if conditioned < base:
        raise ConfigError(
            f"conditioned count {conditioned} below base {base}; models do not share a base"
        )
    return (conditioned - base) / base * 100.0


@dataclass(frozen=True)
class EfficiencyReport:
    base_params: int
    total_params: int
    trainable_params: int
    added_over_base_pct: float
    flops_base: int
    flops_conditioned: int
    flops_overhead_pct: float
    wall_time_per_step: float
    environment: str

    def to_dict(self) -> dict:
        return asdict(self)


def _environment_tag() -> str:
    return f"{platform.platform()} / python {platform.python_version()} / torch {torch.__version__}"


def build_report(
    cfg: ModelConfig,
    lora: LoraConfig | None = None,
    timing_runs: int = 5,
    warmups: int = 2,
) -> EfficiencyReport:
    """Parameter and FLOPs accounting for cfg with guider+adapters attached,
    plus a measured (environment-tagged) forward wall time."""
    if lora is None:
        lora = LoraConfig(rank=cfg.lora_rank)
    if timing_runs < 5:
        raise ConfigError(f"need >= 5 timing runs for a stable median, got {timing_runs}")
    base = init_model(cfg)
    adapted = attach_lora(base, lora)
    guider = build_guider(cfg)

    base_params = count_params(base).total
    report = count_params(adapted, guider)

    parts = flops_breakdown(cfg, lora, with_guider=True)
    flops_base = parts["backbone"]
    flops_conditioned = sum(parts.values())

    codec = Codec(
        CodecParams(
            d=cfg.d,
            patch_size=cfg.patch_size,
            height=cfg.height,
            width=cfg.width,
            seed=cfg.seed,
        )
    )
    rng = np.random.default_rng(0)
    video = rng.random((cfg.frames, 3, cfg.height, cfg.width), dtype=np.float32)
    mask = np.zeros((cfg.frames, 1, cfg.height, cfg.width), dtype=np.float32)
    block = codec.encode_image(video[0])
    seq = codec.assemble_sequence(block, codec.encode_video(video))
    x_t = torch.as_tensor(seq.video_rows()).clone()
    stacked = torch.as_tensor(np.concatenate([video, mask], axis=1))

    def one_step() -> None:
        with torch.no_grad():
            gf = guider(stacked)
            adapted(x_t, seq, 0.5, guider_features=gf)

    for _ in range(warmups):
        one_step()
    timings = []
    for _ in range(timing_runs):
        start = time.perf_counter()
        one_step()
        timings.append(time.perf_counter() - start)

    return EfficiencyReport(
        base_params=base_params,
        total_params=report.total,
        trainable_params=report.trainable,
        added_over_base_pct=overhead_pct(base_params, report.total),
        flops_base=flops_base,
        flops_conditioned=flops_conditioned,
        flops_overhead_pct=overhead_pct(flops_base, flops_conditioned),
        wall_time_per_step=statistics.median(timings),
        environment=_environment_tag(),
    )


def render_table(report: EfficiencyReport) -> str:
    rows = [
        ("FLOPs base (G)", f"{report.flops_base / 1e9:.4f}"),
        ("FLOPs conditioned (G)", f"{report.flops_conditioned / 1e9:.4f}"),
        ("FLOPs overhead (%)", f"{report.flops_overhead_pct:.4f}"),
        ("s/it (forward, median)", f"{report.wall_time_per_step:.6f}"),
        ("Inference params (M)", f"{report.total_params / 1e6:.4f}"),
        ("Training params (M)", f"{report.trainable_params / 1e6:.4f}"),
        ("Base params (M)", f"{report.base_params / 1e6:.4f}"),
        ("Added over base (%)", f"{report.added_over_base_pct:.4f}"),
    ]
    width = max(len(label) for label, _ in rows)
    lines = [f"{label.ljust(width)}  {value}" for label, value in rows]
    lines.append(f"environment: {report.environment}")
    return "\n".join(lines)


def scatter_rows(report: EfficiencyReport) -> list[dict]:
    """Fig. 2/3-style scatter data: params and FLOPs, base vs conditioned."""
    return [
        {
            "quantity": "params",
            "base": report.base_params,
            "conditioned": report.total_params,
            "trainable": report.trainable_params,
        },
        {
            "quantity": "flops",
            "base": report.flops_base,
            "conditioned": report.flops_conditioned,
            "trainable": 0,
        },
    ]
