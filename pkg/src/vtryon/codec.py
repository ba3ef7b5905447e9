"""Latent codec: fixed orthogonal patch embedding and sequence assembly.

A seeded orthogonal matrix maps each ``ps x ps`` spatial patch (all channels)
to a ``d``-dim token; the decoder is its transpose, so encode -> decode is
exact up to float32 rounding. Exact invertibility keeps every downstream
error attributable to the generative model rather than the codec.

Token layout convention used everywhere: frame-major, then patch-row-major
within the frame. ``assemble_sequence`` prepends the garment block, giving
the unified conditioning sequence the backbone consumes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .seeding import stable_seed

MODES = ("frame-block", "single-pooled")


@dataclass(frozen=True)
class CodecParams:
    d: int = 64
    patch_size: int = 4
    channels: int = 3
    height: int = 32
    width: int = 32
    seed: int = 0
    mode: str = "frame-block"

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size * self.patch_size

    @property
    def patches_per_frame(self) -> int:
        return (self.height // self.patch_size) * (self.width // self.patch_size)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown codec mode {self.mode!r}, expected one of {MODES}")
        if self.patch_size < 1:
            raise ConfigError("patch_size must be >= 1")
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ConfigError(
                f"frame {self.height}x{self.width} not divisible by patch size "
                f"{self.patch_size}"
            )
        if self.d < self.patch_dim:
            raise ConfigError(
                f"model width d={self.d} must be >= patch dim "
                f"{self.channels}*{self.patch_size}^2 = {self.patch_dim}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LatentSequence:
    """Unified conditioning sequence: garment rows first, then one row per
    (frame, patch) in frame-major order."""

    tokens: np.ndarray  # (N, d) float32
    block_len: int
    frames: int
    patches_per_frame: int

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def index_map(self) -> list[tuple]:
        rows: list[tuple] = [("garment", i) for i in range(self.block_len)]
        for f in range(self.frames):
            for p in range(self.patches_per_frame):
                rows.append(("frame", f, p))
        return rows

    def garment_rows(self) -> np.ndarray:
        return self.tokens[: self.block_len]

    def video_rows(self) -> np.ndarray:
        return self.tokens[self.block_len :]


class Codec:
    """Stateless encoder/decoder around one seeded orthogonal embedding."""

    def __init__(self, params: CodecParams):
        params.validate()
        self.params = params
        rng = np.random.default_rng(stable_seed(params.seed, "codec-embedding"))
        square = rng.standard_normal((params.d, params.d))
        q, r = np.linalg.qr(square)
        # canonical sign so the matrix is unique, not just orthogonal
        q = q * np.sign(np.diag(r))
        self.embedding = q[:, : params.patch_dim]  # (d, k), columns orthonormal

    # -- encoding ----------------------------------------------------------

    def _to_patches(self, frames: np.ndarray) -> np.ndarray:
        p = self.params
        f = frames.shape[0]
        if frames.shape[1:] != (p.channels, p.height, p.width):
            raise ConfigError(
                f"expected frames (*, {p.channels}, {p.height}, {p.width}), "
                f"got {frames.shape}"
            )
        hp = p.height // p.patch_size
        wp = p.width // p.patch_size
        x = frames.reshape(f, p.channels, hp, p.patch_size, wp, p.patch_size)
        x = x.transpose(0, 2, 4, 1, 3, 5)  # (F, hp, wp, C, ps, ps)
        return x.reshape(f, hp * wp, p.patch_dim)

    def _from_patches(self, patches: np.ndarray) -> np.ndarray:
        p = self.params
        f = patches.shape[0]
        hp = p.height // p.patch_size
        wp = p.width // p.patch_size
        x = patches.reshape(f, hp, wp, p.channels, p.patch_size, p.patch_size)
        x = x.transpose(0, 3, 1, 4, 2, 5)
        return x.reshape(f, p.channels, p.height, p.width)

    def encode_video(self, video: np.ndarray) -> np.ndarray:
        """(F, C, H, W) -> latent frames (F, P, d)."""
        video = np.asarray(video)
        if video.ndim != 4:
            raise ConfigError(f"encode_video wants (F, C, H, W), got {video.shape}")
        patches = self._to_patches(video.astype(np.float64))
        return (patches @ self.embedding.T).astype(np.float32)

    def decode_video(self, latents: np.ndarray) -> np.ndarray:
        """(F, P, d) -> (F, C, H, W). No clamping; that happens at media export."""
        latents = np.asarray(latents)
        p = self.params
        if latents.ndim != 3 or latents.shape[1:] != (p.patches_per_frame, p.d):
            raise ConfigError(
                f"decode_video wants (F, {p.patches_per_frame}, {p.d}), "
                f"got {latents.shape}"
            )
        patches = latents.astype(np.float64) @ self.embedding
        return self._from_patches(patches).astype(np.float32)

    def encode_image(self, image: np.ndarray, mode: str | None = None) -> np.ndarray:
        """Garment/reference block: (C, H, W) -> (P, d) or pooled (1, d)."""
        mode = self.params.mode if mode is None else mode
        if mode not in MODES:
            raise ConfigError(f"unknown codec mode {mode!r}, expected one of {MODES}")
        image = np.asarray(image)
        if image.ndim != 3:
            raise ConfigError(f"encode_image wants (C, H, W), got {image.shape}")
        block = self.encode_video(image[None])[0]  # (P, d)
        if mode == "single-pooled":
            return block.mean(axis=0, keepdims=True).astype(np.float32)
        return block

    # -- assembly ----------------------------------------------------------

    def assemble_sequence(self, garment_block: np.ndarray, latents: np.ndarray) -> LatentSequence:
        """Garment rows + flattened video-conditioning rows -> LatentSequence."""
        garment_block = np.asarray(garment_block, dtype=np.float32)
        latents = np.asarray(latents, dtype=np.float32)
        if garment_block.ndim != 2:
            raise ConfigError(
                f"garment block must be 2-D (rows, d), got {garment_block.shape}"
            )
        if latents.ndim != 3:
            raise ConfigError(f"latent frames must be (F, P, d), got {latents.shape}")
        if garment_block.shape[1] != latents.shape[2]:
            raise ConfigError(
                f"width mismatch: garment block d={garment_block.shape[1]} vs "
                f"latents d={latents.shape[2]}"
            )
        if garment_block.shape[0] not in (1, self.params.patches_per_frame):
            raise ConfigError(
                f"garment block length {garment_block.shape[0]} is neither 1 nor "
                f"P={self.params.patches_per_frame}"
            )
        f, p, d = latents.shape
        tokens = np.concatenate([garment_block, latents.reshape(f * p, d)], axis=0)
        return LatentSequence(
            tokens=tokens,
            block_len=garment_block.shape[0],
            frames=f,
            patches_per_frame=p,
        )


def disassemble(seq: LatentSequence) -> tuple[np.ndarray, np.ndarray]:
    """Inverse bookkeeping of assemble_sequence, via the index map."""
    rows = seq.index_map
    garment = np.stack([seq.tokens[i] for i, tag in enumerate(rows) if tag[0] == "garment"])
    video = np.stack([seq.tokens[i] for i, tag in enumerate(rows) if tag[0] == "frame"])
    return garment, video.reshape(seq.frames, seq.patches_per_frame, -1)
