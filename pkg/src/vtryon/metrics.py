"""Video quality metrics: exact SSIM, and seeded random-feature surrogates
for perceptual distance and Frechet video distance.

The perceptual and Frechet metrics keep the structure of their pretrained
counterparts (feature-space L2, Frechet statistics over pooled features)
but draw the feature extractors from a fixed seeded RNG, so numbers are
deterministic and comparable across runs of this artifact while making no
claim of comparability to published figures.

Everything here is float64 numpy and never touches the model stack.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
_WINDOW = 11
_SIGMA = 1.5


@dataclass(frozen=True)
class MetricsReport:
    ssim: float
    perc: float
    fvd: float
    setting: str
    sample_count: int
    feature_net_seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 4:
        raise ConfigError(f"expected video (F, C, H, W), got {a.shape}")
    return a, b


@lru_cache(maxsize=8)
def _gaussian_window(size: int = _WINDOW, sigma: float = _SIGMA) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _windowed_mean(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode Gaussian-weighted local means over the last two axes."""
    windows = sliding_window_view(x, kernel.shape, axis=(-2, -1))
    return np.tensordot(windows, kernel, axes=([-2, -1], [0, 1]))


def ssim_video(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over frames and channels; 11x11 Gaussian window, sigma 1.5,
    C1=0.01^2, C2=0.03^2 on unit dynamic range, valid-mode windows."""
    a, b = _check_pair(a, b)
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if lo < -1e-6 or hi > 1.0 + 1e-6:
        raise ConfigError(
            f"ssim_video expects values in [0,1], got range [{lo:.4f}, {hi:.4f}]"
        )
    if a.shape[-2] < _WINDOW or a.shape[-1] < _WINDOW:
        raise ConfigError(
            f"frames must be at least {_WINDOW}x{_WINDOW} for the SSIM window, "
            f"got {a.shape[-2]}x{a.shape[-1]}"
        )
    kernel = _gaussian_window()
    mu_a = _windowed_mean(a, kernel)
    mu_b = _windowed_mean(b, kernel)
    var_a = _windowed_mean(a * a, kernel) - mu_a**2
    var_b = _windowed_mean(b * b, kernel) - mu_b**2
    cov = _windowed_mean(a * b, kernel) - mu_a * mu_b
    ssim_map = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)) / (
        (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    )
    return float(ssim_map.mean())


# ---------------------------------------------------------------------------
# random-feature extractors


def _conv2d_valid(x: np.ndarray, weight: np.ndarray, stride: int) -> np.ndarray:
    """(C, H, W) x (O, C, k, k) -> (O, H', W'), valid padding."""
    k = weight.shape[-1]
    windows = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    return np.einsum("chwij,ocij->ohw", windows, weight, optimize=True)


def _conv3d_valid(x: np.ndarray, weight: np.ndarray, stride: tuple[int, int, int]) -> np.ndarray:
    """(C, F, H, W) x (O, C, k, k, k) -> (O, F', H', W'), valid padding."""
    k = weight.shape[-1]
    windows = sliding_window_view(x, (k, k, k), axis=(1, 2, 3))
    windows = windows[:, :: stride[0], :: stride[1], :: stride[2]]
    return np.einsum("cfhwijk,ocijk->ofhw", windows, weight, optimize=True)


@lru_cache(maxsize=8)
def _perceptual_weights(seed: int) -> tuple[np.ndarray, ...]:
    rng = np.random.default_rng(seed)
    dims = [(3, 8), (8, 16), (16, 32)]
    weights = []
    for c_in, c_out in dims:
        fan_in = c_in * 9
        weights.append(rng.standard_normal((c_out, c_in, 3, 3)) / np.sqrt(fan_in))
    return tuple(weights)


def perceptual_distance(a: np.ndarray, b: np.ndarray, feature_net_seed: int = 0) -> float:
    """Mean over frames of L2 distance between unit-normalized multi-layer
    random-conv features."""
    a, b = _check_pair(a, b)
    weights = _perceptual_weights(feature_net_seed)
    if min(a.shape[-2], a.shape[-1]) < 15:
        raise ConfigError(
            f"frames must be at least 15x15 for three stride-2 valid convs, "
            f"got {a.shape[-2]}x{a.shape[-1]}"
        )

    def frame_features(frame: np.ndarray) -> list[np.ndarray]:
        feats = []
        h = frame
        for w in weights:
            h = np.maximum(_conv2d_valid(h, w, stride=2), 0.0)
            flat = h.reshape(-1)
            feats.append(flat / (np.linalg.norm(flat) + 1e-12))
        return feats

    total = 0.0
    for fa, fb in zip(a, b):
        feats_a = frame_features(fa)
        feats_b = frame_features(fb)
        layer_d = [np.linalg.norm(x - y) for x, y in zip(feats_a, feats_b)]
        total += float(np.mean(layer_d))
    return total / a.shape[0]


@lru_cache(maxsize=8)
def _fvd_weights(seed: int) -> tuple[np.ndarray, ...]:
    rng = np.random.default_rng(seed + 7919)  # distinct stream from perceptual
    dims = [(3, 8), (8, 16)]
    weights = []
    for c_in, c_out in dims:
        fan_in = c_in * 27
        weights.append(rng.standard_normal((c_out, c_in, 3, 3, 3)) / np.sqrt(fan_in))
    return tuple(weights)


def video_features(video: np.ndarray, feature_net_seed: int = 0) -> np.ndarray:
    """Pooled random conv3d features for one (F, C, H, W) video."""
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4:
        raise ConfigError(f"expected video (F, C, H, W), got {video.shape}")
    weights = _fvd_weights(feature_net_seed)
    if video.shape[0] < 2 * len(weights) + 1:
        raise ConfigError(
            f"need at least {2 * len(weights) + 1} frames for the temporal "
            f"convs, got {video.shape[0]}"
        )
    if min(video.shape[-2], video.shape[-1]) < 7:
        raise ConfigError(
            f"frames must be at least 7x7 for two stride-2 valid convs, "
            f"got {video.shape[-2]}x{video.shape[-1]}"
        )
    h = video.transpose(1, 0, 2, 3)  # (C, F, H, W)
    pooled = []
    for w in weights:
        h = np.maximum(_conv3d_valid(h, w, stride=(1, 2, 2)), 0.0)
        pooled.append(h.mean(axis=(1, 2, 3)))
    return np.concatenate(pooled)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    sym = (mat + mat.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    eigvals = np.maximum(eigvals, 0.0)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def frechet_from_features(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets (n, dim)."""
    feats_a = np.atleast_2d(np.asarray(feats_a, dtype=np.float64))
    feats_b = np.atleast_2d(np.asarray(feats_b, dtype=np.float64))
    if feats_a.shape[0] < 2 or feats_b.shape[0] < 2:
        raise ConfigError("need at least 2 feature rows per set")
    if feats_a.shape[1] != feats_b.shape[1]:
        raise ConfigError(
            f"feature widths disagree: {feats_a.shape[1]} vs {feats_b.shape[1]}"
        )
    mu_a = feats_a.mean(axis=0)
    mu_b = feats_b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(feats_a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(feats_b, rowvar=False))
    sqrt_a = _psd_sqrt(cov_a)
    cross = _psd_sqrt(sqrt_a @ cov_b @ sqrt_a)
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))


def frechet_video_distance(
    set_a: list[np.ndarray], set_b: list[np.ndarray], feature_net_seed: int = 0
) -> float:
    if len(set_a) < 2 or len(set_b) < 2:
        raise ConfigError(
            f"need at least 2 videos per set, got {len(set_a)} and {len(set_b)}"
        )
    shapes = {np.asarray(v).shape for v in set_a} | {np.asarray(v).shape for v in set_b}
    if len(shapes) != 1:
        raise ConfigError(f"videos must share one shape, got {sorted(shapes)}")
    feats_a = np.stack([video_features(v, feature_net_seed) for v in set_a])
    feats_b = np.stack([video_features(v, feature_net_seed) for v in set_b])
    return frechet_from_features(feats_a, feats_b)
