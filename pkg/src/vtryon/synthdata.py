"""Procedural stick-figure try-on world.

Renders short videos of an articulated 5-keypoint figure wearing a textured
garment panel, plus everything a try-on trainer needs: pose videos (white
skeleton strokes on black), agnostic videos (torso region filled mid-gray),
binary agnostic masks, garment reference images, and exact ground-truth
renders for every garment in the pool. Ground truth exists by construction,
so paired and unpaired evaluation are both exact.

All rendering is pure float64 math cast to float32 at the end; identical
seeds give bit-identical arrays and therefore byte-identical files.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.ndimage import binary_dilation

from . import tensorio
from .errors import ConfigError, FormatError
from .seeding import stable_seed

JOINT_NAMES = ("hip", "shoulder", "head", "left_hand", "right_hand")
# Limb segments drawn for both the figure and the pose video.
SEGMENTS = (
    ("hip", "shoulder"),
    ("shoulder", "head"),
    ("shoulder", "left_hand"),
    ("shoulder", "right_hand"),
)
PATTERNS = ("stripes", "checks", "dots", "solid")

LIMB_COLOR = (0.82, 0.64, 0.52)
AGNOSTIC_FILL = 0.5


@dataclass(frozen=True)
class GenConfig:
    """Generation parameters for scenes, garments, and the dataset split."""

    num_frames: int = 8
    height: int = 32
    width: int = 32
    patch_size: int = 4
    garment_size: int = 16
    pool_size: int = 8
    train_samples: int = 64
    eval_samples: int = 16
    seed: int = 7
    max_amplitude: float = 3.0
    stroke_width: float = 2.0
    head_radius: float = 2.2
    shoulder_halfwidth: float = 5.0
    hip_halfwidth: float = 3.5
    mask_margin: int = 3
    background_kinds: tuple[str, ...] = ("solid",)
    background_jitter: float = 0.05

    def validate(self) -> None:
        if self.num_frames < 4:
            raise ConfigError(f"num_frames must be >= 4, got {self.num_frames}")
        if self.height < 32 or self.width < 32:
            raise ConfigError(
                f"frame must be at least 32x32, got {self.height}x{self.width}"
            )
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ConfigError(
                f"frame {self.height}x{self.width} not divisible by patch size "
                f"{self.patch_size}"
            )
        if self.max_amplitude < 0:
            raise ConfigError("max_amplitude must be nonnegative")
        for kind in self.background_kinds:
            if kind not in ("gradient", "checker", "solid"):
                raise ConfigError(f"unknown background kind {kind!r}")
        if self.pool_size < 1:
            raise ConfigError("pool_size must be >= 1")


@dataclass(frozen=True)
class JointTrack:
    """One keypoint: an anchor plus a sinusoidal offset.

    Every joint except the hip is chained: its anchor is relative to the
    parent's current position, so motion propagates down the chain.
    """

    base: tuple[float, float]
    amplitude: float
    frequency: float
    phase: float

    def offset(self, frame: int) -> np.ndarray:
        angle = self.frequency * frame + self.phase
        return self.amplitude * np.array(
            [np.sin(angle), 0.5 * np.cos(angle)], dtype=np.float64
        )


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    num_frames: int
    height: int
    width: int
    background_kind: str
    background_params: dict
    joints: dict[str, JointTrack]
    shoulder_halfwidth: float
    hip_halfwidth: float
    stroke_width: float = 2.0
    head_radius: float = 2.2

    def keypoints(self, frame: int) -> dict[str, np.ndarray]:
        pos: dict[str, np.ndarray] = {}
        hip = self.joints["hip"]
        pos["hip"] = np.asarray(hip.base, dtype=np.float64) + hip.offset(frame)
        for name, parent in (
            ("shoulder", "hip"),
            ("head", "shoulder"),
            ("left_hand", "shoulder"),
            ("right_hand", "shoulder"),
        ):
            track = self.joints[name]
            pos[name] = pos[parent] + np.asarray(track.base) + track.offset(frame)
        return pos

    def torso_quad(self, frame: int) -> np.ndarray:
        """Corners (4, 2) as (x, y): shoulder-left, shoulder-right, hip-right,
        hip-left. A trapezoid around the hip->shoulder axis."""
        pts = self.keypoints(frame)
        hip, shoulder = pts["hip"], pts["shoulder"]
        axis = shoulder - hip
        length = float(np.hypot(*axis))
        if length < 1e-9:
            raise ConfigError(f"degenerate torso at frame {frame} (seed {self.seed})")
        normal = np.array([axis[1], -axis[0]]) / length
        return np.stack(
            [
                shoulder - self.shoulder_halfwidth * normal,
                shoulder + self.shoulder_halfwidth * normal,
                hip + self.hip_halfwidth * normal,
                hip - self.hip_halfwidth * normal,
            ]
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "num_frames": self.num_frames,
            "height": self.height,
            "width": self.width,
            "background_kind": self.background_kind,
            "background_params": self.background_params,
            "joints": {
                name: {
                    "base": list(track.base),
                    "amplitude": track.amplitude,
                    "frequency": track.frequency,
                    "phase": track.phase,
                }
                for name, track in self.joints.items()
            },
            "shoulder_halfwidth": self.shoulder_halfwidth,
            "hip_halfwidth": self.hip_halfwidth,
            "stroke_width": self.stroke_width,
            "head_radius": self.head_radius,
        }

    @staticmethod
    def from_dict(data: dict) -> "SceneSpec":
        joints = {
            name: JointTrack(
                base=(float(j["base"][0]), float(j["base"][1])),
                amplitude=float(j["amplitude"]),
                frequency=float(j["frequency"]),
                phase=float(j["phase"]),
            )
            for name, j in data["joints"].items()
        }
        return SceneSpec(
            seed=int(data["seed"]),
            num_frames=int(data["num_frames"]),
            height=int(data["height"]),
            width=int(data["width"]),
            background_kind=str(data["background_kind"]),
            background_params=dict(data["background_params"]),
            joints=joints,
            shoulder_halfwidth=float(data["shoulder_halfwidth"]),
            hip_halfwidth=float(data["hip_halfwidth"]),
            stroke_width=float(data["stroke_width"]),
            head_radius=float(data["head_radius"]),
        )


@dataclass(frozen=True)
class GarmentSpec:
    garment_id: int
    pattern: str
    period: int
    color_a: tuple[float, float, float]
    color_b: tuple[float, float, float]
    height: int = 16
    width: int = 16

    def to_dict(self) -> dict:
        return {
            "garment_id": self.garment_id,
            "pattern": self.pattern,
            "period": self.period,
            "color_a": list(self.color_a),
            "color_b": list(self.color_b),
            "height": self.height,
            "width": self.width,
        }

    @staticmethod
    def from_dict(data: dict) -> "GarmentSpec":
        return GarmentSpec(
            garment_id=int(data["garment_id"]),
            pattern=str(data["pattern"]),
            period=int(data["period"]),
            color_a=tuple(float(c) for c in data["color_a"]),
            color_b=tuple(float(c) for c in data["color_b"]),
            height=int(data["height"]),
            width=int(data["width"]),
        )


@dataclass
class Sample:
    scene: SceneSpec
    source_video: np.ndarray  # (F, 3, H, W) float32
    pose_video: np.ndarray  # (F, 3, H, W)
    agnostic_video: np.ndarray  # (F, 3, H, W)
    agnostic_mask: np.ndarray  # (F, 1, H, W) binary float32
    garment_image: np.ndarray  # (3, Hg, Wg)
    truth_videos: dict[int, np.ndarray]
    g_worn: int
    garment_ids: tuple[int, ...]


# ---------------------------------------------------------------------------
# scene construction


def make_scene(config: GenConfig, seed: int) -> SceneSpec:
    """Sample a scene; deterministic in (config, seed).

    Anchors are clamped into per-joint safe boxes sized so that every
    keypoint, the head disc, and the torso quad stay inside the frame for
    any phase of the motion. An empty safe box (amplitude too large for the
    frame) is a configuration error.
    """
    config.validate()
    rng = np.random.default_rng(stable_seed(seed, "scene"))
    h, w = float(config.height - 1), float(config.width - 1)

    kind = str(rng.choice(config.background_kinds))
    base_bg = np.array([0.13, 0.15, 0.19])
    jitter = rng.uniform(-config.background_jitter, config.background_jitter, size=3)
    color0 = np.clip(base_bg + jitter, 0.0, 1.0)
    color1 = np.clip(color0 + rng.uniform(0.03, 0.10, size=3), 0.0, 1.0)
    background_params: dict = {
        "color0": [float(c) for c in color0],
        "color1": [float(c) for c in color1],
    }
    if kind == "gradient":
        background_params["axis"] = int(rng.integers(0, 2))
    elif kind == "checker":
        background_params["period"] = int(rng.integers(4, 9))

    def amp(lo: float, hi: float) -> float:
        return float(rng.uniform(lo, hi) * config.max_amplitude)

    amps = {
        "hip": amp(0.15, 0.35),
        "shoulder": amp(0.10, 0.30),
        "head": amp(0.10, 0.30),
        "left_hand": amp(0.45, 1.0),
        "right_hand": amp(0.45, 1.0),
    }
    freqs = {name: float(rng.uniform(0.3, 1.2)) for name in JOINT_NAMES}
    phases = {name: float(rng.uniform(0.0, 2.0 * np.pi)) for name in JOINT_NAMES}

    # Cumulative worst-case excursion down the chain, plus the body radius
    # hanging off each joint (halfwidth or head disc or stroke).
    reach = {
        "hip": amps["hip"],
        "shoulder": amps["hip"] + amps["shoulder"],
        "head": amps["hip"] + amps["shoulder"] + amps["head"],
        "left_hand": amps["hip"] + amps["shoulder"] + amps["left_hand"],
        "right_hand": amps["hip"] + amps["shoulder"] + amps["right_hand"],
    }
    extra = {
        "hip": config.hip_halfwidth + 1.0,
        "shoulder": config.shoulder_halfwidth + 1.0,
        "head": config.head_radius + 1.0,
        "left_hand": config.stroke_width,
        "right_hand": config.stroke_width,
    }

    def clamp_into(point: np.ndarray, inset: float, label: str) -> tuple[float, float]:
        if 2.0 * inset >= min(h, w):
            raise ConfigError(
                f"motion amplitude leaves no room for joint {label!r} "
                f"(inset {inset:.1f}px in a {config.width}x{config.height} frame)"
            )
        return (
            float(np.clip(point[0], inset, w - inset)),
            float(np.clip(point[1], inset, h - inset)),
        )

    hip_abs = np.array(
        [
            w / 2 + rng.uniform(-3.0, 3.0),
            0.66 * h + rng.uniform(-1.5, 1.5),
        ]
    )
    hip_base = clamp_into(hip_abs, reach["hip"] + extra["hip"], "hip")

    torso_len = 0.30 * h + rng.uniform(-1.5, 1.5)
    shoulder_rel = np.array([rng.uniform(-1.0, 1.0), -torso_len])
    shoulder_abs = np.asarray(hip_base) + shoulder_rel
    shoulder_clamped = clamp_into(
        shoulder_abs, reach["shoulder"] + extra["shoulder"], "shoulder"
    )
    shoulder_rel = np.asarray(shoulder_clamped) - np.asarray(hip_base)

    head_rel = np.array([rng.uniform(-0.8, 0.8), -(0.14 * h + rng.uniform(-0.8, 0.8))])
    head_abs = np.asarray(shoulder_clamped) + head_rel
    head_clamped = clamp_into(head_abs, reach["head"] + extra["head"], "head")
    head_rel = np.asarray(head_clamped) - np.asarray(shoulder_clamped)

    hand_rels = {}
    for name, side in (("left_hand", -1.0), ("right_hand", 1.0)):
        rel = np.array(
            [side * (0.26 * w + rng.uniform(-1.5, 1.5)), rng.uniform(-1.0, 3.0)]
        )
        hand_abs = np.asarray(shoulder_clamped) + rel
        hand_clamped = clamp_into(hand_abs, reach[name] + extra[name], name)
        hand_rels[name] = np.asarray(hand_clamped) - np.asarray(shoulder_clamped)

    joints = {
        "hip": JointTrack(hip_base, amps["hip"], freqs["hip"], phases["hip"]),
        "shoulder": JointTrack(
            tuple(shoulder_rel), amps["shoulder"], freqs["shoulder"], phases["shoulder"]
        ),
        "head": JointTrack(tuple(head_rel), amps["head"], freqs["head"], phases["head"]),
        "left_hand": JointTrack(
            tuple(hand_rels["left_hand"]),
            amps["left_hand"],
            freqs["left_hand"],
            phases["left_hand"],
        ),
        "right_hand": JointTrack(
            tuple(hand_rels["right_hand"]),
            amps["right_hand"],
            freqs["right_hand"],
            phases["right_hand"],
        ),
    }

    scene = SceneSpec(
        seed=seed,
        num_frames=config.num_frames,
        height=config.height,
        width=config.width,
        background_kind=kind,
        background_params=background_params,
        joints=joints,
        shoulder_halfwidth=config.shoulder_halfwidth,
        hip_halfwidth=config.hip_halfwidth,
        stroke_width=config.stroke_width,
        head_radius=config.head_radius,
    )
    _validate_scene(scene)
    return scene


def _validate_scene(scene: SceneSpec) -> None:
    h, w = scene.height - 1, scene.width - 1
    for frame in range(scene.num_frames):
        for name, pt in scene.keypoints(frame).items():
            if not (0.0 <= pt[0] <= w and 0.0 <= pt[1] <= h):
                raise ConfigError(
                    f"keypoint {name!r} leaves the frame at frame {frame}: "
                    f"({pt[0]:.2f}, {pt[1]:.2f})"
                )
        quad = scene.torso_quad(frame)
        cross = _polygon_cross_products(quad)
        if not (np.all(cross > 1e-9) or np.all(cross < -1e-9)):
            raise ConfigError(f"torso quad not simple/convex at frame {frame}")


def _polygon_cross_products(corners: np.ndarray) -> np.ndarray:
    nxt = np.roll(corners, -1, axis=0)
    edges = nxt - corners
    nxt_edges = np.roll(edges, -1, axis=0)
    return edges[:, 0] * nxt_edges[:, 1] - edges[:, 1] * nxt_edges[:, 0]


# ---------------------------------------------------------------------------
# garments


def make_garment_pool(config: GenConfig) -> list[GarmentSpec]:
    """Pool with hue-spread colors and cycled patterns so any two garments
    differ visibly (the renderer distinctness property leans on this)."""
    rng = np.random.default_rng(stable_seed(config.seed, "garments"))
    pool = []
    for gid in range(config.pool_size):
        hue = (gid / config.pool_size + float(rng.uniform(0.0, 0.4 / config.pool_size))) % 1.0
        sat = float(rng.uniform(0.75, 0.95))
        val = float(rng.uniform(0.75, 0.95))
        color_a = colorsys.hsv_to_rgb(hue, sat, val)
        color_b = colorsys.hsv_to_rgb((hue + 0.45) % 1.0, sat, max(0.35, val - 0.35))
        pool.append(
            GarmentSpec(
                garment_id=gid,
                pattern=PATTERNS[gid % len(PATTERNS)],
                period=int(rng.integers(3, 6)),
                color_a=tuple(round(c, 6) for c in color_a),
                color_b=tuple(round(c, 6) for c in color_b),
                height=config.garment_size,
                width=config.garment_size,
            )
        )
    return pool


def render_garment(spec: GarmentSpec) -> np.ndarray:
    """Deterministic (3, Hg, Wg) float32 texture."""
    hg, wg, p = spec.height, spec.width, max(1, spec.period)
    ys, xs = np.mgrid[0:hg, 0:wg]
    a = np.asarray(spec.color_a, dtype=np.float64).reshape(3, 1, 1)
    b = np.asarray(spec.color_b, dtype=np.float64).reshape(3, 1, 1)
    if spec.pattern == "stripes":
        use_b = (xs // p) % 2 == 1
    elif spec.pattern == "checks":
        use_b = ((xs // p) + (ys // p)) % 2 == 1
    elif spec.pattern == "dots":
        cy = (ys % (2 * p)) - p
        cx = (xs % (2 * p)) - p
        use_b = cy * cy + cx * cx <= (0.7 * p) ** 2
    elif spec.pattern == "solid":
        use_b = np.zeros((hg, wg), dtype=bool)
    else:
        raise ConfigError(f"unknown garment pattern {spec.pattern!r}")
    img = np.where(use_b[None], b, a)
    return img.astype(np.float32)


# ---------------------------------------------------------------------------
# rasterization


def _pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def _segment_mask(
    xs: np.ndarray, ys: np.ndarray, p0: np.ndarray, p1: np.ndarray, radius: float
) -> np.ndarray:
    d = p1 - p0
    len2 = float(d @ d)
    px = xs - p0[0]
    py = ys - p0[1]
    if len2 < 1e-12:
        dist2 = px * px + py * py
    else:
        t = np.clip((px * d[0] + py * d[1]) / len2, 0.0, 1.0)
        dist2 = (px - t * d[0]) ** 2 + (py - t * d[1]) ** 2
    return dist2 <= radius * radius


def _disc_mask(xs: np.ndarray, ys: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    return (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius * radius


def render_background(scene: SceneSpec) -> np.ndarray:
    h, w = scene.height, scene.width
    c0 = np.asarray(scene.background_params["color0"], dtype=np.float64)
    c1 = np.asarray(scene.background_params["color1"], dtype=np.float64)
    if scene.background_kind == "solid":
        return np.broadcast_to(c0.reshape(3, 1, 1), (3, h, w)).copy()
    if scene.background_kind == "gradient":
        axis = int(scene.background_params.get("axis", 0))
        n = h if axis == 0 else w
        ramp = np.linspace(0.0, 1.0, n)
        shape = (1, n, 1) if axis == 0 else (1, 1, n)
        ramp = ramp.reshape(shape)
        return c0.reshape(3, 1, 1) * (1 - ramp) + c1.reshape(3, 1, 1) * ramp
    if scene.background_kind == "checker":
        p = int(scene.background_params.get("period", 4))
        ys, xs = np.mgrid[0:h, 0:w]
        cells = ((ys // p) + (xs // p)) % 2 == 1
        return np.where(cells[None], c1.reshape(3, 1, 1), c0.reshape(3, 1, 1))
    raise ConfigError(f"unknown background kind {scene.background_kind!r}")


def quad_coverage_and_uv(
    corners: np.ndarray, height: int, width: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inside-mask and inverse bilinear coordinates for a convex quad.

    Corners ordered (A, B, C, D) with u running A->B and v running A->D;
    P(u, v) = (1-u)(1-v)A + u(1-v)B + uvC + (1-u)vD. Solving for u is a
    scalar quadratic per pixel; the affine (parallelogram) case falls out as
    the linear branch.
    """
    xs, ys = _pixel_grid(height, width)
    a, b, c, d = (corners[i].astype(np.float64) for i in range(4))

    cross = _polygon_cross_products(corners)
    if np.all(cross > 0):
        orient = 1.0
    elif np.all(cross < 0):
        orient = -1.0
    else:
        raise ConfigError("quad is not convex")
    inside = np.ones((height, width), dtype=bool)
    for i in range(4):
        p0 = corners[i]
        p1 = corners[(i + 1) % 4]
        edge_cross = (p1[0] - p0[0]) * (ys - p0[1]) - (p1[1] - p0[1]) * (xs - p0[0])
        inside &= orient * edge_cross >= 0.0

    e = b - a
    f = d - a
    g = a - b + c - d
    qx = xs - a[0]
    qy = ys - a[1]

    def cross2(x1, y1, x2, y2):
        return x1 * y2 - y1 * x2

    k2 = cross2(e[0], e[1], g[0], g[1])
    k1 = cross2(e[0], e[1], f[0], f[1]) - cross2(qx, qy, g[0], g[1])
    k0 = -cross2(qx, qy, f[0], f[1])

    if abs(k2) < 1e-10:
        u = np.where(np.abs(k1) > 1e-12, -k0 / np.where(k1 == 0, 1.0, k1), 0.0)
    else:
        disc = np.maximum(k1 * k1 - 4.0 * k2 * k0, 0.0)
        root = np.sqrt(disc)
        u1 = (-k1 + root) / (2.0 * k2)
        u2 = (-k1 - root) / (2.0 * k2)
        pick_u1 = (u1 >= -1e-6) & (u1 <= 1.0 + 1e-6)
        u = np.where(pick_u1, u1, u2)

    denom_x = f[0] + u * g[0]
    denom_y = f[1] + u * g[1]
    use_x = np.abs(denom_x) >= np.abs(denom_y)
    safe_x = np.where(denom_x == 0, 1.0, denom_x)
    safe_y = np.where(denom_y == 0, 1.0, denom_y)
    v = np.where(use_x, (qx - u * e[0]) / safe_x, (qy - u * e[1]) / safe_y)

    u = np.clip(u, 0.0, 1.0)
    v = np.clip(v, 0.0, 1.0)
    return inside, u, v


def _sample_texture(texture: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear lookup of (3, Hg, Wg) at normalized (u, v); returns (3, n)."""
    _, hg, wg = texture.shape
    gx = u * (wg - 1)
    gy = v * (hg - 1)
    x0 = np.floor(gx).astype(int)
    y0 = np.floor(gy).astype(int)
    x1 = np.minimum(x0 + 1, wg - 1)
    y1 = np.minimum(y0 + 1, hg - 1)
    fx = gx - x0
    fy = gy - y0
    tex = texture.astype(np.float64)
    top = tex[:, y0, x0] * (1 - fx) + tex[:, y0, x1] * fx
    bot = tex[:, y1, x0] * (1 - fx) + tex[:, y1, x1] * fx
    return top * (1 - fy) + bot * fy


def warp_garment_onto(
    frame: np.ndarray, texture: np.ndarray, corners: np.ndarray
) -> np.ndarray:
    """Paint the garment over a (3, H, W) float64 frame, opaque. Shared by the
    frame renderer and the first-frame edit oracle, which is what makes the
    oracle bit-exact against rendered ground truth."""
    h, w = frame.shape[1], frame.shape[2]
    inside, u, v = quad_coverage_and_uv(corners, h, w)
    out = frame.copy()
    if inside.any():
        out[:, inside] = _sample_texture(texture, u[inside], v[inside])
    return out


def _render_figure_frame(scene: SceneSpec, frame: int, texture: np.ndarray) -> np.ndarray:
    xs, ys = _pixel_grid(scene.height, scene.width)
    canvas = render_background(scene)
    pts = scene.keypoints(frame)
    radius = scene.stroke_width / 2.0
    limb = np.zeros((scene.height, scene.width), dtype=bool)
    for a_name, b_name in SEGMENTS:
        limb |= _segment_mask(xs, ys, pts[a_name], pts[b_name], radius)
    limb |= _disc_mask(xs, ys, pts["head"], scene.head_radius)
    canvas[:, limb] = np.asarray(LIMB_COLOR, dtype=np.float64)[:, None]
    return warp_garment_onto(canvas, texture, scene.torso_quad(frame))


def _render_pose_frame(scene: SceneSpec, frame: int) -> np.ndarray:
    xs, ys = _pixel_grid(scene.height, scene.width)
    pts = scene.keypoints(frame)
    radius = scene.stroke_width / 2.0
    strokes = np.zeros((scene.height, scene.width), dtype=bool)
    for a_name, b_name in SEGMENTS:
        strokes |= _segment_mask(xs, ys, pts[a_name], pts[b_name], radius)
    canvas = np.zeros((3, scene.height, scene.width), dtype=np.float64)
    canvas[:, strokes] = 1.0
    return canvas


def render_truth_video(scene: SceneSpec, garment: GarmentSpec) -> np.ndarray:
    texture = render_garment(garment)
    frames = [
        _render_figure_frame(scene, t, texture) for t in range(scene.num_frames)
    ]
    return np.stack(frames).astype(np.float32)


def render_sample(
    scene: SceneSpec,
    g_worn: GarmentSpec,
    garment_pool: list[GarmentSpec],
    mask_margin: int = 3,
) -> Sample:
    if all(g.garment_id != g_worn.garment_id for g in garment_pool):
        raise ConfigError(f"worn garment {g_worn.garment_id} not in pool")

    truth = {g.garment_id: render_truth_video(scene, g) for g in garment_pool}
    source = truth[g_worn.garment_id].copy()

    pose = np.stack(
        [_render_pose_frame(scene, t) for t in range(scene.num_frames)]
    ).astype(np.float32)

    masks = []
    for t in range(scene.num_frames):
        inside, _, _ = quad_coverage_and_uv(
            scene.torso_quad(t), scene.height, scene.width
        )
        dilated = binary_dilation(
            inside, structure=np.ones((3, 3), dtype=bool), iterations=mask_margin
        )
        masks.append(dilated)
    mask = np.stack(masks)[:, None].astype(np.float32)

    agnostic = source.copy()
    hole = mask[:, 0] > 0.5
    for t in range(scene.num_frames):
        agnostic[t][:, hole[t]] = AGNOSTIC_FILL

    return Sample(
        scene=scene,
        source_video=source,
        pose_video=pose,
        agnostic_video=agnostic,
        agnostic_mask=mask,
        garment_image=render_garment(g_worn),
        truth_videos=truth,
        g_worn=g_worn.garment_id,
        garment_ids=tuple(g.garment_id for g in garment_pool),
    )


# ---------------------------------------------------------------------------
# dataset on disk


@dataclass
class Manifest:
    root: Path
    data: dict

    @property
    def records(self) -> list[dict]:
        return self.data["samples"]

    @property
    def config(self) -> GenConfig:
        raw = dict(self.data["config"])
        if "background_kinds" in raw:
            raw["background_kinds"] = tuple(raw["background_kinds"])
        return GenConfig(**raw)

    def garment_pool(self) -> list[GarmentSpec]:
        return [GarmentSpec.from_dict(g) for g in self.data["garments"]]

    def indices(self, split: str | None = None) -> list[int]:
        return [
            r["index"]
            for r in self.records
            if split is None or r["split"] == split
        ]

    def load_sample(self, index: int, include_truth: bool = True) -> Sample:
        record = next((r for r in self.records if r["index"] == index), None)
        if record is None:
            raise FormatError(f"no sample with index {index} in manifest")
        files = record["files"]

        def read(key: str, path: str) -> np.ndarray:
            full = self.root / path
            if not full.exists():
                raise FormatError(f"manifest references missing file: {full} ({key})")
            return tensorio.read_tensor(full)

        truth: dict[int, np.ndarray] = {}
        if include_truth:
            for gid_str, path in record["truth_files"].items():
                truth[int(gid_str)] = read(f"truth[{gid_str}]", path)
        return Sample(
            scene=SceneSpec.from_dict(record["scene"]),
            source_video=read("source", files["source"]),
            pose_video=read("pose", files["pose"]),
            agnostic_video=read("agnostic", files["agnostic"]),
            agnostic_mask=read("mask", files["mask"]),
            garment_image=read("garment", files["garment"]),
            truth_videos=truth,
            g_worn=int(record["g_worn"]),
            garment_ids=tuple(int(g) for g in record["garment_ids"]),
        )

    def iter_samples(
        self, split: str | None = None, include_truth: bool = True
    ) -> Iterator[Sample]:
        for idx in self.indices(split):
            yield self.load_sample(idx, include_truth=include_truth)


def build_dataset(config: GenConfig, out_dir: str | Path) -> Manifest:
    """Render and persist the dataset; pure function of (config, seed)."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pool = make_garment_pool(config)

    garment_entries = []
    for g in pool:
        rel = f"garments/garment_{g.garment_id}.tns"
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        tensorio.write_tensor(path, render_garment(g))
        entry = g.to_dict()
        entry["file"] = rel
        garment_entries.append(entry)

    total = config.train_samples + config.eval_samples
    records = []
    for index in range(total):
        split = "train" if index < config.train_samples else "eval"
        scene = make_scene(config, stable_seed(config.seed, "sample", index))
        worn_rng = np.random.default_rng(stable_seed(config.seed, "worn", index))
        g_worn = pool[int(worn_rng.integers(0, len(pool)))]
        sample = render_sample(scene, g_worn, pool, mask_margin=config.mask_margin)

        sample_dir = out / f"sample_{index:04d}"
        sample_dir.mkdir(parents=True, exist_ok=True)
        files = {}
        for key, array in (
            ("source", sample.source_video),
            ("pose", sample.pose_video),
            ("agnostic", sample.agnostic_video),
            ("mask", sample.agnostic_mask),
            ("garment", sample.garment_image),
        ):
            rel = f"sample_{index:04d}/{key}.tns"
            tensorio.write_tensor(out / rel, array)
            files[key] = rel
        truth_files = {}
        for gid, video in sorted(sample.truth_videos.items()):
            rel = f"sample_{index:04d}/truth_{gid}.tns"
            tensorio.write_tensor(out / rel, video)
            truth_files[str(gid)] = rel

        records.append(
            {
                "index": index,
                "split": split,
                "g_worn": sample.g_worn,
                "garment_ids": list(sample.garment_ids),
                "scene": scene.to_dict(),
                "files": files,
                "truth_files": truth_files,
            }
        )

    data = {
        "format_version": "1",
        "config": {
            **{
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in vars(config).items()
            },
        },
        "garments": garment_entries,
        "samples": records,
    }
    # sort_keys so a rebuild is byte-identical
    (out / "manifest.json").write_text(
        json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    return Manifest(root=out, data=data)


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FormatError(f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {path}: {exc}") from exc
    if data.get("format_version") != "1":
        raise FormatError(
            f"unsupported manifest format_version {data.get('format_version')!r}"
        )
    return Manifest(root=path.parent, data=data)
