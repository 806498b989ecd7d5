"""Synthetic blurred/sharp video clips built by averaging rendered subframes.

Each scene is a textured background seen through a panning camera, with
textured square sprites moving across it.  Camera and sprite speeds are
modulated per output frame, with some frames paused, so one clip mixes sharp
and blurred views of the same content.
Blurred frame ``k`` is the mean of a window of consecutive subframes and its
ground truth is the window's centre subframe.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .imaging import InvalidImageError, load_png, save_png

FRAME_PATTERN = "frame_{:04d}.png"
MANIFEST_NAME = "manifest.json"


class VideoFormatError(ValueError):
    pass


@dataclass
class VideoClip:
    blurred: np.ndarray  # (N, H, W, 3)
    sharp: np.ndarray | None = None
    id: str = "clip"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.blurred = np.asarray(self.blurred, dtype=np.float64)
        if self.blurred.ndim != 4 or self.blurred.shape[-1] != 3:
            raise VideoFormatError(f"blurred frames must be (N, H, W, 3), got {self.blurred.shape}")
        if self.sharp is not None:
            self.sharp = np.asarray(self.sharp, dtype=np.float64)
            if self.sharp.shape != self.blurred.shape:
                raise VideoFormatError(
                    f"sharp frames {self.sharp.shape} do not match blurred frames {self.blurred.shape}")

    def __len__(self):
        return len(self.blurred)

    @property
    def has_gt(self) -> bool:
        return self.sharp is not None

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.blurred.shape[1], self.blurred.shape[2]


@dataclass
class SpriteSpec:
    texture_seed: int
    size: int
    position: tuple[float, float]  # (row, col) of the top-left corner at subframe 0
    velocity: tuple[float, float]  # (d_col, d_row) in px per subframe
    speed_profile: list[float] | None = None  # per-frame multiplier, 1.0 when absent


@dataclass
class SceneSpec:
    height: int
    width: int
    sprites: list[SpriteSpec]
    subframes_per_frame: int
    frames: int
    background_seed: int
    camera: SpriteSpec | None = None  # pans a background larger than the canvas by ``camera.size``

    @property
    def n_subframes(self) -> int:
        return self.frames * self.subframes_per_frame


@dataclass(frozen=True)
class BlurFamily:
    label: str
    velocity_range: tuple[float, float]
    window: int = 7
    sprite_count_range: tuple[int, int] = (3, 5)
    angle_range: tuple[float, float] = (-0.3, 0.3)  # radians about the horizontal, either direction


@dataclass(frozen=True)
class SceneTemplate:
    height: int = 64
    width: int = 64
    frames: int = 12
    sprite_size_range: tuple[int, int] = (14, 30)
    pause_probability: float = 0.3
    moving_speed_range: tuple[float, float] = (0.5, 1.0)
    camera_margin: int = 24  # 0 disables camera motion
    camera_speed_range: tuple[float, float] = (0.3, 1.0)
    camera_slow_probability: float = 0.3  # frames where the camera nearly stops
    camera_slow_range: tuple[float, float] = (0.05, 0.15)


FAMILY_A = BlurFamily("A", velocity_range=(0.3, 0.8))
FAMILY_B = BlurFamily("B", velocity_range=(1.1, 1.7))


def make_texture(seed: int, height: int, width: int, n_shapes: int = 10) -> np.ndarray:
    """Flat-coloured rectangles, discs and a stripe band over a base colour."""
    rng = np.random.default_rng(seed)
    tex = np.empty((height, width, 3))
    tex[:] = rng.uniform(0.1, 0.9, size=3)
    yy, xx = np.mgrid[0:height, 0:width]
    theta = rng.uniform(0, np.pi)
    phase = np.cos(theta) * xx + np.sin(theta) * yy
    band = np.sin(rng.uniform(0.3, 0.9) * phase + rng.uniform(0, 2 * np.pi)) > 0.3
    tex[band] = rng.uniform(0.1, 0.9, size=3)
    for _ in range(n_shapes):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry, rx = rng.uniform(1.5, max(height, 8) / 4), rng.uniform(1.5, max(width, 8) / 4)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        tex[mask] = rng.uniform(0.05, 0.95, size=3)
    return tex


def sprite_positions(sprite: SpriteSpec, spec: SceneSpec, bounds: tuple[int, int] | None = None) -> np.ndarray:
    """Integer (row, col) of the sprite's top-left corner for every subframe.

    Positions stay within ``[0, bounds]``; by default the canvas minus the sprite size.
    """
    if bounds is None:
        if sprite.size > spec.height or sprite.size > spec.width:
            raise InvalidImageError(f"sprite of size {sprite.size} exceeds a {spec.height}x{spec.width} canvas")
        bounds = (spec.height - sprite.size, spec.width - sprite.size)
    max_r, max_c = bounds
    r, c = float(sprite.position[0]), float(sprite.position[1])
    r, c = min(max(r, 0.0), max_r), min(max(c, 0.0), max_c)
    vc, vr = float(sprite.velocity[0]), float(sprite.velocity[1])
    out = np.empty((spec.n_subframes, 2), dtype=np.int64)
    for s in range(spec.n_subframes):
        out[s] = (int(round(r)), int(round(c)))
        k = s // spec.subframes_per_frame
        m = 1.0 if sprite.speed_profile is None else sprite.speed_profile[k]
        r, c = r + vr * m, c + vc * m
        # clamp to the canvas and bounce
        if r < 0 or r > max_r:
            r, vr = min(max(r, 0.0), max_r), -vr
        if c < 0 or c > max_c:
            c, vc = min(max(c, 0.0), max_c), -vc
    return out


def render_sharp_sequence(spec: SceneSpec) -> np.ndarray:
    """All ``frames * subframes_per_frame`` sharp subframes, shape (S, H, W, 3)."""
    if spec.camera is None:
        background = make_texture(spec.background_seed, spec.height, spec.width)
        seq = np.repeat(background[None], spec.n_subframes, axis=0)
    else:
        margin = spec.camera.size
        background = make_texture(spec.background_seed, spec.height + margin, spec.width + margin)
        offsets = sprite_positions(spec.camera, spec, bounds=(margin, margin))
        seq = np.stack([background[r:r + spec.height, c:c + spec.width] for r, c in offsets])
    for sprite in spec.sprites:
        tex = make_texture(sprite.texture_seed, sprite.size, sprite.size)
        for s, (r, c) in enumerate(sprite_positions(sprite, spec)):
            seq[s, r:r + sprite.size, c:c + sprite.size] = tex
    return seq


def _window_mean(window: np.ndarray) -> np.ndarray:
    # first frame plus the mean offset: bit-exact when every frame is identical
    return window[0] + (window - window[0]).mean(axis=0)


def synthesize_blur(sharp_subframes, window: int, stride: int | None = None, clip_id: str = "clip") -> VideoClip:
    subframes = np.asarray(sharp_subframes, dtype=np.float64)
    stride = window if stride is None else stride
    if window < 1 or stride < 1:
        raise InvalidImageError("window and stride must be positive")
    if len(subframes) < window:
        raise InvalidImageError(f"averaging window {window} exceeds a {len(subframes)}-subframe sequence")
    n = (len(subframes) - window) // stride + 1
    blurred = np.stack([_window_mean(subframes[k * stride:k * stride + window]) for k in range(n)])
    sharp = np.stack([subframes[k * stride + window // 2] for k in range(n)])
    return VideoClip(np.clip(blurred, 0.0, 1.0), sharp, id=clip_id)


def _random_mover(family: BlurFamily, template: SceneTemplate, size: int, span: tuple[float, float],
                  rng: np.random.Generator, pause_probability: float, speed_range,
                  pause_range: tuple[float, float] = (0.0, 0.0)) -> SpriteSpec:
    speed = rng.uniform(*family.velocity_range)
    angle = rng.uniform(*family.angle_range) + np.pi * rng.integers(2)
    moving = rng.uniform(*speed_range, size=template.frames)
    paused = rng.random(template.frames) < pause_probability
    slow = rng.uniform(*pause_range, size=template.frames)
    return SpriteSpec(
        texture_seed=int(rng.integers(2 ** 31)),
        size=size,
        position=(float(rng.uniform(0, span[0])), float(rng.uniform(0, span[1]))),
        velocity=(float(speed * np.cos(angle)), float(speed * np.sin(angle))),
        speed_profile=np.where(paused, slow, moving).tolist(),
    )


def random_scene(family: BlurFamily, template: SceneTemplate, rng: np.random.Generator) -> SceneSpec:
    n_sprites = int(rng.integers(family.sprite_count_range[0], family.sprite_count_range[1] + 1))
    sprites = []
    for _ in range(n_sprites):
        size = int(rng.integers(template.sprite_size_range[0], template.sprite_size_range[1] + 1))
        sprites.append(_random_mover(family, template, size, (template.height - size, template.width - size), rng,
                                     template.pause_probability, template.moving_speed_range))
    camera = None
    if template.camera_margin:
        # the camera slows down but never stops, so no frame is an exact copy of its ground truth
        m = template.camera_margin
        camera = _random_mover(family, template, m, (m, m), rng, template.camera_slow_probability,
                               template.camera_speed_range, template.camera_slow_range)
    return SceneSpec(template.height, template.width, sprites, family.window, template.frames,
                     background_seed=int(rng.integers(2 ** 31)), camera=camera)


def make_dataset(family: BlurFamily, n_videos: int, template: SceneTemplate | None = None,
                 rng: np.random.Generator | None = None) -> list[VideoClip]:
    template = template or SceneTemplate()
    rng = rng if rng is not None else np.random.default_rng(0)
    clips = []
    for i in range(n_videos):
        seed = int(rng.integers(2 ** 31))
        spec = random_scene(family, template, np.random.default_rng(seed))
        clip = synthesize_blur(render_sharp_sequence(spec), family.window, clip_id=f"{family.label}_{i:03d}")
        clip.meta = {"family": family.label, "seed": seed}
        clips.append(clip)
    return clips


# ---------------------------------------------------------------------------
# directory I/O
# ---------------------------------------------------------------------------

def _write_frames(frames, folder: Path):
    folder.mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(frames):
        save_png(frame, folder / FRAME_PATTERN.format(k))


def read_frame_dir(folder) -> np.ndarray:
    """Frames ``frame_%04d.png`` of one folder, checked for contiguous numbering and equal shapes."""
    folder = Path(folder)
    files = sorted(folder.glob("frame_*.png"))
    if not files:
        raise VideoFormatError(f"no frames found in {folder}")
    try:
        numbers = [int(f.stem.split("_", 1)[1]) for f in files]
    except ValueError as exc:
        raise VideoFormatError(f"unparseable frame name in {folder}") from exc
    if numbers != list(range(numbers[0], numbers[0] + len(numbers))):
        raise VideoFormatError(f"frame numbering in {folder} is not contiguous: {numbers}")
    frames = [load_png(f) for f in files]
    if len({f.shape for f in frames}) != 1:
        raise VideoFormatError(f"inconsistent frame shapes in {folder}")
    return np.stack(frames)


def save_video_clip(clip: VideoClip, path) -> Path:
    root = Path(path)
    _write_frames(clip.blurred, root / "blur")
    if clip.sharp is not None:
        _write_frames(clip.sharp, root / "sharp")
    return root


def load_video_dir(path) -> VideoClip:
    root = Path(path)
    if not (root / "blur").is_dir():
        raise VideoFormatError(f"{root} has no blur/ directory")
    blurred = read_frame_dir(root / "blur")
    sharp = read_frame_dir(root / "sharp") if (root / "sharp").is_dir() else None
    if sharp is not None and sharp.shape != blurred.shape:
        raise VideoFormatError(f"sharp frames {sharp.shape} do not match blurred frames {blurred.shape} in {root}")
    return VideoClip(blurred, sharp, id=root.name)


def save_dataset(clips, root, family: BlurFamily | None = None, extra: dict | None = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for clip in clips:
        save_video_clip(clip, root / clip.id)
        entries.append({"id": clip.id, "family": clip.meta.get("family"), "seed": clip.meta.get("seed")})
    manifest = {"videos": entries}
    if family is not None:
        manifest["family"] = asdict(family)
    if extra:
        manifest.update(extra)
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    return root


def load_dataset(root) -> list[VideoClip]:
    """Load every video listed in the manifest, or every subdirectory when there is none."""
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        clips = []
        for entry in manifest["videos"]:
            clip = load_video_dir(root / entry["id"])
            clip.meta = {"family": entry.get("family"), "seed": entry.get("seed")}
            clips.append(clip)
        return clips
    dirs = sorted(p for p in root.iterdir() if (p / "blur").is_dir())
    if not dirs:
        raise VideoFormatError(f"no videos under {root}")
    return [load_video_dir(d) for d in dirs]
