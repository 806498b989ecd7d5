"""Self-shift blur-degree scoring and colocated patch selection.

A patch is compared with copies of itself translated by one pixel in four
directions.  Blurred content changes little under a one-pixel shift, so the
mean PSNR over the four comparisons is high for blurred patches and low for
sharp ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import (
    MIN_PIPELINE_SIZE,
    PSNR_CAP,
    InvalidImageError,
    PatchLocation,
    ShiftVector,
    as_image,
    crop_patch,
    psnr,
    shift_image,
)

# right, up, up-right, up-left
SHIFT_DIRECTIONS = (
    ShiftVector(1, 0),
    ShiftVector(0, -1),
    ShiftVector(1, -1),
    ShiftVector(-1, -1),
)
STACK_RADIUS = 2  # frames on each side of the center, T = 2 * radius + 1


@dataclass(frozen=True)
class PseudoSharpPick:
    location: PatchLocation
    frame_index: int
    score: float


@dataclass
class ColocatedStack:
    patches: list  # T arrays of shape (size, size, 3)
    center_index: int
    frame_indices: list

    @property
    def center(self) -> np.ndarray:
        return self.patches[self.center_index]

    def as_array(self) -> np.ndarray:
        return np.stack(self.patches)


def self_shift_score(img, cap: float = PSNR_CAP) -> float:
    img = as_image(img)
    if min(img.shape[:2]) < MIN_PIPELINE_SIZE:
        raise InvalidImageError(f"self-shift scoring needs at least 8x8 pixels, got {img.shape[:2]}")
    values = []
    for v in SHIFT_DIRECTIONS:
        shifted, overlap = shift_image(img, v)
        values.append(psnr(img[overlap.slices], shifted[overlap.slices], cap=cap))
    return float(np.mean(values))


def score_frames(frames) -> list[float]:
    return [self_shift_score(f) for f in frames]


def score_colocated(clip, loc: PatchLocation) -> np.ndarray:
    """Self-shift score of the patch at ``loc`` in every blurred frame of ``clip``."""
    return np.array([self_shift_score(crop_patch(f, loc)) for f in clip.blurred])


def random_locations(height: int, width: int, count: int, patch_size: int,
                     rng: np.random.Generator) -> list[PatchLocation]:
    if count <= 0:
        raise InvalidImageError(f"patch count must be positive, got {count}")
    if patch_size < MIN_PIPELINE_SIZE or patch_size > min(height, width):
        raise InvalidImageError(f"patch size {patch_size} does not fit a {height}x{width} frame")
    ys = rng.integers(0, height - patch_size + 1, size=count)
    xs = rng.integers(0, width - patch_size + 1, size=count)
    return [PatchLocation(int(x), int(y), patch_size) for x, y in zip(xs, ys)]


def _check_clip(clip):
    if len(clip.blurred) < 1:
        raise InvalidImageError("clip has no frames")
    return clip.blurred[0].shape[:2]


def pick_at_locations(clip, locations, sharpest: bool = True) -> list[PseudoSharpPick]:
    """Choose, per location, the frame with the lowest (or highest) self-shift score.

    ``np.argmin``/``np.argmax`` return the first extremum, so ties go to the
    lowest frame index.
    """
    picks = []
    for loc in locations:
        scores = score_colocated(clip, loc)
        idx = int(np.argmin(scores) if sharpest else np.argmax(scores))
        picks.append(PseudoSharpPick(loc, idx, float(scores[idx])))
    return picks


def select_pseudo_sharp(clip, M: int, patch_size: int, rng: np.random.Generator) -> list[PseudoSharpPick]:
    h, w = _check_clip(clip)
    locations = random_locations(h, w, M, patch_size, rng)
    return pick_at_locations(clip, locations, sharpest=True)


def select_real_blurred_picks(clip, count: int, patch_size: int,
                              rng: np.random.Generator) -> list[PseudoSharpPick]:
    h, w = _check_clip(clip)
    locations = random_locations(h, w, count, patch_size, rng)
    return pick_at_locations(clip, locations, sharpest=False)


def select_real_blurred(clip, count: int, patch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    picks = select_real_blurred_picks(clip, count, patch_size, rng)
    return [crop_patch(clip.blurred[p.frame_index], p.location) for p in picks]


def stack_indices(t: int, n_frames: int, radius: int = STACK_RADIUS) -> list[int]:
    return [min(max(t + k, 0), n_frames - 1) for k in range(-radius, radius + 1)]


def colocated_stack(clip, pick: PseudoSharpPick, frames=None) -> ColocatedStack:
    """Five colocated patches centred on ``pick.frame_index``, indices clamped to the clip.

    ``frames`` selects the source sequence; the clip's blurred frames by default.
    """
    frames = clip.blurred if frames is None else frames
    n = len(frames)
    if not 0 <= pick.frame_index < n:
        raise InvalidImageError(f"frame index {pick.frame_index} outside clip of {n} frames")
    indices = stack_indices(pick.frame_index, n)
    patches = [crop_patch(frames[i], pick.location) for i in indices]
    return ColocatedStack(patches=patches, center_index=STACK_RADIUS, frame_indices=indices)
